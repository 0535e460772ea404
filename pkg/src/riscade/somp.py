"""Gridded sparse-recovery baseline for the cascade channel.

Simultaneous OMP over a separable angular dictionary: atoms pair a BS/user
angle grid point with a surface difference-angle grid point, and the P
pilot subcarriers share the support (one coefficient vector per
subcarrier). The delay structure is absorbed by those per-subcarrier
coefficients, so no delay grid exists.

The dictionary is never materialized at full size: the measurement of
atom (i, j) at slot q, observation t factorizes into
slot_responses[q, j] * beam_responses[t, i], and all correlation scans run
through the two small response matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayGeometry, array_pair_response, irs_difference_response
from .tensor3 import ComplexTensor3
from .training import TrainingConfig

__all__ = [
    "GridSpec",
    "SompDictionary",
    "SompResult",
    "build_dictionary",
    "materialize_dictionary",
    "somp_estimate",
]


@dataclass(frozen=True)
class GridSpec:
    """Angle grid sizes; every axis is uniform over [-pi, pi)."""

    g_bs: int = 32
    g_ue: int = 32
    g_irs_y: int = 16
    g_irs_z: int = 16

    def __post_init__(self):
        if min(self.g_bs, self.g_ue, self.g_irs_y, self.g_irs_z) < 2:
            raise ValueError("every grid axis needs at least 2 points")

    @property
    def n_array_atoms(self) -> int:
        return self.g_bs * self.g_ue

    @property
    def n_irs_atoms(self) -> int:
        return self.g_irs_y * self.g_irs_z

    @property
    def n_atoms(self) -> int:
        return self.n_array_atoms * self.n_irs_atoms


@dataclass(frozen=True)
class SompDictionary:
    """Factorized sensing operator.

    beam_responses: (T*N_s, g_bs*g_ue), training beams against the array
    angle grid (BS index slowest). slot_responses: (Q, g_irs_y*g_irs_z),
    reflection patterns against the surface grid (azimuth index slowest).
    The 1-D grids are kept for rebuilding steering vectors of selected
    atoms at reconstruction time.
    """

    beam_responses: np.ndarray
    slot_responses: np.ndarray
    bs_grid: np.ndarray
    ue_grid: np.ndarray
    irs_az_grid: np.ndarray
    irs_el_grid: np.ndarray
    geom: ArrayGeometry

    @property
    def spec(self) -> GridSpec:
        return GridSpec(
            self.bs_grid.size, self.ue_grid.size,
            self.irs_az_grid.size, self.irs_el_grid.size,
        )

    def array_angles(self, i: int) -> tuple[float, float]:
        """(bs_aod, ue_aoa) of array-grid atom i."""
        return float(self.bs_grid[i // self.ue_grid.size]), float(
            self.ue_grid[i % self.ue_grid.size]
        )

    def irs_angles(self, j: int) -> tuple[float, float]:
        """(azimuth, elevation) of surface-grid atom j."""
        return float(self.irs_az_grid[j // self.irs_el_grid.size]), float(
            self.irs_el_grid[j % self.irs_el_grid.size]
        )


@dataclass
class SompResult:
    """atoms: (K, 2) selected (array index, surface index) pairs in pick
    order; coefficients: (P, K) per-subcarrier least-squares fit;
    residual_trace: Frobenius residual after 0..K picks, non-increasing;
    channels: (P, n_bs*n_ue, M) reconstructed cascade estimates.
    """

    atoms: np.ndarray
    coefficients: np.ndarray
    residual_trace: np.ndarray
    channels: np.ndarray


def _angle_grid(n: int) -> np.ndarray:
    return np.linspace(-np.pi, np.pi, n, endpoint=False)


def build_dictionary(geom: ArrayGeometry, tc: TrainingConfig, grid: GridSpec | None = None) -> SompDictionary:
    """Project the angle grids through the training beams and patterns."""
    grid = grid or GridSpec()
    bs_grid = _angle_grid(grid.g_bs)
    ue_grid = _angle_grid(grid.g_ue)
    az_grid = _angle_grid(grid.g_irs_y)
    el_grid = _angle_grid(grid.g_irs_z)
    pair = array_pair_response(
        np.repeat(bs_grid, grid.g_ue), np.tile(ue_grid, grid.g_bs), geom
    )
    irs = irs_difference_response(
        np.repeat(az_grid, grid.g_irs_z), np.tile(el_grid, grid.g_irs_y), geom
    )
    return SompDictionary(
        beam_responses=tc.beam_matrix().T @ pair,
        slot_responses=tc.ris_profile.T @ irs,
        bs_grid=bs_grid,
        ue_grid=ue_grid,
        irs_az_grid=az_grid,
        irs_el_grid=el_grid,
        geom=geom,
    )


def materialize_dictionary(d: SompDictionary, max_bytes: int = 1 << 28) -> np.ndarray:
    """Full (Q*T*N_s, n_atoms) matrix, column (i*n_irs + j) = kron(beam_i, slot_j).

    Guarded: refuses to allocate above max_bytes. Intended for small-grid
    validation only; the estimator never calls this.
    """
    n_meas = d.beam_responses.shape[0] * d.slot_responses.shape[0]
    n_atoms = d.beam_responses.shape[1] * d.slot_responses.shape[1]
    need = n_meas * n_atoms * 16
    if need > max_bytes:
        raise MemoryError(
            f"full dictionary needs {need} bytes, above the {max_bytes} cap"
        )
    cols = np.einsum("ti,qj->tqij", d.beam_responses, d.slot_responses)
    return cols.reshape(n_meas, n_atoms)


def somp_estimate(
    measurements: ComplexTensor3 | np.ndarray,
    d: SompDictionary,
    sparsity: int,
) -> SompResult:
    """Shared-support greedy recovery across subcarriers.

    Each round scores every atom by the summed normalized correlation
    magnitude against all P residuals, picks the best unselected atom,
    and least-squares refits all selected atoms per subcarrier.
    """
    data = measurements.data if isinstance(measurements, ComplexTensor3) else np.asarray(measurements)
    if data.ndim != 3:
        raise ValueError("measurements must be a 3-way array (slots, obs, pilots)")
    q, tn, n_p = data.shape
    slot = d.slot_responses
    beam = d.beam_responses
    if slot.shape[0] != q or beam.shape[0] != tn:
        raise ValueError("dictionary was built for a different training setup")
    if sparsity < 1:
        raise ValueError("sparsity must be at least 1")
    if sparsity > q * tn:
        raise ValueError(f"sparsity {sparsity} exceeds the measurement count {q * tn}")
    if sparsity > d.spec.n_atoms:
        raise ValueError("sparsity exceeds the atom count")

    slot_norm = np.linalg.norm(slot, axis=0)
    beam_norm = np.linalg.norm(beam, axis=0)
    norms = np.outer(slot_norm, beam_norm)
    norms = np.maximum(norms, 1e-300)

    # columns of flat follow the (q fastest, then t) vectorization
    flat = data.transpose(2, 1, 0).reshape(n_p, tn * q).T
    resid = data.copy()
    trace = [float(np.linalg.norm(resid))]
    picked: list[tuple[int, int]] = []
    cols: list[np.ndarray] = []
    coef = np.zeros((n_p, 0), dtype=np.complex128)
    for _ in range(sparsity):
        score = np.zeros((slot.shape[1], beam.shape[1]))
        for p in range(n_p):
            score += np.abs(slot.conj().T @ resid[:, :, p] @ beam.conj())
        score /= norms
        for j, i in picked:
            score[j, i] = -1.0
        j, i = np.unravel_index(int(np.argmax(score)), score.shape)
        picked.append((int(j), int(i)))
        cols.append(np.einsum("t,q->tq", beam[:, i], slot[:, j]).ravel())
        basis = np.stack(cols, axis=1)
        fit, *_ = np.linalg.lstsq(basis, flat, rcond=None)
        resid_flat = flat - basis @ fit
        resid = resid_flat.T.reshape(n_p, tn, q).transpose(2, 1, 0)
        coef = fit.T
        trace.append(float(np.linalg.norm(resid_flat)))

    atoms = np.asarray([(i, j) for j, i in picked], dtype=int)
    channels = _reconstruct(atoms, coef, d, n_p)
    return SompResult(
        atoms=atoms,
        coefficients=coef,
        residual_trace=np.asarray(trace),
        channels=channels,
    )


def _reconstruct(atoms, coef, d: SompDictionary, n_p: int) -> np.ndarray:
    geom = d.geom
    bs = np.asarray([d.array_angles(i)[0] for i, _ in atoms])
    ue = np.asarray([d.array_angles(i)[1] for i, _ in atoms])
    az = np.asarray([d.irs_angles(j)[0] for _, j in atoms])
    el = np.asarray([d.irs_angles(j)[1] for _, j in atoms])
    pair = array_pair_response(bs, ue, geom)
    irs = irs_difference_response(az, el, geom)
    out = np.empty((n_p, geom.n_bs * geom.n_ue, geom.m), dtype=np.complex128)
    scale = 1.0 / np.sqrt(geom.m)
    for p in range(n_p):
        out[p] = (pair * (coef[p] * scale)) @ irs.T
    return out
