"""Fisher information and estimation error bounds for the composite paths.

The real parameter vector stacks the seven per-component classes in a
fixed order:

    [ris_az, ris_el, bs_aod, ue_aoa, gain_re, gain_im, delay]

each of length U, giving a 7U x 7U information matrix. Complex gains are
split into real and imaginary parts so the matrix stays real. Delays are
in seconds.

Under the circular complex Gaussian noise model, the information matrix is
(2/noise_var) Re{J^H J} with J the Jacobian of the vectorized noiseless
training tensor. For a CP-structured tensor every column of J is itself a
rank-one tensor (one factor column replaced by its parameter derivative),
so each U x U block reduces to an entrywise product of three small Gram
matrices; :func:`fim_analytic` assembles exactly that, and
:func:`fim_numeric` rebuilds J by central differences as an independent
check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (
    ArrayGeometry,
    CompositePaths,
    OfdmConfig,
    array_pair_response,
    irs_difference_response,
)
from .tensor3 import cp_reconstruct
from .training import TrainingConfig, delay_response, factor_matrices

__all__ = [
    "PARAM_CLASSES",
    "FimResult",
    "CrbReport",
    "model_jacobian",
    "fim_analytic",
    "fim_numeric",
    "crb_diag",
]

PARAM_CLASSES = ("ris_az", "ris_el", "bs_aod", "ue_aoa", "gain_re", "gain_im", "delay")


@dataclass(frozen=True)
class FimResult:
    """Real symmetric information matrix plus the layout needed to read it."""

    matrix: np.ndarray
    noise_var: float
    n_components: int

    def class_slice(self, name: str) -> slice:
        k = PARAM_CLASSES.index(name)
        u = self.n_components
        return slice(k * u, (k + 1) * u)

    def labels(self) -> list[str]:
        return [f"{c}[{i}]" for c in PARAM_CLASSES for i in range(self.n_components)]


@dataclass(frozen=True)
class CrbReport:
    """Diagonal error bounds and the conditioning picture behind them.

    values follow the ParamVector layout; unidentifiable marks parameters
    dominated by the information matrix's numerical null space (their
    bound values are meaningless); condition is the post-equilibration
    eigenvalue ratio of the retained spectrum.
    """

    values: np.ndarray
    condition: float
    unidentifiable: np.ndarray
    n_components: int

    def class_values(self, name: str) -> np.ndarray:
        k = PARAM_CLASSES.index(name)
        u = self.n_components
        return self.values[k * u : (k + 1) * u]


def _derivative_triples(
    cp: CompositePaths,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
):
    irs = irs_difference_response(cp.ris_az, cp.ris_el, geom)
    pair = array_pair_response(cp.bs_aod, cp.ue_aoa, geom)
    v_t = tc.ris_profile.T
    f_t = tc.beam_matrix().T

    a = v_t @ irs
    b = (f_t @ pair) * cp.gain
    c = delay_response(cp.delay, ofdm)

    my = np.repeat(np.arange(geom.m_y), geom.m_z)[:, None]
    mz = np.tile(np.arange(geom.m_z), geom.m_y)[:, None]
    nt = np.repeat(np.arange(geom.n_bs), geom.n_ue)[:, None]
    nr = np.tile(np.arange(geom.n_ue), geom.n_bs)[:, None]

    da_az = v_t @ (1j * my * irs)
    da_el = v_t @ (1j * mz * irs)
    # the BS side enters conjugated in the pair response, flipping the sign
    db_aod = (f_t @ (-1j * nt * pair)) * cp.gain
    db_aoa = (f_t @ (1j * nr * pair)) * cp.gain
    db_re = f_t @ pair
    db_im = 1j * db_re
    p_idx = np.arange(1, ofdm.n_training + 1)[:, None]
    dc = c * (-2j * np.pi * ofdm.sample_rate / ofdm.n_tones * p_idx)

    return [
        (da_az, b, c),
        (da_el, b, c),
        (a, db_aod, c),
        (a, db_aoa, c),
        (a, db_re, c),
        (a, db_im, c),
        (a, b, dc),
    ]


def model_jacobian(
    cp,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    classes=PARAM_CLASSES,
) -> np.ndarray:
    """Complex Jacobian of the vectorized clean tensor, class-major columns.

    Column (k, u) is the rank-one derivative tensor of component u with
    respect to parameter class classes[k], flattened in C order. With all
    classes kept, fim_analytic equals (2/noise_var) Re{J^H J}. Any object
    carrying the composite-path fields works for cp, estimates included.
    """
    triples = _derivative_triples(cp, tc, geom, ofdm)
    u = cp.count
    cols = []
    for name in classes:
        if name not in PARAM_CLASSES:
            raise ValueError(f"unknown parameter class {name!r}")
        a, b, c = triples[PARAM_CLASSES.index(name)]
        cols.append(np.einsum("ir,jr,kr->ijkr", a, b, c).reshape(-1, u))
    return np.concatenate(cols, axis=1)


def fim_analytic(
    cp: CompositePaths,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    noise_var: float,
) -> FimResult:
    """Closed-form information matrix, block by parameter class.

    Block (X, Y) is (2/noise_var) Re{(X_a^H Y_a) o (X_b^H Y_b) o
    (X_c^H Y_c)} with o the entrywise product: the Gram of two rank-one
    tensor derivatives factorizes over the modes. Scales as 1/noise_var.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    triples = _derivative_triples(cp, tc, geom, ofdm)
    u = cp.count
    n = len(PARAM_CLASSES) * u
    fim = np.empty((n, n))
    for i, (ai, bi, ci) in enumerate(triples):
        for j, (aj, bj, cj) in enumerate(triples):
            if j < i:
                continue
            block = (ai.conj().T @ aj) * (bi.conj().T @ bj) * (ci.conj().T @ cj)
            block = (2.0 / noise_var) * block.real
            fim[i * u : (i + 1) * u, j * u : (j + 1) * u] = block
            if j > i:
                fim[j * u : (j + 1) * u, i * u : (i + 1) * u] = block.T
    fim = 0.5 * (fim + fim.T)
    return FimResult(matrix=fim, noise_var=float(noise_var), n_components=u)


def _paths_from_vector(vec: np.ndarray, u: int, template: CompositePaths) -> CompositePaths:
    return CompositePaths(
        gain=vec[4 * u : 5 * u] + 1j * vec[5 * u : 6 * u],
        delay=vec[6 * u : 7 * u],
        ris_az=vec[0:u],
        ris_el=vec[u : 2 * u],
        bs_aod=vec[2 * u : 3 * u],
        ue_aoa=vec[3 * u : 4 * u],
        n_bs_paths=template.n_bs_paths,
        n_ue_paths=template.n_ue_paths,
    )


def fim_numeric(
    cp: CompositePaths,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    noise_var: float,
    step: float = 1e-5,
) -> FimResult:
    """Finite-difference oracle for :func:`fim_analytic`.

    Central differences on the vectorized noiseless tensor; the step is
    relative to each parameter's natural scale (1 for angles and gains,
    the delay aliasing period for delays), keeping the Jacobian in the
    same per-second units as the analytic blocks.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    if step <= 0:
        raise ValueError("step must be positive")
    u = cp.count
    vec = np.concatenate([
        cp.ris_az, cp.ris_el, cp.bs_aod, cp.ue_aoa,
        cp.gain.real, cp.gain.imag, cp.delay,
    ])
    scales = np.ones(7 * u)
    scales[6 * u :] = ofdm.alias_period

    def clean(v):
        paths = _paths_from_vector(v, u, cp)
        return cp_reconstruct(factor_matrices(paths, tc, geom, ofdm)).data.ravel()

    n_entries = tc.n_slots * tc.n_frames * tc.n_streams * ofdm.n_training
    jac = np.empty((n_entries, 7 * u), dtype=np.complex128)
    for k in range(7 * u):
        h = step * scales[k]
        lo, hi = vec.copy(), vec.copy()
        lo[k] -= h
        hi[k] += h
        jac[:, k] = (clean(hi) - clean(lo)) / (2.0 * h)
    fim = (2.0 / noise_var) * (jac.conj().T @ jac).real
    fim = 0.5 * (fim + fim.T)
    return FimResult(matrix=fim, noise_var=float(noise_var), n_components=u)


def crb_diag(fim: FimResult, rcond: float = 1e-12) -> CrbReport:
    """Diagonal of the pseudo-inverse, computed on the equilibrated matrix.

    Delay rows dwarf angle rows (seconds vs radians scaling), so raw
    inversion is hopeless; symmetric Jacobi scaling by 1/sqrt(diag) first
    brings the spectrum into range, and the eigenvalue cutoff then only
    drops genuinely uninformative directions. Parameters whose null-space
    projector weight exceeds 1/2 are flagged unidentifiable.
    """
    omega = fim.matrix
    d = np.diag(omega).copy()
    s = np.where(d > 0, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 1.0)
    scaled = s[:, None] * omega * s[None, :]
    scaled = 0.5 * (scaled + scaled.T)
    w, vecs = np.linalg.eigh(scaled)
    wmax = max(w.max(), 0.0)
    kept = w > rcond * wmax if wmax > 0 else np.zeros_like(w, dtype=bool)
    inv_w = np.where(kept, 1.0 / np.where(kept, w, 1.0), 0.0)
    pinv_scaled = (vecs * inv_w) @ vecs.T
    values = s**2 * np.diag(pinv_scaled)
    null_diag = ((vecs[:, ~kept] ** 2).sum(axis=1)) if (~kept).any() else np.zeros(w.size)
    condition = float(wmax / w[kept].min()) if kept.any() else np.inf
    return CrbReport(
        values=values,
        condition=condition,
        unidentifiable=null_diag > 0.5,
        n_components=fim.n_components,
    )
