"""Parameter recovery from fitted CP factors.

Each factor column determines its composite-path parameters only up to an
unknown complex scale, so every estimator maximizes a scale-invariant
normalized correlation magnitude:

* mode-1 column -> RIS azimuth/elevation difference angles
* mode-2 column -> BS departure and user arrival angles
* mode-3 column -> composite delay (unique within the aliasing period)

Searches run a coarse uniform grid followed by golden-section refinement
(alternating per coordinate for the 2-D searches). :func:`resolve_gains`
then removes the per-component scale ambiguity: fitting the three
reconstructed model columns to the estimated ones gives mode-1 and mode-3
scales whose product must cancel against mode-2's, leaving the composite
path gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import (
    ArrayGeometry,
    OfdmConfig,
    array_pair_response,
    cascade_from_paths,
    irs_difference_response,
    steering_bs,
    steering_irs,
    steering_ue,
    wrap_angle,
)
from .crb import model_jacobian
from .tensor3 import FactorTriple, cp_reconstruct
from .training import TrainingConfig, delay_response, factor_matrices

__all__ = [
    "SearchOptions",
    "ParameterEstimate",
    "estimate_irs_angles",
    "estimate_array_angles",
    "estimate_delay",
    "resolve_gains",
    "recover_parameters",
    "refine_estimate",
    "reconstruct_channels",
    "channel_nmse",
    "save_estimate",
    "load_estimate",
]

_INV_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class SearchOptions:
    """Grid sizes and refinement controls for the correlation searches.

    refine_tol is the golden-section bracket tolerance in the search
    variable's units: radians for angles, fraction of the delay aliasing
    period for delays. Components whose peak normalized correlation falls
    below peak_threshold are flagged unreliable.
    """

    irs_grid: tuple[int, int] = (64, 64)
    array_grid: tuple[int, int] = (64, 64)
    delay_grid: int = 256
    refine_passes: int = 60
    refine_tol: float = 1e-8
    peak_threshold: float = 0.2

    def __post_init__(self):
        if min(*self.irs_grid, *self.array_grid, self.delay_grid) < 2:
            raise ValueError("grids need at least 2 points per dimension")
        if self.refine_passes < 0 or self.refine_tol <= 0:
            raise ValueError("bad refinement settings")


@dataclass
class ParameterEstimate:
    """Recovered composite-path parameters, one entry per component.

    Angles are wrapped to [-pi, pi); delays lie in [0, aliasing period).
    peak_* hold the normalized correlation values at the optima; reliable
    flags components whose peaks all cleared the threshold.
    """

    ris_az: np.ndarray
    ris_el: np.ndarray
    bs_aod: np.ndarray
    ue_aoa: np.ndarray
    delay: np.ndarray
    gain: np.ndarray
    peak_irs: np.ndarray
    peak_array: np.ndarray
    peak_delay: np.ndarray
    reliable: np.ndarray

    @property
    def count(self) -> int:
        return self.gain.size


def _golden_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def _check_column(col: np.ndarray, what: str) -> np.ndarray:
    col = np.asarray(col, dtype=np.complex128).ravel()
    if np.linalg.norm(col) == 0:
        raise ValueError(f"all-zero {what} factor column has no direction")
    return col


def _axis_grids(n1: int, n2: int) -> tuple[np.ndarray, np.ndarray]:
    g1 = np.linspace(-np.pi, np.pi, n1, endpoint=False)
    g2 = np.linspace(-np.pi, np.pi, n2, endpoint=False)
    return g1, g2


def _refine_2d(objective, start1, start2, cell1, cell2, opts: SearchOptions):
    # alternating 1-D golden sections; correlated ridges make this zigzag,
    # so run until the joint move stalls instead of a small fixed count
    x1, x2 = start1, start2
    for _ in range(opts.refine_passes):
        x1n, _ = _golden_max(lambda t: objective(t, x2), x1 - cell1, x1 + cell1, opts.refine_tol)
        x2n, _ = _golden_max(lambda t: objective(x1n, t), x2 - cell2, x2 + cell2, opts.refine_tol)
        moved = max(abs(x1n - x1), abs(x2n - x2))
        x1, x2 = x1n, x2n
        if moved <= opts.refine_tol:
            break
    return x1, x2, objective(x1, x2)


def estimate_irs_angles(
    a_col: np.ndarray,
    ris_profile: np.ndarray,
    geom: ArrayGeometry,
    opts: SearchOptions | None = None,
) -> tuple[float, float, float]:
    """RIS difference angles maximizing the normalized correlation of a
    mode-1 factor column with V^T a_irs(az, el).

    Returns (azimuth, elevation, peak correlation).
    """
    opts = opts or SearchOptions()
    a_col = _check_column(a_col, "mode-1")
    v = np.asarray(ris_profile, dtype=np.complex128)
    if v.shape != (geom.m, a_col.size):
        raise ValueError("ris_profile shape disagrees with the geometry/column")

    n1, n2 = opts.irs_grid
    az_grid, el_grid = _axis_grids(n1, n2)
    ay = np.exp(1j * np.outer(np.arange(geom.m_y), az_grid)) / np.sqrt(geom.m_y)
    azv = np.exp(1j * np.outer(np.arange(geom.m_z), el_grid)) / np.sqrt(geom.m_z)

    # ||V^T a_irs|| over the grid: accumulate per slot via the planar split
    den2 = np.zeros((n1, n2))
    v_planes = v.reshape(geom.m_y, geom.m_z, -1)
    for q in range(v.shape[1]):
        den2 += np.abs(ay.T @ v_planes[:, :, q] @ azv) ** 2
    w = (v @ a_col.conj()).reshape(geom.m_y, geom.m_z)
    num = np.abs(ay.T @ w @ azv)
    score = num / (np.sqrt(np.maximum(den2, 1e-300)) * np.linalg.norm(a_col))
    i1, i2 = np.unravel_index(np.argmax(score), score.shape)

    v_t = v.T
    a_norm = np.linalg.norm(a_col)

    def objective(az, el):
        col = v_t @ steering_irs(az, el, geom)
        return abs(np.vdot(a_col, col)) / (np.linalg.norm(col) * a_norm)

    az, el, peak = _refine_2d(
        objective, az_grid[i1], el_grid[i2], 2 * np.pi / n1, 2 * np.pi / n2, opts
    )
    return float(wrap_angle(az)), float(wrap_angle(el)), float(peak)


def estimate_array_angles(
    b_col: np.ndarray,
    beam_matrix: np.ndarray,
    geom: ArrayGeometry,
    opts: SearchOptions | None = None,
) -> tuple[float, float, float]:
    """BS departure / user arrival angles from a mode-2 factor column.

    Maximizes normalized correlation with F^T kron(conj(a_bs), a_ue).
    Returns (bs_aod, ue_aoa, peak correlation).
    """
    opts = opts or SearchOptions()
    b_col = _check_column(b_col, "mode-2")
    f = np.asarray(beam_matrix, dtype=np.complex128)
    if f.shape != (geom.n_bs * geom.n_ue, b_col.size):
        raise ValueError("beam matrix shape disagrees with the geometry/column")

    n1, n2 = opts.array_grid
    bs_grid, ue_grid = _axis_grids(n1, n2)
    a_bs = np.exp(1j * np.outer(np.arange(geom.n_bs), bs_grid)) / np.sqrt(geom.n_bs)
    a_ue = np.exp(1j * np.outer(np.arange(geom.n_ue), ue_grid)) / np.sqrt(geom.n_ue)

    den2 = np.zeros((n1, n2))
    f_planes = f.reshape(geom.n_bs, geom.n_ue, -1)
    for col in range(f.shape[1]):
        den2 += np.abs(a_bs.conj().T @ f_planes[:, :, col] @ a_ue) ** 2
    w = (f @ b_col.conj()).reshape(geom.n_bs, geom.n_ue)
    num = np.abs(a_bs.conj().T @ w @ a_ue)
    score = num / (np.sqrt(np.maximum(den2, 1e-300)) * np.linalg.norm(b_col))
    i1, i2 = np.unravel_index(np.argmax(score), score.shape)

    f_t = f.T
    b_norm = np.linalg.norm(b_col)

    def objective(aod, aoa):
        col = f_t @ np.kron(steering_bs(aod, geom.n_bs).conj(), steering_ue(aoa, geom.n_ue))
        return abs(np.vdot(b_col, col)) / (np.linalg.norm(col) * b_norm)

    aod, aoa, peak = _refine_2d(
        objective, bs_grid[i1], ue_grid[i2], 2 * np.pi / n1, 2 * np.pi / n2, opts
    )
    return float(wrap_angle(aod)), float(wrap_angle(aoa)), float(peak)


def estimate_delay(
    c_col: np.ndarray,
    ofdm: OfdmConfig,
    opts: SearchOptions | None = None,
) -> tuple[float, float]:
    """Composite delay from a mode-3 factor column.

    Maximizes normalized correlation with the pilot delay signature over one
    aliasing period (the search runs on the normalized delay in [0, 1)).
    Returns (delay seconds, peak correlation).
    """
    opts = opts or SearchOptions()
    c_col = _check_column(c_col, "mode-3")
    n_p = ofdm.n_training
    if c_col.size != n_p:
        raise ValueError(f"mode-3 column length {c_col.size} != pilot count {n_p}")

    powers = np.arange(1, n_p + 1)
    xs = np.linspace(0.0, 1.0, opts.delay_grid, endpoint=False)
    grid = np.exp(-2j * np.pi * np.outer(powers, xs))
    c_norm = np.linalg.norm(c_col) * np.sqrt(n_p)
    score = np.abs(c_col.conj() @ grid) / c_norm
    i0 = int(np.argmax(score))

    def objective(x):
        sig = np.exp(-2j * np.pi * x * powers)
        return abs(np.vdot(c_col, sig)) / c_norm

    cell = 1.0 / opts.delay_grid
    x, peak = _golden_max(objective, xs[i0] - cell, xs[i0] + cell, opts.refine_tol)
    return float((x % 1.0) * ofdm.alias_period), float(peak)


def resolve_gains(
    factors: FactorTriple,
    est,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
) -> np.ndarray:
    """Composite path gains from the per-mode scale ambiguities.

    Rebuilds the gain-free model columns at the estimated parameters,
    reads the mode-1 and mode-3 diagonal scalings against the fitted
    factors, and divides them out of the mode-2 scaling (the three must
    multiply to one for a consistent decomposition), leaving the gains.
    Raises when a scale is numerically degenerate (|scale| < 1e-12).
    """
    a_model = tc.ris_profile.T @ irs_difference_response(est.ris_az, est.ris_el, geom)
    b_model = tc.beam_matrix().T @ array_pair_response(est.bs_aod, est.ue_aoa, geom)
    c_model = delay_response(est.delay, ofdm)

    scale_a = np.diag(np.linalg.pinv(a_model) @ factors.a)
    scale_c = np.diag(np.linalg.pinv(c_model) @ factors.c)
    if np.abs(scale_a).min() < 1e-12 or np.abs(scale_c).min() < 1e-12:
        raise ValueError("degenerate per-component scaling; gains unrecoverable")
    raw_b = np.diag(np.linalg.pinv(b_model) @ factors.b)
    return raw_b * scale_a * scale_c


def recover_parameters(
    factors: FactorTriple,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    opts: SearchOptions | None = None,
) -> ParameterEstimate:
    """Full per-component parameter recovery from a fitted factor triple."""
    opts = opts or SearchOptions()
    u = factors.rank
    beam = tc.beam_matrix()
    ris_az = np.zeros(u)
    ris_el = np.zeros(u)
    bs_aod = np.zeros(u)
    ue_aoa = np.zeros(u)
    delay = np.zeros(u)
    peak_irs = np.zeros(u)
    peak_array = np.zeros(u)
    peak_delay = np.zeros(u)
    for i in range(u):
        ris_az[i], ris_el[i], peak_irs[i] = estimate_irs_angles(
            factors.a[:, i], tc.ris_profile, geom, opts
        )
        bs_aod[i], ue_aoa[i], peak_array[i] = estimate_array_angles(
            factors.b[:, i], beam, geom, opts
        )
        delay[i], peak_delay[i] = estimate_delay(factors.c[:, i], ofdm, opts)
    est = ParameterEstimate(
        ris_az=ris_az,
        ris_el=ris_el,
        bs_aod=bs_aod,
        ue_aoa=ue_aoa,
        delay=delay,
        gain=np.zeros(u, dtype=np.complex128),
        peak_irs=peak_irs,
        peak_array=peak_array,
        peak_delay=peak_delay,
        reliable=(
            (peak_irs >= opts.peak_threshold)
            & (peak_array >= opts.peak_threshold)
            & (peak_delay >= opts.peak_threshold)
        ),
    )
    est.gain = resolve_gains(factors, est, tc, geom, ofdm)
    return est


_SCORING_CLASSES = ("ris_az", "ris_el", "bs_aod", "ue_aoa", "gain_re", "gain_im")


def refine_estimate(
    est: ParameterEstimate,
    tensor,
    tc: TrainingConfig,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    passes: int = 1,
    damping: float = 1e-3,
) -> ParameterEstimate:
    """Damped scoring passes over angles and gains against the raw tensor.

    The per-column searches treat components one at a time, which leaves
    their errors correlated across components; refitting the full model to
    the observed training tensor with a Gauss-Newton step on the angle and
    gain blocks removes most of that residue. Delays stay at their search
    values: the generator correlation already pins them tightly, and the
    steep phase ramp makes a joint step badly scaled.

    tensor is the observed training tensor (ComplexTensor3 or ndarray of
    shape (Q, T*N_s, P)). Returns a new estimate; a step that cannot lower
    the squared misfit leaves the parameters unchanged.
    """
    if passes < 0 or damping <= 0:
        raise ValueError("passes must be >= 0 and damping positive")
    data = np.asarray(tensor.data if hasattr(tensor, "data") else tensor,
                      dtype=np.complex128)
    work = ParameterEstimate(
        ris_az=est.ris_az.copy(),
        ris_el=est.ris_el.copy(),
        bs_aod=est.bs_aod.copy(),
        ue_aoa=est.ue_aoa.copy(),
        delay=est.delay.copy(),
        gain=est.gain.copy(),
        peak_irs=est.peak_irs.copy(),
        peak_array=est.peak_array.copy(),
        peak_delay=est.peak_delay.copy(),
        reliable=est.reliable.copy(),
    )
    u = work.count

    def misfit(candidate):
        model = cp_reconstruct(factor_matrices(candidate, tc, geom, ofdm)).data
        if model.shape != data.shape:
            raise ValueError(
                f"tensor shape {data.shape} disagrees with the model {model.shape}"
            )
        r = (data - model).ravel()
        return r, float(np.vdot(r, r).real)

    resid, obj = misfit(work)
    lam = damping
    eye = np.eye(len(_SCORING_CLASSES) * u)
    for _ in range(passes):
        jac = model_jacobian(work, tc, geom, ofdm, classes=_SCORING_CLASSES)
        grad = (jac.conj().T @ resid).real
        hess = (jac.conj().T @ jac).real
        # Jacobi scaling keeps the damped solve meaningful across the very
        # different natural units of the blocks
        s = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
        hs = hess * s[:, None] * s[None, :]
        gs = grad * s
        accepted = False
        for _ in range(12):
            step = s * np.linalg.solve(hs + lam * eye, gs)
            blocks = step.reshape(len(_SCORING_CLASSES), u)
            cand = ParameterEstimate(
                ris_az=wrap_angle(work.ris_az + blocks[0]),
                ris_el=wrap_angle(work.ris_el + blocks[1]),
                bs_aod=wrap_angle(work.bs_aod + blocks[2]),
                ue_aoa=wrap_angle(work.ue_aoa + blocks[3]),
                delay=work.delay,
                gain=work.gain + blocks[4] + 1j * blocks[5],
                peak_irs=work.peak_irs,
                peak_array=work.peak_array,
                peak_delay=work.peak_delay,
                reliable=work.reliable,
            )
            cand_resid, cand_obj = misfit(cand)
            if cand_obj < obj:
                work, resid, obj = cand, cand_resid, cand_obj
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
    return work


def reconstruct_channels(
    est,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    subcarriers=None,
) -> np.ndarray:
    """Cascade channel estimates, shape (len(subcarriers), n_bs*n_ue, M).

    Defaults to the pilot subcarriers 1..n_training.
    """
    if subcarriers is None:
        subcarriers = range(1, ofdm.n_training + 1)
    return np.stack([cascade_from_paths(est, geom, ofdm, p) for p in subcarriers])


def channel_nmse(estimated: np.ndarray, reference: np.ndarray) -> float:
    """sum_p ||est_p - ref_p||_F^2 / sum_p ||ref_p||_F^2."""
    estimated = np.asarray(estimated)
    reference = np.asarray(reference)
    if estimated.shape != reference.shape:
        raise ValueError("channel stacks must share a shape")
    err = np.linalg.norm(estimated - reference) ** 2
    ref = np.linalg.norm(reference) ** 2
    if ref == 0:
        raise ValueError("reference channel stack is identically zero")
    return float(err / ref)


_CSV_HEADER = (
    "component,ris_az,ris_el,bs_aod,ue_aoa,delay_s,gain_re,gain_im,"
    "peak_irs,peak_array,peak_delay,reliable"
)


def save_estimate(est: ParameterEstimate, path) -> None:
    """One CSV row per component, columns as in the header line."""
    with open(path, "w") as fh:
        fh.write(_CSV_HEADER + "\n")
        for i in range(est.count):
            fh.write(
                f"{i},{est.ris_az[i]:.17g},{est.ris_el[i]:.17g},"
                f"{est.bs_aod[i]:.17g},{est.ue_aoa[i]:.17g},{est.delay[i]:.17g},"
                f"{est.gain[i].real:.17g},{est.gain[i].imag:.17g},"
                f"{est.peak_irs[i]:.17g},{est.peak_array[i]:.17g},"
                f"{est.peak_delay[i]:.17g},{int(est.reliable[i])}\n"
            )


def load_estimate(path) -> ParameterEstimate:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != _CSV_HEADER:
            raise ValueError("unrecognized estimate CSV header")
        for line in fh:
            if line.strip():
                rows.append([float(x) for x in line.strip().split(",")])
    if not rows:
        raise ValueError("estimate CSV holds no components")
    arr = np.asarray(rows)
    return ParameterEstimate(
        ris_az=arr[:, 1],
        ris_el=arr[:, 2],
        bs_aod=arr[:, 3],
        ue_aoa=arr[:, 4],
        delay=arr[:, 5],
        gain=arr[:, 6] + 1j * arr[:, 7],
        peak_irs=arr[:, 8],
        peak_array=arr[:, 9],
        peak_delay=arr[:, 10],
        reliable=arr[:, 11].astype(bool),
    )
