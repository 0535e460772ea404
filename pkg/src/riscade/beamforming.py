"""Joint active/passive beamforming from cascade-channel path parameters.

Pipeline: pick a subset of composite paths with well-separated array
angles, shape the reflecting surface toward them on the unit-modulus
manifold, then build per-subcarrier digital precoders from a truncated SVD
of the resulting effective channel, optionally factorized into a
frequency-flat analog stage and per-subcarrier baseband stages.

Convention: the reflection vector v enters the effective channel as
diag(v), which makes the per-path surface gain |a_irs(az, el)^T v|^2 (no
conjugate). All gains and optimizer objectives here use that pairing so a
returned v plugs straight into the channel product.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import (
    ArrayGeometry,
    CompositePaths,
    OfdmConfig,
    delay_phases,
    irs_difference_response,
    steering_bs,
    steering_ue,
)

__all__ = [
    "BeamformingConfig",
    "BeamformingSolution",
    "spectral_efficiency",
    "effective_channel",
    "effective_channel_stack",
    "select_paths",
    "optimize_ris_phases",
    "passive_gains",
    "passive_gain_matrix",
    "water_filling",
    "digital_precoders",
    "hybrid_factorize",
    "design_beamforming",
    "save_solution",
    "load_solution",
]

_LN2 = np.log(2.0)


@dataclass
class BeamformingConfig:
    """Power budget, noise level, stream/RF counts, and optimizer knobs.

    bs_corr_max / ue_corr_max are the path-separation thresholds: two
    selected paths must have normalized steering correlations strictly
    below both. power_mode picks the digital precoder power allocation.
    n_rf_tx / n_rf_rx enable the hybrid stage when set (>= n_streams).
    """

    tx_power: float = 1.0
    noise_var: float = 0.1
    n_streams: int = 2
    n_rf_tx: int | None = None
    n_rf_rx: int | None = None
    bs_corr_max: float = 0.3
    ue_corr_max: float = 0.3
    power_mode: str = "waterfill"
    max_iters: int = 500
    grad_tol: float = 1e-6
    armijo_slope: float = 1e-4
    armijo_contract: float = 0.5
    hybrid_rounds: int = 50

    def __post_init__(self):
        if self.tx_power <= 0 or self.noise_var <= 0:
            raise ValueError("tx_power and noise_var must be positive")
        if self.n_streams < 1:
            raise ValueError("n_streams must be at least 1")
        for name in ("n_rf_tx", "n_rf_rx"):
            v = getattr(self, name)
            if v is not None and v < self.n_streams:
                raise ValueError(f"{name} must be >= n_streams")
        if not (0 < self.bs_corr_max < 1 and 0 < self.ue_corr_max < 1):
            raise ValueError("correlation thresholds must lie in (0, 1)")
        if self.power_mode not in ("waterfill", "equal"):
            raise ValueError("power_mode must be 'waterfill' or 'equal'")
        if self.max_iters < 1 or self.grad_tol <= 0 or self.hybrid_rounds < 1:
            raise ValueError("bad optimizer settings")
        if not (0 < self.armijo_contract < 1) or self.armijo_slope <= 0:
            raise ValueError("bad line-search settings")


@dataclass
class BeamformingSolution:
    """Everything the design stage produces.

    v: unit-modulus reflection vector (M,)
    selected: chosen composite-path indices, strongest first (n_streams,)
    f_digital, w_digital: per-subcarrier SVD precoders/combiners
    f_rf/f_bb/w_rf/w_bb: hybrid factors, None when the hybrid stage is off
    se_digital / se_hybrid: spectral efficiency on the design channel
    """

    v: np.ndarray
    selected: np.ndarray
    f_digital: np.ndarray
    w_digital: np.ndarray
    se_digital: float
    f_rf: np.ndarray | None = None
    f_bb: np.ndarray | None = None
    w_rf: np.ndarray | None = None
    w_bb: np.ndarray | None = None
    se_hybrid: float | None = None

    @property
    def spectral_efficiency(self) -> float:
        return self.se_hybrid if self.se_hybrid is not None else self.se_digital


def _as_stack(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be a matrix or a stack of matrices")
    return arr


def spectral_efficiency(channels, precoders, combiners, noise_var: float) -> float:
    """Average bits/s/Hz over subcarriers.

    (1/P) sum_p log2 det(I + (1/noise_var) pinv(W_p) H_p F_p F_p^H H_p^H W_p).
    The combiner enters through its Moore-Penrose inverse; a rank-deficient
    combiner triggers a warning and the pseudoinverse cutoff handles it.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    h = _as_stack(channels, "channels")
    f = _as_stack(precoders, "precoders")
    w = _as_stack(combiners, "combiners")
    n_p, n_r, n_t = h.shape
    if f.shape[0] != n_p or w.shape[0] != n_p:
        raise ValueError("stacks disagree on the subcarrier count")
    if f.shape[1] != n_t or w.shape[1] != n_r or f.shape[2] != w.shape[2]:
        raise ValueError("precoder/combiner dims disagree with the channel")
    n_s = f.shape[2]
    total = 0.0
    eye = np.eye(n_s)
    for p in range(n_p):
        if np.linalg.matrix_rank(w[p]) < n_s:
            warnings.warn("rank-deficient combiner, using pseudoinverse cutoff")
        hf = h[p] @ f[p]
        inner = eye + (np.linalg.pinv(w[p]) @ hf) @ (hf.conj().T @ w[p]) / noise_var
        _, logdet = np.linalg.slogdet(inner)
        total += logdet / _LN2
    return float(total / n_p)


def effective_channel(paths, v: np.ndarray, geom: ArrayGeometry, ofdm: OfdmConfig, p: int) -> np.ndarray:
    """End-to-end user x BS channel for reflection pattern v at pilot p.

    sum_u gain_u delay_u(p) (a_irs(az_u, el_u)^T v / sqrt(M))
          a_ue(aoa_u) a_bs(aod_u)^H
    which equals ris_ue_channel @ diag(v) @ bs_ris_channel when built from
    the true composite parameters.
    """
    v = np.asarray(v, dtype=np.complex128).ravel()
    if v.size != geom.m:
        raise ValueError("reflection vector length must equal the RIS size")
    a_irs = irs_difference_response(paths.ris_az, paths.ris_el, geom)
    coef = paths.gain * delay_phases(paths.delay, ofdm, p) * (a_irs.T @ v) / np.sqrt(geom.m)
    a_ue = np.exp(1j * np.outer(np.arange(geom.n_ue), paths.ue_aoa)) / np.sqrt(geom.n_ue)
    a_bs = np.exp(1j * np.outer(np.arange(geom.n_bs), paths.bs_aod)) / np.sqrt(geom.n_bs)
    return (a_ue * coef) @ a_bs.conj().T


def effective_channel_stack(paths, v, geom: ArrayGeometry, ofdm: OfdmConfig, subcarriers=None) -> np.ndarray:
    """effective_channel stacked over subcarriers (defaults to the pilots)."""
    if subcarriers is None:
        subcarriers = range(1, ofdm.n_training + 1)
    return np.stack([effective_channel(paths, v, geom, ofdm, p) for p in subcarriers])


def _steering_correlations(angles: np.ndarray, n: int) -> np.ndarray:
    cols = np.exp(1j * np.outer(np.arange(n), angles)) / np.sqrt(n)
    return np.abs(cols.conj().T @ cols)


def select_paths(paths, geom: ArrayGeometry, cfg: BeamformingConfig) -> np.ndarray:
    """Indices of the n_streams strongest mutually separated paths.

    Feasible means every selected pair keeps both BS and user steering
    correlations below the thresholds. Greedy pass in descending |gain|^2;
    for up to 12 candidate paths an exhaustive scan guarantees the
    feasible set with the largest total power. Strongest-first order.
    """
    gains2 = np.abs(np.asarray(paths.gain)) ** 2
    u = gains2.size
    n_s = cfg.n_streams
    if n_s > u:
        raise ValueError(f"cannot select {n_s} paths out of {u}")
    corr_bs = _steering_correlations(np.asarray(paths.bs_aod), geom.n_bs)
    corr_ue = _steering_correlations(np.asarray(paths.ue_aoa), geom.n_ue)
    ok = (corr_bs < cfg.bs_corr_max) & (corr_ue < cfg.ue_corr_max)
    np.fill_diagonal(ok, True)

    order = np.argsort(-gains2, kind="stable")
    greedy: list[int] = []
    for idx in order:
        if all(ok[idx, j] for j in greedy):
            greedy.append(int(idx))
            if len(greedy) == n_s:
                break
    best = greedy if len(greedy) == n_s else None
    best_power = gains2[best].sum() if best is not None else -1.0

    if u <= 12:
        for combo in itertools.combinations(range(u), n_s):
            if all(ok[i, j] for i, j in itertools.combinations(combo, 2)):
                power = gains2[list(combo)].sum()
                if power > best_power + 1e-15:
                    best, best_power = list(combo), power
        if best is None:
            largest = 0
            for k in range(n_s - 1, 0, -1):
                if any(
                    all(ok[i, j] for i, j in itertools.combinations(c, 2))
                    for c in itertools.combinations(range(u), k)
                ):
                    largest = k
                    break
            raise ValueError(
                f"no feasible set of {n_s} separated paths; largest feasible size is {largest}"
            )
    elif best is None:
        raise ValueError(
            f"no feasible set of {n_s} separated paths found greedily; "
            f"reached size {len(greedy)}"
        )
    sel = np.asarray(best)
    return sel[np.argsort(-gains2[sel], kind="stable")]


def _unit_modulus_maximize(v0, value_grad, cfg: BeamformingConfig):
    """Riemannian gradient ascent on the product-of-circles manifold.

    value_grad(v) -> (objective, euclidean gradient wrt conj(v)). Tangent
    projection g - Re(g conj(v)) v, entrywise phase retraction, Armijo
    backtracking. Returns the best iterate seen.
    """
    v = v0 / np.abs(v0)
    f, g = value_grad(v)
    best_v, best_f = v, f
    step = 1.0
    for _ in range(cfg.max_iters):
        tang = g - np.real(g * v.conj()) * v
        slope2 = np.vdot(tang, tang).real
        if np.sqrt(slope2) < cfg.grad_tol:
            break
        step = min(step * 2.0, 1e8)
        accepted = False
        while step >= 1e-14:
            # |v + s t| = sqrt(1 + s^2 |t|^2) entrywise, never zero
            cand = v + step * tang
            cand = cand / np.abs(cand)
            fc, gc = value_grad(cand)
            if fc >= f + cfg.armijo_slope * step * slope2:
                accepted = True
                break
            step *= cfg.armijo_contract
        if not accepted:
            break
        v, f, g = cand, fc, gc
        if f > best_f:
            best_f, best_v = f, v
    return best_v, best_f


def passive_gains(v, paths, geom: ArrayGeometry, indices=None) -> np.ndarray:
    """Surface gain |a_irs(az_u, el_u)^T v|^2 per path (max M at alignment)."""
    v = np.asarray(v, dtype=np.complex128).ravel()
    az = np.asarray(paths.ris_az)
    el = np.asarray(paths.ris_el)
    if indices is not None:
        az, el = az[indices], el[indices]
    a = irs_difference_response(az, el, geom)
    return np.abs(a.T @ v) ** 2


def passive_gain_matrix(v, cp: CompositePaths, selected, geom: ArrayGeometry) -> np.ndarray:
    """Cross-path surface gains d_ij = a_irs(cross(i,j))^T v for a selected set.

    Entry (i, j) pairs the BS-side leg of selected path i with the
    user-side leg of selected path j; the diagonal reproduces the per-path
    gains. Used to monitor how diagonal the effective coupling is.
    """
    v = np.asarray(v, dtype=np.complex128).ravel()
    selected = np.asarray(selected, dtype=int)
    k = selected.size
    d = np.empty((k, k), dtype=np.complex128)
    for i in range(k):
        for j in range(k):
            u = cp.cross_index(int(selected[i]), int(selected[j]))
            a = irs_difference_response(cp.ris_az[u], cp.ris_el[u], geom)[:, 0]
            d[i, j] = a @ v
    return d


def optimize_ris_phases(paths, selected, geom: ArrayGeometry, cfg: BeamformingConfig) -> np.ndarray:
    """Unit-modulus reflection vector for a selected path set.

    Maximizes sum_i log2(1 + (tx_power |gain_i|^2 / (n_streams noise_var))
    |a_i^T v|^2) by Riemannian ascent. Multi-start: one run from the
    gain-weighted conjugate-phase mix and one from each path's own
    conjugate alignment (exact single-path optimum); best objective wins.
    """
    selected = np.asarray(selected, dtype=int)
    a_cols = irs_difference_response(
        np.asarray(paths.ris_az)[selected], np.asarray(paths.ris_el)[selected], geom
    )
    gains = np.abs(np.asarray(paths.gain)[selected])
    c = cfg.tx_power * gains**2 / (cfg.n_streams * cfg.noise_var)

    def value_grad(v):
        z = a_cols.T @ v
        g2 = np.abs(z) ** 2
        f = np.sum(np.log1p(c * g2)) / _LN2
        coef = c / ((1.0 + c * g2) * _LN2)
        return f, a_cols.conj() @ (coef * z)

    starts = []
    mix = a_cols.conj() @ gains
    mix[np.abs(mix) < 1e-12] = 1.0
    starts.append(mix / np.abs(mix))
    for i in range(selected.size):
        starts.append(np.conj(a_cols[:, i]) / np.abs(a_cols[:, i]))

    best_v, best_f = None, -np.inf
    for v0 in starts:
        v, f = _unit_modulus_maximize(v0, value_grad, cfg)
        if f > best_f:
            best_v, best_f = v, f
    return best_v


def water_filling(sing_vals, power: float, noise_var: float) -> np.ndarray:
    """Per-stream powers max(level - noise_var/s_i^2, 0) summing to power.

    Exact water level from the sorted KKT conditions, no iteration.
    """
    s = np.asarray(sing_vals, dtype=float)
    if power <= 0 or noise_var <= 0:
        raise ValueError("power and noise_var must be positive")
    if np.any(s < 0):
        raise ValueError("singular values must be nonnegative")
    inv = np.full(s.shape, np.inf)
    pos = s > 0
    if not pos.any():
        raise ValueError("all-zero singular values carry no power")
    inv[pos] = noise_var / s[pos] ** 2
    order = np.argsort(inv)
    alloc = np.zeros_like(s)
    k_active = 1
    for k in range(1, pos.sum() + 1):
        level = (power + inv[order[:k]].sum()) / k
        if level > inv[order[k - 1]]:
            k_active = k
        else:
            break
    level = (power + inv[order[:k_active]].sum()) / k_active
    active = order[:k_active]
    alloc[active] = level - inv[active]
    return alloc


def digital_precoders(channels, cfg: BeamformingConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier truncated-SVD precoders and combiners.

    W_p = leading left singular vectors; F_p = leading right singular
    vectors scaled by the water-filling powers, or by sqrt(tx_power /
    n_streams) in equal mode. Warns when a channel's numerical rank is
    below n_streams.
    """
    h = _as_stack(channels, "channels")
    n_p, n_r, n_t = h.shape
    n_s = cfg.n_streams
    if n_s > min(n_r, n_t):
        raise ValueError("n_streams exceeds the channel dimensions")
    f = np.empty((n_p, n_t, n_s), dtype=np.complex128)
    w = np.empty((n_p, n_r, n_s), dtype=np.complex128)
    for p in range(n_p):
        uu, ss, vh = np.linalg.svd(h[p])
        if ss[n_s - 1] <= max(n_r, n_t) * np.finfo(float).eps * max(ss[0], 1e-300):
            warnings.warn(f"channel rank below {n_s} streams at subcarrier index {p}")
        w[p] = uu[:, :n_s]
        v1 = vh[:n_s].conj().T
        if cfg.power_mode == "waterfill":
            alloc = water_filling(ss[:n_s], cfg.tx_power, cfg.noise_var)
            f[p] = v1 * np.sqrt(alloc)
        else:
            f[p] = np.sqrt(cfg.tx_power / n_s) * v1
    return f, w


def hybrid_factorize(
    targets,
    n_rf: int,
    cfg: BeamformingConfig,
    power: float | None = None,
):
    """Frequency-flat unit-modulus analog factor plus per-subcarrier
    baseband factors approximating a stack of target matrices.

    Alternates exact least-squares baseband updates with Riemannian
    gradient descent on the analog entries (same manifold kernel as the
    reflection optimizer); the summed squared residual never increases.
    When power is given, each baseband matrix is finally scaled down (only
    if needed) so ||RF @ BB_p||_F^2 <= power.

    Returns (rf, bb stack, residual trace per outer round).
    """
    t = _as_stack(targets, "targets")
    n_p, n_rows, n_s = t.shape
    if n_rf < n_s:
        raise ValueError("n_rf must be at least the stream count")
    if n_rf > n_rows:
        raise ValueError("n_rf exceeds the array size")

    u0 = np.linalg.svd(t[0], full_matrices=True)[0][:, :n_rf]
    rf = np.exp(1j * np.angle(u0))
    rf[u0 == 0] = 1.0

    inner_cfg = BeamformingConfig(
        tx_power=cfg.tx_power,
        noise_var=cfg.noise_var,
        n_streams=cfg.n_streams,
        max_iters=50,
        grad_tol=cfg.grad_tol,
        armijo_slope=cfg.armijo_slope,
        armijo_contract=cfg.armijo_contract,
    )

    bb = np.empty((n_p, n_rf, n_s), dtype=np.complex128)
    trace = []
    prev = np.inf
    for _ in range(cfg.hybrid_rounds):
        pinv_rf = np.linalg.pinv(rf)
        for p in range(n_p):
            bb[p] = pinv_rf @ t[p]

        def value_grad(vec):
            m = vec.reshape(n_rows, n_rf)
            diff = np.einsum("ij,pjk->pik", m, bb) - t
            val = -np.vdot(diff, diff).real
            grad = -np.einsum("pik,pjk->ij", diff, bb.conj())
            return val, grad.ravel()

        vec, neg_res = _unit_modulus_maximize(rf.ravel(), value_grad, inner_cfg)
        rf = vec.reshape(n_rows, n_rf)
        res = -neg_res
        trace.append(res)
        if prev - res <= 1e-12 * max(prev, 1.0):
            break
        prev = res

    pinv_rf = np.linalg.pinv(rf)
    for p in range(n_p):
        bb[p] = pinv_rf @ t[p]
        if power is not None:
            nrm2 = np.linalg.norm(rf @ bb[p]) ** 2
            if nrm2 > power:
                bb[p] *= np.sqrt(power / nrm2)
    return rf, bb, np.asarray(trace)


def design_beamforming(
    paths,
    geom: ArrayGeometry,
    ofdm: OfdmConfig,
    cfg: BeamformingConfig,
    subcarriers=None,
    hybrid: bool | None = None,
) -> BeamformingSolution:
    """Full design from path parameters (true or estimated).

    Selects paths, optimizes the reflection vector, reconstructs the
    effective channel on the given subcarriers (pilots by default), builds
    digital precoders, and factorizes them into hybrid form when RF chain
    counts are configured (or hybrid=True forces it).
    """
    if hybrid is None:
        hybrid = cfg.n_rf_tx is not None and cfg.n_rf_rx is not None
    selected = select_paths(paths, geom, cfg)
    v = optimize_ris_phases(paths, selected, geom, cfg)
    channels = effective_channel_stack(paths, v, geom, ofdm, subcarriers)
    f_dig, w_dig = digital_precoders(channels, cfg)
    se_dig = spectral_efficiency(channels, f_dig, w_dig, cfg.noise_var)
    sol = BeamformingSolution(
        v=v,
        selected=selected,
        f_digital=f_dig,
        w_digital=w_dig,
        se_digital=se_dig,
    )
    if hybrid:
        if cfg.n_rf_tx is None or cfg.n_rf_rx is None:
            raise ValueError("hybrid design needs n_rf_tx and n_rf_rx")
        sol.f_rf, sol.f_bb, _ = hybrid_factorize(f_dig, cfg.n_rf_tx, cfg, power=cfg.tx_power)
        sol.w_rf, sol.w_bb, _ = hybrid_factorize(w_dig, cfg.n_rf_rx, cfg, power=None)
        f_h = np.einsum("ij,pjk->pik", sol.f_rf, sol.f_bb)
        w_h = np.einsum("ij,pjk->pik", sol.w_rf, sol.w_bb)
        sol.se_hybrid = spectral_efficiency(channels, f_h, w_h, cfg.noise_var)
    return sol


def save_solution(sol: BeamformingSolution, path) -> None:
    """npz serialization; hybrid fields stored only when present."""
    data = {
        "v": sol.v,
        "selected": sol.selected,
        "f_digital": sol.f_digital,
        "w_digital": sol.w_digital,
        "se_digital": sol.se_digital,
    }
    if sol.se_hybrid is not None:
        data.update(
            f_rf=sol.f_rf, f_bb=sol.f_bb, w_rf=sol.w_rf, w_bb=sol.w_bb,
            se_hybrid=sol.se_hybrid,
        )
    np.savez(path, **data)


def load_solution(path) -> BeamformingSolution:
    with np.load(path) as z:
        sol = BeamformingSolution(
            v=z["v"],
            selected=z["selected"],
            f_digital=z["f_digital"],
            w_digital=z["w_digital"],
            se_digital=float(z["se_digital"]),
        )
        if "se_hybrid" in z:
            sol.f_rf = z["f_rf"]
            sol.f_bb = z["f_bb"]
            sol.w_rf = z["w_rf"]
            sol.w_bb = z["w_bb"]
            sol.se_hybrid = float(z["se_hybrid"])
    return sol
