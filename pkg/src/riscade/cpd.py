"""CP decomposition solvers for the received training tensor.

Three fitting routes:

* :func:`als_fit` - alternating least squares; each sweep solves the three
  unfolded linear systems exactly and the squared misfit is non-increasing.
* :func:`als_fit_regularized` - ALS on the ridge-penalized objective for an
  overestimated rank, with small components pruned afterwards.
* :func:`vandermonde_fit` - closed-form solver exploiting the fact that the
  mode-3 factor columns are geometric sequences in the delay generators:
  a truncated SVD of the mode-1 unfolding transpose, a shift-invariance
  eigenproblem for the generators, per-component back-projection for mode-2
  and a final least-squares solve for mode-1.

:func:`match_components` aligns two factor triples (optimal assignment on
the product of per-mode cosine similarities) for permutation/scale-invariant
comparisons.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .kernels import cp_fit_residual, khatri_rao
from .tensor3 import ComplexTensor3, FactorTriple, mode_unfold

__all__ = [
    "AlsOptions",
    "CpdResult",
    "ComponentMatch",
    "als_fit",
    "als_fit_regularized",
    "vandermonde_fit",
    "match_components",
    "save_objective_trace",
]


@dataclass
class AlsOptions:
    """Knobs for the ALS solvers.

    tol is the relative objective-decrease stopping threshold; ridge is the
    fallback regularizer used only when a subproblem is rank-deficient;
    reg_weight is the ridge penalty of the regularized variant;
    prune_threshold drops components whose triple column-norm product falls
    below threshold * largest after a regularized fit.
    """

    max_sweeps: int = 500
    tol: float = 1e-8
    ridge: float = 1e-10
    reg_weight: float = 1e-3
    prune_threshold: float = 1e-2
    init: str = "svd"  # 'svd' or 'random'

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")
        if self.tol < 0 or self.ridge < 0 or self.reg_weight < 0:
            raise ValueError("tol, ridge and reg_weight must be nonnegative")
        if not 0 <= self.prune_threshold < 1:
            raise ValueError("prune_threshold must lie in [0, 1)")
        if self.init not in ("svd", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class CpdResult:
    """Fitted factors plus solver diagnostics.

    objective_trace holds the objective actually minimized (squared misfit,
    plus the ridge penalty for the regularized variant) after the
    initialization and after every sweep; it is non-increasing.
    """

    factors: FactorTriple
    objective_trace: np.ndarray
    converged: bool
    effective_rank: int
    rank_deficient: bool = False
    ill_conditioned: bool = False

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


@dataclass
class ComponentMatch:
    """Alignment of an estimated factor triple with a reference one.

    permutation[r] is the estimate column matching reference column r;
    scales[mode, r] is the complex scale minimizing the column residual
    after permutation; residual is the total relative error left.
    """

    permutation: np.ndarray
    scales: np.ndarray
    residual: float


def _init_factors(
    y: ComplexTensor3, rank: int, how: str, rng: np.random.Generator | None
) -> list[np.ndarray]:
    def rand_cols(n_rows, n_cols, gen):
        cols = gen.standard_normal((n_rows, n_cols)) + 1j * gen.standard_normal((n_rows, n_cols))
        return cols / np.maximum(np.linalg.norm(cols, axis=0), 1e-300)

    # deterministic fallback generator keeps seedless calls reproducible
    gen = rng if rng is not None else np.random.default_rng(0)
    out = []
    for mode in (1, 2, 3):
        m = mode_unfold(y, mode)
        if how == "random":
            out.append(rand_cols(m.shape[0], rank, gen))
            continue
        u, _, _ = np.linalg.svd(m, full_matrices=False)
        k = min(rank, u.shape[1])
        cols = u[:, :k]
        if k < rank:
            cols = np.concatenate([cols, rand_cols(m.shape[0], rank - k, gen)], axis=1)
        out.append(cols)
    return out


def _ls_factor(k: np.ndarray, rhs: np.ndarray, ridge: float) -> tuple[np.ndarray, bool]:
    """Solve min ||k x - rhs||_F; ridge fallback when k is rank-deficient."""
    x, _, rank, _ = np.linalg.lstsq(k, rhs, rcond=None)
    if rank == k.shape[1]:
        return x, False
    gram = k.conj().T @ k
    scale = max(np.trace(gram).real / max(k.shape[1], 1), 1.0)
    x = np.linalg.solve(gram + ridge * scale * np.eye(k.shape[1]), k.conj().T @ rhs)
    return x, True


def _ridge_factor(k: np.ndarray, rhs: np.ndarray, mu: float) -> np.ndarray:
    gram = k.conj().T @ k + mu * np.eye(k.shape[1])
    return np.linalg.solve(gram, k.conj().T @ rhs)


def _als_engine(
    y: ComplexTensor3,
    rank: int,
    opts: AlsOptions,
    rng: np.random.Generator | None,
    mu: float,
) -> CpdResult:
    if rank < 1:
        raise ValueError("rank must be positive")
    y1t = mode_unfold(y, 1).T
    y2t = mode_unfold(y, 2).T
    y3t = mode_unfold(y, 3).T
    a, b, c = _init_factors(y, rank, opts.init, rng)

    def objective(a_, b_, c_):
        fit = cp_fit_residual(y.data, a_, b_, c_)
        if mu > 0:
            fit += mu * (
                np.linalg.norm(a_) ** 2 + np.linalg.norm(b_) ** 2 + np.linalg.norm(c_) ** 2
            )
        return fit

    trace = [objective(a, b, c)]
    deficient = False
    converged = False
    for _ in range(opts.max_sweeps):
        if mu > 0:
            a = _ridge_factor(khatri_rao(c, b), y1t, mu).T
            b = _ridge_factor(khatri_rao(c, a), y2t, mu).T
            c = _ridge_factor(khatri_rao(b, a), y3t, mu).T
        else:
            a, d1 = _ls_factor(khatri_rao(c, b), y1t, opts.ridge)
            a = a.T
            b, d2 = _ls_factor(khatri_rao(c, a), y2t, opts.ridge)
            b = b.T
            c, d3 = _ls_factor(khatri_rao(b, a), y3t, opts.ridge)
            c = c.T
            if (d1 or d2 or d3) and not deficient:
                deficient = True
                warnings.warn(
                    "rank-deficient least-squares subproblem; using ridge fallback",
                    stacklevel=3,
                )
        cur = objective(a, b, c)
        prev = trace[-1]
        trace.append(cur)
        if prev - cur <= opts.tol * max(prev, 1e-300):
            converged = True
            break

    return CpdResult(
        factors=FactorTriple(a, b, c),
        objective_trace=np.asarray(trace),
        converged=converged,
        effective_rank=rank,
        rank_deficient=deficient,
    )


def als_fit(
    y: ComplexTensor3,
    rank: int,
    opts: AlsOptions | None = None,
    rng: np.random.Generator | None = None,
) -> CpdResult:
    """Plain ALS fit at the given rank.

    Initialization takes the leading left singular vectors of each unfolding
    ('svd', the default), padding with random unit columns when an unfolding
    has fewer than ``rank``; pass a Generator to control that randomness
    (a fixed default generator is used otherwise).
    """
    return _als_engine(y, rank, opts or AlsOptions(), rng, mu=0.0)


def als_fit_regularized(
    y: ComplexTensor3,
    rank: int,
    opts: AlsOptions | None = None,
    rng: np.random.Generator | None = None,
) -> CpdResult:
    """Ridge-penalized ALS for an overestimated rank, with pruning.

    Minimizes misfit + reg_weight * (sum of squared factor norms); each block
    update solves its penalized subproblem exactly, so the traced objective
    is non-increasing. After convergence, components whose triple
    column-norm product falls below prune_threshold * largest are dropped;
    effective_rank reports the kept count.
    """
    opts = opts or AlsOptions()
    res = _als_engine(y, rank, opts, rng, mu=opts.reg_weight)
    energy = res.factors.column_norms()
    top = energy.max() if energy.size else 0.0
    keep = np.flatnonzero(energy >= opts.prune_threshold * top) if top > 0 else np.arange(rank)
    if keep.size == 0:
        keep = np.array([int(np.argmax(energy))])
    return CpdResult(
        factors=res.factors.select(keep),
        objective_trace=res.objective_trace,
        converged=res.converged,
        effective_rank=int(keep.size),
        rank_deficient=res.rank_deficient,
    )


def vandermonde_fit(y: ComplexTensor3, rank: int) -> CpdResult:
    """Closed-form CP fit using the geometric structure of the mode-3 columns.

    Requires rank <= min(dim1, (dim3 - 1) * dim2). Steps: truncated SVD of
    the mode-1 unfolding transpose (rows ordered with the mode-3 index
    slowest); the shift-invariance system between the first/last dim2-row
    blocks is solved and eigendecomposed, eigenvalues giving the delay
    generators (kept as-is, not projected to the unit circle); mode-2
    columns come from conjugate correlation against each generator's
    signature; mode-1 closes with a least-squares solve.

    Near-coincident generators (pairwise gap below 1e-6) trigger a
    conditioning warning and set ``ill_conditioned`` on the result.
    """
    if rank < 1:
        raise ValueError("rank must be positive")
    n1, n2, n3 = y.dims
    feasible = min(n1, (n3 - 1) * n2)
    if rank > feasible:
        raise ValueError(
            f"rank {rank} infeasible for dims {y.dims}: the shift-invariance "
            f"construction supports at most {feasible}"
        )

    y1t = np.ascontiguousarray(mode_unfold(y, 1).T)  # (n3*n2, n1), mode-3 slowest
    u, s, _ = np.linalg.svd(y1t, full_matrices=False)
    if s[rank - 1] <= 1e-10 * s[0]:
        warnings.warn(
            "numerical rank of the unfolding is below the requested rank",
            stacklevel=2,
        )
    u = u[:, :rank]
    u_head = u[: (n3 - 1) * n2]
    u_tail = u[n2:]
    shift, _, _, _ = np.linalg.lstsq(u_head, u_tail, rcond=None)
    gens, mixing = np.linalg.eig(shift)

    ill = False
    if rank > 1:
        gap = np.abs(gens[:, None] - gens[None, :])
        gap[np.diag_indices(rank)] = np.inf
        if gap.min() < 1e-6:
            ill = True
            warnings.warn(
                "near-coincident delay generators; factor separation is "
                "ill-conditioned",
                stacklevel=2,
            )

    powers = np.arange(1, n3 + 1)
    c = gens[None, :] ** powers[:, None]  # (n3, rank)
    blocks = (u @ mixing).reshape(n3, n2, rank)
    b = np.einsum("ptu,pu->tu", blocks, c.conj()) / np.sum(np.abs(c) ** 2, axis=0)
    a, _, _, _ = np.linalg.lstsq(khatri_rao(c, b), y1t, rcond=None)
    a = a.T

    objective = cp_fit_residual(y.data, a, b, c)
    return CpdResult(
        factors=FactorTriple(a, b, c),
        objective_trace=np.asarray([objective]),
        converged=True,
        effective_rank=rank,
        ill_conditioned=ill,
    )


def _normalized_columns(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=0)
    return m / np.maximum(norms, 1e-300)


def match_components(estimate: FactorTriple, reference: FactorTriple) -> ComponentMatch:
    """Align estimate components with reference components.

    Assignment maximizes the summed per-pair score, where a pair's score is
    the product over the three modes of the normalized column correlation
    magnitudes. Returns the permutation (estimate column matching each
    reference column), per-mode optimal complex scales, and the relative
    residual after applying both.
    """
    if estimate.rank != reference.rank:
        raise ValueError(
            f"rank mismatch: estimate {estimate.rank} vs reference {reference.rank}"
        )
    if estimate.dims != reference.dims:
        raise ValueError(
            f"dimension mismatch: estimate {estimate.dims} vs reference {reference.dims}"
        )
    score = np.ones((reference.rank, estimate.rank))
    for ref_m, est_m in zip(
        (reference.a, reference.b, reference.c), (estimate.a, estimate.b, estimate.c)
    ):
        score *= np.abs(_normalized_columns(ref_m).conj().T @ _normalized_columns(est_m))
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(reference.rank, dtype=int)
    perm[rows] = cols

    scales = np.zeros((3, reference.rank), dtype=np.complex128)
    num = 0.0
    den = 0.0
    for mode, (ref_m, est_m) in enumerate(
        zip((reference.a, reference.b, reference.c), (estimate.a, estimate.b, estimate.c))
    ):
        for r in range(reference.rank):
            e = est_m[:, perm[r]]
            t = ref_m[:, r]
            ee = np.vdot(e, e).real
            scales[mode, r] = np.vdot(e, t) / ee if ee > 0 else 0.0
            num += np.linalg.norm(t - scales[mode, r] * e) ** 2
            den += np.linalg.norm(t) ** 2
    residual = float(np.sqrt(num / den)) if den > 0 else 0.0
    return ComponentMatch(permutation=perm, scales=scales, residual=residual)


def save_objective_trace(result: CpdResult, path) -> None:
    """Write the per-sweep objective trace as a two-column CSV."""
    with open(path, "w") as fh:
        fh.write("sweep,objective\n")
        for i, val in enumerate(result.objective_trace):
            fh.write(f"{i},{val:.17g}\n")
