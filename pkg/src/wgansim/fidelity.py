"""Distributional fidelity diagnostics for synthetic samples.

Exact empirical Wasserstein-1 distances (assignment problem for equal sizes,
transportation LP otherwise), entropically regularized Sinkhorn
approximations with an automatic log-domain fallback, a multivariate normal
benchmark sampler, cross-validated predictability scores, and side-by-side
histogram/correlation reports.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.spatial.distance import cdist

from .nuisance import NuisanceOptions, fit_outcome_model
from .seeds import derive_seed, substream
from .tabular import Dataset

__all__ = [
    "LP_BUDGET_ENTRIES",
    "TransportPlan",
    "exact_wasserstein",
    "SinkhornResult",
    "sinkhorn",
    "MvnModel",
    "fit_mvn",
    "sample_mvn",
    "cv_r2",
    "predictability_profile",
    "ComparisonReport",
    "compare_report",
]

LP_BUDGET_ENTRIES = 4_000_000


def _point_clouds(A, B) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("point clouds must be 2-d arrays (n, d)")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("point clouds must be non-empty")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


@dataclass
class TransportPlan:
    coupling: np.ndarray  # (n, m); rows sum to 1/n, columns to 1/m
    cost: float
    method: str  # "assignment" or "lp"


def exact_wasserstein(A, B, return_plan: bool = False):
    """Wasserstein-1 distance between uniform empirical distributions.

    Equal sizes reduce to an assignment problem; unequal sizes solve the
    transportation LP. Refuses problems whose cost matrix exceeds the entry
    budget; use ``sinkhorn`` for those.
    """
    A, B = _point_clouds(A, B)
    n, m = A.shape[0], B.shape[0]
    if n * m > LP_BUDGET_ENTRIES:
        raise ValueError(
            f"cost matrix would need {n * m} entries (budget {LP_BUDGET_ENTRIES}); "
            "use sinkhorn() for problems this large"
        )
    C = cdist(A, B)
    if n == m:
        rows, cols = linear_sum_assignment(C)
        cost = float(C[rows, cols].mean())
        if not return_plan:
            return cost
        P = np.zeros((n, m))
        P[rows, cols] = 1.0 / n
        return cost, TransportPlan(P, cost, "assignment")

    # transportation LP: variables P_ij >= 0, row sums 1/n, column sums 1/m
    row_idx = np.repeat(np.arange(n), m)
    col_idx = np.tile(np.arange(m), n)
    var_idx = np.arange(n * m)
    A_eq = coo_matrix(
        (
            np.ones(2 * n * m),
            (np.concatenate([row_idx, n + col_idx]), np.concatenate([var_idx, var_idx])),
        ),
        shape=(n + m, n * m),
    ).tocsr()
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    P = res.x.reshape(n, m)
    err = max(
        float(np.max(np.abs(P.sum(axis=1) - 1.0 / n))),
        float(np.max(np.abs(P.sum(axis=0) - 1.0 / m))),
    )
    if err > 1e-9:
        raise RuntimeError(f"transport plan violates marginals by {err:.3e}")
    cost = float((P * C).sum())
    if not return_plan:
        return cost
    return cost, TransportPlan(P, cost, "lp")


# ---- entropic regularization ---------------------------------------------


@dataclass
class SinkhornResult:
    cost: float
    converged: bool
    iterations: int
    used_log_domain: bool
    marginal_error: float


def _sinkhorn_standard(C, epsilon, tol, max_iters):
    """Classic scaling iterations. Returns None on numerical breakdown."""
    n, m = C.shape
    a, b = np.full(n, 1.0 / n), np.full(m, 1.0 / m)
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        K = np.exp(-C / epsilon)
        if not np.all(K.sum(axis=1) > 0) or not np.all(K.sum(axis=0) > 0):
            return None
        v = np.ones(m)
        for it in range(1, max_iters + 1):
            Kv = K @ v
            if not np.all(np.isfinite(Kv)) or np.any(Kv <= 0):
                return None
            u = a / Kv
            Ktu = K.T @ u
            if not np.all(np.isfinite(Ktu)) or np.any(Ktu <= 0):
                return None
            v = b / Ktu
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                return None
            err = float(np.max(np.abs(u * (K @ v) - a)))
            if err < tol:
                P = u[:, None] * K * v[None, :]
                return SinkhornResult(float((P * C).sum()), True, it, False, err)
        P = u[:, None] * K * v[None, :]
        if not np.all(np.isfinite(P)):
            return None
        return SinkhornResult(float((P * C).sum()), False, max_iters, False, err)


def _lse(M, axis):
    mx = M.max(axis=axis, keepdims=True)
    return (mx + np.log(np.exp(M - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _sinkhorn_log(C, epsilon, tol, max_iters):
    """Log-domain iterations with an epsilon-annealing warm start, so very
    small regularization stays numerically stable."""
    n, m = C.shape
    la, lb = -math.log(n), -math.log(m)
    f, g = np.zeros(n), np.zeros(m)
    scale = float(np.median(C)) or 1.0
    levels = []
    eps = scale
    while eps > epsilon * 1.5 and len(levels) < 40:
        levels.append(eps)
        eps /= 2.0
    total = 0

    def plan(f, g, eps):
        return np.exp(la + lb + (f[:, None] + g[None, :] - C) / eps)

    for eps in levels + [epsilon]:
        final = eps == epsilon
        cap = max_iters if final else 50
        for _ in range(cap):
            total += 1
            f = -eps * _lse(lb + (g[None, :] - C) / eps, axis=1)
            g = -eps * _lse(la + (f[:, None] - C) / eps, axis=0)
            P = plan(f, g, eps)
            err = float(np.max(np.abs(P.sum(axis=1) - 1.0 / n)))
            if err < tol:
                break
        if final:
            P = plan(f, g, eps)
            err = max(
                float(np.max(np.abs(P.sum(axis=1) - 1.0 / n))),
                float(np.max(np.abs(P.sum(axis=0) - 1.0 / m))),
            )
            return SinkhornResult(float((P * C).sum()), err < tol, total, True, err)


def sinkhorn(A, B, epsilon: float, tol: float = 1e-6, max_iters: int = 10000) -> SinkhornResult:
    """Entropically regularized transport cost. Starts with the standard
    scaling iterations and falls back to the log domain when they under- or
    overflow. Hitting the iteration cap is reported, not raised."""
    A, B = _point_clouds(A, B)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    C = cdist(A, B)
    res = _sinkhorn_standard(C, epsilon, tol, max_iters)
    if res is not None:
        return res
    return _sinkhorn_log(C, epsilon, tol, max_iters)


# ---- multivariate normal benchmark ---------------------------------------


@dataclass
class MvnModel:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    ridged: bool


def fit_mvn(X) -> MvnModel:
    """Gaussian benchmark fit: sample mean and unbiased covariance. Singular
    covariances get an escalating diagonal ridge, flagged on the model."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise ValueError("need at least two rows to fit a covariance")
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    ridge, ridged = 1e-8, False
    work = cov
    while True:
        try:
            chol = np.linalg.cholesky(work)
            return MvnModel(mean, cov, chol, ridged)
        except np.linalg.LinAlgError:
            work = cov + ridge * np.eye(cov.shape[0])
            ridged = True
            ridge *= 10.0
            if ridge > 1e6:
                raise RuntimeError("covariance could not be regularized")


def sample_mvn(model: MvnModel, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, len(model.mean)))
    return model.mean + z @ model.chol.T


# ---- predictability ------------------------------------------------------


def cv_r2(
    X,
    y,
    learner: str = "lm",
    seed: int = 0,
    folds: int = 5,
    options: NuisanceOptions | None = None,
) -> float:
    """Pooled out-of-fold R^2: one squared-error sum over all held-out
    predictions against the full-sample mean of y."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 2 * folds:
        raise ValueError(f"need at least {2 * folds} rows for {folds}-fold CV")
    tss = float(((y - y.mean()) ** 2).sum())
    if tss == 0.0:
        raise ValueError("target column is constant")
    fold = np.empty(n, dtype=int)
    fold[substream(seed, "cv_r2").permutation(n)] = np.arange(n) % folds
    sse = 0.0
    for f in range(folds):
        hold = fold == f
        model = fit_outcome_model(
            X[~hold], y[~hold], learner, derive_seed(seed, "cv_r2", f), options
        )
        sse += float(((model.predict(X[hold]) - y[hold]) ** 2).sum())
    return 1.0 - sse / tss


def predictability_profile(
    ds: Dataset,
    learner: str = "lm",
    seed: int = 0,
    folds: int = 5,
    options: NuisanceOptions | None = None,
) -> dict[str, float]:
    """cv_r2 of each column given all the others. Constant columns get nan."""
    M = ds.matrix()
    names = [c.name for c in ds.schema]
    out: dict[str, float] = {}
    for j, name in enumerate(names):
        rest = np.delete(M, j, axis=1)
        try:
            out[name] = cv_r2(rest, M[:, j], learner, derive_seed(seed, "profile", j), folds, options)
        except ValueError:
            out[name] = math.nan
    return out


# ---- comparison report ---------------------------------------------------


@dataclass
class ColumnComparison:
    name: str
    real_mean: float
    real_sd: float
    synth_mean: float
    synth_sd: float
    bin_edges: list[float]
    real_density: list[float]
    synth_density: list[float]


@dataclass
class ConditionalComparison:
    target: str
    given: str
    branch: str  # "zero" or "positive"
    n_real: int
    n_synth: int
    bin_edges: list[float]
    real_density: list[float]
    synth_density: list[float]


@dataclass
class ComparisonReport:
    columns: list[ColumnComparison]
    correlation_names: list[str]
    correlation_real: list[list[float]]
    correlation_synth: list[list[float]]
    correlation_max_abs_diff: float
    conditionals: list[ConditionalComparison]
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "columns": [vars(c).copy() for c in self.columns],
            "correlation_names": list(self.correlation_names),
            "correlation_real": self.correlation_real,
            "correlation_synth": self.correlation_synth,
            "correlation_max_abs_diff": self.correlation_max_abs_diff,
            "conditionals": [vars(c).copy() for c in self.conditionals],
            "flags": list(self.flags),
        }


def _shared_hist(real: np.ndarray, synth: np.ndarray, bins: int):
    lo = min(real.min(), synth.min())
    hi = max(real.max(), synth.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    rd, _ = np.histogram(real, bins=edges, density=True)
    sd, _ = np.histogram(synth, bins=edges, density=True)
    return edges.tolist(), rd.tolist(), sd.tolist()


def _safe_corr(M: np.ndarray) -> tuple[np.ndarray, bool]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        corr = np.corrcoef(M, rowvar=False)
    corr = np.atleast_2d(corr)
    bad = not np.all(np.isfinite(corr))
    if bad:
        corr = np.where(np.isfinite(corr), corr, 0.0)
    return corr, bad


def compare_report(
    real: Dataset, synth: Dataset, bins: int = 30, conditionals: tuple[tuple[str, str], ...] = ()
) -> ComparisonReport:
    """Side-by-side marginal histograms on shared bins, correlation matrices,
    and optional conditional histograms splitting a target column on whether
    another column is zero or positive."""
    names = [c.name for c in real.schema]
    if [c.name for c in synth.schema] != names:
        raise ValueError("real and synthetic schemas must list the same columns")
    flags: list[str] = []
    cols = []
    for name in names:
        r, s = real.column(name), synth.column(name)
        edges, rd, sd = _shared_hist(r, s, bins)
        rsd = float(r.std(ddof=1)) if len(r) > 1 else 0.0
        ssd = float(s.std(ddof=1)) if len(s) > 1 else 0.0
        cols.append(
            ColumnComparison(name, float(r.mean()), rsd, float(s.mean()), ssd, edges, rd, sd)
        )

    corr_r, bad_r = _safe_corr(real.matrix())
    corr_s, bad_s = _safe_corr(synth.matrix())
    if bad_r or bad_s:
        flags.append("constant_column_correlation_zeroed")
    max_diff = float(np.max(np.abs(corr_r - corr_s)))

    conds = []
    for target, given in conditionals:
        for branch in ("zero", "positive"):
            rmask = real.column(given) == 0.0 if branch == "zero" else real.column(given) > 0.0
            smask = synth.column(given) == 0.0 if branch == "zero" else synth.column(given) > 0.0
            rt, st = real.column(target)[rmask], synth.column(target)[smask]
            if len(rt) == 0 or len(st) == 0:
                flags.append(f"conditional_{target}_given_{given}_{branch}_empty")
                continue
            edges, rd, sd = _shared_hist(rt, st, bins)
            conds.append(
                ConditionalComparison(target, given, branch, len(rt), len(st), edges, rd, sd)
            )

    return ComparisonReport(
        cols, names, corr_r.tolist(), corr_s.tolist(), max_diff, conds, flags
    )
