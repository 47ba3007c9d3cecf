"""ATT estimators: difference in means, bias-corrected matching, and
conditional-mean / Horvitz-Thompson / doubly-robust estimators under three
nuisance learners, plus an approximate-residual-balancing estimator.

Each estimator returns a point estimate and a standard error. Propensity
based estimators (ht, dr) drop units with estimated scores above 0.95.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import ElasticNetCV
from sklearn.model_selection import KFold

from .nuisance import (
    EstimatorError,
    NuisanceFit,
    NuisanceOptions,
    fit_nuisances,
    fit_ols,
)
from .seeds import derive_seed, substream

__all__ = [
    "EstimatorResult",
    "EstimatorOptions",
    "ESTIMATOR_NAMES",
    "att_diff",
    "att_bcm",
    "att_cm",
    "att_ht",
    "att_dr",
    "att_rb",
    "trim",
    "run_all",
]

ESTIMATOR_NAMES = (
    "diff",
    "bcm",
    "cm_lm",
    "cm_rf",
    "cm_nn",
    "ht_lm",
    "ht_rf",
    "ht_nn",
    "dr_lm",
    "dr_rf",
    "dr_nn",
    "rb",
)

TRIM_THRESHOLD = 0.95


@dataclass
class EstimatorResult:
    name: str
    tau: float
    se: float
    n_used: int
    flags: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class EstimatorOptions:
    estimators: tuple[str, ...] = ESTIMATOR_NAMES
    nuisance: NuisanceOptions = field(default_factory=NuisanceOptions)
    trim_threshold: float = TRIM_THRESHOLD
    rb_zeta: float = 0.5
    rb_iterations: int = 2000
    rb_tol: float = 1e-8
    rb_cv_folds: int = 10


def _split(y: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if not set(np.unique(w)) <= {0.0, 1.0}:
        raise EstimatorError("treatment vector must be 0/1")
    y1, y0 = y[w == 1.0], y[w == 0.0]
    if len(y1) == 0 or len(y0) == 0:
        raise EstimatorError("both treatment arms must be non-empty")
    return y1, y0


def att_diff(y: np.ndarray, w: np.ndarray) -> EstimatorResult:
    """Difference in arm means with the conservative two-sample variance."""
    y1, y0 = _split(y, w)
    if len(y1) < 2 or len(y0) < 2:
        raise EstimatorError("need at least two units per arm for a variance")
    tau = float(y1.mean() - y0.mean())
    se = math.sqrt(y1.var(ddof=1) / len(y1) + y0.var(ddof=1) / len(y0))
    return EstimatorResult("diff", tau, se, len(y1) + len(y0))


def att_bcm(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> EstimatorResult:
    """1-NN matching on diagonal-Mahalanobis distance with replacement,
    OLS bias adjustment fit on the controls, matched-pair variance inflated
    for control reuse."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    _split(y, w)
    treated = np.flatnonzero(w == 1.0)
    controls = np.flatnonzero(w == 0.0)
    if len(treated) < 2:
        raise EstimatorError("matching variance needs at least two treated units")
    if len(controls) < X.shape[1] + 2:
        raise EstimatorError("too few controls for the bias-adjustment regression")

    var = X.var(axis=0, ddof=1)
    flags = []
    live = var > 0.0
    if not live.all():
        # constant columns carry no matching information and are collinear
        # with the bias-adjustment intercept
        flags.append("constant_covariate_ignored_in_distance")
    Xl = X[:, live]
    inv = 1.0 / var[live]

    # nearest control per treated; ties resolved to the lowest control index
    Xt, Xc = Xl[treated], Xl[controls]
    d2 = ((Xt[:, None, :] - Xc[None, :, :]) ** 2 * inv[None, None, :]).sum(axis=2)
    match = controls[np.argmin(d2, axis=1)]

    beta = fit_ols(Xl[controls], y[controls])
    mu0 = np.column_stack([np.ones(len(y)), Xl]) @ beta

    d = (y[treated] - y[match]) - (mu0[treated] - mu0[match])
    tau = float(d.mean())
    n1 = len(treated)
    reuse = np.bincount(match, minlength=len(y))[controls]  # times each control is used
    sigma2 = d.var(ddof=1) / 2.0
    se = math.sqrt(sigma2 * (n1 + float((reuse.astype(float) ** 2).sum())) / n1**2)
    return EstimatorResult("bcm", tau, se, n1 + len(controls), flags)


def att_cm(y: np.ndarray, w: np.ndarray, mu0_hat: np.ndarray) -> EstimatorResult:
    """Mean over treated of y minus the predicted untreated mean."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    _split(y, w)
    r = y[w == 1.0] - np.asarray(mu0_hat, dtype=float)[w == 1.0]
    if len(r) < 2:
        raise EstimatorError("need at least two treated units for a variance")
    return EstimatorResult("cm", float(r.mean()), math.sqrt(r.var(ddof=1) / len(r)), len(y))


def _odds_weights(w: np.ndarray, e_hat: np.ndarray) -> np.ndarray:
    """Self-normalized odds weights over controls (sum to one)."""
    ctrl = w == 0.0
    odds = e_hat[ctrl] / (1.0 - e_hat[ctrl])
    total = odds.sum()
    if total <= 0.0:
        raise EstimatorError("all control odds weights are zero")
    return odds / total


def _ratio_se(a: np.ndarray, weighted_vals: np.ndarray, omega: np.ndarray, n1: int) -> float:
    """Variance of (treated mean) - (weighted control mean) via the
    linearized per-unit contributions of both terms."""
    cbar = float((omega * weighted_vals).sum())
    c = -n1 * omega * (weighted_vals - cbar)
    return math.sqrt(float((a**2).sum() + (c**2).sum()) / n1**2)


def att_ht(y: np.ndarray, w: np.ndarray, e_hat: np.ndarray) -> EstimatorResult:
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    e_hat = np.asarray(e_hat, dtype=float)
    y1, _ = _split(y, w)
    if len(y1) < 2:
        raise EstimatorError("need at least two treated units for a variance")
    omega = _odds_weights(w, e_hat)
    y0 = y[w == 0.0]
    tau = float(y1.mean() - (omega * y0).sum())
    se = _ratio_se(y1 - y1.mean(), y0, omega, len(y1))
    return EstimatorResult("ht", tau, se, len(y))


def att_dr(
    y: np.ndarray, w: np.ndarray, mu0_hat: np.ndarray, e_hat: np.ndarray
) -> EstimatorResult:
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    r = y - np.asarray(mu0_hat, dtype=float)
    _split(y, w)
    r1 = r[w == 1.0]
    if len(r1) < 2:
        raise EstimatorError("need at least two treated units for a variance")
    omega = _odds_weights(w, np.asarray(e_hat, dtype=float))
    r0 = r[w == 0.0]
    tau = float(r1.mean() - (omega * r0).sum())
    se = _ratio_se(r1 - r1.mean(), r0, omega, len(r1))
    return EstimatorResult("dr", tau, se, len(y))


def trim(w: np.ndarray, e_hat: np.ndarray, threshold: float = TRIM_THRESHOLD) -> np.ndarray:
    """Keep mask: drop any unit, either arm, with estimated score above the
    threshold. Errors if an arm empties out."""
    w = np.asarray(w, dtype=float)
    keep = np.asarray(e_hat, dtype=float) <= threshold
    if not np.any(keep & (w == 1.0)) or not np.any(keep & (w == 0.0)):
        raise EstimatorError("trimming removed an entire treatment arm")
    return keep


# ---- approximate residual balancing --------------------------------------


def _balance_weights(
    X0: np.ndarray, xbar1: np.ndarray, zeta: float, iterations: int, tol: float
) -> tuple[np.ndarray, bool]:
    """Minimize zeta*||g||^2 + (1-zeta)*||xbar1 - X0'g||_inf^2 over the
    simplex by entropic mirror descent. Returns (gamma, converged)."""
    n0 = X0.shape[0]
    gamma = np.full(n0, 1.0 / n0)
    best = math.inf
    stale = 0

    def objective(g):
        r = xbar1 - X0.T @ g
        return zeta * float(g @ g) + (1.0 - zeta) * float(np.max(np.abs(r)) ** 2)

    g0 = None
    for t in range(iterations):
        r = xbar1 - X0.T @ gamma
        j = int(np.argmax(np.abs(r)))
        grad = 2.0 * zeta * gamma - 2.0 * (1.0 - zeta) * r[j] * X0[:, j]
        if g0 is None:
            g0 = max(1.0, float(np.max(np.abs(grad))))
        eta = 1.0 / (g0 * math.sqrt(t + 1.0))
        scaled = grad - grad.max()  # shift-invariant update, avoids overflow
        gamma = gamma * np.exp(-eta * scaled)
        gamma = gamma / gamma.sum()
        cur = objective(gamma)
        if cur < best - tol:
            best = cur
            stale = 0
        else:
            stale += 1
            if stale >= 50:
                return gamma, True
    return gamma, False


def att_rb(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    seed: int,
    options: EstimatorOptions | None = None,
) -> EstimatorResult:
    """Approximate residual balancing: elastic net for the control outcome
    model, balancing weights for the leftover covariate imbalance."""
    options = options or EstimatorOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    y1, _ = _split(y, w)
    ctrl = w == 0.0
    X0, y0 = X[ctrl], y[ctrl]
    n0 = len(y0)
    if n0 < 3:
        raise EstimatorError("residual balancing needs at least three controls")
    folds = min(options.rb_cv_folds, n0)
    if folds < 2:
        raise EstimatorError("too few controls for cross-validated elastic net")
    enet = ElasticNetCV(
        l1_ratio=0.5,
        n_alphas=50,
        cv=KFold(n_splits=folds, shuffle=True, random_state=seed % (2**32)),
        max_iter=10000,
        random_state=seed % (2**32),
    )
    flags: list[str] = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        enet.fit(X0, y0)
    beta = np.concatenate([[enet.intercept_], enet.coef_])

    gamma, converged = _balance_weights(
        X0, X[w == 1.0].mean(axis=0), options.rb_zeta, options.rb_iterations, options.rb_tol
    )
    if not converged:
        flags.append("balance_weights_iteration_cap")

    Z = np.column_stack([np.ones(len(y)), X])
    xbar1_aug = Z[w == 1.0].mean(axis=0)
    resid0 = y0 - Z[ctrl] @ beta
    tau = float(y1.mean() - xbar1_aug @ beta - gamma @ resid0)

    n1 = len(y1)
    sigma0_sq = float(resid0.var(ddof=1)) if n0 > 1 else 0.0
    se = math.sqrt(y1.var(ddof=1) / n1 + sigma0_sq * float(gamma @ gamma))
    return EstimatorResult("rb", tau, se, len(y), flags)


# ---- batch runner --------------------------------------------------------


def _attempt(name: str, fn) -> EstimatorResult:
    try:
        res = fn()
        res.name = name
        return res
    except EstimatorError as exc:
        return EstimatorResult(name, math.nan, math.nan, 0, error=str(exc))


def run_all(
    X: np.ndarray,
    w: np.ndarray,
    y: np.ndarray,
    seed: int,
    options: EstimatorOptions | None = None,
) -> dict[str, EstimatorResult]:
    """Run the requested estimators on one sample. Nuisance fits are shared
    across the cm/ht/dr variants of each learner; failures are captured per
    estimator rather than raised."""
    options = options or EstimatorOptions()
    wanted = options.estimators
    out: dict[str, EstimatorResult] = {}
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)

    if "diff" in wanted:
        out["diff"] = _attempt("diff", lambda: att_diff(y, w))
    if "bcm" in wanted:
        out["bcm"] = _attempt("bcm", lambda: att_bcm(X, y, w))

    for learner in ("lm", "rf", "nn"):
        names = [f"{kind}_{learner}" for kind in ("cm", "ht", "dr")]
        if not any(nm in wanted for nm in names):
            continue
        try:
            nf: NuisanceFit = fit_nuisances(
                X, w, y, learner, derive_seed(seed, "nuisance", learner), options.nuisance
            )
        except EstimatorError as exc:
            for nm in names:
                if nm in wanted:
                    out[nm] = EstimatorResult(nm, math.nan, math.nan, 0, error=str(exc))
            continue
        if f"cm_{learner}" in wanted:
            res = _attempt(f"cm_{learner}", lambda: att_cm(y, w, nf.mu0_hat))
            res.flags += nf.flags
            out[f"cm_{learner}"] = res
        if f"ht_{learner}" in wanted or f"dr_{learner}" in wanted:
            try:
                keep = trim(w, nf.e_hat, options.trim_threshold)
            except EstimatorError as exc:
                for nm in (f"ht_{learner}", f"dr_{learner}"):
                    if nm in wanted:
                        out[nm] = EstimatorResult(nm, math.nan, math.nan, 0, error=str(exc))
            else:
                n_trim = int((~keep).sum())
                extra = [f"trimmed_{n_trim}"] if n_trim else []
                if f"ht_{learner}" in wanted:
                    res = _attempt(
                        f"ht_{learner}", lambda: att_ht(y[keep], w[keep], nf.e_hat[keep])
                    )
                    res.flags += extra + nf.flags
                    out[f"ht_{learner}"] = res
                if f"dr_{learner}" in wanted:
                    res = _attempt(
                        f"dr_{learner}",
                        lambda: att_dr(y[keep], w[keep], nf.mu0_hat[keep], nf.e_hat[keep]),
                    )
                    res.flags += extra + nf.flags
                    out[f"dr_{learner}"] = res

    if "rb" in wanted:
        out["rb"] = _attempt("rb", lambda: att_rb(X, y, w, derive_seed(seed, "rb"), options))
    return out
