"""Nuisance learners for the causal estimators: outcome means and propensities.

Three learner families share one interface: "lm" (OLS / logit by
Newton-Raphson), "rf" (random forests), "nn" (a small MLP trained with the
package's own autodiff and Adam). rf and nn predictions are cross-fitted;
lm is fit on the full sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from .autodiff import Head, adam_init, adam_step, build_mlp
from .seeds import derive_seed, substream

__all__ = [
    "EstimatorError",
    "NuisanceOptions",
    "NuisanceFit",
    "fit_ols",
    "fit_logit_newton",
    "OutcomeModel",
    "PropensityModel",
    "fit_outcome_model",
    "fit_propensity_model",
    "fit_nuisances",
    "PROPENSITY_CLIP",
]

LEARNERS = ("lm", "rf", "nn")
PROPENSITY_CLIP = 1e-6


class EstimatorError(RuntimeError):
    """An estimator or nuisance fit could not be computed."""


@dataclass
class NuisanceOptions:
    rf_trees: int = 500
    rf_min_leaf: int = 5
    nn_hidden: int = 64
    nn_epochs: int = 200
    nn_batch: int = 64
    nn_step_size: float = 1e-3
    nn_val_fraction: float = 0.2
    nn_patience: int = 20
    folds: int = 5


def _clip_propensity(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)


def _with_intercept(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([np.ones(X.shape[0]), X])


# ---- linear family -------------------------------------------------------


def fit_ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """OLS coefficients with intercept first. Errors on rank deficiency."""
    Z = _with_intercept(X)
    if Z.shape[0] < Z.shape[1]:
        raise EstimatorError(f"OLS needs at least {Z.shape[1]} rows, got {Z.shape[0]}")
    beta, _, rank, _ = np.linalg.lstsq(Z, np.asarray(y, dtype=float), rcond=None)
    if rank < Z.shape[1]:
        raise EstimatorError(f"design matrix is rank deficient (rank {rank} < {Z.shape[1]})")
    return beta


def fit_logit_newton(
    X: np.ndarray, w: np.ndarray, tol: float = 1e-8, max_iter: int = 100
) -> tuple[np.ndarray, list[str]]:
    """Logistic regression by Newton-Raphson. Returns (beta, flags).

    Stops when the max coefficient change drops below ``tol``. Under
    separation the iterates run off; detected via huge fitted logits and
    reported as a flag, with the clipped fit returned.
    """
    Z = _with_intercept(X)
    w = np.asarray(w, dtype=float)
    if not set(np.unique(w)) <= {0.0, 1.0}:
        raise EstimatorError("treatment vector must be 0/1")
    beta = np.zeros(Z.shape[1])
    flags: list[str] = []
    converged = False
    for _ in range(max_iter):
        eta = Z @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        g = Z.T @ (w - p)
        s = np.maximum(p * (1.0 - p), 1e-12)
        H = (Z * s[:, None]).T @ Z
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(H + 1e-10 * np.eye(H.shape[0]), g)
            flags.append("singular_hessian")
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    eta = Z @ beta
    if np.max(np.abs(eta)) > 30.0:
        flags.append("separation_clipped")
    if not converged and "separation_clipped" not in flags:
        flags.append("no_convergence")
    return beta, flags


# ---- model wrappers ------------------------------------------------------


@dataclass
class OutcomeModel:
    predict: object  # callable (n, d) -> (n,)
    learner: str
    flags: list[str] = field(default_factory=list)


@dataclass
class PropensityModel:
    predict: object  # callable (n, d) -> (n,) clipped probabilities
    learner: str
    flags: list[str] = field(default_factory=list)


def _rf_mtry(d: int, classification: bool) -> int:
    return max(1, math.ceil(math.sqrt(d)) if classification else math.ceil(d / 3))


def fit_outcome_model(
    X: np.ndarray, y: np.ndarray, learner: str, seed: int, options: NuisanceOptions | None = None
) -> OutcomeModel:
    options = options or NuisanceOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if learner == "lm":
        beta = fit_ols(X, y)
        return OutcomeModel(lambda M: _with_intercept(M) @ beta, "lm")
    if learner == "rf":
        model = RandomForestRegressor(
            n_estimators=options.rf_trees,
            max_features=_rf_mtry(X.shape[1], classification=False),
            min_samples_leaf=options.rf_min_leaf,
            bootstrap=True,
            random_state=seed,
            n_jobs=1,
        )
        model.fit(X, y)
        return OutcomeModel(lambda M: model.predict(np.atleast_2d(M)), "rf")
    if learner == "nn":
        predict, flags = _fit_mlp(X, y, seed, options, propensity=False)
        return OutcomeModel(predict, "nn", flags)
    raise EstimatorError(f"unknown learner {learner!r}")


def fit_propensity_model(
    X: np.ndarray, w: np.ndarray, learner: str, seed: int, options: NuisanceOptions | None = None
) -> PropensityModel:
    options = options or NuisanceOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, dtype=float)
    classes = np.unique(w)
    if len(classes) == 1:
        p = _clip_propensity(np.array([classes[0]]))[0]
        return PropensityModel(lambda M: np.full(np.atleast_2d(M).shape[0], p), learner, ["single_class"])
    if learner == "lm":
        beta, flags = fit_logit_newton(X, w)

        def predict(M):
            eta = _with_intercept(M) @ beta
            return _clip_propensity(1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500))))

        return PropensityModel(predict, "lm", flags)
    if learner == "rf":
        model = RandomForestClassifier(
            n_estimators=options.rf_trees,
            max_features=_rf_mtry(X.shape[1], classification=True),
            min_samples_leaf=options.rf_min_leaf,
            bootstrap=True,
            random_state=seed,
            n_jobs=1,
        )
        model.fit(X, w.astype(int))
        one = int(np.flatnonzero(model.classes_ == 1)[0])

        def predict(M):
            return _clip_propensity(model.predict_proba(np.atleast_2d(M))[:, one])

        return PropensityModel(predict, "rf")
    if learner == "nn":
        predict, flags = _fit_mlp(X, w, seed, options, propensity=True)
        return PropensityModel(lambda M: _clip_propensity(predict(M)), "nn", flags)
    raise EstimatorError(f"unknown learner {learner!r}")


# ---- MLP nuisance (autodiff-backed) --------------------------------------


def _fit_mlp(X, t, seed, options: NuisanceOptions, propensity: bool):
    """One hidden relu layer; identity output trained on MSE for means,
    on logistic loss (sigmoid applied at prediction time) for propensities."""
    n, d = X.shape
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0.0] = 1.0
    Xs = (X - mu) / sd
    if propensity:
        ts = np.asarray(t, dtype=float)
        y_loc, y_scale = 0.0, 1.0
    else:
        y_loc = float(np.mean(t))
        y_scale = float(np.std(t)) or 1.0
        ts = (np.asarray(t, dtype=float) - y_loc) / y_scale

    rng = substream(seed, "mlp")
    net = build_mlp([d, options.nn_hidden, 1], rng, heads=[Head(0, 1, "identity")])
    flags: list[str] = []

    def raw_predict(M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return net.forward((M - mu) / sd)[:, 0]

    def predict(M):
        z = raw_predict(M)
        if propensity:
            return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        return z * y_scale + y_loc

    if options.nn_epochs == 0:
        flags.append("zero_epochs")
        return predict, flags

    # 20% validation split for early stopping when there is room for one
    idx = rng.permutation(n)
    n_val = int(round(options.nn_val_fraction * n)) if n >= 10 else 0
    val, train = idx[:n_val], idx[n_val:]
    state = adam_init(net.n_params, alpha=options.nn_step_size)
    params = net.params_flat()

    def loss_on(ids) -> float:
        z = net.forward(Xs[ids])[:, 0]
        if propensity:
            # logistic loss on logits, stable form
            return float(np.mean(np.logaddexp(0.0, z) - ts[ids] * z))
        return float(np.mean((z - ts[ids]) ** 2))

    best = (math.inf, params.copy())
    stale = 0
    m = max(1, min(options.nn_batch, len(train)))
    for _ in range(options.nn_epochs):
        order = rng.permutation(len(train))
        for k in range(len(train) // m):
            ids = train[order[k * m : (k + 1) * m]]
            cache = net.forward_cache(Xs[ids])
            z = cache.output[:, 0]
            if propensity:
                p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
                dz = (p - ts[ids]) / len(ids)
            else:
                dz = 2.0 * (z - ts[ids]) / len(ids)
            grad, _ = net.backward(cache, dz[:, None])
            params, state = adam_step(state, params, grad)
            net.set_params_flat(params)
        if n_val:
            cur = loss_on(val)
            if cur < best[0] - 1e-9:
                best = (cur, params.copy())
                stale = 0
            else:
                stale += 1
                if stale >= options.nn_patience:
                    break
    if n_val and math.isfinite(best[0]):
        net.set_params_flat(best[1])
    else:
        flags.append("no_validation_split")
    return predict, flags


# ---- cross-fitting -------------------------------------------------------


@dataclass
class NuisanceFit:
    learner: str
    mu0_hat: np.ndarray  # out-of-fold (or in-sample for lm) control-mean predictions
    e_hat: np.ndarray  # clipped propensity predictions
    fold_id: np.ndarray | None
    flags: list[str] = field(default_factory=list)


def _fold_assignment(w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random folds; falls back to treatment-stratified folds when a plain
    split leaves some training complement without both arms or without
    enough controls."""
    n = len(w)
    plain = np.empty(n, dtype=int)
    plain[rng.permutation(n)] = np.arange(n) % k

    def ok(fold):
        for f in range(k):
            train = fold != f
            if len(np.unique(w[train])) < 2:
                return False
            if (w[train] == 0).sum() < 2:
                return False
        return True

    if ok(plain):
        return plain
    strat = np.empty(n, dtype=int)
    for arm in (0.0, 1.0):
        ids = np.flatnonzero(w == arm)
        ids = ids[rng.permutation(len(ids))]
        strat[ids] = np.arange(len(ids)) % k
    return strat


def fit_nuisances(
    X: np.ndarray,
    w: np.ndarray,
    y: np.ndarray,
    learner: str,
    seed: int,
    options: NuisanceOptions | None = None,
) -> NuisanceFit:
    """Per-unit mu0 and e predictions. rf/nn are K-fold cross-fitted; lm is
    fit once on the full sample."""
    options = options or NuisanceOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(w)
    if learner not in LEARNERS:
        raise EstimatorError(f"unknown learner {learner!r}")
    flags: list[str] = []
    if learner == "lm":
        controls = w == 0.0
        if controls.sum() < 2:
            raise EstimatorError("need at least two control rows for the outcome model")
        om = fit_outcome_model(X[controls], y[controls], "lm", seed, options)
        pm = fit_propensity_model(X, w, "lm", seed, options)
        flags += om.flags + pm.flags
        return NuisanceFit("lm", om.predict(X), pm.predict(X), None, flags)

    k = options.folds
    if n < 2 * k:
        raise EstimatorError(f"need at least {2 * k} rows for {k}-fold cross-fitting, got {n}")
    fold = _fold_assignment(w, k, substream(seed, "folds", learner))
    mu0 = np.empty(n)
    e = np.empty(n)
    for f in range(k):
        hold = fold == f
        train = ~hold
        tc = train & (w == 0.0)
        if tc.sum() < 2:
            raise EstimatorError(f"fold {f}: training complement has too few controls")
        om = fit_outcome_model(
            X[tc], y[tc], learner, derive_seed(seed, "mu0", learner, f), options
        )
        pm = fit_propensity_model(
            X[train], w[train], learner, derive_seed(seed, "e", learner, f), options
        )
        mu0[hold] = om.predict(X[hold])
        e[hold] = pm.predict(X[hold])
        flags += [fl for fl in om.flags + pm.flags if fl not in flags]
    return NuisanceFit(learner, mu0, _clip_propensity(e), fold, flags)
