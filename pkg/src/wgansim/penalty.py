"""Monotonicity shape penalties for generator training.

Two interchangeable penalties on a generated batch: a test-statistic form
(max over bandwidths and evaluation points of a kernel-weighted slope sum
over its variance estimate) and a simpler kernel-regression first-difference
form. Both return a scalar and its gradient with respect to the response
column only; kernels live on the regressor column, which stays out of the
gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PenaltySpec",
    "ChetverikovResult",
    "chetverikov_statistic",
    "chetverikov_gradient",
    "nw_fit",
    "kernel_fd_penalty",
    "generator_penalty",
]

PENALTY_KINDS = ("chetverikov", "kernel_fd")
DIRECTIONS = ("increasing", "decreasing")
V_FLOOR = 1e-8


@dataclass(frozen=True)
class PenaltySpec:
    """Configuration for a shape restriction imposed during training.

    weight scales the penalty in the generator objective. threshold is the
    hinge floor for the statistic form: the penalty is weight * max(T, threshold).
    """

    weight: float
    kind: str = "chetverikov"
    direction: str = "increasing"
    x_column: int | str = 0
    y_column: int | str = 1
    threshold: float = 0.0
    n_bandwidths: int = 3
    grid_points: int = 30
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"kind must be one of {PENALTY_KINDS}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if not (self.weight >= 0.0 and math.isfinite(self.weight)):
            raise ValueError("weight must be a non-negative finite number")
        if self.n_bandwidths < 1 or self.grid_points < 2:
            raise ValueError("need at least one bandwidth and two grid points")


def _epanechnikov(u: np.ndarray) -> np.ndarray:
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _sorted_xy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise ValueError("x and y must be equal-length vectors")
    if len(x) < 3:
        raise ValueError("need at least three observations")
    if np.ptp(x) == 0.0:
        raise ValueError("regressor column is constant")
    order = np.argsort(x, kind="stable")
    return x[order], y[order], order


def _local_variances(ys: np.ndarray) -> np.ndarray:
    """Consecutive-difference variance proxies in sorted order; the last
    point reuses its left gap."""
    nxt = np.arange(1, len(ys) + 1)
    nxt[-1] = len(ys) - 2
    return (ys[nxt] - ys) ** 2 / 2.0


def _bandwidth_grid(xs: np.ndarray, n_bandwidths: int) -> np.ndarray:
    M = len(xs)
    h_max = float(np.ptp(xs)) / 2.0
    h_min = h_max * (0.3 / M**0.95) ** (1.0 / 3.0)
    hs = []
    k = 0
    while len(hs) < n_bandwidths:
        h = h_max * 0.5**k
        if h < h_min:
            break
        hs.append(h)
        k += 1
    return np.array(hs)


@dataclass
class ChetverikovResult:
    statistic: float
    bandwidth: float
    target_index: int  # position in the x-sorted sample
    clamped: bool  # variance at the argmax hit the floor
    bandwidths: list[float]


def _statistic_core(xs, ys, n_bandwidths, floor):
    M = len(xs)
    sig2 = _local_variances(ys)
    S = np.sign(xs[None, :] - xs[:, None])  # S[k, j] = sign(x_j - x_k)
    best = (-math.inf, None)  # (T, (h, t, u, b, V, clamped))
    hs = _bandwidth_grid(xs, n_bandwidths)
    for h in hs:
        Kt = _epanechnikov((xs[None, :] - xs[:, None]) / h)  # row t: weights at x_t
        U = Kt * (Kt @ S.T)  # U[t, k] = K_tk * sum_j sign(x_j - x_k) K_tj
        b = U @ ys
        V = U @ sig2
        clamp = np.abs(V) < floor
        Veff = np.where(clamp, floor, V)
        T = b / Veff
        t = int(np.argmax(T))
        if T[t] > best[0]:
            best = (float(T[t]), (float(h), t, U[t], float(b[t]), float(Veff[t]), bool(clamp[t])))
    return best, sig2, list(map(float, hs))


def chetverikov_statistic(
    x, y, n_bandwidths: int = 3, floor: float = V_FLOOR
) -> ChetverikovResult:
    """Monotonicity test statistic: max over bandwidths and evaluation points
    of the kernel-weighted downward-slope sum divided by its variance proxy.
    Positive values flag violations of an increasing relationship; variance
    entries below ``floor`` are clamped to it."""
    xs, ys, _ = _sorted_xy(x, y)
    (T, info), _, hs = _statistic_core(xs, ys, n_bandwidths, floor)
    h, t, _, _, _, clamped = info
    return ChetverikovResult(T, h, t, clamped, hs)


def chetverikov_gradient(
    x, y, n_bandwidths: int = 3, floor: float = V_FLOOR
) -> tuple[ChetverikovResult, np.ndarray]:
    """Statistic plus its gradient in the response, holding the maximizing
    (bandwidth, point) pair and any variance clamp fixed. Returned in the
    original row order."""
    xs, ys, order = _sorted_xy(x, y)
    (T, info), sig2, hs = _statistic_core(xs, ys, n_bandwidths, floor)
    h, t, u, b, Veff, clamped = info
    M = len(xs)

    db = u  # b is linear in y with coefficients u
    if clamped:
        dV = np.zeros(M)
    else:
        # V = sum_i u_i sig2_i; sig2_i couples y_i and its neighbor n(i)
        nxt = np.arange(1, M + 1)
        nxt[-1] = M - 2
        diff = ys[nxt] - ys
        dV = -u * diff
        np.add.at(dV, nxt, u * diff)
    grad_sorted = (db * Veff - b * dV) / Veff**2
    grad = np.empty(M)
    grad[order] = grad_sorted
    return ChetverikovResult(T, h, t, clamped, hs), grad


# ---- kernel first-difference penalty -------------------------------------


def nw_fit(x, y, grid, bandwidth: float):
    """Nadaraya-Watson fit at the grid points. Returns (mu, weights, ok)
    where ok marks grid points whose kernel window contains data; weights
    rows are zero where it does not."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    K = _epanechnikov((x[None, :] - grid[:, None]) / bandwidth)
    den = K.sum(axis=1)
    ok = den > 0.0
    W = np.zeros_like(K)
    W[ok] = K[ok] / den[ok, None]
    mu = W @ y
    mu[~ok] = np.nan
    return mu, W, ok


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        raise ValueError("regressor column is constant")
    return 1.06 * sd * len(x) ** (-0.2)


def kernel_fd_penalty(
    x,
    y,
    direction: str = "increasing",
    grid_points: int = 30,
    bandwidth: float | None = None,
) -> tuple[float, np.ndarray]:
    """Sum of hinge-penalized first differences of a kernel regression fit on
    an even grid; differences violating the requested direction contribute.
    Returns (value, d value / d y). Grid pairs with an empty kernel window on
    either side are skipped."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.ptp(x) == 0.0:
        raise ValueError("regressor column is constant")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    grid = np.linspace(x.min(), x.max(), grid_points)
    mu, W, ok = nw_fit(x, y, grid, h)
    s = -1.0 if direction == "increasing" else 1.0
    value = 0.0
    grad = np.zeros(len(y))
    for k in range(grid_points - 1):
        if not (ok[k] and ok[k + 1]):
            continue
        d = s * (mu[k + 1] - mu[k])
        if d > 0.0:
            value += d
            grad += s * (W[k + 1] - W[k])
    return float(value), grad


def monotonicity_violation_share(
    x,
    y,
    direction: str = "increasing",
    grid_points: int = 30,
    bandwidth: float | None = None,
    tolerance: float = 0.05,
) -> float:
    """Share of adjacent grid pairs whose kernel-regression first difference
    runs against ``direction`` by more than ``tolerance`` response sd units.
    Pairs with an empty kernel window are excluded."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    grid = np.linspace(x.min(), x.max(), grid_points)
    mu, _, ok = nw_fit(x, y, grid, h)
    s = -1.0 if direction == "increasing" else 1.0
    cut = tolerance * float(y.std(ddof=1))
    valid = ok[:-1] & ok[1:]
    if not valid.any():
        raise ValueError("no adjacent grid pairs with data in the kernel window")
    viol = s * (mu[1:] - mu[:-1]) > cut
    return float(viol[valid].sum() / valid.sum())


# ---- batch-facing wrapper ------------------------------------------------


def generator_penalty(
    batch: np.ndarray, spec: PenaltySpec
) -> tuple[float, np.ndarray, list[str]]:
    """Penalty value and gradient for one generated batch.

    Both columns must already be resolved to integer positions. Returns
    (weight * value, gradient w.r.t. the batch, flags). Degenerate batches
    (constant regressor) contribute the threshold with a zero gradient
    rather than failing a training step.
    """
    if not isinstance(spec.x_column, (int, np.integer)) or not isinstance(
        spec.y_column, (int, np.integer)
    ):
        raise ValueError("column names must be resolved to positions before use")
    batch = np.asarray(batch, dtype=float)
    x = batch[:, spec.x_column]
    y = batch[:, spec.y_column]
    grad = np.zeros_like(batch)
    flags: list[str] = []

    if spec.kind == "chetverikov":
        ysign = 1.0 if spec.direction == "increasing" else -1.0
        try:
            res, gy = chetverikov_gradient(x, ysign * y, spec.n_bandwidths)
        except ValueError:
            flags.append("degenerate_regressor")
            return spec.weight * spec.threshold, grad, flags
        if res.clamped:
            flags.append("variance_floor")
        if res.statistic > spec.threshold:
            grad[:, spec.y_column] = spec.weight * ysign * gy
            value = res.statistic
        else:
            value = spec.threshold
        return spec.weight * value, grad, flags

    try:
        value, gy = kernel_fd_penalty(
            x, y, spec.direction, spec.grid_points, spec.bandwidth
        )
    except ValueError:
        flags.append("degenerate_regressor")
        return 0.0, grad, flags
    grad[:, spec.y_column] = spec.weight * gy
    return spec.weight * value, grad, flags
