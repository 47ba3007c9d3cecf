"""Independent reference implementations used as test oracles.

Everything here is written as plain loops, separate from the package code
paths, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def fd_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar f at x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


# ---- naive MLP (independent of wgansim.autodiff) ------------------------


def naive_forward(layers, heads, x):
    """layers: list of (W, b, activation); heads: list of (start, stop, kind)."""

    def act(kind, v):
        if kind == "relu":
            return max(v, 0.0)
        if kind == "sigmoid":
            return 1.0 / (1.0 + math.exp(-v))
        return v

    a = list(x)
    for li, (W, b, activation) in enumerate(layers):
        z = []
        for r in range(len(b)):
            s = b[r]
            for c in range(len(a)):
                s += W[r][c] * a[c]
            z.append(s)
        last = li == len(layers) - 1
        if last:
            a = list(z)
            for start, stop, kind in heads:
                for j in range(start, stop):
                    a[j] = act(kind, z[j])
        else:
            a = [act(activation, v) for v in z]
    return a


def naive_grad_input(layers, heads, x):
    """d f / d x for scalar-output nets, by explicit chain rule loops."""

    def d_act(kind, z):
        if kind == "relu":
            return 1.0 if z > 0.0 else 0.0
        if kind == "sigmoid":
            s = 1.0 / (1.0 + math.exp(-z))
            return s * (1.0 - s)
        return 1.0

    # forward, caching pre-activations
    zs = []
    a = list(x)
    for li, (W, b, activation) in enumerate(layers):
        z = []
        for r in range(len(b)):
            s = b[r]
            for c in range(len(a)):
                s += W[r][c] * a[c]
            z.append(s)
        zs.append(z)
        last = li == len(layers) - 1
        if last:
            a = list(z)
            for start, stop, kind in heads:
                for j in range(start, stop):
                    if kind == "relu":
                        a[j] = max(z[j], 0.0)
                    elif kind == "sigmoid":
                        a[j] = 1.0 / (1.0 + math.exp(-z[j]))
        else:
            a = [max(v, 0.0) if activation == "relu" else (1.0 / (1.0 + math.exp(-v)) if activation == "sigmoid" else v) for v in z]

    kinds_last = {}
    for start, stop, kind in heads:
        for j in range(start, stop):
            kinds_last[j] = kind
    # backward
    L = len(layers)
    u = [d_act(kinds_last[0], zs[-1][0])]  # scalar output
    for li in range(L - 1, -1, -1):
        W, b, activation = layers[li]
        down = [0.0] * len(W[0])
        for c in range(len(W[0])):
            s = 0.0
            for r in range(len(b)):
                s += u[r] * W[r][c]
            down[c] = s
        if li > 0:
            u = [down[c] * d_act(layers[li - 1][2], zs[li - 1][c]) for c in range(len(down))]
        else:
            u = down
    return u


def naive_critic_objective(layers, heads, X, X_tilde, X_hat, lam, x_dim):
    """gap - lam * one-sided gradient penalty, all by loops.

    gap = mean f(X) - mean f(X_tilde); penalty uses the gradient of f w.r.t.
    the first x_dim coordinates at each row of X_hat.
    """
    m = len(X)
    gap = sum(naive_forward(layers, heads, row)[0] for row in X) / m
    gap -= sum(naive_forward(layers, heads, row)[0] for row in X_tilde) / m
    q = 0.0
    for row in X_hat:
        g = naive_grad_input(layers, heads, row)[:x_dim]
        norm = math.sqrt(sum(v * v for v in g))
        q += max(0.0, norm - 1.0) ** 2
    q /= m
    return gap - lam * q, gap, q


# ---- brute-force optimal transport --------------------------------------


def brute_wasserstein(A: np.ndarray, B: np.ndarray) -> float:
    """Exact uniform-weight W1 for n = m by enumerating all assignments."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    n = A.shape[0]
    assert B.shape[0] == n and n <= 8
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = 0.0
        for i, j in enumerate(perm):
            c += float(np.linalg.norm(A[i] - B[j]))
        best = min(best, c / n)
    return best


# ---- monotonicity statistic, literal transcription ----------------------


def naive_chetverikov(x, y, n_bandwidths=3, floor=1e-8):
    """max over (h, i) of b(X_i, h) / V(X_i, h), by quadruple loops.

    Epanechnikov kernel K(u) = 0.75 (1 - u^2) on |u| <= 1, else 0.
    sigma_i^2 from consecutive squared differences after sorting by x.
    """
    order = np.argsort(np.asarray(x, dtype=float), kind="stable")
    xs = [float(v) for v in np.asarray(x, dtype=float)[order]]
    ys = [float(v) for v in np.asarray(y, dtype=float)[order]]
    M = len(xs)

    def K(u):
        return 0.75 * (1.0 - u * u) if abs(u) <= 1.0 else 0.0

    def sign(v):
        return (v > 0) - (v < 0)

    sig2 = []
    for i in range(M):
        j = i + 1 if i + 1 < M else i - 1
        sig2.append((ys[j] - ys[i]) ** 2 / 2.0)

    h_max = max(abs(xs[i] - xs[j]) for i in range(M) for j in range(M)) / 2.0
    h_min = h_max * (0.3 / M**0.95) ** (1.0 / 3.0)
    hs = []
    k = 0
    while True:
        h = h_max * 0.5**k
        if h < h_min or len(hs) >= n_bandwidths:
            break
        hs.append(h)
        k += 1

    best = -math.inf
    for h in hs:
        for target in range(M):
            xt = xs[target]
            b = 0.0
            for i in range(M):
                for j in range(M):
                    q = K((xs[i] - xt) / h) * K((xs[j] - xt) / h)
                    b += (ys[i] - ys[j]) * sign(xs[j] - xs[i]) * q
            b *= 0.5
            V = 0.0
            for i in range(M):
                inner = 0.0
                for j in range(M):
                    q = K((xs[i] - xt) / h) * K((xs[j] - xt) / h)
                    inner += sign(xs[j] - xs[i]) * q
                V += sig2[i] * inner
            if abs(V) < floor:
                V = floor
            best = max(best, b / V)
    return best


def naive_kernel_fd_penalty(x, y, grid, bandwidth, direction):
    """Nadaraya-Watson fit on grid points, sum of directional first differences."""

    def K(u):
        return 0.75 * (1.0 - u * u) if abs(u) <= 1.0 else 0.0

    mu = []
    for g in grid:
        num = 0.0
        den = 0.0
        for xi, yi in zip(x, y):
            w = K((xi - g) / bandwidth)
            num += w * yi
            den += w
        mu.append(num / den if den > 0 else None)
    total = 0.0
    for k in range(len(grid) - 1):
        if mu[k] is None or mu[k + 1] is None:
            continue
        total += max(0.0, direction * (mu[k + 1] - mu[k]))
    return total


# ---- regression oracles --------------------------------------------------


def oracle_ols(X, y):
    """Normal equations via pseudo-inverse, intercept first."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.column_stack([np.ones(X.shape[0]), X])
    return np.linalg.pinv(Z.T @ Z) @ Z.T @ np.asarray(y, dtype=float)


def oracle_logit(X, w):
    """Logistic MLE by direct likelihood minimization (scipy BFGS),
    independent of the Newton-Raphson code path."""
    from scipy.optimize import minimize

    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.column_stack([np.ones(X.shape[0]), X])
    w = np.asarray(w, dtype=float)

    def nll(beta):
        eta = Z @ beta
        return float(np.sum(np.logaddexp(0.0, eta) - w * eta))

    def grad(beta):
        p = 1.0 / (1.0 + np.exp(-(Z @ beta)))
        return Z.T @ (p - w)

    res = minimize(nll, np.zeros(Z.shape[1]), jac=grad, method="BFGS",
                   options={"gtol": 1e-10, "maxiter": 500})
    return res.x


def oracle_balance_weights(X0, xbar1, zeta, grid=201):
    """Brute-force simplex search for two controls only: gamma = (a, 1-a)."""
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    assert X0.shape[0] == 2
    best, best_g = math.inf, None
    for a in np.linspace(0.0, 1.0, grid):
        g = np.array([a, 1.0 - a])
        r = xbar1 - X0.T @ g
        val = zeta * float(g @ g) + (1.0 - zeta) * float(np.max(np.abs(r)) ** 2)
        if val < best:
            best, best_g = val, g
    return best_g, best
