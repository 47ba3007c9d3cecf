"""Reverse-mode automatic differentiation over dense multilayer perceptrons.

Hand-rolled on purpose: the training losses need parameter gradients, input
gradients, and the second-order pass that differentiates an input-gradient
norm with respect to the parameters (gradient penalty). All arrays are
float64. Parameter gradients come back as flat vectors aligned with
``Network.params_flat``.

Conventions
-----------
* A layer computes ``a = act(W x + b)`` with ``W`` of shape (n_out, n_in).
* relu'(0) is defined as 0.
* Output heads are per-column activations of the final layer: ``identity``,
  ``sigmoid`` (binary columns), or ``relu`` (non-negative columns).
* Weight dropout zeroes individual weights with probability ``dropout_rate``
  and rescales survivors by 1/(1-rate); one mask per layer per forward call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Layer",
    "Head",
    "Network",
    "ForwardCache",
    "NumericError",
    "build_mlp",
    "gradient_penalty",
    "AdamState",
    "adam_init",
    "adam_step",
]

ACTIVATIONS = ("relu", "sigmoid", "identity")

NETWORK_FORMAT = "wgansim-network"
NETWORK_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite values produced inside a network pass."""

    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        # split by sign for overflow-free evaluation
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind == "identity":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _act_deriv(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(float)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


def _act_second(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu" or kind == "identity":
        return np.zeros_like(z)
    if kind == "sigmoid":
        return a * (1.0 - a) * (1.0 - 2.0 * a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class Layer:
    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("layer weights must be 2-D")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must match weight rows")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class Head:
    start: int
    stop: int
    kind: str

    def __post_init__(self):
        if self.kind not in ACTIVATIONS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if not (0 <= self.start < self.stop):
            raise ValueError(f"bad head range [{self.start}, {self.stop})")


@dataclass
class ForwardCache:
    inputs: np.ndarray  # (n, d_in)
    zs: list[np.ndarray]  # pre-activations per layer
    acts: list[np.ndarray]  # post-activations per layer
    eff_weights: list[np.ndarray]  # masked+scaled weights actually used
    masks: list[np.ndarray] | None  # dropout scale masks, None when rate = 0

    @property
    def output(self) -> np.ndarray:
        return self.acts[-1]


class Network:
    """Dense MLP with per-column output heads on the final layer."""

    def __init__(self, layers: list[Layer], heads: list[Head] | None = None):
        if not layers:
            raise ValueError("network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].weights.shape[1] != layers[k - 1].weights.shape[0]:
                raise ValueError(f"layer {k} input dim does not match layer {k - 1} output dim")
        d_out = layers[-1].weights.shape[0]
        if heads is None:
            heads = [Head(0, d_out, layers[-1].activation)]
        else:
            if layers[-1].activation != "identity":
                raise ValueError("final layer activation must be identity when heads are given")
            covered = np.zeros(d_out, dtype=int)
            for h in heads:
                if h.stop > d_out:
                    raise ValueError(f"head range [{h.start}, {h.stop}) exceeds output dim {d_out}")
                covered[h.start : h.stop] += 1
            if not np.all(covered == 1):
                raise ValueError("heads must cover every output unit exactly once")
        self.layers = layers
        self.heads = sorted(heads, key=lambda h: h.start)
        # per-layer activation partition: list of (kind, slice)
        self._parts: list[list[tuple[str, slice]]] = []
        for k, layer in enumerate(layers):
            if k == len(layers) - 1 and heads is not None:
                self._parts.append([(h.kind, slice(h.start, h.stop)) for h in self.heads])
            else:
                self._parts.append([(layer.activation, slice(0, layer.weights.shape[0]))])

    # ---- shape and parameter bookkeeping -------------------------------

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def params_flat(self) -> np.ndarray:
        """Flat copy of all parameters: per layer, row-major weights then bias."""
        return np.concatenate([np.concatenate([l.weights.ravel(), l.bias]) for l in self.layers])

    def set_params_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vec.shape}")
        pos = 0
        for l in self.layers:
            nw = l.weights.size
            l.weights = vec[pos : pos + nw].reshape(l.weights.shape).copy()
            pos += nw
            nb = l.bias.size
            l.bias = vec[pos : pos + nb].copy()
            pos += nb

    def head_kinds(self) -> list[str]:
        """Head kind per output unit, in column order."""
        kinds = [""] * self.output_dim
        for h in self.heads:
            for j in range(h.start, h.stop):
                kinds[j] = h.kind
        return kinds

    # ---- forward / backward --------------------------------------------

    def _apply_parts(self, k: int, z: np.ndarray, fn) -> np.ndarray:
        out = np.empty_like(z)
        for kind, sl in self._parts[k]:
            out[:, sl] = fn(kind, z[:, sl])
        return out

    def _d1(self, k: int, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        out = np.empty_like(z)
        for kind, sl in self._parts[k]:
            out[:, sl] = _act_deriv(kind, z[:, sl], a[:, sl])
        return out

    def _d2(self, k: int, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        out = np.empty_like(z)
        for kind, sl in self._parts[k]:
            out[:, sl] = _act_second(kind, z[:, sl], a[:, sl])
        return out

    def forward_cache(
        self,
        x: np.ndarray,
        dropout_rate: float = 0.0,
        rng: np.random.Generator | None = None,
        check_finite: bool = True,
    ) -> ForwardCache:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {X.shape[1]}")
        if dropout_rate < 0.0 or dropout_rate >= 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if dropout_rate > 0.0 and rng is None:
            raise ValueError("dropout requires an rng")
        zs: list[np.ndarray] = []
        acts: list[np.ndarray] = []
        eff_weights: list[np.ndarray] = []
        masks: list[np.ndarray] | None = [] if dropout_rate > 0.0 else None
        a = X
        for k, layer in enumerate(self.layers):
            W = layer.weights
            if dropout_rate > 0.0:
                keep = rng.random(W.shape) >= dropout_rate
                scale = keep / (1.0 - dropout_rate)
                masks.append(scale)
                W = W * scale
            eff_weights.append(W)
            with np.errstate(over="ignore", invalid="ignore"):
                z = a @ W.T + layer.bias
            if check_finite and not np.all(np.isfinite(z)):
                raise NumericError(f"non-finite pre-activation at layer {k}", layer_index=k)
            a = self._apply_parts(k, z, _act)
            zs.append(z)
            acts.append(a)
        return ForwardCache(inputs=X, zs=zs, acts=acts, eff_weights=eff_weights, masks=masks)

    def forward(
        self,
        x: np.ndarray,
        dropout_rate: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        out = self.forward_cache(x, dropout_rate=dropout_rate, rng=rng).output
        return out[0] if single else out

    def backward(self, cache: ForwardCache, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Adjoint pass. ``dout`` is dL/d(output), shape (n, d_out).

        Returns (dL/dparams flat, dL/dinputs of shape (n, d_in)). Parameter
        gradients are summed over rows; put averaging weights into ``dout``.
        """
        dout = np.atleast_2d(np.asarray(dout, dtype=float))
        n_layers = len(self.layers)
        grads_w: list[np.ndarray] = [None] * n_layers
        grads_b: list[np.ndarray] = [None] * n_layers
        da = dout
        for k in range(n_layers - 1, -1, -1):
            z, a = cache.zs[k], cache.acts[k]
            dz = da * self._d1(k, z, a)
            a_prev = cache.inputs if k == 0 else cache.acts[k - 1]
            gw = dz.T @ a_prev
            if cache.masks is not None:
                gw *= cache.masks[k]
            grads_w[k] = gw
            grads_b[k] = dz.sum(axis=0)
            da = dz @ cache.eff_weights[k]
        flat = np.concatenate(
            [np.concatenate([grads_w[k].ravel(), grads_b[k]]) for k in range(n_layers)]
        )
        return flat, da

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the scalar output w.r.t. the input, per row. No dropout."""
        if self.output_dim != 1:
            raise ValueError("grad_input requires a scalar-output network")
        single = np.asarray(x).ndim == 1
        cache = self.forward_cache(x)
        n = cache.inputs.shape[0]
        da = np.ones((n, 1))
        for k in range(len(self.layers) - 1, -1, -1):
            dz = da * self._d1(k, cache.zs[k], cache.acts[k])
            da = dz @ self.layers[k].weights
        return da[0] if single else da

    # ---- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": NETWORK_FORMAT,
            "version": NETWORK_VERSION,
            "input_dim": self.input_dim,
            "layers": [
                {
                    "weights": l.weights.tolist(),
                    "bias": l.bias.tolist(),
                    "activation": l.activation,
                }
                for l in self.layers
            ],
            "heads": [{"start": h.start, "stop": h.stop, "kind": h.kind} for h in self.heads],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("format") != NETWORK_FORMAT:
            raise ValueError(f"not a network document: format={doc.get('format')!r}")
        if doc.get("version") != NETWORK_VERSION:
            raise ValueError(f"unsupported network document version {doc.get('version')!r}")
        layers = [
            Layer(
                weights=np.asarray(d["weights"], dtype=float),
                bias=np.asarray(d["bias"], dtype=float),
                activation=d["activation"],
            )
            for d in doc["layers"]
        ]
        heads = [Head(h["start"], h["stop"], h["kind"]) for h in doc["heads"]]
        net = cls(layers, heads)
        if net.input_dim != doc["input_dim"]:
            raise ValueError("input_dim in document does not match layer shapes")
        return net

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))


def build_mlp(
    dims: list[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    heads: list[Head] | None = None,
) -> Network:
    """MLP with Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.

    ``dims`` is [d_in, h1, ..., d_out]. The final layer is linear; ``heads``
    supply the output nonlinearity (default: one identity head).
    """
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output size")
    layers = []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        last = k == len(dims) - 2
        layers.append(Layer(W, b, activation="identity" if last else hidden_activation))
    return Network(layers, heads=heads)


def gradient_penalty(
    net: Network, x_hat: np.ndarray, x_dim: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """One-sided gradient penalty and its exact parameter gradient.

    value = mean_i max(0, ||g_i|| - 1)^2 with g_i the gradient of the scalar
    output w.r.t. the first ``x_dim`` input coordinates at row i of ``x_hat``.
    Returns (value, d value / d params flat).

    The parameter gradient uses d||g||/dtheta = (J^T g)/||g|| with J the
    Jacobian of g in theta. J^T g is the theta-gradient of the directional
    derivative s(theta) = v . grad_x f at fixed v = g, computed by running a
    forward tangent pass (dual numbers along v) and then reverse-differentiating
    that pass. Exact for relu/sigmoid/identity; relu''(z) is taken as 0.
    """
    if net.output_dim != 1:
        raise ValueError("gradient penalty requires a scalar-output network")
    X = np.atleast_2d(np.asarray(x_hat, dtype=float))
    n = X.shape[0]
    if x_dim is None:
        x_dim = net.input_dim
    if not (0 < x_dim <= net.input_dim):
        raise ValueError(f"x_dim must lie in [1, {net.input_dim}]")
    cache = net.forward_cache(X)
    L = len(net.layers)
    d1 = [net._d1(k, cache.zs[k], cache.acts[k]) for k in range(L)]
    d2 = [net._d2(k, cache.zs[k], cache.acts[k]) for k in range(L)]

    # input gradient, restricted to the x block
    da = np.ones((n, 1))
    dz_list: list[np.ndarray] = [None] * L
    for k in range(L - 1, -1, -1):
        dz = da * d1[k]
        dz_list[k] = dz
        da = dz @ net.layers[k].weights
    g = da[:, :x_dim]
    r = np.sqrt(np.sum(g * g, axis=1))

    hinge = np.maximum(r - 1.0, 0.0)
    value = float(np.mean(hinge**2))
    grad = np.zeros(net.n_params)
    active = hinge > 0.0
    if not np.any(active):
        return value, grad

    # per-row weights for d value / d r, folded into the output tangent adjoint
    w_row = np.zeros(n)
    w_row[active] = 2.0 * hinge[active] / (r[active] * n)

    # tangent forward along v = (g, 0...) using plain weights
    v = np.zeros((n, net.input_dim))
    v[:, :x_dim] = g
    T_prev = v
    S_list: list[np.ndarray] = []
    T_list: list[np.ndarray] = []
    for k in range(L):
        S = T_prev @ net.layers[k].weights.T
        T = d1[k] * S
        S_list.append(S)
        T_list.append(T)
        T_prev = T

    # reverse over the joint primal+tangent computation
    t_bar = w_row[:, None] * np.ones((n, 1))
    a_bar = np.zeros((n, 1))
    grads_w: list[np.ndarray] = [None] * L
    grads_b: list[np.ndarray] = [None] * L
    for k in range(L - 1, -1, -1):
        s_bar = t_bar * d1[k]
        z_bar = t_bar * S_list[k] * d2[k] + a_bar * d1[k]
        t_in = v if k == 0 else T_list[k - 1]
        a_in = cache.inputs if k == 0 else cache.acts[k - 1]
        grads_w[k] = s_bar.T @ t_in + z_bar.T @ a_in
        grads_b[k] = z_bar.sum(axis=0)
        t_bar = s_bar @ net.layers[k].weights
        a_bar = z_bar @ net.layers[k].weights
    grad = np.concatenate([np.concatenate([grads_w[k].ravel(), grads_b[k]]) for k in range(L)])
    return value, grad


# ---- Adam ---------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(
    n_params: int,
    alpha: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    if not (alpha > 0 and 0 <= beta1 < 1 and 0 <= beta2 < 1 and eps > 0):
        raise ValueError("bad Adam hyperparameters")
    return AdamState(
        m=np.zeros(n_params), v=np.zeros(n_params), step=0, alpha=alpha, beta1=beta1, beta2=beta2, eps=eps
    )


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray
) -> tuple[np.ndarray, AdamState]:
    """One Adam descent step. Returns (new params, new state); inputs untouched.

    m_t = b1 m + (1-b1) g;  v_t = b2 v + (1-b2) g^2
    theta' = theta - alpha * (m_t/(1-b1^t)) / (sqrt(v_t/(1-b2^t)) + eps)
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("params, grad, and state must have matching shapes")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to adam_step")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(
        m=m, v=v, step=t, alpha=state.alpha, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return new_params, new_state
