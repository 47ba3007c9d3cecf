"""Wasserstein GAN training with gradient penalty for tabular data.

One engine serves the unconditional and conditional cases; conditioning
columns are appended to both networks' inputs and constant ones are dropped,
which makes conditional training on a constant label bit-identical to the
unconditional run. All randomness flows through named substreams of the
master seed, so results do not depend on scheduling.

The critic ascends mean f(real) - mean f(fake) - weight * penalty, where the
penalty hinges the critic's input-gradient norm above one at per-pair random
interpolates (only the non-label coordinates). The generator ascends
mean f(fake), minus an optional monotonicity shape penalty on its output.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import Head, Network, adam_init, adam_step, build_mlp, gradient_penalty
from .autodiff import NumericError
from .penalty import PenaltySpec, generator_penalty
from .seeds import substream
from .tabular import ColumnSchema, Dataset, Scaler, fit_scaler, stratified_batches

__all__ = [
    "TrainConfig",
    "TrainingError",
    "LogRow",
    "architecture_preset",
    "critic_loss",
    "train_unconditional",
    "train_conditional",
    "TrainedGenerator",
]

GENERATOR_FORMAT = "wgansim-generator"
GENERATOR_VERSION = 1

# head nonlinearity by column kind: binary columns get a probability head
# (thresholded at sampling time), censored ones a nonnegative head
_HEAD_FOR_KIND = {"continuous": "identity", "binary": "sigmoid", "censored_at_zero": "relu"}

_PRESETS = {
    "main": ((128, 128, 128), (128, 128, 128)),
    "alt1": ((64, 128, 256), (256, 128, 64)),
    "alt2": ((128, 256, 64), (64, 256, 128)),
}


def architecture_preset(name: str) -> dict:
    """Named generator/critic width pairs used by the robustness protocols."""
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    g, c = _PRESETS[name]
    return {"gen_hidden": g, "critic_hidden": c}


class TrainingError(RuntimeError):
    """Training could not start or diverged."""


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 5000  # generator updates
    n_critic: int = 15  # critic updates per generator update
    batch_size: int = 128
    gradient_weight: float = 5.0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    noise_dim: int | None = None  # default: one noise coordinate per generated column
    gen_hidden: tuple[int, ...] = (128, 128, 128)
    critic_hidden: tuple[int, ...] = (128, 128, 128)
    dropout: float = 0.1  # generator weight dropout during training
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1 or self.n_critic < 1 or self.batch_size < 1:
            raise ValueError("total_steps, n_critic, and batch_size must be positive")
        if self.gradient_weight < 0 or self.learning_rate <= 0:
            raise ValueError("gradient_weight must be >= 0 and learning_rate > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.noise_dim is not None and self.noise_dim < 1:
            raise ValueError("noise_dim must be positive when given")
        if not self.gen_hidden or not self.critic_hidden:
            raise ValueError("hidden layer tuples must be non-empty")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "gen_hidden", tuple(int(v) for v in self.gen_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(v) for v in self.critic_hidden))


class LogRow(NamedTuple):
    step: int
    critic_loss: float
    penalty_value: float
    gap: float


def critic_loss(
    critic: Network,
    real: np.ndarray,
    fake: np.ndarray,
    interp: np.ndarray,
    gradient_weight: float,
    x_dim: int | None = None,
) -> tuple[float, np.ndarray, float, float]:
    """Critic objective and its parameter gradient.

    value = [mean f(real) - mean f(fake)] - gradient_weight * q, with q the
    mean squared hinge of the input-gradient norm above one at the interp
    rows (first x_dim coordinates only). Returns (value, grad, gap, q); the
    critic ascends, so optimizer steps use the negated gradient.
    """
    real = np.atleast_2d(np.asarray(real, dtype=float))
    fake = np.atleast_2d(np.asarray(fake, dtype=float))
    cr = critic.forward_cache(real)
    cf = critic.forward_cache(fake)
    gap = float(cr.output.mean() - cf.output.mean())
    gr, _ = critic.backward(cr, np.full((real.shape[0], 1), 1.0 / real.shape[0]))
    gf, _ = critic.backward(cf, np.full((fake.shape[0], 1), -1.0 / fake.shape[0]))
    q, qgrad = gradient_penalty(critic, interp, x_dim)
    value = gap - gradient_weight * q
    return value, gr + gf - gradient_weight * qgrad, gap, q


# ---- trained artifact ----------------------------------------------------


@dataclass
class TrainedGenerator:
    """A trained generator plus everything needed to sample in data units."""

    network: Network
    schema: list[ColumnSchema]  # generated columns then label columns
    label_columns: list[str]
    dropped_labels: list[str]
    scaler: Scaler
    noise_dim: int
    config: TrainConfig

    @property
    def generated_columns(self) -> list[str]:
        labels = set(self.label_columns)
        return [c.name for c in self.schema if c.name not in labels]

    def sample(self, n: int, rng: np.random.Generator, labels=None) -> Dataset:
        """Draw n rows in raw data units. ``labels`` must supply the label
        columns (raw units, in ``label_columns`` order) when conditioning;
        binary columns are thresholded at 0.5."""
        gen_names = self.generated_columns
        z = rng.standard_normal((n, self.noise_dim))
        if self.label_columns:
            if labels is None:
                raise ValueError(f"labels required for columns {self.label_columns}")
            labels = np.atleast_2d(np.asarray(labels, dtype=float))
            if labels.shape != (n, len(self.label_columns)):
                raise ValueError(
                    f"labels must have shape ({n}, {len(self.label_columns)}), got {labels.shape}"
                )
            z = np.hstack([z, self.scaler.transform(labels, self.label_columns)])
        elif labels is not None:
            raise ValueError("this generator takes no labels")
        out = self.network.forward(z)
        raw = self.scaler.inverse(out, gen_names)
        by_name = {c.name: c for c in self.schema}
        for j, name in enumerate(gen_names):
            if by_name[name].kind == "binary":
                raw[:, j] = (raw[:, j] > 0.5).astype(float)
        rows = np.hstack([raw, labels]) if self.label_columns else raw
        order = gen_names + self.label_columns
        return Dataset([by_name[n_] for n_ in order], rows)

    def to_dict(self) -> dict:
        return {
            "format": GENERATOR_FORMAT,
            "version": GENERATOR_VERSION,
            "network": self.network.to_dict(),
            "schema": [
                {"name": c.name, "kind": c.kind, "role": c.role, "scale": c.scale}
                for c in self.schema
            ],
            "label_columns": list(self.label_columns),
            "dropped_labels": list(self.dropped_labels),
            "scaler": self.scaler.to_dict(),
            "noise_dim": self.noise_dim,
            "config": dataclasses.asdict(self.config),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedGenerator":
        if doc.get("format") != GENERATOR_FORMAT:
            raise ValueError(f"not a generator file (format {doc.get('format')!r})")
        if doc.get("version") != GENERATOR_VERSION:
            raise ValueError(f"unsupported generator version {doc.get('version')!r}")
        cfg = dict(doc["config"])
        cfg["gen_hidden"] = tuple(cfg["gen_hidden"])
        cfg["critic_hidden"] = tuple(cfg["critic_hidden"])
        return cls(
            network=Network.from_dict(doc["network"]),
            schema=[ColumnSchema(**c) for c in doc["schema"]],
            label_columns=list(doc["label_columns"]),
            dropped_labels=list(doc["dropped_labels"]),
            scaler=Scaler.from_dict(doc["scaler"]),
            noise_dim=int(doc["noise_dim"]),
            config=TrainConfig(**cfg),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrainedGenerator":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---- training ------------------------------------------------------------


def _batch_stream(ds: Dataset, m: int, rng: np.random.Generator):
    while True:
        try:
            batches = stratified_batches(ds, m, rng)
        except ValueError as exc:
            raise TrainingError(str(exc)) from exc
        if not batches:
            raise TrainingError(
                f"batch size {m} yields no complete stratified batches on {ds.n} rows"
            )
        yield from batches


def _resolve_penalty(spec: PenaltySpec | None, gen_names: list[str]) -> PenaltySpec | None:
    if spec is None:
        return None

    def pos(col):
        if isinstance(col, str):
            if col not in gen_names:
                raise TrainingError(
                    f"penalty column {col!r} is not a generated column {gen_names}"
                )
            return gen_names.index(col)
        if not 0 <= int(col) < len(gen_names):
            raise TrainingError(f"penalty column index {col} out of range")
        return int(col)

    return dataclasses.replace(spec, x_column=pos(spec.x_column), y_column=pos(spec.y_column))


def _train_engine(
    std: Dataset,
    gen_names: list[str],
    label_names: list[str],
    config: TrainConfig,
    penalty_spec: PenaltySpec | None,
) -> tuple[Network, int, list[LogRow]]:
    spec = _resolve_penalty(penalty_spec, gen_names)
    G, L = len(gen_names), len(label_names)
    noise_dim = config.noise_dim or G
    kinds = {c.name: c.kind for c in std.schema}
    heads = [Head(j, j + 1, _HEAD_FOR_KIND[kinds[n]]) for j, n in enumerate(gen_names)]

    gen = build_mlp(
        [noise_dim + L, *config.gen_hidden, G], substream(config.seed, "init_gen"), heads=heads
    )
    critic = build_mlp([G + L, *config.critic_hidden, 1], substream(config.seed, "init_critic"))

    adam = dict(
        alpha=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps
    )
    gen_state = adam_init(gen.n_params, **adam)
    critic_state = adam_init(critic.n_params, **adam)

    batch_rng = substream(config.seed, "batch")
    noise_rng = substream(config.seed, "noise")
    interp_rng = substream(config.seed, "interp")
    dropout_rng = substream(config.seed, "dropout")
    label_rng = substream(config.seed, "labels")

    rows = std.rows
    all_names = [c.name for c in std.schema]
    gen_idx = [all_names.index(n) for n in gen_names]
    label_idx = [all_names.index(n) for n in label_names]
    stream = _batch_stream(std, config.batch_size, batch_rng)
    m = config.batch_size
    log: list[LogRow] = []

    def opt(state, net, grad, step):
        try:
            params, state = adam_step(state, net.params_flat(), -grad)
        except ValueError as exc:  # non-finite gradient
            raise TrainingError(f"training diverged at generator step {step}: {exc}") from exc
        net.set_params_flat(params)
        return state

    try:
        for step in range(1, config.total_steps + 1):
            for _ in range(config.n_critic):
                idx = next(stream)
                real_full = rows[idx]
                real_x = real_full[:, gen_idx]
                labels = real_full[:, label_idx]
                z = noise_rng.standard_normal((len(idx), noise_dim))
                fake_x = gen.forward(
                    np.hstack([z, labels]), dropout_rate=config.dropout, rng=dropout_rng
                )
                eps = interp_rng.random(len(idx))[:, None]
                x_hat = eps * real_x + (1.0 - eps) * fake_x
                value, grad, gap, _ = critic_loss(
                    critic,
                    np.hstack([real_x, labels]),
                    np.hstack([fake_x, labels]),
                    np.hstack([x_hat, labels]),
                    config.gradient_weight,
                    x_dim=G,
                )
                critic_state = opt(critic_state, critic, grad, step)

            z = noise_rng.standard_normal((m, noise_dim))
            if L:
                labels = rows[label_rng.integers(0, std.n, size=m)][:, label_idx]
                gen_in = np.hstack([z, labels])
            else:
                labels = np.empty((m, 0))
                gen_in = z
            cache = gen.forward_cache(gen_in, dropout_rate=config.dropout, rng=dropout_rng)
            fake_x = cache.output
            ccache = critic.forward_cache(np.hstack([fake_x, labels]))
            _, dX = critic.backward(ccache, np.full((m, 1), 1.0 / m))
            dfake = dX[:, :G]
            pen_value = 0.0
            if spec is not None:
                pen_value, pgrad, _ = generator_penalty(fake_x, spec)
                dfake = dfake - pgrad
            ggrad, _ = gen.backward(cache, dfake)
            gen_state = opt(gen_state, gen, ggrad, step)

            if not (math.isfinite(value) and math.isfinite(gap) and math.isfinite(pen_value)):
                raise TrainingError(f"training diverged at generator step {step}")
            log.append(LogRow(step, value, pen_value, gap))
    except NumericError as exc:
        raise TrainingError(f"training diverged at generator step {step}: {exc}") from exc
    return gen, noise_dim, log


def _split_columns(ds: Dataset, label_columns: list[str]) -> tuple[list[str], list[str], list[str]]:
    names = [c.name for c in ds.schema]
    for lab in label_columns:
        if lab not in names:
            raise TrainingError(f"label column {lab!r} not in dataset")
    if len(set(label_columns)) != len(label_columns):
        raise TrainingError("duplicate label columns")
    gen_names = [n for n in names if n not in label_columns]
    if not gen_names:
        raise TrainingError("at least one column must be generated")
    # constant labels carry no conditioning information; dropping them makes
    # the run identical to one that never saw the column
    kept, dropped = [], []
    for lab in label_columns:
        (dropped if np.ptp(ds.column(lab)) == 0.0 else kept).append(lab)
    return gen_names, kept, dropped


def _fit(ds: Dataset, label_columns: list[str], config: TrainConfig, penalty):
    gen_names, kept, dropped = _split_columns(ds, label_columns)
    work = ds.select(gen_names + kept)
    scaler = fit_scaler(work)
    std = Dataset(work.schema, scaler.transform(work.rows, [c.name for c in work.schema]))
    net, noise_dim, log = _train_engine(std, gen_names, kept, config, penalty)
    trained = TrainedGenerator(
        network=net,
        schema=list(work.schema),
        label_columns=kept,
        dropped_labels=dropped,
        scaler=scaler,
        noise_dim=noise_dim,
        config=config,
    )
    return trained, log


def train_unconditional(
    ds: Dataset, config: TrainConfig, penalty: PenaltySpec | None = None
) -> tuple[TrainedGenerator, list[LogRow]]:
    """Train a generator for every column of ``ds``. Returns the trained
    artifact and the per-step loss trace."""
    return _fit(ds, [], config, penalty)


def train_conditional(
    ds: Dataset,
    label_columns: list[str],
    config: TrainConfig,
    penalty: PenaltySpec | None = None,
) -> tuple[TrainedGenerator, list[LogRow]]:
    """Train a generator for the non-label columns given the label columns.
    Constant label columns are dropped (recorded on the artifact)."""
    if not label_columns:
        raise TrainingError("conditional training needs at least one label column")
    return _fit(ds, list(label_columns), config, penalty)
