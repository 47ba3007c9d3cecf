"""Run configuration: a single JSON document covering data, training,
simulation, and robustness parameters, with validation that reports every
problem at once rather than the first one hit."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .estimators import ESTIMATOR_NAMES
from .penalty import PenaltySpec
from .tabular import ColumnSchema, ldw_schema
from .wgan import TrainConfig

__all__ = [
    "ConfigError",
    "RobustnessConfig",
    "RunConfig",
    "config_from_dict",
    "config_hash",
    "load_config",
    "preset",
    "PRESET_NAMES",
]


class ConfigError(ValueError):
    """Carries the full list of validation failures."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class RobustnessConfig:
    subsample_runs: int = 10
    subsample_fraction: float = 0.8
    architectures: tuple[str, ...] = ("main", "alt1", "alt2")
    size_fractions: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    replications: int = 10_000


@dataclass(frozen=True)
class RunConfig:
    seed: int
    output_dir: str = "."
    data: str | None = None
    schema: tuple[ColumnSchema, ...] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    estimators: tuple[str, ...] = ESTIMATOR_NAMES
    population_size: int = 1_000_000
    replications: int = 2000
    sample_size: int | None = None
    treated_fraction: float | None = None
    penalty: PenaltySpec | None = None
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)
    eval_samples: int = 10
    n_jobs: int = 1

    def to_dict(self) -> dict:
        doc = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "data": self.data,
            "schema": None
            if self.schema is None
            else [dataclasses.asdict(c) for c in self.schema],
            "train": dataclasses.asdict(self.train),
            "estimators": list(self.estimators),
            "population_size": self.population_size,
            "replications": self.replications,
            "sample_size": self.sample_size,
            "treated_fraction": self.treated_fraction,
            "penalty": None if self.penalty is None else dataclasses.asdict(self.penalty),
            "robustness": dataclasses.asdict(self.robustness),
            "eval_samples": self.eval_samples,
            "n_jobs": self.n_jobs,
        }
        for key in ("train", "robustness"):
            for k, v in doc[key].items():
                if isinstance(v, tuple):
                    doc[key][k] = list(v)
        return doc


def config_hash(config: RunConfig) -> str:
    """Hash of everything that determines numeric output; the output
    directory is a delivery detail and stays out."""
    doc = config.to_dict()
    doc.pop("output_dir")
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


_TOP_KEYS = {
    "seed",
    "output_dir",
    "data",
    "schema",
    "train",
    "estimators",
    "population_size",
    "replications",
    "sample_size",
    "treated_fraction",
    "penalty",
    "robustness",
    "eval_samples",
    "n_jobs",
}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_ROBUST_KEYS = {f.name for f in dataclasses.fields(RobustnessConfig)}
_PENALTY_KEYS = {f.name for f in dataclasses.fields(PenaltySpec)}
_SCHEMA_KEYS = {f.name for f in dataclasses.fields(ColumnSchema)}


def _check_int(doc, key, violations, minimum=1, optional=False):
    v = doc.get(key)
    if v is None:
        if not optional:
            violations.append(f"{key} is required")
        return
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        violations.append(f"{key} must be an integer >= {minimum}, got {v!r}")


def config_from_dict(doc: dict) -> RunConfig:
    """Build a validated RunConfig; raises ConfigError listing every
    violation found, not just the first."""
    violations: list[str] = []
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    for key in sorted(set(doc) - _TOP_KEYS):
        violations.append(f"unknown config key {key!r}")

    if "seed" not in doc:
        violations.append("seed is mandatory")
    elif not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
        violations.append(f"seed must be an integer, got {doc['seed']!r}")

    _check_int(doc, "population_size", violations, minimum=2, optional=True)
    _check_int(doc, "replications", violations, minimum=2, optional=True)
    _check_int(doc, "sample_size", violations, minimum=2, optional=True)
    _check_int(doc, "eval_samples", violations, minimum=1, optional=True)
    _check_int(doc, "n_jobs", violations, minimum=1, optional=True)

    tf = doc.get("treated_fraction")
    if tf is not None and not (isinstance(tf, (int, float)) and 0.0 < tf < 1.0):
        violations.append(f"treated_fraction must lie in (0, 1), got {tf!r}")

    data = doc.get("data")
    if data is not None:
        if not isinstance(data, str):
            violations.append(f"data must be a path string, got {data!r}")
        elif not os.path.isfile(data):
            violations.append(f"data file does not exist: {data}")

    ests = doc.get("estimators")
    if ests is not None:
        if not isinstance(ests, (list, tuple)) or not ests:
            violations.append("estimators must be a non-empty list of names")
        else:
            for e in ests:
                if e not in ESTIMATOR_NAMES:
                    violations.append(f"unknown estimator {e!r}")

    schema = None
    raw_schema = doc.get("schema")
    if raw_schema is not None:
        if not isinstance(raw_schema, (list, tuple)) or not raw_schema:
            violations.append("schema must be a non-empty list of column objects")
        else:
            cols = []
            for i, c in enumerate(raw_schema):
                if not isinstance(c, dict):
                    violations.append(f"schema[{i}] must be an object")
                    continue
                for key in sorted(set(c) - _SCHEMA_KEYS):
                    violations.append(f"schema[{i}] has unknown key {key!r}")
                try:
                    cols.append(ColumnSchema(**{k: v for k, v in c.items() if k in _SCHEMA_KEYS}))
                except (TypeError, ValueError) as exc:
                    violations.append(f"schema[{i}]: {exc}")
            if len(cols) == len(raw_schema):
                schema = tuple(cols)

    train = TrainConfig(seed=doc.get("seed", 0) if isinstance(doc.get("seed"), int) else 0)
    raw_train = doc.get("train")
    if raw_train is not None:
        if not isinstance(raw_train, dict):
            violations.append("train must be an object")
        else:
            for key in sorted(set(raw_train) - _TRAIN_KEYS):
                violations.append(f"train has unknown key {key!r}")
            kw = {k: v for k, v in raw_train.items() if k in _TRAIN_KEYS}
            kw.setdefault("seed", doc.get("seed", 0) if isinstance(doc.get("seed"), int) else 0)
            try:
                train = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()})
            except (TypeError, ValueError) as exc:
                violations.append(f"train: {exc}")

    penalty = None
    raw_pen = doc.get("penalty")
    if raw_pen is not None:
        if not isinstance(raw_pen, dict):
            violations.append("penalty must be an object")
        else:
            for key in sorted(set(raw_pen) - _PENALTY_KEYS):
                violations.append(f"penalty has unknown key {key!r}")
            try:
                penalty = PenaltySpec(**{k: v for k, v in raw_pen.items() if k in _PENALTY_KEYS})
            except (TypeError, ValueError) as exc:
                violations.append(f"penalty: {exc}")

    robustness = RobustnessConfig()
    raw_rob = doc.get("robustness")
    if raw_rob is not None:
        if not isinstance(raw_rob, dict):
            violations.append("robustness must be an object")
        else:
            for key in sorted(set(raw_rob) - _ROBUST_KEYS):
                violations.append(f"robustness has unknown key {key!r}")
            kw = {
                k: tuple(v) if isinstance(v, list) else v
                for k, v in raw_rob.items()
                if k in _ROBUST_KEYS
            }
            try:
                robustness = RobustnessConfig(**kw)
            except TypeError as exc:
                violations.append(f"robustness: {exc}")
            else:
                if robustness.subsample_runs < 1:
                    violations.append("robustness.subsample_runs must be >= 1")
                if not 0.0 < robustness.subsample_fraction <= 1.0:
                    violations.append("robustness.subsample_fraction must lie in (0, 1]")
                for f in robustness.size_fractions:
                    if not 0.0 < f <= 1.0:
                        violations.append(f"robustness.size_fractions entry {f!r} outside (0, 1]")

    od = doc.get("output_dir", ".")
    if not isinstance(od, str):
        violations.append(f"output_dir must be a string, got {od!r}")
        od = "."

    if violations:
        raise ConfigError(violations)

    return RunConfig(
        seed=doc["seed"],
        output_dir=od,
        data=data,
        schema=schema,
        train=train,
        estimators=tuple(ests) if ests else ESTIMATOR_NAMES,
        population_size=doc.get("population_size", 1_000_000),
        replications=doc.get("replications", 2000),
        sample_size=doc.get("sample_size"),
        treated_fraction=tf,
        penalty=penalty,
        robustness=robustness,
        eval_samples=doc.get("eval_samples", 10),
        n_jobs=doc.get("n_jobs", 1),
    )


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# batch sizes follow the source samples these presets are built for; the
# CPS and PSID runs also use fewer evaluation samples because exact
# transport on their sizes is slow
_PRESETS: dict[str, dict] = {
    "ldw-experimental": {
        "schema": [dataclasses.asdict(c) for c in ldw_schema()],
        "train": {"batch_size": 128},
        "eval_samples": 10,
    },
    "ldw-cps": {
        "schema": [dataclasses.asdict(c) for c in ldw_schema()],
        "train": {"batch_size": 4096},
        "eval_samples": 3,
    },
    "ldw-psid": {
        "schema": [dataclasses.asdict(c) for c in ldw_schema()],
        "train": {"batch_size": 512},
        "eval_samples": 10,
    },
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset(name: str) -> dict:
    if name not in _PRESETS:
        raise ConfigError([f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"])
    return json.loads(json.dumps(_PRESETS[name]))  # deep copy


def load_config(path: str | None, preset_name: str | None, overrides: dict) -> RunConfig:
    """Assemble the effective config: defaults < preset < file < overrides."""
    doc: dict = {}
    if preset_name:
        doc = _merge(doc, preset(preset_name))
    if path:
        if not os.path.isfile(path):
            raise ConfigError([f"config file does not exist: {path}"])
        with open(path) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([f"config file is not valid JSON: {exc}"]) from None
        if not isinstance(loaded, dict):
            raise ConfigError(["config file must hold a JSON object"])
        doc = _merge(doc, loaded)
    doc = _merge(doc, overrides)
    env_dir = os.environ.get("WGANSIM_OUTPUT_DIR")
    if env_dir:
        doc["output_dir"] = env_dir
    return config_from_dict(doc)
