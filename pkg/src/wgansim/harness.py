"""Synthetic populations with known treatment effects and the Monte Carlo
machinery that compares estimators on repeated draws from them.

A population is built in two stages from a pair of trained generators: one
for covariates given treatment, one for the outcome given covariates and
treatment. Both potential outcomes are drawn for every unit, so the average
effect on the treated is known exactly and every estimator can be scored
against it. Replications are seeded individually from the master seed, which
makes the aggregates independent of execution order and worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .estimators import ESTIMATOR_NAMES, EstimatorOptions, EstimatorResult, run_all
from .seeds import derive_seed, substream
from .tabular import ColumnSchema, Dataset
from .wgan import TrainConfig, TrainedGenerator, TrainingError, train_conditional

__all__ = [
    "POPULATION_FORMAT",
    "POPULATION_VERSION",
    "SyntheticPopulation",
    "EstimatorSummary",
    "MonteCarloReport",
    "model_hash",
    "synthesize_population",
    "make_population",
    "ground_truth_att",
    "draw_sample",
    "monte_carlo",
    "save_population",
    "load_population",
    "TrainedModels",
    "train_models",
    "run_pipeline",
    "SubsampleReport",
    "ArchitectureReport",
    "TrainingSizeReport",
    "robustness_subsample",
    "robustness_architecture",
    "robustness_training_size",
]

POPULATION_FORMAT = "wgansim-population"
POPULATION_VERSION = 1

# fixed chunk for generator sampling: results depend on batch shape at the
# last bit (BLAS blocking), so the chunk size must never depend on N
_SAMPLE_CHUNK = 65536

_METRICS = ("bias", "sdev", "rmse", "coverage")


def model_hash(gen: TrainedGenerator) -> str:
    doc = json.dumps(gen.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()


# ---- populations ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticPopulation:
    """Complete-data population: both potential outcomes for every unit."""

    X: np.ndarray
    W: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    x_schema: tuple[ColumnSchema, ...]
    treatment_schema: ColumnSchema
    outcome_schema: ColumnSchema
    tau_true: float
    provenance: dict

    @property
    def n(self) -> int:
        return len(self.W)

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.W.sum())

    def observed_outcome(self) -> np.ndarray:
        return np.where(self.W == 1.0, self.Y1, self.Y0)

    def dataset(self, idx: np.ndarray | None = None) -> Dataset:
        """Observed-data view (treated rows show Y1, controls Y0)."""
        if idx is None:
            idx = np.arange(self.n)
        rows = np.column_stack(
            [self.X[idx], self.W[idx], self.observed_outcome()[idx]]
        )
        schema = [*self.x_schema, self.treatment_schema, self.outcome_schema]
        return Dataset(schema, rows)


def ground_truth_att(pop: SyntheticPopulation) -> float:
    treated = pop.W == 1.0
    if not treated.any():
        raise ValueError("population has no treated units")
    return float(np.mean(pop.Y1[treated] - pop.Y0[treated]))


def make_population(
    X: np.ndarray,
    W: np.ndarray,
    Y0: np.ndarray,
    Y1: np.ndarray,
    x_names: list[str] | None = None,
    treatment_name: str = "w",
    outcome_name: str = "y",
    provenance: dict | None = None,
) -> SyntheticPopulation:
    """Assemble a population from explicit arrays (e.g. an analytic design)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = np.asarray(W, dtype=float)
    Y0 = np.asarray(Y0, dtype=float)
    Y1 = np.asarray(Y1, dtype=float)
    n = len(W)
    if X.shape[0] != n or Y0.shape != (n,) or Y1.shape != (n,):
        raise ValueError("X, W, Y0, Y1 must agree on the number of units")
    if not np.all(np.isin(W, (0.0, 1.0))):
        raise ValueError("W must be 0/1")
    names = x_names or [f"x{j + 1}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("x_names length must match the covariate count")
    pop = SyntheticPopulation(
        X=X,
        W=W,
        Y0=Y0,
        Y1=Y1,
        x_schema=tuple(ColumnSchema(nm, "continuous") for nm in names),
        treatment_schema=ColumnSchema(treatment_name, "binary", role="treatment"),
        outcome_schema=ColumnSchema(outcome_name, "continuous", role="outcome"),
        tau_true=0.0,
        provenance=provenance or {"source": "direct"},
    )
    object.__setattr__(pop, "tau_true", ground_truth_att(pop))
    return pop


def _chunks(n: int) -> list[tuple[int, int]]:
    return [(a, min(a + _SAMPLE_CHUNK, n)) for a in range(0, n, _SAMPLE_CHUNK)]


def _sample_conditional(
    gen: TrainedGenerator,
    labels_for: callable,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample in fixed-size chunks so results do not depend on N via BLAS
    batch shapes; the rng stream is consumed identically either way."""
    parts = []
    cols = gen.generated_columns
    for a, b in _chunks(n):
        labels = labels_for(a, b)
        parts.append(gen.sample(b - a, rng, labels=labels).matrix(cols))
    return np.concatenate(parts, axis=0)


def synthesize_population(
    gX: TrainedGenerator,
    gY: TrainedGenerator,
    N: int,
    treated_fraction: float,
    seed: int,
) -> SyntheticPopulation:
    """Two-stage draw: covariates given treatment, then each potential
    outcome given (covariates, treatment level), independently per unit."""
    if not 0.0 < treated_fraction < 1.0:
        raise ValueError("treated_fraction must lie strictly between 0 and 1")
    if N < 2:
        raise ValueError("population size must be at least 2")

    x_names = gX.generated_columns
    if len(gY.generated_columns) != 1:
        raise ValueError("outcome generator must produce exactly one column")
    y_name = gY.generated_columns[0]

    tx = list(gX.label_columns) + list(gX.dropped_labels)
    ty = [n for n in list(gY.label_columns) + list(gY.dropped_labels) if n not in x_names]
    candidates = list(dict.fromkeys(tx + ty))
    if len(candidates) != 1:
        raise ValueError(
            f"cannot identify the treatment label: candidates {candidates}"
        )
    treat_name = candidates[0]
    unknown = [n for n in gY.label_columns if n not in x_names and n != treat_name]
    if unknown:
        raise ValueError(f"outcome generator conditions on unknown columns {unknown}")

    N1 = int(np.rint(N * treated_fraction))
    if not 0 < N1 < N:
        raise ValueError(f"treated_fraction {treated_fraction} leaves an empty arm at N={N}")
    W = np.zeros(N)
    W[:N1] = 1.0

    x_rng = substream(seed, "population", "x")
    y0_rng = substream(seed, "population", "y0")
    y1_rng = substream(seed, "population", "y1")

    if gX.label_columns:
        X = _sample_conditional(gX, lambda a, b: W[a:b, None], N, x_rng)
    else:
        X = _sample_conditional(gX, lambda a, b: None, N, x_rng)

    def y_labels(level: float):
        def build(a, b):
            cols = []
            for nm in gY.label_columns:
                if nm == treat_name:
                    cols.append(np.full(b - a, level))
                else:
                    cols.append(X[a:b, x_names.index(nm)])
            return np.column_stack(cols) if cols else None

        return build

    Y0 = _sample_conditional(gY, y_labels(0.0), N, y0_rng)[:, 0]
    Y1 = _sample_conditional(gY, y_labels(1.0), N, y1_rng)[:, 0]

    by_name_x = {c.name: c for c in gX.schema}
    by_name_y = {c.name: c for c in gY.schema}
    x_schema = tuple(
        dataclasses.replace(by_name_x[nm], role="covariate") for nm in x_names
    )
    y_schema = dataclasses.replace(by_name_y[y_name], role="outcome")
    pop = SyntheticPopulation(
        X=X,
        W=W,
        Y0=Y0,
        Y1=Y1,
        x_schema=x_schema,
        treatment_schema=ColumnSchema(treat_name, "binary", role="treatment"),
        outcome_schema=y_schema,
        tau_true=0.0,
        provenance={"gx": model_hash(gX), "gy": model_hash(gY), "seed": int(seed)},
    )
    object.__setattr__(pop, "tau_true", ground_truth_att(pop))
    return pop


# ---- persistence ---------------------------------------------------------


def _write_npz(path, arrays: dict[str, np.ndarray]) -> None:
    # np.savez stamps current time into the zip entries; write them with a
    # frozen timestamp so identical runs produce identical bytes
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _sidecar(path) -> str:
    import os

    base, _ = os.path.splitext(os.fspath(path))
    return base + ".json"


def save_population(pop: SyntheticPopulation, path, tool: dict | None = None) -> None:
    """Columnar binary (.npz) plus a JSON header next to it."""
    _write_npz(path, {"X": pop.X, "W": pop.W, "Y0": pop.Y0, "Y1": pop.Y1})
    header = {
        "format": POPULATION_FORMAT,
        "version": POPULATION_VERSION,
        "n": pop.n,
        "d_x": pop.d_x,
        "tau_true": pop.tau_true,
        "provenance": pop.provenance,
        "x_schema": [{"name": c.name, "kind": c.kind} for c in pop.x_schema],
        "treatment": {"name": pop.treatment_schema.name},
        "outcome": {
            "name": pop.outcome_schema.name,
            "kind": pop.outcome_schema.kind,
        },
    }
    if tool is not None:
        header["tool"] = tool
    with open(_sidecar(path), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_population(path) -> SyntheticPopulation:
    with open(_sidecar(path)) as fh:
        header = json.load(fh)
    if header.get("format") != POPULATION_FORMAT:
        raise ValueError(f"not a population file: format {header.get('format')!r}")
    if header.get("version") != POPULATION_VERSION:
        raise ValueError(f"unsupported population version {header.get('version')!r}")
    with np.load(path) as blob:
        X, W, Y0, Y1 = blob["X"], blob["W"], blob["Y0"], blob["Y1"]
    pop = SyntheticPopulation(
        X=X,
        W=W,
        Y0=Y0,
        Y1=Y1,
        x_schema=tuple(
            ColumnSchema(c["name"], c["kind"]) for c in header["x_schema"]
        ),
        treatment_schema=ColumnSchema(
            header["treatment"]["name"], "binary", role="treatment"
        ),
        outcome_schema=ColumnSchema(
            header["outcome"]["name"], header["outcome"]["kind"], role="outcome"
        ),
        tau_true=float(header["tau_true"]),
        provenance=header["provenance"],
    )
    check = ground_truth_att(pop)
    if not math.isclose(check, pop.tau_true, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("population header tau_true does not match the arrays")
    return pop


# ---- Monte Carlo ---------------------------------------------------------


@dataclass(frozen=True)
class EstimatorSummary:
    name: str
    bias: float
    sdev: float
    rmse: float
    coverage: float
    failures: int
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class MonteCarloReport:
    tau_true: float
    n: int
    replications: int
    seed: int
    summaries: tuple[EstimatorSummary, ...]

    def __getitem__(self, name: str) -> EstimatorSummary:
        for s in self.summaries:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "tau_true": self.tau_true,
            "n": self.n,
            "replications": self.replications,
            "seed": self.seed,
            "estimators": [dataclasses.asdict(s) | {"flags": list(s.flags)} for s in self.summaries],
        }

    def rows(self) -> list[dict]:
        return [
            {
                "estimator": s.name,
                "bias": s.bias,
                "sdev": s.sdev,
                "rmse": s.rmse,
                "coverage": s.coverage,
                "failures": s.failures,
            }
            for s in self.summaries
        ]


def draw_sample(
    pop: SyntheticPopulation,
    n: int,
    rng: np.random.Generator,
    arm_preserving: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One without-replacement draw; returns (X, w, observed y)."""
    if not 0 < n <= pop.n:
        raise ValueError(f"sample size must lie in [1, {pop.n}], got {n}")
    y_obs = pop.observed_outcome()
    if arm_preserving:
        treated = np.flatnonzero(pop.W == 1.0)
        control = np.flatnonzero(pop.W == 0.0)
        n1 = int(np.rint(n * len(treated) / pop.n))
        n0 = n - n1
        if n1 < 1 or n0 < 1:
            raise ValueError(f"draw of size {n} leaves an empty arm")
        idx = np.concatenate(
            [
                treated[rng.choice(len(treated), n1, replace=False)],
                control[rng.choice(len(control), n0, replace=False)],
            ]
        )
    else:
        idx = rng.choice(pop.n, n, replace=False)
    return pop.X[idx], pop.W[idx], y_obs[idx]


_MC_STATE: dict | None = None


def _mc_init(state: dict) -> None:
    global _MC_STATE
    _MC_STATE = state


def _mc_replicate(r: int) -> tuple[int, dict[str, EstimatorResult]]:
    s = _MC_STATE
    rng = substream(s["seed"], "replication", r)
    X, w, y = draw_sample(s["pop"], s["n"], rng, s["arm_preserving"])
    res = run_all(X, w, y, derive_seed(s["seed"], "replication", r), s["options"])
    return r, res


def _summarize(
    name: str,
    results: list[EstimatorResult],
    tau_true: float,
) -> EstimatorSummary:
    taus, ses, flags = [], [], set()
    failures = 0
    for er in results:
        if er.failed or not math.isfinite(er.tau):
            failures += 1
            continue
        taus.append(er.tau)
        ses.append(er.se)
        flags.update(er.flags)
    out_flags = sorted(flags)
    if not taus:
        return EstimatorSummary(
            name, math.nan, math.nan, math.nan, math.nan, failures,
            tuple(out_flags + ["all_failed"]),
        )
    taus = np.asarray(taus)
    ses = np.asarray(ses)
    bias = float(taus.mean() - tau_true)
    if len(taus) >= 2:
        sdev = float(taus.std(ddof=1))
    else:
        sdev = math.nan
        out_flags.append("single_success")
    rmse = math.sqrt(bias * bias + sdev * sdev) if math.isfinite(sdev) else math.nan
    with np.errstate(invalid="ignore"):
        covered = np.abs(taus - tau_true) <= 1.96 * ses
    covered = np.where(np.isfinite(ses), covered, False)
    coverage = float(covered.mean())
    if np.any(ses == 0.0):
        out_flags.append("degenerate_se")
    if not np.all(np.isfinite(ses)):
        out_flags.append("nonfinite_se")
    return EstimatorSummary(name, bias, sdev, rmse, coverage, failures, tuple(out_flags))


def monte_carlo(
    pop: SyntheticPopulation,
    n: int,
    R: int,
    estimators: tuple[str, ...] = ESTIMATOR_NAMES,
    master_seed: int = 0,
    options: EstimatorOptions | None = None,
    n_jobs: int = 1,
    arm_preserving: bool = True,
) -> MonteCarloReport:
    """Score each estimator over R independent draws from the population.

    Every replication owns a seed derived from (master_seed, index), so the
    report is identical for any n_jobs. Per-draw failures are excluded from
    that estimator's aggregates and counted.
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    if not 0 < n <= pop.n:
        raise ValueError(f"sample size must lie in [1, {pop.n}], got {n}")
    if n_jobs < 1:
        raise ValueError("n_jobs must be positive")
    opts = options or EstimatorOptions()
    if tuple(opts.estimators) != tuple(estimators):
        opts = dataclasses.replace(opts, estimators=tuple(estimators))

    state = {
        "pop": pop,
        "n": n,
        "seed": master_seed,
        "options": opts,
        "arm_preserving": arm_preserving,
    }
    if n_jobs == 1:
        _mc_init(state)
        results = [_mc_replicate(r) for r in range(R)]
    else:
        chunk = max(1, R // (8 * n_jobs))
        with ProcessPoolExecutor(
            max_workers=n_jobs, initializer=_mc_init, initargs=(state,)
        ) as ex:
            results = list(ex.map(_mc_replicate, range(R), chunksize=chunk))
    results.sort(key=lambda pair: pair[0])

    summaries = tuple(
        _summarize(nm, [res[nm] for _, res in results], pop.tau_true)
        for nm in estimators
    )
    return MonteCarloReport(
        tau_true=pop.tau_true,
        n=n,
        replications=R,
        seed=master_seed,
        summaries=summaries,
    )


# ---- full pipeline -------------------------------------------------------


class TrainedModels(NamedTuple):
    gx: TrainedGenerator
    gy: TrainedGenerator
    log_x: list
    log_y: list


def train_models(
    data: Dataset,
    config: TrainConfig,
    seed: int,
    penalty=None,
) -> TrainedModels:
    """Fit the covariate model (X given treatment) and the outcome model
    (Y given covariates and treatment) on one dataset.

    A shape penalty must name two covariate columns; it constrains the
    covariate model. The outcome model generates a single column, so a
    penalty on the outcome-covariate relationship has no place here.
    """
    covars = data.names("covariate")
    if data.treatment_name is None or data.outcome_name is None:
        raise TrainingError("data must carry treatment and outcome columns")
    if not covars:
        raise TrainingError("data must carry at least one covariate")
    t, y = data.treatment_name, data.outcome_name

    if penalty is not None:
        named = {penalty.x_column, penalty.y_column}
        if not all(isinstance(c, str) for c in named):
            raise TrainingError("pipeline penalties must reference columns by name")
        if not named <= set(covars):
            raise TrainingError(
                f"penalty columns {sorted(named)} must both be covariates; "
                f"the outcome model cannot carry a within-batch shape penalty"
            )

    cfg_x = dataclasses.replace(config, seed=derive_seed(seed, "train", "x"))
    cfg_y = dataclasses.replace(config, seed=derive_seed(seed, "train", "y"))
    gX, log_x = train_conditional(data.select(covars + [t]), [t], cfg_x, penalty=penalty)
    gY, log_y = train_conditional(data.select(covars + [t, y]), covars + [t], cfg_y)
    return TrainedModels(gX, gY, log_x, log_y)


def run_pipeline(
    data: Dataset,
    config: TrainConfig,
    seed: int,
    population_size: int = 1_000_000,
    replications: int = 2000,
    sample_size: int | None = None,
    options: EstimatorOptions | None = None,
    penalty=None,
    n_jobs: int = 1,
) -> MonteCarloReport:
    """Train both models, synthesize a population, and run the Monte Carlo."""
    gX, gY = train_models(data, config, seed, penalty=penalty)[:2]
    pop = synthesize_population(
        gX,
        gY,
        population_size,
        treated_fraction=data.n_treated / data.n,
        seed=derive_seed(seed, "population"),
    )
    opts = options or EstimatorOptions()
    return monte_carlo(
        pop,
        n=sample_size or data.n,
        R=replications,
        estimators=opts.estimators,
        master_seed=derive_seed(seed, "simulate"),
        options=opts,
        n_jobs=n_jobs,
    )


# ---- robustness protocols ------------------------------------------------


def _arm_subsample(data: Dataset, k: int, rng: np.random.Generator) -> Dataset:
    """Without-replacement subsample preserving the treated share; indices
    are sorted so the full-sample case returns the data unchanged."""
    if not 0 < k <= data.n:
        raise ValueError(f"subsample size must lie in [1, {data.n}], got {k}")
    if data.treatment_name is None:
        idx = rng.choice(data.n, k, replace=False)
    else:
        treated = np.flatnonzero(data.treatment() == 1.0)
        control = np.flatnonzero(data.treatment() == 0.0)
        k1 = int(np.rint(k * len(treated) / data.n))
        k0 = k - k1
        if k1 < 1 or k0 < 1 or k1 > len(treated) or k0 > len(control):
            raise ValueError(f"subsample of size {k} leaves an empty arm")
        idx = np.concatenate(
            [
                treated[rng.choice(len(treated), k1, replace=False)],
                control[rng.choice(len(control), k0, replace=False)],
            ]
        )
    return data.subset(np.sort(idx))


def _metric(s: EstimatorSummary, metric: str) -> float:
    return getattr(s, metric)


@dataclass(frozen=True)
class SubsampleReport:
    runs: int
    used: int
    failures: tuple[str, ...]
    flags: tuple[str, ...]
    table: dict  # estimator -> metric -> {"mean": float, "sd": float}

    def to_dict(self) -> dict:
        return {
            "protocol": "subsample",
            "runs": self.runs,
            "used": self.used,
            "failures": list(self.failures),
            "flags": list(self.flags),
            "table": self.table,
        }


def robustness_subsample(
    data: Dataset,
    config: TrainConfig,
    M: int = 10,
    fraction: float = 0.8,
    population_size: int = 1_000_000,
    replications: int = 10_000,
    sample_size: int | None = None,
    options: EstimatorOptions | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> SubsampleReport:
    """Repeat the whole pipeline on M subsamples and report the spread of
    every metric; training failures are recorded, not fatal."""
    if M < 1:
        raise ValueError("M must be at least 1")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    k = int(np.rint(fraction * data.n))
    reports: list[MonteCarloReport] = []
    failures: list[str] = []
    for m in range(M):
        sub = _arm_subsample(data, k, substream(seed, "subsample", m))
        try:
            reports.append(
                run_pipeline(
                    sub,
                    config,
                    seed=derive_seed(seed, "subsample", m),
                    population_size=population_size,
                    replications=replications,
                    sample_size=sample_size or data.n,
                    options=options,
                    n_jobs=n_jobs,
                )
            )
        except TrainingError as exc:
            failures.append(f"run {m}: {exc}")
    flags: list[str] = []
    if not reports:
        raise TrainingError("every subsample run failed: " + "; ".join(failures))
    if len(reports) == 1:
        flags.append("degenerate_sd")
    names = [s.name for s in reports[0].summaries]
    table: dict = {}
    for nm in names:
        table[nm] = {}
        for metric in _METRICS:
            vals = np.array([_metric(rep[nm], metric) for rep in reports])
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            table[nm][metric] = {"mean": float(vals.mean()), "sd": sd}
    return SubsampleReport(
        runs=M,
        used=len(reports),
        failures=tuple(failures),
        flags=tuple(flags),
        table=table,
    )


@dataclass(frozen=True)
class ArchitectureReport:
    architectures: tuple[str, ...]
    failures: tuple[str, ...]
    table: dict  # estimator -> architecture -> metric -> float

    def to_dict(self) -> dict:
        return {
            "protocol": "architecture",
            "architectures": list(self.architectures),
            "failures": list(self.failures),
            "table": self.table,
        }


def robustness_architecture(
    data: Dataset,
    config: TrainConfig,
    architectures: tuple[str, ...] = ("main", "alt1", "alt2"),
    population_size: int = 1_000_000,
    replications: int = 2000,
    sample_size: int | None = None,
    options: EstimatorOptions | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> ArchitectureReport:
    """Side-by-side metrics for each named generator/critic layout."""
    from .wgan import architecture_preset

    if not architectures:
        raise ValueError("at least one architecture required")
    per_arch: dict[str, MonteCarloReport] = {}
    failures: list[str] = []
    for name in architectures:
        preset = architecture_preset(name)
        cfg = dataclasses.replace(config, **preset)
        try:
            per_arch[name] = run_pipeline(
                data,
                cfg,
                seed=derive_seed(seed, "architecture", name),
                population_size=population_size,
                replications=replications,
                sample_size=sample_size,
                options=options,
                n_jobs=n_jobs,
            )
        except TrainingError as exc:
            failures.append(f"{name}: {exc}")
    if not per_arch:
        raise TrainingError("every architecture run failed: " + "; ".join(failures))
    first = next(iter(per_arch.values()))
    table: dict = {}
    for s in first.summaries:
        table[s.name] = {}
        for arch, rep in per_arch.items():
            table[s.name][arch] = {
                metric: _metric(rep[s.name], metric) for metric in _METRICS
            }
    return ArchitectureReport(
        architectures=tuple(per_arch), failures=tuple(failures), table=table
    )


@dataclass(frozen=True)
class TrainingSizeReport:
    fractions: tuple[float, ...]
    table: dict  # estimator -> str(fraction) -> metric -> float

    def to_dict(self) -> dict:
        return {
            "protocol": "training_size",
            "fractions": list(self.fractions),
            "table": self.table,
        }


def robustness_training_size(
    data: Dataset,
    config: TrainConfig,
    fractions: tuple[float, ...] = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    population_size: int = 1_000_000,
    replications: int = 2000,
    options: EstimatorOptions | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> TrainingSizeReport:
    """Train on a fraction of the sample but evaluate draws of the original
    size. A fraction too small to stratify is a hard error."""
    if not fractions:
        raise ValueError("at least one fraction required")
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fractions must lie in (0, 1], got {f}")
    per_fraction: dict[float, MonteCarloReport] = {}
    for i, f in enumerate(fractions):
        k = int(np.rint(f * data.n))
        try:
            sub = _arm_subsample(data, k, substream(seed, "size", i))
            per_fraction[f] = run_pipeline(
                sub,
                config,
                seed=derive_seed(seed, "size", i),
                population_size=population_size,
                replications=replications,
                sample_size=data.n,
                options=options,
                n_jobs=n_jobs,
            )
        except (TrainingError, ValueError) as exc:
            raise TrainingError(f"training-size fraction {f}: {exc}") from exc
    first = next(iter(per_fraction.values()))
    table: dict = {}
    for s in first.summaries:
        table[s.name] = {
            str(f): {metric: _metric(rep[s.name], metric) for metric in _METRICS}
            for f, rep in per_fraction.items()
        }
    return TrainingSizeReport(fractions=tuple(fractions), table=table)
