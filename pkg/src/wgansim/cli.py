"""Command-line front end.

Six subcommands cover the full workflow: train the generator pair, sample
rows, build a complete-data population, run the Monte Carlo comparison,
diagnose generator fidelity, and run the robustness protocols. Every output
file embeds the tool version, a hash of the effective configuration, and the
master seed; numeric payloads are byte-identical across reruns with the same
inputs. Failures print a JSON error object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config
from .estimators import EstimatorError, EstimatorOptions
from .fidelity import (
    compare_report,
    exact_wasserstein,
    fit_mvn,
    predictability_profile,
    sample_mvn,
    sinkhorn,
)
from .harness import (
    load_population,
    monte_carlo,
    robustness_architecture,
    robustness_subsample,
    robustness_training_size,
    save_population,
    synthesize_population,
    train_models,
)
from .seeds import derive_seed, substream
from .tabular import Dataset, IngestionError, load_csv, standardize, summary_stats
from .wgan import TrainedGenerator, TrainingError

# entropic fallback when a pair is too large for the exact transport solver
_SINKHORN_EPSILON = 0.05


# ---- output plumbing -----------------------------------------------------


def _tool_block(cfg: RunConfig) -> dict:
    return {
        "name": "wgansim",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
    }


def _meta_line(cfg: RunConfig) -> str:
    return f"# wgansim {__version__} config {config_hash(cfg)[:12]} seed {cfg.seed}"


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def _write_csv(path, cfg: RunConfig, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_meta_line(cfg) + "\n")
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])


def _write_json(path, cfg: RunConfig, payload: dict) -> None:
    doc = {"tool": _tool_block(cfg), **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outpath(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _require(cfg: RunConfig, **fields) -> None:
    missing = [
        f"{name} is required for this command" for name, val in fields.items() if val is None
    ]
    if missing:
        raise ConfigError(missing)


def _load_data(cfg: RunConfig) -> Dataset:
    _require(cfg, data=cfg.data, schema=cfg.schema)
    return load_csv(cfg.data, list(cfg.schema))


def _save_model(path, cfg: RunConfig, gen: TrainedGenerator) -> None:
    doc = gen.to_dict()
    doc["tool"] = _tool_block(cfg)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_log(path, cfg: RunConfig, log) -> None:
    rows = [
        {
            "step": r.step,
            "critic_loss": r.critic_loss,
            "penalty_value": r.penalty_value,
            "gap": r.gap,
        }
        for r in log
    ]
    _write_csv(path, cfg, ["step", "critic_loss", "penalty_value", "gap"], rows)


# ---- commands ------------------------------------------------------------


def cmd_train(cfg: RunConfig, args) -> int:
    data = _load_data(cfg)
    gx, gy, log_x, log_y = train_models(data, cfg.train, seed=cfg.seed, penalty=cfg.penalty)
    px = _outpath(cfg, "model_x.json")
    py = _outpath(cfg, "model_y.json")
    _save_model(px, cfg, gx)
    _save_model(py, cfg, gy)
    _write_log(_outpath(cfg, "train_log_x.csv"), cfg, log_x)
    _write_log(_outpath(cfg, "train_log_y.csv"), cfg, log_y)
    print(f"train: {data.n} rows, {cfg.train.total_steps} steps -> {px}, {py}")
    return 0


def _generate_labels(gen: TrainedGenerator, cfg: RunConfig, args) -> tuple[int, np.ndarray | None]:
    if not gen.label_columns:
        _require(cfg, sample_size=cfg.sample_size)
        return cfg.sample_size, None
    if args.labels_csv:
        with open(args.labels_csv, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            body = [row for row in reader if row]
        missing = [c for c in gen.label_columns if c not in header]
        if missing:
            raise IngestionError(f"labels file lacks columns {missing}")
        cols = [header.index(c) for c in gen.label_columns]
        labels = np.array([[float(row[j]) for j in cols] for row in body])
        return len(labels), labels
    if len(gen.label_columns) == 1 and cfg.treated_fraction is not None:
        _require(cfg, sample_size=cfg.sample_size)
        n = cfg.sample_size
        n1 = int(np.rint(n * cfg.treated_fraction))
        labels = np.zeros((n, 1))
        labels[:n1, 0] = 1.0
        return n, labels
    raise ConfigError(
        [
            f"model conditions on {gen.label_columns}: pass --labels-csv, "
            "or treated_fraction plus sample_size for a single treatment label"
        ]
    )


def cmd_generate(cfg: RunConfig, args) -> int:
    gen = TrainedGenerator.load(args.model)
    n, labels = _generate_labels(gen, cfg, args)
    out = gen.sample(n, substream(cfg.seed, "generate"), labels=labels)
    names = [c.name for c in out.schema]
    path = _outpath(cfg, "generated.csv")
    rows = [dict(zip(names, r)) for r in out.rows]
    _write_csv(path, cfg, names, rows)
    print(f"generate: {n} rows from {args.model} -> {path}")
    return 0


def cmd_population(cfg: RunConfig, args) -> int:
    _require(cfg, treated_fraction=cfg.treated_fraction)
    gx = TrainedGenerator.load(args.model_x)
    gy = TrainedGenerator.load(args.model_y)
    pop = synthesize_population(
        gx,
        gy,
        cfg.population_size,
        cfg.treated_fraction,
        seed=derive_seed(cfg.seed, "population"),
    )
    path = _outpath(cfg, "population.npz")
    save_population(pop, path, tool=_tool_block(cfg))
    print(f"population: N={pop.n} treated={pop.n_treated} tau_true={pop.tau_true!r} -> {path}")
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    _require(cfg, sample_size=cfg.sample_size)
    pop = load_population(args.population)
    report = monte_carlo(
        pop,
        n=cfg.sample_size,
        R=cfg.replications,
        estimators=cfg.estimators,
        master_seed=derive_seed(cfg.seed, "simulate"),
        options=EstimatorOptions(estimators=cfg.estimators),
        n_jobs=cfg.n_jobs,
    )
    csv_path = _outpath(cfg, "simulation.csv")
    _write_csv(
        csv_path,
        cfg,
        ["estimator", "bias", "sdev", "rmse", "coverage", "failures"],
        report.rows(),
    )
    _write_json(_outpath(cfg, "simulation.json"), cfg, report.to_dict())
    print(
        f"simulate: R={report.replications} n={report.n} "
        f"tau_true={report.tau_true!r} -> {csv_path}"
    )
    return 0


def _transport_distance(A: np.ndarray, B: np.ndarray, flags: list[str], label: str):
    try:
        return float(exact_wasserstein(A, B)), "exact"
    except ValueError:
        flags.append(f"{label}_used_sinkhorn")
        return float(sinkhorn(A, B, _SINKHORN_EPSILON).cost), "sinkhorn"


def cmd_diagnose(cfg: RunConfig, args) -> int:
    _require(cfg, schema=cfg.schema)
    real = load_csv(args.real, list(cfg.schema))
    synth = load_csv(args.generated, list(cfg.schema))

    flags: list[str] = []
    # distances on standardized coordinates so no column dominates by scale
    real_std, scaler = standardize(real)
    names = [c.name for c in real.schema]
    synth_std = scaler.transform(synth.matrix(names), names)
    w1_gen, method = _transport_distance(real_std.rows, synth_std, flags, "generated")
    mvn = fit_mvn(real_std.rows)
    mvn_draw = sample_mvn(mvn, synth.n, substream(cfg.seed, "diagnose", "mvn"))
    w1_mvn, _ = _transport_distance(real_std.rows, mvn_draw, flags, "mvn")

    conditionals = tuple((t, g) for t, g in (args.conditional or []))
    report = compare_report(real, synth, bins=args.bins, conditionals=conditionals)

    profile_real = predictability_profile(real, seed=derive_seed(cfg.seed, "diagnose", "real"))
    profile_synth = predictability_profile(synth, seed=derive_seed(cfg.seed, "diagnose", "synth"))

    payload = {
        "wasserstein": {
            "generated": w1_gen,
            "mvn_baseline": w1_mvn,
            "ratio": w1_gen / w1_mvn if w1_mvn > 0 else float("nan"),
            "method": method,
        },
        "r2_given_rest": {"real": profile_real, "synthetic": profile_synth},
        "summary_real": summary_stats(real),
        "summary_synthetic": summary_stats(synth),
        "comparison": report.to_dict(),
        "flags": flags,
    }
    json_path = _outpath(cfg, "diagnose.json")
    _write_json(json_path, cfg, payload)

    col_rows = [
        {
            "column": c.name,
            "real_mean": c.real_mean,
            "real_sd": c.real_sd,
            "synth_mean": c.synth_mean,
            "synth_sd": c.synth_sd,
        }
        for c in report.columns
    ]
    _write_csv(
        _outpath(cfg, "diagnose_columns.csv"),
        cfg,
        ["column", "real_mean", "real_sd", "synth_mean", "synth_sd"],
        col_rows,
    )
    print(
        f"diagnose: W1 generated={w1_gen!r} mvn={w1_mvn!r} "
        f"ratio={w1_gen / w1_mvn if w1_mvn > 0 else float('nan'):.3f} -> {json_path}"
    )
    return 0


def cmd_robustness(cfg: RunConfig, args) -> int:
    data = _load_data(cfg)
    rob = cfg.robustness
    options = EstimatorOptions(estimators=cfg.estimators)
    common = dict(
        population_size=cfg.population_size,
        replications=rob.replications,
        options=options,
        seed=cfg.seed,
        n_jobs=cfg.n_jobs,
    )
    if args.protocol == "subsample":
        rep = robustness_subsample(
            data,
            cfg.train,
            M=rob.subsample_runs,
            fraction=rob.subsample_fraction,
            sample_size=cfg.sample_size,
            **common,
        )
        rows = [
            {"estimator": est, "metric": metric, "mean": cell["mean"], "sd": cell["sd"]}
            for est, metrics in rep.table.items()
            for metric, cell in metrics.items()
        ]
        fieldnames = ["estimator", "metric", "mean", "sd"]
    elif args.protocol == "architecture":
        rep = robustness_architecture(
            data,
            cfg.train,
            architectures=rob.architectures,
            sample_size=cfg.sample_size,
            **common,
        )
        rows = [
            {"estimator": est, "architecture": arch, **vals}
            for est, by_arch in rep.table.items()
            for arch, vals in by_arch.items()
        ]
        fieldnames = ["estimator", "architecture", "bias", "sdev", "rmse", "coverage"]
    else:
        rep = robustness_training_size(
            data, cfg.train, fractions=rob.size_fractions, **common
        )
        rows = [
            {"estimator": est, "fraction": frac, **vals}
            for est, by_frac in rep.table.items()
            for frac, vals in by_frac.items()
        ]
        fieldnames = ["estimator", "fraction", "bias", "sdev", "rmse", "coverage"]

    csv_path = _outpath(cfg, f"robustness_{args.protocol}.csv")
    _write_csv(csv_path, cfg, fieldnames, rows)
    _write_json(_outpath(cfg, f"robustness_{args.protocol}.json"), cfg, rep.to_dict())
    print(f"robustness: protocol={args.protocol} -> {csv_path}")
    return 0


# ---- argument parsing ----------------------------------------------------


def _overrides(args) -> dict:
    """Map provided flags onto config fields; absent flags leave the config
    untouched (precedence: flags > config file > preset > defaults)."""
    doc: dict = {}
    direct = {
        "seed": "seed",
        "output_dir": "output_dir",
        "data": "data",
        "jobs": "n_jobs",
        "replications": "replications",
        "sample_size": "sample_size",
        "population_size": "population_size",
        "treated_fraction": "treated_fraction",
    }
    for attr, key in direct.items():
        val = getattr(args, attr, None)
        if val is not None:
            doc[key] = val
    train = {}
    for attr, key in (("steps", "total_steps"), ("batch_size", "batch_size")):
        val = getattr(args, attr, None)
        if val is not None:
            train[key] = val
    if train:
        doc["train"] = train
    est = getattr(args, "estimators", None)
    if est is not None:
        doc["estimators"] = [e.strip() for e in est.split(",") if e.strip()]
    return doc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="built-in config preset name")
    p.add_argument("--seed", type=int, help="master seed (mandatory via flag or config)")
    p.add_argument("--output-dir", dest="output_dir", help="where outputs are written")
    p.add_argument("--jobs", type=int, help="parallel replications (default 1)")


def _parse_conditional(value: str) -> tuple[str, str]:
    parts = value.split(":")
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError("expected TARGET:GIVEN")
    return parts[0], parts[1]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wgansim",
        description="Train tabular WGANs, build ground-truth populations, "
        "and compare treatment-effect estimators on them.",
    )
    parser.add_argument("--version", action="version", version=f"wgansim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the covariate and outcome generators")
    _add_common(p)
    p.add_argument("--data", help="training CSV")
    p.add_argument("--steps", type=int, help="generator steps")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample synthetic rows from a model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--sample-size", dest="sample_size", type=int, help="rows to draw")
    p.add_argument("--treated-fraction", dest="treated_fraction", type=float)
    p.add_argument("--labels-csv", dest="labels_csv", help="CSV supplying label columns")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("population", help="synthesize a complete-data population")
    _add_common(p)
    p.add_argument("--model-x", dest="model_x", required=True)
    p.add_argument("--model-y", dest="model_y", required=True)
    p.add_argument("--population-size", dest="population_size", type=int)
    p.add_argument("--treated-fraction", dest="treated_fraction", type=float)
    p.set_defaults(func=cmd_population)

    p = sub.add_parser("simulate", help="Monte Carlo estimator comparison")
    _add_common(p)
    p.add_argument("--population", required=True, help="population .npz file")
    p.add_argument("--replications", type=int)
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--estimators", help="comma-separated estimator names")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="fidelity report for generated data")
    _add_common(p)
    p.add_argument("--real", required=True, help="real-data CSV")
    p.add_argument("--generated", required=True, help="generated-data CSV")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument(
        "--conditional",
        action="append",
        type=_parse_conditional,
        help="TARGET:GIVEN histogram split on GIVEN == 0 vs > 0 (repeatable)",
    )
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("robustness", help="stability protocols over the full pipeline")
    _add_common(p)
    p.add_argument("--data", help="training CSV")
    p.add_argument(
        "--protocol", required=True, choices=("subsample", "architecture", "size")
    )
    p.add_argument("--replications", type=int)
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--estimators", help="comma-separated estimator names")
    p.set_defaults(func=cmd_robustness)

    return parser


def _error_json(kind: str, message: str, violations: list[str] | None = None) -> str:
    doc = {"error": kind, "message": message}
    if violations:
        doc["violations"] = violations
    return json.dumps(doc, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset, _overrides(args))
        return args.func(cfg, args)
    except ConfigError as exc:
        print(_error_json("config", str(exc), exc.violations), file=sys.stderr)
        return 2
    except (IngestionError, TrainingError, EstimatorError) as exc:
        print(_error_json(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(_error_json(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
