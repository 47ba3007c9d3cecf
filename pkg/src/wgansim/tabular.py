"""Tabular datasets with typed columns.

Columns carry a kind (continuous, binary, censored_at_zero) and a role
(covariate, treatment, outcome). The kind drives standardization and the
matching generator output head; the role drives which columns the causal
estimators see.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ColumnSchema",
    "Dataset",
    "Scaler",
    "IngestionError",
    "load_csv",
    "fit_scaler",
    "standardize",
    "stratified_batches",
    "summary_stats",
    "ldw_schema",
]

KINDS = ("continuous", "binary", "censored_at_zero")
ROLES = ("covariate", "treatment", "outcome")


class IngestionError(ValueError):
    """Raised when a CSV or row matrix violates its schema."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    role: str = "covariate"
    scale: float = 1.0  # multiplier applied at load (e.g. dollars -> thousands)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValueError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.role == "treatment" and self.kind != "binary":
            raise ValueError(f"treatment column {self.name!r} must be binary")
        if not (self.scale > 0):
            raise ValueError(f"column {self.name!r}: scale must be positive")


def _validate_matrix(rows: np.ndarray, schema: list[ColumnSchema], context: str = "") -> None:
    problems = []
    for j, col in enumerate(schema):
        v = rows[:, j]
        bad = np.flatnonzero(~np.isfinite(v))
        for i in bad[:5]:
            problems.append(f"row {i}, column {col.name!r}: non-finite value")
        if col.kind == "binary":
            bad = np.flatnonzero(~np.isin(v, (0.0, 1.0)))
            for i in bad[:5]:
                problems.append(f"row {i}, column {col.name!r}: binary value must be 0 or 1, got {v[i]}")
        elif col.kind == "censored_at_zero":
            bad = np.flatnonzero(v < 0)
            for i in bad[:5]:
                problems.append(f"row {i}, column {col.name!r}: censored value must be >= 0, got {v[i]}")
        if len(problems) >= 20:
            break
    if problems:
        head = f"{context}: " if context else ""
        raise IngestionError(head + "; ".join(problems[:20]))


class Dataset:
    """Immutable-ish bundle of a schema and a row matrix (float64)."""

    def __init__(self, schema: list[ColumnSchema], rows: np.ndarray):
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise IngestionError("duplicate column names in schema")
        treatments = [c.name for c in schema if c.role == "treatment"]
        if len(treatments) > 1:
            raise IngestionError(f"at most one treatment column allowed, got {treatments}")
        outcomes = [c.name for c in schema if c.role == "outcome"]
        if len(outcomes) > 1:
            raise IngestionError(f"at most one outcome column allowed, got {outcomes}")
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != len(schema):
            raise IngestionError(f"row matrix has {rows.shape[1]} columns, schema has {len(schema)}")
        _validate_matrix(rows, schema)
        self.schema = list(schema)
        self.rows = rows
        self._index = {c.name: j for j, c in enumerate(schema)}
        self.treatment_name = treatments[0] if treatments else None
        self.outcome_name = outcomes[0] if outcomes else None

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def n_treated(self) -> int:
        if self.treatment_name is None:
            return 0
        return int(self.column(self.treatment_name).sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated if self.treatment_name is not None else 0

    def names(self, role: str | None = None) -> list[str]:
        if role is None:
            return [c.name for c in self.schema]
        return [c.name for c in self.schema if c.role == role]

    def column_schema(self, name: str) -> ColumnSchema:
        return self.schema[self._index[name]]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self._index[name]]

    def matrix(self, names: list[str] | None = None) -> np.ndarray:
        if names is None:
            return self.rows.copy()
        return self.rows[:, [self._index[n] for n in names]]

    def covariates(self) -> np.ndarray:
        return self.matrix(self.names("covariate"))

    def treatment(self) -> np.ndarray:
        if self.treatment_name is None:
            raise IngestionError("dataset has no treatment column")
        return self.column(self.treatment_name)

    def outcome(self) -> np.ndarray:
        if self.outcome_name is None:
            raise IngestionError("dataset has no outcome column")
        return self.column(self.outcome_name)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.rows[np.asarray(idx)])

    def select(self, names: list[str]) -> "Dataset":
        sub = [self.schema[self._index[n]] for n in names]
        return Dataset(sub, self.matrix(names))


def load_csv(path, schema: list[ColumnSchema]) -> Dataset:
    """Read a headed CSV into a Dataset, applying per-column load scales.

    Leading lines starting with '#' are treated as comments. Cell-level
    problems are reported with 1-based file line numbers and column names.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        skipped = 0
        for row in reader:
            if row and row[0].lstrip().startswith("#"):
                skipped += 1
                continue
            header = row
            break
        if header is None:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c.name for c in schema if c.name not in header]
        if missing:
            raise IngestionError(f"{path}: missing columns {missing}; header has {header}")
        pos = [header.index(c.name) for c in schema]
        data = []
        problems = []
        for line_no, row in enumerate(reader, start=skipped + 2):
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c, p in zip(schema, pos):
                cell = row[p].strip() if p < len(row) else ""
                try:
                    vals.append(float(cell) * c.scale)
                except ValueError:
                    problems.append(f"line {line_no}, column {c.name!r}: not a number: {cell!r}")
                    vals.append(np.nan)
            data.append(vals)
            if len(problems) >= 20:
                break
    if problems:
        raise IngestionError(f"{path}: " + "; ".join(problems[:20]))
    if not data:
        raise IngestionError(f"{path}: no data rows")
    rows = np.asarray(data, dtype=float)
    try:
        return Dataset(schema, rows)
    except IngestionError as err:
        raise IngestionError(f"{path}: {err}") from None


# ---- standardization -----------------------------------------------------


@dataclass
class Scaler:
    """Per-column affine map x -> (x - center) / scale.

    continuous: center = mean, scale = sd. binary: identity. censored_at_zero:
    center = 0, scale = sd, which keeps the point mass at zero in place.
    """

    names: list[str]
    centers: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.scales = np.asarray(self.scales, dtype=float)
        self._index = {n: j for j, n in enumerate(self.names)}

    def _cols(self, names: list[str]) -> tuple[np.ndarray, np.ndarray]:
        idx = [self._index[n] for n in names]
        return self.centers[idx], self.scales[idx]

    def transform(self, M: np.ndarray, names: list[str]) -> np.ndarray:
        c, s = self._cols(names)
        return (np.asarray(M, dtype=float) - c) / s

    def inverse(self, M: np.ndarray, names: list[str]) -> np.ndarray:
        c, s = self._cols(names)
        return np.asarray(M, dtype=float) * s + c

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "centers": self.centers.tolist(),
            "scales": self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        return cls(
            names=list(doc["names"]),
            centers=np.asarray(doc["centers"], dtype=float),
            scales=np.asarray(doc["scales"], dtype=float),
        )


def fit_scaler(ds: Dataset) -> Scaler:
    centers = []
    scales = []
    for c in ds.schema:
        v = ds.column(c.name)
        if c.kind == "binary":
            centers.append(0.0)
            scales.append(1.0)
            continue
        sd = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
        if sd == 0.0:
            raise IngestionError(f"column {c.name!r} has zero variance, cannot standardize")
        centers.append(float(np.mean(v)) if c.kind == "continuous" else 0.0)
        scales.append(sd)
    return Scaler([c.name for c in ds.schema], np.array(centers), np.array(scales))


def standardize(ds: Dataset) -> tuple[Dataset, Scaler]:
    scaler = fit_scaler(ds)
    rows = scaler.transform(ds.rows, [c.name for c in ds.schema])
    return Dataset(ds.schema, rows), scaler


# ---- batching ------------------------------------------------------------


def stratified_batches(ds: Dataset, m: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of mini-batch index sets with a fixed treated count per batch.

    Treated per batch = rint(m * N1 / N); the ragged remainder of each arm is
    dropped. Without a treatment column (or with none treated) batches are
    plain draws from a shuffled epoch.
    """
    if not (0 < m <= ds.n):
        raise ValueError(f"batch size must lie in [1, {ds.n}], got {m}")
    if ds.treatment_name is None:
        perm = rng.permutation(ds.n)
        return [perm[k * m : (k + 1) * m] for k in range(ds.n // m)]
    w = ds.treatment()
    treated = np.flatnonzero(w == 1.0)
    control = np.flatnonzero(w == 0.0)
    n1 = len(treated)
    m1 = int(np.rint(m * n1 / ds.n))
    if n1 > 0 and m1 == 0:
        raise ValueError(
            f"cannot stratify: batch size {m} puts rint({m}*{n1}/{ds.n}) = 0 treated per batch"
        )
    m0 = m - m1
    treated = treated[rng.permutation(n1)] if n1 else treated
    control = control[rng.permutation(len(control))] if len(control) else control
    counts = []
    if m1 > 0:
        counts.append(n1 // m1)
    if m0 > 0:
        counts.append(len(control) // m0)
    n_batches = min(counts) if counts else 0
    batches = []
    for k in range(n_batches):
        t = treated[k * m1 : (k + 1) * m1]
        c = control[k * m0 : (k + 1) * m0]
        batches.append(np.concatenate([t, c]))
    return batches


# ---- summaries -----------------------------------------------------------


def summary_stats(ds: Dataset) -> list[dict]:
    """Per-column mean/sd (ddof=1) overall and by arm, one dict per row."""
    out = []
    groups = [("all", np.arange(ds.n))]
    if ds.treatment_name is not None:
        w = ds.treatment()
        groups.append(("treated", np.flatnonzero(w == 1.0)))
        groups.append(("control", np.flatnonzero(w == 0.0)))
    for c in ds.schema:
        v = ds.column(c.name)
        for arm, idx in groups:
            sub = v[idx]
            flag = ""
            if len(sub) == 0:
                out.append({"column": c.name, "arm": arm, "n": 0, "mean": float("nan"), "sd": float("nan"), "flag": "empty"})
                continue
            if len(sub) == 1:
                sd = 0.0
                flag = "degenerate"
            else:
                sd = float(np.std(sub, ddof=1))
            out.append(
                {"column": c.name, "arm": arm, "n": int(len(sub)), "mean": float(np.mean(sub)), "sd": sd, "flag": flag}
            )
    return out


# ---- program-evaluation preset ------------------------------------------


def ldw_schema(earnings_in_thousands: bool = True) -> list[ColumnSchema]:
    """Schema for the LaLonde job-training CSVs (Dehejia-Wahba columns).

    Earnings columns are censored at zero; with the default load scale they
    come out in thousands of dollars.
    """
    s = 1e-3 if earnings_in_thousands else 1.0
    return [
        ColumnSchema("treat", "binary", "treatment"),
        ColumnSchema("age", "continuous", "covariate"),
        ColumnSchema("education", "continuous", "covariate"),
        ColumnSchema("black", "binary", "covariate"),
        ColumnSchema("hispanic", "binary", "covariate"),
        ColumnSchema("married", "binary", "covariate"),
        ColumnSchema("nodegree", "binary", "covariate"),
        ColumnSchema("re74", "censored_at_zero", "covariate", scale=s),
        ColumnSchema("re75", "censored_at_zero", "covariate", scale=s),
        ColumnSchema("re78", "censored_at_zero", "outcome", scale=s),
    ]


def load_ldw_samples(directory, earnings_in_thousands: bool = True) -> dict[str, Dataset]:
    """The three evaluation samples built from the LaLonde CSVs.

    Expects nsw_dw.csv (the experimental sample), cps_controls.csv, and
    psid_controls.csv in ``directory``, all with the Dehejia-Wahba column
    names. "cps" and "psid" pair the experimental trainees with the
    respective survey controls.
    """
    import os

    schema = ldw_schema(earnings_in_thousands)
    exp = load_csv(os.path.join(directory, "nsw_dw.csv"), schema)
    cps = load_csv(os.path.join(directory, "cps_controls.csv"), schema)
    psid = load_csv(os.path.join(directory, "psid_controls.csv"), schema)
    for name, ds in (("cps_controls.csv", cps), ("psid_controls.csv", psid)):
        if ds.n_treated:
            raise IngestionError(f"{name}: expected only control rows")
    treated_rows = exp.rows[exp.treatment() == 1.0]
    return {
        "exp": exp,
        "cps": Dataset(schema, np.vstack([treated_rows, cps.rows])),
        "psid": Dataset(schema, np.vstack([treated_rows, psid.rows])),
    }
