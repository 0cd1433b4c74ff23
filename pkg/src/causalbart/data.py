"""Observable/oracle data model, validation and delimited-file ingestion.

Datasets are frozen after construction and safe to share across concurrent
replication workers.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError, ValidationError

logger = logging.getLogger(__name__)

IHDP_BASE_COLUMNS = ["treatment", "y_factual", "y_cfactual", "mu0", "mu1"]


@dataclass(frozen=True)
class Dataset:
    """Covariates, binary treatment and observed outcome for n units."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    columns: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.ascontiguousarray(self.x, float))
        object.__setattr__(self, "z", np.asarray(self.z, float))
        object.__setattr__(self, "y", np.asarray(self.y, float))
        self.x.setflags(write=False)
        self.z.setflags(write=False)
        self.y.setflags(write=False)
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())


@dataclass(frozen=True)
class GroundTruth:
    """Oracle surfaces a synthetic or semi-synthetic generator exposes.

    ``pi`` may be None for benchmarks whose assignment mechanism is unknown.
    """

    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray
    pi: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("mu0", "mu1", "tau"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if self.pi is not None:
            object.__setattr__(self, "pi", np.asarray(self.pi, float))

    @property
    def ate(self) -> float:
        """Sample-average treatment effect over the generated units."""
        return float(self.tau.mean())


@dataclass(frozen=True)
class CategoricalEncoding:
    """How one unordered covariate column enters the design matrix."""

    column: int
    levels: int
    mode: str = "one_hot"  # or "integer"

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("a categorical needs at least 2 levels")
        if self.mode not in ("one_hot", "integer"):
            raise ValueError("mode must be 'one_hot' or 'integer'")


def one_hot(values: np.ndarray, levels: Sequence) -> np.ndarray:
    """Indicator expansion; preserves row count by construction."""
    values = np.asarray(values)
    out = np.zeros((values.shape[0], len(levels)))
    for k, lev in enumerate(levels):
        out[:, k] = values == lev
    return out


@dataclass
class ValidationReport:
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def add(self, message: str) -> None:
        self.failures.append(message)


def validate(dataset: Dataset, ground_truth: Optional[GroundTruth] = None
             ) -> ValidationReport:
    """Check every structural invariant; failures are reported, not raised."""
    rep = ValidationReport()
    x, z, y = dataset.x, dataset.z, dataset.y
    if not (x.shape[0] == z.shape[0] == y.shape[0]):
        rep.add(f"length mismatch: x has {x.shape[0]} rows, z {z.shape[0]}, "
                f"y {y.shape[0]}")
        return rep
    if dataset.n < 2:
        rep.add(f"need at least 2 units, got {dataset.n}")
    if x.ndim != 2 or dataset.d < 1:
        rep.add("x must be a matrix with at least one column")
    for name, arr in (("x", x), ("z", z), ("y", y)):
        bad = np.flatnonzero(~np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1))
        if bad.size:
            rep.add(f"non-finite entries in {name} at rows {bad[:10].tolist()}")
    nonbinary = np.flatnonzero(~np.isin(z, (0.0, 1.0)))
    if nonbinary.size:
        rep.add(f"treatment not in {{0,1}} at rows {nonbinary[:10].tolist()}")
    elif z.size:
        if z.sum() == 0:
            rep.add("no treated units")
        if z.sum() == z.size:
            rep.add("no control units")
    if ground_truth is not None:
        gt = ground_truth
        for name in ("mu0", "mu1", "tau"):
            arr = getattr(gt, name)
            if arr.shape[0] != dataset.n:
                rep.add(f"{name} length {arr.shape[0]} != n {dataset.n}")
        if gt.mu0.shape == gt.mu1.shape == gt.tau.shape:
            bad = np.flatnonzero(gt.tau != gt.mu1 - gt.mu0)
            if bad.size:
                rep.add(f"tau != mu1 - mu0 at rows {bad[:10].tolist()}")
        if gt.pi is not None:
            if gt.pi.shape[0] != dataset.n:
                rep.add(f"pi length {gt.pi.shape[0]} != n {dataset.n}")
            bad = np.flatnonzero((gt.pi <= 0.0) | (gt.pi >= 1.0))
            if bad.size:
                rep.add("overlap violated: propensity must lie strictly in "
                        f"(0,1); offending rows {bad[:10].tolist()}")
    return rep


def save_dataset(dataset: Dataset, path) -> None:
    """Comma-separated, header row, UTF-8, '.' decimal; floats as repr so a
    reload reproduces the arrays bit-identically."""
    cols = (list(dataset.columns) if dataset.columns
            else [f"x{i + 1}" for i in range(dataset.d)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ["z", "y"])
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            row.append(repr(float(dataset.z[i])))
            row.append(repr(float(dataset.y[i])))
            w.writerow(row)


def load_dataset(path) -> Dataset:
    df = pd.read_csv(path)
    if "z" not in df.columns or "y" not in df.columns:
        missing = "z" if "z" not in df.columns else "y"
        raise SchemaError(f"missing column '{missing}' in {path}")
    xcols = [c for c in df.columns if c not in ("z", "y")]
    return Dataset(df[xcols].to_numpy(float), df["z"].to_numpy(float),
                   df["y"].to_numpy(float), columns=xcols)


def _realization_from_frame(df: pd.DataFrame, expected_covariates: int,
                            origin: str, expected_treated: int = 139
                            ) -> tuple[Dataset, GroundTruth]:
    xcols = [c for c in df.columns if c.startswith("x")]
    if len(xcols) != expected_covariates:
        raise SchemaError(
            f"{origin}: expected {expected_covariates} covariate columns "
            f"x1..x{expected_covariates}, found {len(xcols)}")
    for name, col in df.items():
        bad = np.flatnonzero(~np.isfinite(col.to_numpy(float)))
        if bad.size:
            raise ValidationError(
                f"{origin}: NaN or non-finite value in column '{name}' at "
                f"row {int(bad[0])}")
    z = df["treatment"].to_numpy(float)
    if not np.isin(z, (0.0, 1.0)).all():
        raise ValidationError(f"{origin}: treatment column is not binary 0/1")
    mu0 = df["mu0"].to_numpy(float)
    mu1 = df["mu1"].to_numpy(float)
    tau = mu1 - mu0
    if "tau" in df.columns:
        stored = df["tau"].to_numpy(float)
        err = np.abs(stored - tau)
        if (err > 1e-8).any():
            raise ValidationError(
                f"{origin}: stored tau disagrees with mu1 - mu0 by up to "
                f"{err.max():.3g}")
    n_treated = int(z.sum())
    if expected_treated and n_treated != expected_treated:
        warnings.warn(
            f"{origin}: {n_treated} treated units (expected "
            f"{expected_treated})", stacklevel=3)
    x = df[sorted(xcols, key=lambda c: int(c[1:]))].to_numpy(float)
    ds = Dataset(x, z, df["y_factual"].to_numpy(float),
                 columns=sorted(xcols, key=lambda c: int(c[1:])))
    return ds, GroundTruth(mu0, mu1, tau)


def _read_realization_file(path: Path, expected_covariates: int) -> pd.DataFrame:
    """Accept a header row or the bare published column order."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    token = first.split(",")[0].strip()
    try:
        float(token)
        has_header = False
    except ValueError:
        has_header = True
    names = IHDP_BASE_COLUMNS + [f"x{i + 1}" for i in range(expected_covariates)]
    if has_header:
        df = pd.read_csv(path)
        missing = [c for c in IHDP_BASE_COLUMNS if c not in df.columns]
        if missing:
            raise SchemaError(f"{path}: missing column '{missing[0]}'")
        return df
    df = pd.read_csv(path, header=None)
    if df.shape[1] < len(names):
        raise SchemaError(
            f"{path}: headerless file has {df.shape[1]} columns, expected at "
            f"least {len(names)} (treatment, y_factual, y_cfactual, mu0, mu1, "
            f"x1..x{expected_covariates})")
    df = df.iloc[:, :len(names)]
    df.columns = names
    return df


def load_ihdp_realizations(path, expected_covariates: int = 25
                           ) -> list[tuple[Dataset, GroundTruth]]:
    """Load benchmark realizations from a directory of per-realization files
    or a single file carrying a ``realization`` id column.

    Column layout per realization row: treatment, y_factual, y_cfactual,
    mu0, mu1, x1..xD. The factual outcome is used as the observed y.
    """
    path = Path(path)
    out = []
    if path.is_dir():
        files = sorted(path.glob("*.csv"),
                       key=lambda p: (len(p.stem), p.stem))
        if not files:
            raise SchemaError(f"no .csv realization files in {path}")
        for f in files:
            df = _read_realization_file(f, expected_covariates)
            out.append(_realization_from_frame(df, expected_covariates, f.name))
    else:
        df = _read_realization_file(path, expected_covariates)
        if "realization" in df.columns:
            for rid, grp in df.groupby("realization", sort=True):
                grp = grp.drop(columns=["realization"])
                out.append(_realization_from_frame(
                    grp.reset_index(drop=True), expected_covariates,
                    f"{path.name}[realization={rid}]"))
        else:
            out.append(_realization_from_frame(df, expected_covariates,
                                               path.name))
    ns = {ds.n for ds, _ in out}
    ds0 = out[0][0]
    logger.info("loaded %d realization(s) from %s: n=%s d=%d treated=%d",
                len(out), path, sorted(ns), ds0.d, ds0.n_treated)
    return out


def save_ihdp_realizations(realizations, path) -> None:
    """Write realizations to one file with a ``realization`` id column, in
    the layout load_ihdp_realizations accepts."""
    rows = []
    for rid, (ds, gt) in enumerate(realizations):
        y_cf = np.where(ds.z == 1, gt.mu0, gt.mu1)
        for i in range(ds.n):
            row = {"realization": rid, "treatment": ds.z[i],
                   "y_factual": ds.y[i], "y_cfactual": y_cf[i],
                   "mu0": gt.mu0[i], "mu1": gt.mu1[i]}
            for jcol in range(ds.d):
                row[f"x{jcol + 1}"] = ds.x[i, jcol]
            rows.append(row)
    pd.DataFrame(rows).to_csv(path, index=False)
