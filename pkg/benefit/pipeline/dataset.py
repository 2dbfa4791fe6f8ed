"""
Cohort model and persistence.
A cohort is an ordered set of real covariate columns plus a binary
treatment and a real outcome, one row per unit. Cohorts, views and fold
assignments are immutable once built.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from benefit.pipeline.errors import ArgumentError, CpbError, ParseError, PositivityError, SchemaError
from benefit.pipeline.validators import (
    arm_counts, first_invalid_row, first_non_binary_row, has_both_arms
)

logger = logging.getLogger("dataset")


def _frozen(arr, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CohortSchema:
    """Column roles. An empty covariate tuple means every other column."""

    treatment: str = "a"
    outcome: str = "y"
    covariates: Tuple[str, ...] = ()

    @classmethod
    def from_names(cls, covariates=None, treatment: str = "a", outcome: str = "y") -> "CohortSchema":
        if isinstance(covariates, str):
            covariates = [c for c in (p.strip() for p in covariates.split(",")) if c]
        return cls(treatment=treatment, outcome=outcome, covariates=tuple(covariates or ()))

    def resolve(self, header: Sequence[str]) -> Tuple[str, ...]:
        header = list(header)
        missing = [c for c in (self.treatment, self.outcome, *self.covariates) if c not in header]
        if missing:
            raise SchemaError(f"Missing column(s) {missing}; file has {header}")
        if self.treatment == self.outcome:
            raise SchemaError(f"Treatment and outcome both name column '{self.treatment}'")
        if self.covariates:
            clash = {self.treatment, self.outcome} & set(self.covariates)
            if clash:
                raise SchemaError(f"Column(s) {sorted(clash)} cannot be both covariate and treatment/outcome")
            if len(set(self.covariates)) != len(self.covariates):
                raise SchemaError(f"Duplicate covariate names in {list(self.covariates)}")
            return tuple(self.covariates)
        return tuple(c for c in header if c not in (self.treatment, self.outcome))


@dataclass(frozen=True, eq=False)
class Cohort:
    columns: Tuple[str, ...]
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    treatment_name: str = "a"
    outcome_name: str = "y"

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = x.shape[0]
        if x.shape[1] != len(self.columns):
            raise SchemaError(f"{len(self.columns)} column name(s) for {x.shape[1]} covariate column(s)")
        if len(set(self.columns)) != len(self.columns):
            raise SchemaError(f"Duplicate covariate names in {list(self.columns)}")
        a = np.asarray(self.treatment, dtype=float).reshape(-1)
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        if a.size != n or y.size != n:
            raise SchemaError(f"Column lengths differ: covariates {n}, treatment {a.size}, outcome {y.size}")
        if n == 0:
            raise ParseError("Cohort has no rows")

        for j, name in enumerate(self.columns):
            row = first_invalid_row(x[:, j])
            if row is not None:
                raise ParseError(f"Non-finite value in column '{name}' at row {row + 1}", row=row + 1, column=name)
        row = first_invalid_row(y)
        if row is not None:
            raise ParseError(f"Non-finite outcome at row {row + 1}", row=row + 1, column=self.outcome_name)
        row = first_non_binary_row(a)
        if row is not None:
            raise ParseError(f"Treatment must be 0/1; row {row + 1} has {a[row]}", row=row + 1,
                             column=self.treatment_name)
        if not has_both_arms(a):
            raise PositivityError(f"Both treatment arms must be present; got {arm_counts(a)}", module="dataset")

        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "covariates", _frozen(x, float))
        object.__setattr__(self, "treatment", _frozen(a, np.int64))
        object.__setattr__(self, "outcome", _frozen(y, float))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def schema(self) -> CohortSchema:
        return CohortSchema(self.treatment_name, self.outcome_name, self.columns)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise SchemaError(f"Unknown covariate '{name}'. Available: {', '.join(self.columns)}")
        return self.covariates[:, self.columns.index(name)]

    def subset(self, index) -> "Cohort":
        idx = np.asarray(index)
        return Cohort(self.columns, self.covariates[idx], self.treatment[idx], self.outcome[idx],
                      self.treatment_name, self.outcome_name)

    def with_covariate(self, name: str, values) -> "Cohort":
        """New cohort with one derived covariate appended, e.g. a coarsening g(X)."""
        if name in self.columns or name in (self.treatment_name, self.outcome_name):
            raise SchemaError(f"Column '{name}' already exists")
        v = np.asarray(values, dtype=float).reshape(-1, 1)
        return Cohort(self.columns + (name,), np.hstack([self.covariates, v]), self.treatment, self.outcome,
                      self.treatment_name, self.outcome_name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.covariates, columns=list(self.columns))
        frame[self.treatment_name] = self.treatment
        frame[self.outcome_name] = self.outcome
        return frame

    def to_csv(self, path: str) -> str:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        logger.info(f"📁 Cohort written: {path} ({self.n} rows)")
        return path


@dataclass(frozen=True, eq=False)
class CovariateView:
    """Read-only column subset W of a cohort. Empty selection = constant W."""

    parent: Cohort = field(repr=False)
    selected: Tuple[str, ...]

    @property
    def matrix(self) -> np.ndarray:
        if not self.selected:
            return np.zeros((self.parent.n, 0))
        idx = [self.parent.columns.index(c) for c in self.selected]
        return self.parent.covariates[:, idx]

    @property
    def is_identity(self) -> bool:
        return set(self.selected) == set(self.parent.columns)

    @property
    def is_empty(self) -> bool:
        return not self.selected

    def label(self) -> str:
        return ",".join(self.selected) if self.selected else "(constant)"


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.assignment.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def splits(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        """Yields (fold, train_index, test_index)."""
        for f in range(self.k):
            yield f, self.train_index(f), self.test_index(f)


def load_csv(path: str, schema: Optional[CohortSchema] = None) -> Cohort:
    """Read a header-first UTF-8 CSV into a validated Cohort, preserving row order."""
    schema = schema or CohortSchema()
    if not os.path.exists(path):
        raise CpbError(f"Input file not found: {path}", module="dataset")
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"Empty file or missing header: {path}")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"Malformed CSV {path}: {e}")

    columns = schema.resolve(frame.columns)
    needed = [*columns, schema.treatment, schema.outcome]
    numeric = {}
    for name in needed:
        raw = frame[name]
        values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        row = first_invalid_row(values)
        if row is not None:
            raise ParseError(
                f"Non-numeric or missing value {raw.iloc[row]!r} in column '{name}' at row {row + 1}",
                row=row + 1, column=name,
            )
        numeric[name] = values

    x = np.column_stack([numeric[c] for c in columns]) if columns else np.zeros((len(frame), 0))
    cohort = Cohort(columns, x, numeric[schema.treatment], numeric[schema.outcome],
                    schema.treatment, schema.outcome)
    logger.info(f"✅ Loaded cohort: {cohort.n} rows, covariates {list(columns)}, arms {arm_counts(cohort.treatment)}")
    return cohort


def make_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Uniform-random balanced assignment of n units to k folds."""
    if int(n) != n or int(k) != k:
        raise ArgumentError(f"n and k must be integers, got n={n}, k={k}", module="dataset")
    n, k = int(n), int(k)
    if k < 2 or k > n:
        raise ArgumentError(f"Fold count must satisfy 2 <= k <= n, got k={k}, n={n}", module="dataset")
    rng = np.random.default_rng(int(seed))
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    assignment.setflags(write=False)
    return FoldAssignment(k=k, assignment=assignment, seed=int(seed))


def select_covariates(cohort: Cohort, names) -> CovariateView:
    if isinstance(names, str):
        names = [c for c in (p.strip() for p in names.split(",")) if c]
    names = tuple(names or ())
    unknown = [c for c in names if c not in cohort.columns]
    if unknown:
        raise SchemaError(f"Unknown covariate(s) {unknown}. Available: {', '.join(cohort.columns)}")
    if len(set(names)) != len(names):
        raise SchemaError(f"Duplicate covariate names in {list(names)}")
    return CovariateView(parent=cohort, selected=names)
