"""
Cross-fitted nuisance regressions.
For every fold, the propensity pi(x) = P(A=1|x) and the arm-wise outcome
means mu_0(x), mu_1(x) are fitted on the other folds and evaluated on the
held-out units, so no unit's prediction depends on its own data.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from benefit.pipeline.dataset import Cohort, FoldAssignment
from benefit.pipeline.errors import ArgumentError, NumericError, ParseError, PositivityError, SchemaError
from benefit.pipeline.validators import first_invalid_row
from benefit.services.learners import FittedRegression, fit_regression, parse_learner_spec
from config.settings import ANALYSIS_CONFIG

logger = logging.getLogger("nuisance")


def clip_propensity(raw, epsilon: float) -> np.ndarray:
    return np.clip(np.asarray(raw, dtype=float), epsilon, 1.0 - epsilon)


@dataclass(frozen=True)
class NuisanceModels:
    """Models fitted on the training complement of one fold."""

    fold: int
    propensity: FittedRegression
    mu0: FittedRegression
    mu1: FittedRegression


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    pi_hat: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    epsilon: float
    fold_of_unit: Optional[np.ndarray] = None
    models: List[NuisanceModels] = field(default_factory=list, repr=False)

    def __post_init__(self):
        n = np.asarray(self.pi_hat).size
        for name in ("mu0_hat", "mu1_hat"):
            if np.asarray(getattr(self, name)).size != n:
                raise ArgumentError(f"{name} length differs from pi_hat ({n})", module="nuisance")
        for name in ("pi_hat", "mu0_hat", "mu1_hat"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            row = first_invalid_row(arr)
            if row is not None:
                raise NumericError(f"Non-finite {name} for unit {row}", module="nuisance")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.pi_hat <= 0) or np.any(self.pi_hat >= 1):
            raise NumericError("Propensity estimates must lie strictly inside (0, 1)", module="nuisance")

    @property
    def n(self) -> int:
        return self.pi_hat.size

    @property
    def tau_hat(self) -> np.ndarray:
        return self.mu1_hat - self.mu0_hat

    @property
    def h_star(self) -> np.ndarray:
        # tau_hat == 0 maps to 0
        return (self.tau_hat > 0).astype(np.int64)

    def mu_observed(self, treatment) -> np.ndarray:
        """mu_hat evaluated at each unit's own arm."""
        a = np.asarray(treatment)
        return np.where(a == 1, self.mu1_hat, self.mu0_hat)

    # ---- Fresh-draw prediction (fold models averaged) ----

    def _require_models(self):
        if not self.models:
            raise ArgumentError("These fits carry no fold models (reloaded from CSV?)", module="nuisance")

    def predict_tau(self, features) -> np.ndarray:
        self._require_models()
        return np.mean([m.mu1.predict(features) - m.mu0.predict(features) for m in self.models], axis=0)

    def predict_policy(self, features) -> np.ndarray:
        return (self.predict_tau(features) > 0).astype(np.int64)

    def predict_propensity(self, features) -> np.ndarray:
        self._require_models()
        return np.mean([clip_propensity(m.propensity.predict(features), self.epsilon) for m in self.models],
                       axis=0)

    # ---- Persistence ----

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "unit": np.arange(self.n),
            "pi_hat": self.pi_hat,
            "mu0_hat": self.mu0_hat,
            "mu1_hat": self.mu1_hat,
            "tau_hat": self.tau_hat,
            "h_star": self.h_star,
        })
        if self.fold_of_unit is not None:
            frame["fold"] = self.fold_of_unit
        return frame

    def to_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        logger.info(f"📁 Nuisance fits written: {path}")
        return path

    @classmethod
    def from_csv(cls, path: str, epsilon: Optional[float] = None) -> "NuisanceFits":
        """Reload exported fits; tau_hat and h_star are recomputed from mu0/mu1."""
        if not os.path.exists(path):
            raise ArgumentError(f"Nuisance file not found: {path}", module="nuisance")
        frame = pd.read_csv(path, float_precision="round_trip")
        missing = [c for c in ("pi_hat", "mu0_hat", "mu1_hat") if c not in frame.columns]
        if missing:
            raise SchemaError(f"Nuisance file {path} lacks column(s) {missing}", module="nuisance")
        if "unit" in frame.columns and not np.array_equal(frame["unit"].to_numpy(), np.arange(len(frame))):
            raise ParseError(f"Nuisance file {path} rows are not in unit order")
        pi = frame["pi_hat"].to_numpy(dtype=float)
        if epsilon is None:
            eps = float(min(pi.min(), 1 - pi.max()))
        else:
            eps = float(epsilon)
            outside = np.flatnonzero((pi < eps - 1e-12) | (pi > 1 - eps + 1e-12))
            if outside.size:
                row = int(outside[0])
                raise PositivityError(
                    f"Nuisance file {path}: pi_hat={pi[row]:.6g} at unit {row} lies outside "
                    f"[{eps}, {1 - eps}] ({outside.size} unit(s) in total)",
                    module="nuisance",
                )
        folds = frame["fold"].to_numpy(dtype=np.int64) if "fold" in frame.columns else None
        return cls(pi, frame["mu0_hat"].to_numpy(dtype=float), frame["mu1_hat"].to_numpy(dtype=float),
                   eps, fold_of_unit=folds)


def _fit_fold(fold, train, x, a, y, spec_propensity, spec_outcome) -> NuisanceModels:
    a_train = a[train]
    treated = train[a_train == 1]
    control = train[a_train == 0]
    if treated.size == 0 or control.size == 0:
        arm = "treated" if treated.size == 0 else "control"
        raise PositivityError(
            f"Training complement of fold {fold} has no {arm} units", fold=fold, module="nuisance"
        )
    return NuisanceModels(
        fold=fold,
        propensity=fit_regression(spec_propensity, x[train], a_train.astype(float)),
        mu0=fit_regression(spec_outcome, x[control], y[control]),
        mu1=fit_regression(spec_outcome, x[treated], y[treated]),
    )


def crossfit_nuisances(
    cohort: Cohort,
    folds: FoldAssignment,
    spec_propensity=None,
    spec_outcome=None,
    epsilon: float = ANALYSIS_CONFIG["epsilon"],
    n_jobs: int = 1,
) -> NuisanceFits:
    if not (0.0 < float(epsilon) < 0.5):
        raise ArgumentError(f"Clip level must lie in (0, 0.5), got {epsilon}", module="nuisance")
    if folds.n != cohort.n:
        raise ArgumentError(f"Fold assignment covers {folds.n} units, cohort has {cohort.n}", module="nuisance")
    spec_propensity = parse_learner_spec(spec_propensity or ANALYSIS_CONFIG["default_learner"])
    spec_outcome = parse_learner_spec(spec_outcome or ANALYSIS_CONFIG["default_learner"])

    x, a, y = cohort.covariates, cohort.treatment, cohort.outcome
    logger.info(f"🧠 Cross-fitting nuisances: n={cohort.n}, K={folds.k}, "
                f"propensity={spec_propensity}, outcome={spec_outcome}")

    splits = list(folds.splits())
    if n_jobs > 1:
        models = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_fit_fold)(f, train, x, a, y, spec_propensity, spec_outcome) for f, train, _ in splits
        )
    else:
        models = [_fit_fold(f, train, x, a, y, spec_propensity, spec_outcome) for f, train, _ in splits]

    pi_hat = np.empty(cohort.n)
    mu0_hat = np.empty(cohort.n)
    mu1_hat = np.empty(cohort.n)
    for (f, _, test), m in zip(splits, models):
        xt = x[test]
        pi_hat[test] = clip_propensity(m.propensity.predict(xt), epsilon)
        mu0_hat[test] = m.mu0.predict(xt)
        mu1_hat[test] = m.mu1.predict(xt)

    fits = NuisanceFits(pi_hat, mu0_hat, mu1_hat, float(epsilon),
                        fold_of_unit=np.asarray(folds.assignment), models=models)
    logger.info(f"✅ Nuisances ready: pi_hat in [{pi_hat.min():.3f}, {pi_hat.max():.3f}], "
                f"P_n[h*=1] = {fits.h_star.mean():.3f}")
    return fits
