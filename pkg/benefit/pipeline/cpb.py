"""
Conditional potential benefit (CPB) estimation.

beta(x) = E(Y(h*) - Y | X = x) = tau(x) * (h*(x) - pi(x)) = c(x) * |tau(x)|,
where c is the probability of not naturally receiving the optimal arm.

Two-stage estimation: a doubly robust pseudo-outcome computed with
out-of-fold nuisances is regressed on the chosen covariates, one second
stage per fold, and the fold models are averaged.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from benefit.pipeline.dataset import Cohort, CovariateView, FoldAssignment, select_covariates
from benefit.pipeline.errors import ArgumentError, NumericError
from benefit.pipeline.nuisance import NuisanceFits
from benefit.pipeline.validators import aligned, first_invalid_row
from benefit.services.learners import FittedRegression, LearnerSpec, fit_regression, parse_learner_spec
from config.settings import ANALYSIS_CONFIG

logger = logging.getLogger("cpb")


def pseudo_outcome(a, y, pi_hat, mu0_hat, mu1_hat, policy=None):
    """
    (h - pi)[a/pi - (1-a)/(1-pi)](y - mu_a) + tau(h - a), elementwise.
    `policy` overrides h = 1(tau > 0) (restricted policies plug in their own rule).
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi_hat, dtype=float)
    mu0 = np.asarray(mu0_hat, dtype=float)
    mu1 = np.asarray(mu1_hat, dtype=float)
    if np.any(~np.isfinite(pi)) or np.any(pi <= 0) or np.any(pi >= 1):
        raise NumericError("Propensity must lie strictly inside (0, 1) in the pseudo-outcome", module="cpb")
    tau = mu1 - mu0
    h = (tau > 0).astype(float) if policy is None else np.asarray(policy, dtype=float)
    mu_a = np.where(a == 1, mu1, mu0)
    weight = a / pi - (1.0 - a) / (1.0 - pi)
    phi = (h - pi) * weight * (y - mu_a) + tau * (h - a)
    return phi if phi.ndim else float(phi)


@dataclass(frozen=True, eq=False)
class PseudoOutcomes:
    values: np.ndarray
    fits: NuisanceFits = field(repr=False)
    policy: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.values.size

    def mean(self) -> float:
        return float(np.mean(self.values))


def pseudo_outcomes(cohort: Cohort, fits: NuisanceFits, policy=None) -> PseudoOutcomes:
    if aligned(cohort.n, nuisances=fits.pi_hat) is not None:
        raise ArgumentError(f"Nuisance fits cover {fits.n} units, cohort has {cohort.n}", module="cpb")
    phi = pseudo_outcome(cohort.treatment, cohort.outcome, fits.pi_hat, fits.mu0_hat, fits.mu1_hat, policy)
    row = first_invalid_row(phi)
    if row is not None:
        raise NumericError(f"Non-finite pseudo-outcome at unit {row}", module="cpb")
    phi.setflags(write=False)
    return PseudoOutcomes(phi, fits, None if policy is None else np.asarray(policy))


@dataclass(frozen=True, eq=False)
class CpbModel:
    """Averaged second-stage regressions of a pseudo-outcome on a covariate view."""

    models: Tuple[FittedRegression, ...]
    selected: Tuple[str, ...]
    spec: LearnerSpec
    scores: np.ndarray = field(repr=False)
    swap: bool = True

    def predict(self, features) -> np.ndarray:
        return np.mean([m.predict(features) for m in self.models], axis=0)


def _fold_groups(n: int, folds) -> Sequence[np.ndarray]:
    if folds is None:
        return [np.arange(n)]
    labels = folds.assignment if isinstance(folds, FoldAssignment) else np.asarray(folds)
    if labels.size != n:
        raise ArgumentError(f"Fold labels cover {labels.size} units, expected {n}", module="cpb")
    return [np.flatnonzero(labels == f) for f in np.unique(labels)]


def regress_on_view(
    targets,
    view: CovariateView,
    spec=None,
    folds=None,
    swap: bool = ANALYSIS_CONFIG["swap_second_stage"],
) -> CpbModel:
    """
    Second stage shared by every CPB-type score: one regression per fold of
    `targets` on the view's columns, averaged (or the first fold only when
    swap is off). Scores are the averaged model evaluated at each unit's W,
    so units with identical W rows get identical scores.
    """
    spec = parse_learner_spec(spec or ANALYSIS_CONFIG["default_learner"])
    y = np.asarray(targets, dtype=float)
    w = view.matrix
    if y.size != w.shape[0]:
        raise ArgumentError(f"{y.size} targets for {w.shape[0]} units", module="cpb")

    groups = _fold_groups(y.size, folds)
    if not swap:
        groups = groups[:1]
    models = tuple(fit_regression(spec, w[idx], y[idx]) for idx in groups)
    model = CpbModel(models, view.selected, spec, np.empty(0), swap)
    scores = model.predict(w)
    scores.setflags(write=False)
    object.__setattr__(model, "scores", scores)
    return model


def dr_learn_cpb(
    cohort: Cohort,
    fits: NuisanceFits,
    target=None,
    spec=None,
    phi: Optional[PseudoOutcomes] = None,
    folds=None,
    swap: bool = ANALYSIS_CONFIG["swap_second_stage"],
) -> CpbModel:
    """
    DR-Learner. Each fold's pseudo-outcomes were built from nuisances fitted
    on the other folds, so regressing them within the fold keeps nuisance
    training and second-stage data disjoint. With `swap` the fold models are
    averaged. `target` is a CovariateView, a list of names, or None for X.
    """
    if target is None:
        target = select_covariates(cohort, cohort.columns)
    elif not isinstance(target, CovariateView):
        target = select_covariates(cohort, target)
    phi = phi if phi is not None else pseudo_outcomes(cohort, fits)
    if folds is None:
        folds = fits.fold_of_unit
    model = regress_on_view(phi.values, target, spec, folds, swap)
    logger.info(f"✅ DR-Learner CPB on [{target.label()}] with {model.spec}: "
                f"{len(model.models)} fold model(s), mean score {model.scores.mean():.4f}")
    return model


def plugin_cpb(fits: NuisanceFits) -> np.ndarray:
    """tau_hat * (h_star - pi_hat); non-negative by construction."""
    return fits.tau_hat * (fits.h_star - fits.pi_hat)


def suboptimal_prob(fits: NuisanceFits) -> np.ndarray:
    """h*(1 - pi) + (1 - h*)pi: chance a unit does not naturally get its better arm."""
    h = fits.h_star
    return h * (1.0 - fits.pi_hat) + (1 - h) * fits.pi_hat


def pseudo_bias_terms(pi, mu0, mu1, pi_alt, mu0_alt, mu1_alt) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Conditional bias E(phi(alt) - phi(true) | X) split into
    (propensity x outcome product, CATE x propensity product, policy error x tau).
    The sum equals the exact bias for any alternative nuisances.
    """
    pi, mu0, mu1 = (np.asarray(v, dtype=float) for v in (pi, mu0, mu1))
    pi_t, mu0_t, mu1_t = (np.asarray(v, dtype=float) for v in (pi_alt, mu0_alt, mu1_alt))
    tau, tau_t = mu1 - mu0, mu1_t - mu0_t
    h, h_t = (tau > 0).astype(float), (tau_t > 0).astype(float)
    d_pi = pi_t - pi
    product = (h_t - pi_t) * d_pi * ((mu1_t - mu1) / pi_t + (mu0_t - mu0) / (1.0 - pi_t))
    cross = (tau_t - tau) * d_pi
    policy = (h_t - h) * tau
    return product, cross, policy


def conditional_pseudo_mean(pi, mu0, mu1, pi_alt, mu0_alt, mu1_alt) -> np.ndarray:
    """E(phi(alt) | X) under the law (pi, mu0, mu1), by enumerating A."""
    pi = np.asarray(pi, dtype=float)
    treated = pseudo_outcome(np.ones_like(pi), mu1, pi_alt, mu0_alt, mu1_alt)
    control = pseudo_outcome(np.zeros_like(pi), mu0, pi_alt, mu0_alt, mu1_alt)
    return pi * treated + (1.0 - pi) * control
