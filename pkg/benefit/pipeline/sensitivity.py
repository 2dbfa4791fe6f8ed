"""
Bounds on the constrained value under outcome-based unmeasured confounding.

Model: for each arm a, the mean of Y(a) among units that naturally took the
other arm differs from the identified mean by at most gamma. The value of a
contact rule then lies in V_delta +/- gamma * E(Delta * c), where c is the
probability of not naturally receiving the optimal arm.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from benefit.pipeline.cpb import suboptimal_prob
from benefit.pipeline.errors import ArgumentError
from benefit.pipeline.nuisance import NuisanceFits
from benefit.pipeline.policy import BudgetQuantile, PolicyEvaluation, outcome_array, pseudo_array, z_value
from benefit.pipeline.validators import aligned, is_budget
from config.settings import ANALYSIS_CONFIG

logger = logging.getLogger("sensitivity")

# one_step: 1(A != h*), the one-step corrected estimate of c; its mean given X is c
# plugin:   c_hat = h*(1 - pi_hat) + (1 - h*) pi_hat
# printed:  h* + (1 - 2h*)(A - pi_hat); its mean given X is h*, not c
ESTIMATORS = ("one_step", "plugin", "printed")


@dataclass(frozen=True)
class SensitivityBand:
    gamma: float
    delta: float
    value: float
    lower: float
    upper: float
    lower_ci: float
    upper_ci: float
    exposure: float
    plugin_exposure: float
    width_bound: float
    gap_bound: float
    estimator: str = "one_step"

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "value": self.value,
            "lower": self.lower,
            "upper": self.upper,
            "lower_ci": self.lower_ci,
            "upper_ci": self.upper_ci,
            "exposure": self.exposure,
            "plugin_exposure": self.plugin_exposure,
            "width_bound": self.width_bound,
            "gap_bound": self.gap_bound,
            "estimator": self.estimator,
        }


def optimal_gap_bound(gamma: float, delta: float) -> float:
    """Bound on the loss from targeting the identified optimum instead of the true one."""
    if not np.isfinite(gamma) or gamma < 0:
        raise ArgumentError(f"Sensitivity parameter must be >= 0, got {gamma}", module="sensitivity")
    if not is_budget(delta):
        raise ArgumentError(f"Budget must lie in [0, 1], got {delta}", module="sensitivity")
    return float(gamma * (4.0 + delta))


def _contact_info(contact):
    """(weights, delta, q_hat) from a PolicyEvaluation, BudgetQuantile or bare vector."""
    if isinstance(contact, PolicyEvaluation):
        return np.asarray(contact.contact, dtype=float), contact.delta, contact.q_hat
    if isinstance(contact, BudgetQuantile):
        return contact.contact.astype(float), contact.delta, contact.q_hat
    d = np.asarray(contact, dtype=float).reshape(-1)
    return d, float(d.mean()), 0.0


def exposure_proxy(treatment, fits: NuisanceFits, estimator: str = "one_step") -> np.ndarray:
    if estimator == "one_step":
        h = fits.h_star
        return (np.asarray(treatment) != h).astype(float)
    if estimator == "plugin":
        return suboptimal_prob(fits)
    if estimator == "printed":
        h = fits.h_star.astype(float)
        return h + (1.0 - 2.0 * h) * (np.asarray(treatment, dtype=float) - fits.pi_hat)
    raise ArgumentError(f"Unknown exposure estimator '{estimator}'. Available: {', '.join(ESTIMATORS)}",
                        module="sensitivity")


def sensitivity_bounds(
    batch,
    phi,
    contact,
    fits: NuisanceFits,
    gamma: float,
    alpha: float = ANALYSIS_CONFIG["alpha"],
    estimator: str = "one_step",
) -> SensitivityBand:
    """
    Band V_hat +/- gamma * P_n[Delta * proxy]. Endpoint intervals use the
    value's influence term plus gamma times the centred exposure term.
    """
    if not np.isfinite(gamma) or gamma < 0:
        raise ArgumentError(f"Sensitivity parameter must be >= 0, got {gamma}", module="sensitivity")
    y, p = outcome_array(batch), pseudo_array(phi)
    d, delta, q = _contact_info(contact)
    bad = aligned(y.size, pseudo_outcomes=p, contact=d, nuisances=fits.pi_hat)
    if bad:
        raise ArgumentError(f"'{bad}' is not aligned with the {y.size} batch units", module="sensitivity")
    treatment = batch.treatment if hasattr(batch, "treatment") else None
    if treatment is None:
        raise ArgumentError("Sensitivity bounds need the batch treatment column", module="sensitivity")

    n = y.size
    value = float(np.mean(d * p + y))
    proxy_terms = d * exposure_proxy(treatment, fits, estimator)
    exposure = float(proxy_terms.mean())
    plugin_exposure = float(np.mean(d * suboptimal_prob(fits)))
    if plugin_exposure > delta + 1.0 / n:
        logger.warning(f"⚠️ Plug-in exposure {plugin_exposure:.4f} exceeds budget {delta}")

    # printed terms can average below zero
    half = gamma * abs(exposure)
    base = d * (p - q) + y
    z = z_value(alpha)
    se_low = np.std(base - gamma * proxy_terms) / np.sqrt(n)
    se_up = np.std(base + gamma * proxy_terms) / np.sqrt(n)

    return SensitivityBand(
        gamma=float(gamma),
        delta=float(delta),
        value=value,
        lower=value - half,
        upper=value + half,
        lower_ci=float(value - half - z * se_low),
        upper_ci=float(value + half + z * se_up),
        exposure=exposure,
        plugin_exposure=plugin_exposure,
        width_bound=float(2.0 * gamma * delta),
        gap_bound=optimal_gap_bound(gamma, delta),
        estimator=estimator,
    )


def sensitivity_curve(batch, phi, contact, fits: NuisanceFits, gammas: Sequence[float],
                      alpha: float = ANALYSIS_CONFIG["alpha"], estimator: str = "one_step") -> List[SensitivityBand]:
    bands = [sensitivity_bounds(batch, phi, contact, fits, g, alpha, estimator) for g in sorted(gammas)]
    if bands:
        widest = bands[-1]
        logger.info(f"🛡️ Sensitivity at delta={widest.delta}: gamma up to {widest.gamma} gives "
                    f"[{widest.lower:.4f}, {widest.upper:.4f}]")
    return bands


def breakdown_gamma(band: SensitivityBand, reference: float) -> Optional[float]:
    """Smallest gamma whose band reaches `reference` (None if exposure is zero)."""
    if band.exposure == 0:
        return None
    return float(abs(band.value - reference) / abs(band.exposure))
