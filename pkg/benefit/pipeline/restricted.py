"""
Contact rules that may only look at a covariate subset W.

Two settings:
  both          the treatment rule is restricted too: h_w = 1(E(tau|W) > 0),
                and the score estimates beta_w = E(phi_w | W), where phi_w is
                the pseudo-outcome with h_w plugged in for h*.
  contact_only  only the contact rule is restricted: the score is E(beta | W)
                and contacted units still get the unrestricted h*.

Only contact_only values are on the same scale as unrestricted values, so
only that setting has a restricted AUPBC.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from benefit.pipeline.cpb import CpbModel, PseudoOutcomes, pseudo_outcomes, regress_on_view
from benefit.pipeline.dataset import Cohort, CovariateView, select_covariates
from benefit.pipeline.errors import ArgumentError
from benefit.pipeline.nuisance import NuisanceFits
from benefit.pipeline.policy import AupbcEstimate, PolicyEvaluation, aupbc, estimate_value
from config.settings import ANALYSIS_CONFIG

logger = logging.getLogger("restricted")

MODES = ("both", "contact_only")


@dataclass(frozen=True, eq=False)
class RestrictedScores:
    mode: str
    scores: np.ndarray = field(repr=False)
    pseudo: np.ndarray = field(repr=False)
    policy: np.ndarray = field(repr=False)
    view: CovariateView = field(repr=False)
    model: CpbModel = field(repr=False)
    tau_w: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.scores.size


def _view(cohort: Cohort, view) -> CovariateView:
    if not isinstance(view, CovariateView):
        view = select_covariates(cohort, view)
    if view.parent.n != cohort.n:
        raise ArgumentError(f"View covers {view.parent.n} units, cohort has {cohort.n}", module="restricted")
    # W = X in any order is the unrestricted problem; keep the cohort's column order
    if view.is_identity:
        view = select_covariates(cohort, cohort.columns)
    return view


def _folds(fits: NuisanceFits, folds):
    return fits.fold_of_unit if folds is None else folds


def restricted_tau(fits: NuisanceFits, cohort: Cohort, view, spec=None, folds=None,
                   swap: bool = ANALYSIS_CONFIG["swap_second_stage"]) -> np.ndarray:
    """E(tau | W) by regressing tau_hat on W; tau_hat itself when W = X."""
    view = _view(cohort, view)
    if view.is_identity:
        return fits.tau_hat
    return regress_on_view(fits.tau_hat, view, spec, _folds(fits, folds), swap).scores


def restricted_scores_both(fits: NuisanceFits, cohort: Cohort, view, spec=None, folds=None,
                           swap: bool = ANALYSIS_CONFIG["swap_second_stage"],
                           tau_spec=None) -> RestrictedScores:
    view = _view(cohort, view)
    tau_w = restricted_tau(fits, cohort, view, tau_spec or spec, folds, swap)
    h_w = (tau_w > 0).astype(np.int64)
    phi_w = pseudo_outcomes(cohort, fits, policy=h_w)
    model = regress_on_view(phi_w.values, view, spec, _folds(fits, folds), swap)
    logger.info(f"✅ Restricted scores (both) on [{view.label()}]: P_n[h_w=1] = {h_w.mean():.3f}, "
                f"mean score {model.scores.mean():.4f}")
    return RestrictedScores("both", model.scores, phi_w.values, h_w, view, model, tau_w)


def restricted_scores_contact_only(fits: NuisanceFits, cohort: Cohort, phi: Optional[PseudoOutcomes],
                                   view, spec=None, folds=None,
                                   swap: bool = ANALYSIS_CONFIG["swap_second_stage"]) -> RestrictedScores:
    view = _view(cohort, view)
    phi = phi if phi is not None else pseudo_outcomes(cohort, fits)
    model = regress_on_view(phi.values, view, spec, _folds(fits, folds), swap)
    logger.info(f"✅ Restricted scores (contact_only) on [{view.label()}]: mean score {model.scores.mean():.4f}")
    return RestrictedScores("contact_only", model.scores, phi.values, fits.h_star, view, model)


def plugin_restricted_cpb(fits: NuisanceFits, cohort: Cohort, view, spec=None, folds=None,
                          swap: bool = ANALYSIS_CONFIG["swap_second_stage"]) -> np.ndarray:
    """Debug path: tau_w * h_w - xi_w, with xi_w from regressing tau_hat * pi_hat on W."""
    view = _view(cohort, view)
    tau_w = restricted_tau(fits, cohort, view, spec, folds, swap)
    h_w = (tau_w > 0).astype(float)
    product = fits.tau_hat * fits.pi_hat
    if view.is_identity:
        xi_w = product
    else:
        xi_w = regress_on_view(product, view, spec, _folds(fits, folds), swap).scores
    return tau_w * h_w - xi_w


def restricted_value(batch, scores: RestrictedScores, delta: float,
                     alpha: float = ANALYSIS_CONFIG["alpha"], ties: str = "under") -> PolicyEvaluation:
    """Value of the W-restricted rule; the pseudo-outcome follows the mode."""
    return estimate_value(batch, scores.pseudo, scores.scores, delta, alpha, ties)


def restricted_aupbc(batch, scores: RestrictedScores, phi=None, grid=None,
                     alpha: float = ANALYSIS_CONFIG["alpha"], ties: str = "under") -> AupbcEstimate:
    if scores.mode != "contact_only":
        raise ArgumentError(
            "Restricted AUPBC is only defined for contact_only scores; "
            "both-restricted values are not comparable with the unrestricted curve",
            module="restricted",
        )
    phi = scores.pseudo if phi is None else phi
    return aupbc(batch, phi, scores.scores, grid, alpha, ties)
