"""
Budget-constrained contact rules.

Given per-unit CPB scores, the rule for budget delta contacts exactly the
units whose score is strictly above the (floor(delta*n)+1)-th largest score.
Contacted units get their estimated optimal arm, everyone else keeps the
arm they would naturally take. Values are estimated with the doubly robust
pseudo-outcome and summarised over a budget grid as a Qini curve and the
area between that curve and the random-targeting line (AUPBC).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import norm, rankdata

from benefit.pipeline.errors import ArgumentError
from benefit.pipeline.validators import aligned, check_budget_grid, is_budget
from config.settings import ANALYSIS_CONFIG

logger = logging.getLogger("policy")

# Absorbs binary rounding in delta * n (e.g. 0.29 * 100)
_BUDGET_SLACK = 1e-9

# under: strict 1(score > q_hat), never over budget
# fractional: units tied at q_hat share the leftover budget
TIE_POLICIES = ("under", "fractional")


def _values(obj, attr: str) -> np.ndarray:
    """Accept a Cohort / PseudoOutcomes / CpbModel or a raw array."""
    if hasattr(obj, attr):
        obj = getattr(obj, attr)
    return np.asarray(obj, dtype=float).reshape(-1)


def outcome_array(batch) -> np.ndarray:
    return _values(batch, "outcome")


def pseudo_array(phi) -> np.ndarray:
    return _values(phi, "values")


def score_array(scores) -> np.ndarray:
    return _values(scores, "scores")


def z_value(alpha: float) -> float:
    if not (0.0 < float(alpha) < 1.0):
        raise ArgumentError(f"CI level alpha must lie in (0, 1), got {alpha}", module="policy")
    return float(norm.ppf(1.0 - alpha / 2.0))


def default_grid(points: int = ANALYSIS_CONFIG["grid_points"]) -> np.ndarray:
    if points < 2:
        raise ArgumentError(f"Budget grid needs >= 2 points, got {points}", module="policy")
    return np.linspace(0.0, 1.0, int(points))


def _checked_grid(grid) -> np.ndarray:
    g = default_grid() if grid is None else np.asarray(grid, dtype=float)
    check = check_budget_grid(g)
    if not check["ok"]:
        raise ArgumentError(f"Malformed budget grid: {check['reason']}", module="policy")
    return g


def contact_count(delta: float, n: int) -> int:
    return int(np.floor(delta * n + _BUDGET_SLACK))


def _check_ties(ties: str) -> str:
    if ties not in TIE_POLICIES:
        raise ArgumentError(f"Unknown tie policy '{ties}'. Available: {', '.join(TIE_POLICIES)}",
                            module="policy")
    return ties


@dataclass(frozen=True, eq=False)
class BudgetQuantile:
    """
    contact is the strict rule 1(score > q_hat). tie_weight is the share of
    the units tied at q_hat that randomized tie-breaking would contact; it is
    used only under the "fractional" tie policy and is 0 for distinct scores.
    """

    delta: float
    q_hat: float
    contacted_fraction: float
    contact: np.ndarray = field(repr=False)
    tie_weight: float = 0.0
    scores: np.ndarray = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.contact.size

    def weights(self, ties: str = "under") -> np.ndarray:
        if _check_ties(ties) == "under" or self.tie_weight == 0.0:
            return self.contact.astype(float)
        return self.contact + self.tie_weight * (self.scores == self.q_hat)


def _threshold(desc: np.ndarray, delta: float):
    """(q_hat, k) for descending scores: q_hat is the (k+1)-th largest, k = floor(delta*n)."""
    n = desc.size
    k = contact_count(delta, n)
    q = float(desc[k]) if k < n else float(desc[-1] - 1.0)
    return q, k


def _tie_weight(scores: np.ndarray, q: float, k: int) -> float:
    tied = np.count_nonzero(scores == q)
    if tied == 0:
        return 0.0
    above = np.count_nonzero(scores > q)
    return float((k - above) / tied)


def budget_quantile(scores, delta: float) -> BudgetQuantile:
    s = score_array(scores)
    if s.size == 0:
        raise ArgumentError("Cannot threshold an empty score vector", module="policy")
    if not is_budget(delta):
        raise ArgumentError(f"Budget must lie in [0, 1], got {delta}", module="policy")
    if not np.isfinite(s).all():
        raise ArgumentError("Scores must be finite", module="policy")
    q, k = _threshold(np.sort(s)[::-1], float(delta))
    contact = (s > q).astype(np.int64)
    contact.setflags(write=False)
    return BudgetQuantile(float(delta), q, float(contact.mean()), contact, _tie_weight(s, q, k), s)


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    delta: float
    contact: np.ndarray = field(repr=False)
    value: float
    sigma: float
    alpha: float
    lower: float
    upper: float
    q_hat: float
    contacted_fraction: float

    @property
    def n(self) -> int:
        return self.contact.size

    @property
    def se(self) -> float:
        return self.sigma / np.sqrt(self.n)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "value": self.value,
            "sigma": self.sigma,
            "se": self.se,
            "alpha": self.alpha,
            "ci": [self.lower, self.upper],
            "q_hat": self.q_hat,
            "contacted_fraction": self.contacted_fraction,
            "n": self.n,
        }


def evaluate_contact(y, phi, contact, delta: float, q_hat: float, alpha: float) -> PolicyEvaluation:
    """Value, plug-in influence variance and Wald interval for a fixed contact vector."""
    y, phi = np.asarray(y, dtype=float), np.asarray(phi, dtype=float)
    d = np.asarray(contact, dtype=float)
    n = y.size
    value = float(np.mean(d * phi + y))
    # q only enters through contacted units; at delta = 1 every unit is contacted and it cancels
    centered = d * (phi - q_hat) + y - (value - delta * q_hat)
    sigma = float(np.sqrt(np.mean(centered ** 2)))
    half = z_value(alpha) * sigma / np.sqrt(n)
    return PolicyEvaluation(float(delta), np.asarray(contact), value, sigma, float(alpha),
                            value - half, value + half, float(q_hat), float(d.mean()))


def _aligned_inputs(batch, phi, scores):
    y, p, s = outcome_array(batch), pseudo_array(phi), score_array(scores)
    bad = aligned(y.size, pseudo_outcomes=p, scores=s)
    if bad:
        raise ArgumentError(f"'{bad}' is not aligned with the {y.size} batch units", module="policy")
    return y, p, s


def estimate_value(batch, phi, scores, delta: float, alpha: float = ANALYSIS_CONFIG["alpha"],
                   ties: str = "under") -> PolicyEvaluation:
    y, p, s = _aligned_inputs(batch, phi, scores)
    bq = budget_quantile(s, delta)
    return evaluate_contact(y, p, bq.weights(ties), bq.delta, bq.q_hat, alpha)


def gap_to_unconstrained(evaluation: PolicyEvaluation, unconstrained: PolicyEvaluation) -> dict:
    """
    V_1 - V_delta against the bound (1 - delta) * q_delta, with 2(se_1 + se_delta) slack.
    Returns {delta, gap, bound, slack, consistent}.
    """
    if evaluation.n != unconstrained.n:
        raise ArgumentError("Both evaluations must come from the same batch", module="policy")
    if unconstrained.delta != 1.0:
        raise ArgumentError(f"Reference evaluation must be at delta = 1, got {unconstrained.delta}",
                            module="policy")
    gap = unconstrained.value - evaluation.value
    bound = (1.0 - evaluation.delta) * evaluation.q_hat
    slack = 2.0 * (unconstrained.se + evaluation.se)
    ok = bool(gap <= bound + slack)
    if not ok:
        logger.warning(f"⚠️ Gap {gap:.4f} exceeds bound {bound:.4f} + slack {slack:.4f} at delta={evaluation.delta}")
    return {
        "delta": evaluation.delta,
        "gap": float(gap),
        "bound": float(bound),
        "slack": float(slack),
        "consistent": ok,
    }


def monotone_rearrangement(values) -> np.ndarray:
    """Univariate rearrangement: the curve values sorted ascending."""
    return np.sort(np.asarray(values, dtype=float))


def _contact_path(scores: np.ndarray, grid: np.ndarray, ties: str = "under"):
    """Contact weights (grid x units) and thresholds, sorting the scores once."""
    _check_ties(ties)
    desc = np.sort(scores)[::-1]
    thresholds = [_threshold(desc, d) for d in grid]
    q = np.array([t[0] for t in thresholds])
    contact = (scores[None, :] > q[:, None]).astype(float)
    if ties == "fractional":
        for i, (qi, k) in enumerate(thresholds):
            w = _tie_weight(scores, qi, k)
            if w:
                contact[i, scores == qi] = w
    return contact, q


@dataclass(frozen=True)
class AupbcEstimate:
    area: float
    area_ci: tuple
    normalized: Optional[float]
    normalized_ci: Optional[tuple]
    kappa2: float
    zeta2: Optional[float]
    closed_form: float
    n: int
    diagnostics: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aupbc": self.area,
            "aupbc_ci": list(self.area_ci),
            "aupbc_norm": self.normalized,
            "aupbc_norm_ci": None if self.normalized_ci is None else list(self.normalized_ci),
            "kappa2": self.kappa2,
            "zeta2": self.zeta2,
            "aupbc_closed_form": self.closed_form,
            "diagnostics": list(self.diagnostics),
        }


def _aupbc_from_path(y, phi, contact, q, grid, alpha) -> AupbcEstimate:
    n = y.size
    z = z_value(alpha)
    d = contact.astype(float)
    mean_phi = float(phi.mean())

    treated_part = d @ phi / n
    area = float(trapezoid(treated_part - grid * mean_phi, grid))
    closed_form = float(trapezoid(treated_part + y.mean(), grid) - y.mean() - 0.5 * mean_phi)

    per_unit = d * phi[None, :] - q[:, None] * (d - grid[:, None])
    influence = trapezoid(per_unit, grid, axis=0) - phi / 2.0
    kappa2 = float(np.var(influence, ddof=1)) if n > 1 else 0.0
    half = z * np.sqrt(kappa2 / n)

    diagnostics = []
    normalized = normalized_ci = zeta2 = None
    if mean_phi <= 0:
        msg = f"normalized AUPBC undefined: mean pseudo-outcome {mean_phi:.4g} <= 0"
        logger.warning(f"⚠️ {msg}")
        diagnostics.append(msg)
    else:
        normalized = float(2.0 * trapezoid(treated_part, grid) / mean_phi - 1.0)
        zeta2 = float(np.var((2.0 * influence - normalized * phi) / mean_phi, ddof=1)) if n > 1 else 0.0
        zhalf = z * np.sqrt(zeta2 / n)
        normalized_ci = (normalized - zhalf, normalized + zhalf)
        if not 0.0 <= normalized <= 1.0:
            msg = f"normalized AUPBC {normalized:.4f} outside [0, 1]"
            logger.warning(f"⚠️ {msg}")
            diagnostics.append(msg)

    return AupbcEstimate(area, (area - half, area + half), normalized, normalized_ci,
                         kappa2, zeta2, closed_form, n, diagnostics)


def aupbc(batch, phi, scores, grid=None, alpha: float = ANALYSIS_CONFIG["alpha"],
           ties: str = "under") -> AupbcEstimate:
    y, p, s = _aligned_inputs(batch, phi, scores)
    g = _checked_grid(grid)
    contact, q = _contact_path(s, g, ties)
    return _aupbc_from_path(y, p, contact, q, g, alpha)


def aupbc_rank_form(benefit) -> float:
    """Cov(beta, F_n(beta)) with mid-ranks: the area as a distributional covariance."""
    b = np.asarray(benefit, dtype=float)
    ranks = rankdata(b) / b.size
    return float(np.mean((b - b.mean()) * (ranks - ranks.mean())))


@dataclass(frozen=True, eq=False)
class QiniReport:
    delta_grid: np.ndarray
    v_raw: np.ndarray
    v_monotone: np.ndarray
    se: np.ndarray
    q_hat: np.ndarray
    contacted_fraction: np.ndarray
    estimate: AupbcEstimate
    alpha: float
    evaluations: List[PolicyEvaluation] = field(default_factory=list, repr=False)

    @property
    def aupbc(self) -> float:
        return self.estimate.area

    @property
    def aupbc_norm(self) -> Optional[float]:
        return self.estimate.normalized

    def to_dict(self) -> dict:
        z = z_value(self.alpha)
        out = {
            "delta_grid": self.delta_grid.tolist(),
            "v_raw": self.v_raw.tolist(),
            "v_monotone": self.v_monotone.tolist(),
            "se": self.se.tolist(),
            "ci_lower": (self.v_raw - z * self.se).tolist(),
            "ci_upper": (self.v_raw + z * self.se).tolist(),
            "alpha": self.alpha,
        }
        out.update(self.estimate.to_dict())
        return out

    def to_frame(self) -> pd.DataFrame:
        z = z_value(self.alpha)
        return pd.DataFrame({
            "delta": self.delta_grid,
            "v_raw": self.v_raw,
            "v_monotone": self.v_monotone,
            "se": self.se,
            "ci_lower": self.v_raw - z * self.se,
            "ci_upper": self.v_raw + z * self.se,
            "q_hat": self.q_hat,
            "contacted_fraction": self.contacted_fraction,
        })


def qini_curve(batch, phi, scores, grid=None, alpha: float = ANALYSIS_CONFIG["alpha"],
               ties: str = "under") -> QiniReport:
    y, p, s = _aligned_inputs(batch, phi, scores)
    g = _checked_grid(grid)
    contact, q = _contact_path(s, g, ties)
    evaluations = [evaluate_contact(y, p, contact[i], g[i], q[i], alpha) for i in range(g.size)]
    v_raw = np.array([e.value for e in evaluations])
    report = QiniReport(
        delta_grid=g,
        v_raw=v_raw,
        v_monotone=monotone_rearrangement(v_raw),
        se=np.array([e.se for e in evaluations]),
        q_hat=q,
        contacted_fraction=contact.mean(axis=1),
        estimate=_aupbc_from_path(y, p, contact, q, g, alpha),
        alpha=float(alpha),
        evaluations=evaluations,
    )
    norm_txt = "undefined" if report.aupbc_norm is None else f"{report.aupbc_norm:.4f}"
    logger.info(f"📈 Qini curve on {g.size} budgets: V0={v_raw[0]:.4f}, V1={v_raw[-1]:.4f}, "
                f"AUPBC={report.aupbc:.4f}, normalized={norm_txt}")
    return report


def budget_for_peak_fraction(grid, values, fraction: float = 0.8) -> Optional[float]:
    """
    Smallest budget whose gain over V_0 reaches `fraction` of the peak gain,
    on the rearranged curve, linearly interpolated between grid points.
    """
    g = np.asarray(grid, dtype=float)
    v = monotone_rearrangement(values)
    peak = v[-1] - v[0]
    if peak <= 0:
        return None
    target = v[0] + fraction * peak
    i = int(np.argmax(v >= target))
    if i == 0:
        return float(g[0])
    t = (target - v[i - 1]) / (v[i] - v[i - 1])
    return float(g[i - 1] + t * (g[i] - g[i - 1]))


def margin_diagnostic(tau_hat, scores, q_hat: float, thresholds=(0.01, 0.02, 0.05, 0.1, 0.2)) -> dict:
    """Descriptive only: mass of |tau_hat| and |score - q_hat| within t of zero."""
    tau = np.abs(np.asarray(tau_hat, dtype=float))
    gap = np.abs(score_array(scores) - q_hat)
    t = np.asarray(thresholds, dtype=float)
    return {
        "t": t.tolist(),
        "tau_near_zero": [float(np.mean(tau <= x)) for x in t],
        "score_near_quantile": [float(np.mean(gap <= x)) for x in t],
    }
