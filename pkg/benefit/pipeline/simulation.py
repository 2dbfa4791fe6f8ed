"""
Synthetic scenarios and oracles.

All scenarios draw X ~ Unif(-2, 2), A | X ~ Bernoulli(pi(X)) and
Y(a) = (a - pi(X)) tau(X) + eps with eps ~ N(0, noise_sd^2), so E(Y | X) = 0.

  S1      pi = 1/2                                   tau = x
  S1star  pi = 1 - |x|/2                             tau = 1
  S2      pi = 1/2                                   tau = (3/16) x^5
  S2star  pi = 1(x>0)(1 - (x/2)^4) + 1(x<=0)(x/2)^4  tau = (3/2) x
  confounded  S1 plus a hidden U ~ Bern(1/2) that shifts the treatment
              log-odds by treatment_strength*(2U-1) and both potential
              outcomes by strength*(2U-1)

S1/S1star share beta ~ Unif(0, 1); S2/S2star share beta = (3/32)|x|^5.
Potential outcomes stay inside SimulatedCohort and are read only by the
oracle functions in this module.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from benefit.pipeline.cpb import pseudo_outcome
from benefit.pipeline.dataset import Cohort
from benefit.pipeline.errors import ArgumentError
from benefit.pipeline.policy import aupbc_rank_form
from benefit.pipeline.validators import is_budget
from config.settings import SIMULATION_CONFIG

logger = logging.getLogger("simulation")

SCENARIOS = ("S1", "S1star", "S2", "S2star", "confounded")
_S1_FAMILY = ("S1", "S1star", "confounded")


@dataclass(frozen=True)
class ScenarioSpec:
    id: str = "S1"
    n: int = 1000
    seed: int = 0
    noise_sd: float = SIMULATION_CONFIG["noise_sd"]
    strength: float = SIMULATION_CONFIG["confounding_strength"]
    treatment_strength: float = SIMULATION_CONFIG["treatment_strength"]

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ArgumentError(f"Unknown scenario: '{self.id}'. Available: {', '.join(SCENARIOS)}",
                                module="simulation")
        if int(self.n) != self.n or self.n < 1:
            raise ArgumentError(f"Scenario size must be an integer >= 1, got {self.n}", module="simulation")
        if not np.isfinite(self.noise_sd) or self.noise_sd < 0:
            raise ArgumentError(f"noise_sd must be >= 0, got {self.noise_sd}", module="simulation")

    @property
    def confounded(self) -> bool:
        return self.id == "confounded"

    # ---- Identified (observed-data) structure ----

    def propensity(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.id == "S1star":
            return 1.0 - np.abs(x) / 2.0
        if self.id == "S2star":
            return np.where(x > 0, 1.0 - (x / 2.0) ** 4, (x / 2.0) ** 4)
        return np.full_like(x, 0.5)

    def outcome_means(self, x):
        """(mu0, mu1): E(Y | X, A = a)."""
        x = np.asarray(x, dtype=float)
        if self.confounded:
            means = _confounded_means(x, self.strength, self.treatment_strength)
            return means["mu0"], means["mu1"]
        pi, tau = self.propensity(x), self._structural_tau(x)
        return -pi * tau, (1.0 - pi) * tau

    def cate(self, x) -> np.ndarray:
        mu0, mu1 = self.outcome_means(x)
        return mu1 - mu0

    def optimal_policy(self, x) -> np.ndarray:
        return (self.cate(x) > 0).astype(np.int64)

    def benefit(self, x) -> np.ndarray:
        """Identified CPB tau(h* - pi)."""
        tau = self.cate(x)
        return tau * ((tau > 0) - self.propensity(x))

    def benefit_quantile(self, delta: float) -> Optional[float]:
        """Closed-form upper-delta quantile of beta; None where only Monte Carlo is available."""
        if self.id in ("S1", "S1star"):
            return 1.0 - delta
        if self.id in ("S2", "S2star"):
            return 3.0 * (1.0 - delta) ** 5
        return None

    def _structural_tau(self, x) -> np.ndarray:
        if self.id in ("S1", "confounded"):
            return np.asarray(x, dtype=float)
        if self.id == "S1star":
            return np.ones_like(x)
        if self.id == "S2":
            return 3.0 / 16.0 * x ** 5
        return 1.5 * x


def _confounded_means(x, strength: float, treatment_strength: float) -> dict:
    """Enumerate U in {0,1}: identified means mu_a and cross-arm means nu_a = E(Y(a) | X, A = 1 - a)."""
    x = np.asarray(x, dtype=float)
    p_treat = {u: expit(treatment_strength * (2 * u - 1)) for u in (0, 1)}
    out = {}
    for a in (0, 1):
        arm_mean = {u: (a - 0.5) * x + strength * (2 * u - 1) for u in (0, 1)}
        for label, arm in (("mu", a), ("nu", 1 - a)):
            lik = {u: p_treat[u] if arm == 1 else 1.0 - p_treat[u] for u in (0, 1)}
            norm_ = lik[0] + lik[1]
            out[f"{label}{a}"] = (lik[0] * arm_mean[0] + lik[1] * arm_mean[1]) / norm_
    return out


def _draw(spec: ScenarioSpec, n: int, rng: np.random.Generator) -> dict:
    x = rng.uniform(-2.0, 2.0, n)
    u = rng.integers(0, 2, n)
    if spec.confounded:
        pi_u = expit(spec.treatment_strength * (2 * u - 1))
        a = (rng.random(n) < pi_u).astype(np.int64)
        shift = spec.strength * (2 * u - 1)
        pi = np.full(n, 0.5)
    else:
        pi = spec.propensity(x)
        a = (rng.random(n) < pi).astype(np.int64)
        shift = 0.0
    eps = rng.normal(0.0, spec.noise_sd, n) if spec.noise_sd > 0 else np.zeros(n)
    tau = spec._structural_tau(x)
    y0 = (0.0 - pi) * tau + shift + eps
    y1 = (1.0 - pi) * tau + shift + eps
    return {"x": x, "u": u, "a": a, "y0": y0, "y1": y1}


def _chunk_sizes(n: int) -> List[int]:
    step = int(SIMULATION_CONFIG["mc_chunk"])
    return [min(step, n - s) for s in range(0, n, step)]


def _draw_chunked(spec: ScenarioSpec, n: int, seed: int, n_jobs: int = 1) -> dict:
    """Fixed-size chunks, one spawned seed per chunk index: output does not depend on n_jobs."""
    sizes = _chunk_sizes(n)
    seeds = np.random.SeedSequence(int(seed)).spawn(len(sizes))
    jobs = [(m, np.random.default_rng(s)) for m, s in zip(sizes, seeds)]
    if n_jobs > 1 and len(jobs) > 1:
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(_draw)(spec, m, r) for m, r in jobs)
    else:
        parts = [_draw(spec, m, r) for m, r in jobs]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


@dataclass(frozen=True, eq=False)
class SimulatedCohort:
    spec: ScenarioSpec
    cohort: Cohort
    _sealed: dict = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.cohort.covariates[:, 0]

    def true_nuisances(self):
        """(pi, mu0, mu1) at the observed X."""
        mu0, mu1 = self.spec.outcome_means(self.x)
        return self.spec.propensity(self.x), mu0, mu1

    def oracle_pseudo_outcomes(self) -> np.ndarray:
        """Pseudo-outcome with the true nuisances plugged in."""
        pi, mu0, mu1 = self.true_nuisances()
        pi = np.clip(pi, 1e-12, 1 - 1e-12)
        return pseudo_outcome(self.cohort.treatment, self.cohort.outcome, pi, mu0, mu1)


def generate(spec: ScenarioSpec, n_jobs: int = 1) -> SimulatedCohort:
    draws = _draw_chunked(spec, int(spec.n), spec.seed, n_jobs)
    y = np.where(draws["a"] == 1, draws["y1"], draws["y0"])
    cohort = Cohort(("x",), draws["x"].reshape(-1, 1), draws["a"], y)
    sealed = {"y0": draws["y0"], "y1": draws["y1"], "u": draws["u"]}
    for arr in sealed.values():
        arr.setflags(write=False)
    logger.info(f"🎲 Simulated {spec.id}: n={spec.n}, seed={spec.seed}, noise_sd={spec.noise_sd}")
    return SimulatedCohort(spec, cohort, sealed)


# ============================================================================
# Oracles
# ============================================================================

@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    se: float
    reps: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "reps": self.reps}


def _mc(samples: np.ndarray) -> MonteCarloEstimate:
    n = samples.size
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MonteCarloEstimate(float(np.mean(samples)), se, int(n))


def oracle_contact_rule(spec: ScenarioSpec, delta: float, q: Optional[float] = None) -> Callable:
    """Delta*_delta(x) = 1(beta(x) > q_delta), everyone at delta = 1."""
    if q is None:
        q = spec.benefit_quantile(delta)
    if q is None:
        q = _mc_benefit_quantile(spec, delta)

    def rule(x):
        x = _column(x)
        if delta >= 1.0:
            return np.ones(x.size)
        return (spec.benefit(x) > q).astype(float)

    return rule


def oracle_policy_rule(spec: ScenarioSpec) -> Callable:
    return lambda x: spec.optimal_policy(_column(x))


def _column(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    return arr[:, 0] if arr.ndim == 2 else arr


def _as_rule(rule) -> Callable:
    if callable(rule):
        return rule
    const = float(rule)
    return lambda x: np.full(_column(x).size, const)


def _mc_benefit_quantile(spec: ScenarioSpec, delta: float, draws: Optional[int] = None, seed: int = 0) -> float:
    draws = draws or SIMULATION_CONFIG["oracle_draws"]
    x = np.random.default_rng(seed).uniform(-2.0, 2.0, draws)
    desc = np.sort(spec.benefit(x))[::-1]
    k = int(np.floor(delta * draws + 1e-9))
    return float(desc[k]) if k < draws else float(desc[-1] - 1.0)


def confounding_profile(spec: ScenarioSpec, grid_points: int = SIMULATION_CONFIG["profile_grid"]) -> dict:
    """nu_a - mu_a on an x grid, by exact enumeration of the hidden U."""
    x = np.linspace(-2.0, 2.0, int(grid_points))
    if not spec.confounded:
        zeros = np.zeros_like(x)
        return {"x": x.tolist(), "nu_minus_mu_0": zeros.tolist(), "nu_minus_mu_1": zeros.tolist()}
    m = _confounded_means(x, spec.strength, spec.treatment_strength)
    return {
        "x": x.tolist(),
        "nu_minus_mu_0": (m["nu0"] - m["mu0"]).tolist(),
        "nu_minus_mu_1": (m["nu1"] - m["mu1"]).tolist(),
    }


def true_gamma(spec: ScenarioSpec, grid_points: int = SIMULATION_CONFIG["profile_grid"]) -> float:
    """max over arms and x of |nu_a(x) - mu_a(x)|: the smallest valid sensitivity parameter."""
    prof = confounding_profile(spec, grid_points)
    return float(max(np.max(np.abs(prof["nu_minus_mu_0"])), np.max(np.abs(prof["nu_minus_mu_1"]))))


@dataclass(frozen=True)
class OracleValues:
    scenario: str
    deltas: List[float]
    q: List[float]
    value: List[float]
    gap: List[float]
    expected_benefit: float
    area: Optional[float]
    area_norm: Optional[float]
    peak_budget: Optional[float]
    value_se: Optional[List[float]] = None
    true_value: Optional[List[dict]] = None
    confounding_optimal_value: Optional[List[dict]] = None
    gamma: Optional[float] = None
    profile: Optional[dict] = field(default=None, repr=False)
    analytic: bool = True

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "analytic": self.analytic,
            "deltas": self.deltas,
            "q": self.q,
            "value": self.value,
            "gap": self.gap,
            "expected_benefit": self.expected_benefit,
            "aupbc": self.area,
            "aupbc_norm": self.area_norm,
            "peak_fraction": SIMULATION_CONFIG["peak_fraction"],
            "peak_budget": self.peak_budget,
        }
        if self.value_se is not None:
            out["value_se"] = self.value_se
        if self.true_value is not None:
            out["true_value"] = self.true_value
            out["confounding_optimal_value"] = self.confounding_optimal_value
            out["gamma_true"] = self.gamma
            out["profile"] = self.profile
        return out


def analytic_value(spec: ScenarioSpec, delta: float) -> Optional[float]:
    if spec.id in ("S1", "S1star"):
        return delta - delta ** 2 / 2.0
    if spec.id in ("S2", "S2star"):
        return (1.0 - (1.0 - delta) ** 6) / 2.0
    return None


def _analytic_oracle(spec: ScenarioSpec, deltas: Sequence[float]) -> OracleValues:
    s1 = spec.id in _S1_FAMILY
    frac = SIMULATION_CONFIG["peak_fraction"]
    values = [analytic_value(spec, d) for d in deltas]
    return OracleValues(
        scenario=spec.id,
        deltas=list(deltas),
        q=[spec.benefit_quantile(d) for d in deltas],
        value=values,
        gap=[0.5 - v for v in values],
        expected_benefit=0.5,
        area=1.0 / 12.0 if s1 else 5.0 / 28.0,
        area_norm=1.0 / 3.0 if s1 else 5.0 / 7.0,
        peak_budget=1.0 - (1.0 - frac) ** 0.5 if s1 else 1.0 - (1.0 - frac) ** (1.0 / 6.0),
    )


def _confounded_oracle(spec: ScenarioSpec, deltas: Sequence[float], draws: int, seed: int,
                       n_jobs: int) -> OracleValues:
    d = _draw_chunked(spec, draws, seed, n_jobs)
    x, a = d["x"], d["a"]
    y_obs = np.where(a == 1, d["y1"], d["y0"])
    beta = spec.benefit(x)
    h_id = spec.optimal_policy(x)
    y_h = np.where(h_id == 1, d["y1"], d["y0"])

    # Rule that is optimal once confounding is accounted for: true CATE is x
    tau_true = x
    h_true = (tau_true > 0).astype(np.int64)
    beta_true = tau_true * (h_true - 0.5)
    y_htrue = np.where(h_true == 1, d["y1"], d["y0"])

    desc_id = np.sort(beta)[::-1]
    desc_true = np.sort(beta_true)[::-1]
    q, ident, ident_se, gap, true_v, opt_v = [], [], [], [], [], []
    for delta in deltas:
        k = int(np.floor(delta * draws + 1e-9))
        qd = float(desc_id[k]) if k < draws else float(desc_id[-1] - 1.0)
        contact = beta > qd
        est = _mc(contact * beta + y_obs)
        q.append(qd)
        ident.append(est.mean)
        ident_se.append(est.se)
        gap.append(float(np.mean(beta * ~contact)))
        true_v.append(_mc(np.where(contact, y_h, y_obs)).to_dict())
        qt = float(desc_true[k]) if k < draws else float(desc_true[-1] - 1.0)
        opt_v.append(_mc(np.where(beta_true > qt, y_htrue, y_obs)).to_dict())

    e_beta = float(beta.mean())
    area = aupbc_rank_form(beta)
    return OracleValues(
        scenario=spec.id,
        deltas=list(deltas),
        q=q,
        value=ident,
        gap=gap,
        expected_benefit=e_beta,
        area=area,
        area_norm=2.0 * area / e_beta,
        peak_budget=None,
        value_se=ident_se,
        true_value=true_v,
        confounding_optimal_value=opt_v,
        gamma=true_gamma(spec),
        profile=confounding_profile(spec),
        analytic=False,
    )


def oracle(spec: ScenarioSpec, deltas: Sequence[float] = (0.25, 0.5, 0.75), grid=None,
           draws: Optional[int] = None, seed: Optional[int] = None, n_jobs: int = 1) -> OracleValues:
    """
    Target functionals for a scenario. Printed scenarios are closed form;
    the confounded scenario is Monte Carlo on potential outcomes.
    `grid`, when given, is appended to `deltas`.
    """
    deltas = [float(d) for d in deltas]
    if grid is not None:
        deltas = sorted(set(deltas) | {float(g) for g in grid})
    for d in deltas:
        if not is_budget(d):
            raise ArgumentError(f"Budget must lie in [0, 1], got {d}", module="simulation")
    if not spec.confounded:
        return _analytic_oracle(spec, deltas)
    draws = int(draws or SIMULATION_CONFIG["oracle_draws"])
    seed = spec.seed + 1 if seed is None else seed
    return _confounded_oracle(spec, deltas, draws, seed, n_jobs)


def regret_oracle(spec: ScenarioSpec, contact_rule, policy_rule, delta: float,
                  draws: Optional[int] = None, seed: int = 12345) -> MonteCarloEstimate:
    """
    E tau{Delta*(h* - pi) - Delta_hat(h_hat - pi)} over fresh X draws:
    shortfall of an estimated (contact, policy) pair against the optimal pair.
    """
    if not is_budget(delta):
        raise ArgumentError(f"Budget must lie in [0, 1], got {delta}", module="simulation")
    draws = int(draws or SIMULATION_CONFIG["regret_draws"])
    x = np.random.default_rng(seed).uniform(-2.0, 2.0, draws)
    xm = x.reshape(-1, 1)
    tau, pi = spec.cate(x), spec.propensity(x)
    best = oracle_contact_rule(spec, delta)(xm) * (spec.optimal_policy(x) - pi)
    mine = np.asarray(_as_rule(contact_rule)(xm), dtype=float) * (np.asarray(_as_rule(policy_rule)(xm)) - pi)
    return _mc(tau * (best - mine))


def contact_regret_oracle(spec: ScenarioSpec, contact_rule, delta: float,
                          draws: Optional[int] = None, seed: int = 12345) -> MonteCarloEstimate:
    """E beta(Delta* - Delta_hat) with the treatment rule fixed at h*."""
    draws = int(draws or SIMULATION_CONFIG["regret_draws"])
    x = np.random.default_rng(seed).uniform(-2.0, 2.0, draws)
    xm = x.reshape(-1, 1)
    diff = oracle_contact_rule(spec, delta)(xm) - np.asarray(_as_rule(contact_rule)(xm), dtype=float)
    return _mc(spec.benefit(x) * diff)


def estimated_rules(fits, model, q_hat: float, delta: float):
    """Contact and policy rules learned from data, applicable to fresh X."""
    def contact(x):
        if delta >= 1.0:
            return np.ones(np.asarray(x).shape[0])
        return (model.predict(x) > q_hat).astype(float)

    return contact, fits.predict_policy


def _brute_force_chunk(spec: ScenarioSpec, m: int, rng, contact_rule, policy_rule) -> np.ndarray:
    d = _draw(spec, m, rng)
    xm = d["x"].reshape(-1, 1)
    reach = np.clip(np.asarray(contact_rule(xm), dtype=float), 0.0, 1.0)
    hit = rng.random(m) < reach
    h = np.asarray(policy_rule(xm)).astype(np.int64)
    y_h = np.where(h == 1, d["y1"], d["y0"])
    y_a = np.where(d["a"] == 1, d["y1"], d["y0"])
    return np.where(hit, y_h, y_a)


def mc_brute_force_value(spec: ScenarioSpec, contact_rule, policy_rule, reps: int,
                         seed: Optional[int] = None, n_jobs: int = 1) -> MonteCarloEstimate:
    """
    Value of d(Delta, h) by simulating it: contact with probability Delta(x),
    give contacted units h(x), leave others at their natural arm.
    """
    if int(reps) != reps or reps < 1:
        raise ArgumentError(f"reps must be an integer >= 1, got {reps}", module="simulation")
    contact_rule, policy_rule = _as_rule(contact_rule), _as_rule(policy_rule)
    sizes = _chunk_sizes(int(reps))
    seeds = np.random.SeedSequence(spec.seed + 7 if seed is None else int(seed)).spawn(len(sizes))
    jobs = [(m, np.random.default_rng(s)) for m, s in zip(sizes, seeds)]
    if n_jobs > 1 and len(jobs) > 1:
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_brute_force_chunk)(spec, m, r, contact_rule, policy_rule) for m, r in jobs
        )
    else:
        parts = [_brute_force_chunk(spec, m, r, contact_rule, policy_rule) for m, r in jobs]
    return _mc(np.concatenate(parts))
