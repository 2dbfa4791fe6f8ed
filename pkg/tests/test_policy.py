import numpy as np
import pytest

from benefit.pipeline.cpb import plugin_cpb, pseudo_outcome, pseudo_outcomes
from benefit.pipeline.dataset import Cohort
from benefit.pipeline.errors import ArgumentError
from benefit.pipeline.nuisance import NuisanceFits
from benefit.pipeline.policy import (
    aupbc, aupbc_rank_form, budget_for_peak_fraction, budget_quantile, default_grid, estimate_value,
    evaluate_contact, gap_to_unconstrained, margin_diagnostic, monotone_rearrangement, qini_curve,
)
from benefit.pipeline.simulation import ScenarioSpec, generate
from conftest import fitted


def test_quantile_by_hand():
    bq = budget_quantile([0.1, 0.2, 0.3, 0.4], 0.5)
    assert bq.q_hat == 0.2
    assert bq.contact.tolist() == [0, 0, 1, 1]
    assert bq.contacted_fraction == 0.5


def test_quantile_extreme_budgets():
    scores = np.array([0.3, -1.0, 2.0, 0.7])
    none = budget_quantile(scores, 0.0)
    assert none.q_hat == 2.0
    assert none.contact.sum() == 0
    everyone = budget_quantile(scores, 1.0)
    assert everyone.contact.tolist() == [1, 1, 1, 1]


def test_ties_under_contact():
    bq = budget_quantile([1.0, 1.0, 1.0, 1.0], 0.5)
    assert bq.q_hat == 1.0
    assert bq.contacted_fraction == 0.0
    assert bq.weights("fractional").tolist() == [0.5, 0.5, 0.5, 0.5]
    assert bq.weights("under").tolist() == [0.0, 0.0, 0.0, 0.0]


def test_fractional_ties_match_strict_rule_on_distinct_scores():
    bq = budget_quantile(np.arange(10.0), 0.35)
    assert np.array_equal(bq.weights("fractional"), bq.weights("under"))


def test_budget_feasibility_property():
    rng = np.random.default_rng(0)
    grid = default_grid()
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        scores = rng.normal(size=n)
        for delta in grid:
            frac = budget_quantile(scores, delta).contacted_fraction
            assert frac <= delta + 1e-12
            assert frac >= delta - 1.0 / n - 1e-12


def test_feasibility_with_ties():
    rng = np.random.default_rng(1)
    scores = rng.integers(0, 3, size=40).astype(float)
    for delta in default_grid():
        bq = budget_quantile(scores, delta)
        assert bq.contacted_fraction <= delta + 1e-12
        assert bq.weights("fractional").mean() <= delta + 1e-12


def test_quantile_guards():
    with pytest.raises(ArgumentError):
        budget_quantile([1.0, 2.0], 1.5)
    with pytest.raises(ArgumentError):
        budget_quantile([], 0.5)
    with pytest.raises(ArgumentError):
        budget_quantile([1.0, np.nan], 0.5)
    with pytest.raises(ArgumentError):
        estimate_value([0.0, 1.0], [0.0, 0.0], [1.0, 2.0], 0.5, ties="random")


def test_value_by_hand():
    ev = estimate_value(np.array([0.0, 1.0, 0.0, 1.0]), np.array([1.0, 0.5, 0.2, 0.1]),
                        np.array([4.0, 3.0, 2.0, 1.0]), 0.5)
    assert ev.contact.tolist() == [1, 1, 0, 0]
    assert ev.value == pytest.approx(0.875)
    assert ev.lower < ev.value < ev.upper


def test_zero_budget_is_status_quo():
    rng = np.random.default_rng(5)
    y, phi, s = rng.normal(size=30), rng.normal(size=30), rng.normal(size=30)
    ev = estimate_value(y, phi, s, 0.0)
    assert ev.value == np.mean(y)


def test_full_budget_variance():
    rng = np.random.default_rng(6)
    y, phi, s = rng.normal(size=50), rng.normal(size=50), rng.normal(size=50)
    ev = estimate_value(y, phi, s, 1.0)
    assert ev.value == pytest.approx(np.mean(phi + y))
    assert ev.sigma == pytest.approx(np.std(phi + y))
    assert ev.se == pytest.approx(ev.sigma / np.sqrt(50))


def test_wald_interval_width():
    ev = evaluate_contact(np.zeros(4), np.array([1.0, -1.0, 1.0, -1.0]), np.ones(4), 1.0, -2.0, 0.05)
    assert ev.upper - ev.value == pytest.approx(1.959964 * ev.sigma / 2.0, rel=1e-5)


def test_gap_full_and_zero_budget():
    rng = np.random.default_rng(7)
    y, phi, s = rng.normal(size=40), rng.normal(size=40) + 1.0, rng.normal(size=40)
    full = estimate_value(y, phi, s, 1.0)
    same = gap_to_unconstrained(full, full)
    assert same["gap"] == 0.0 and same["bound"] == 0.0 and same["consistent"]
    zero = gap_to_unconstrained(estimate_value(y, phi, s, 0.0), full)
    assert zero["gap"] == pytest.approx(np.mean(phi))
    assert zero["bound"] == s.max()
    assert set(zero) == {"delta", "gap", "bound", "slack", "consistent"}
    with pytest.raises(ArgumentError):
        gap_to_unconstrained(full, estimate_value(y, phi, s, 0.5))


def test_rearrangement():
    assert monotone_rearrangement([0.3, 0.2, 0.5]).tolist() == [0.2, 0.3, 0.5]
    assert monotone_rearrangement([0.1, 0.2, 0.4]).tolist() == [0.1, 0.2, 0.4]


def test_qini_report_shape(s1_fit):
    _, cohort, _, _, phi, model = s1_fit
    report = qini_curve(cohort, phi, model)
    assert report.delta_grid.size == 101
    assert np.all(np.diff(report.v_monotone) >= 0)
    assert report.v_raw[0] == pytest.approx(cohort.outcome.mean())
    out = report.to_dict()
    for key in ("delta_grid", "v_raw", "v_monotone", "se", "aupbc", "aupbc_norm", "kappa2", "zeta2"):
        assert key in out
    frame = report.to_frame()
    assert list(frame.columns[:3]) == ["delta", "v_raw", "v_monotone"]
    assert np.all(report.contacted_fraction <= report.delta_grid + 1e-12)


def test_malformed_grids(s1_fit):
    _, cohort, _, _, phi, model = s1_fit
    for grid in ([0.0, 0.5], [0.1, 0.5, 1.0], [0.0, 0.6, 0.5, 1.0]):
        with pytest.raises(ArgumentError):
            aupbc(cohort, phi, model, grid)


def test_aupbc_closed_form_identity(s1_fit):
    _, cohort, _, _, phi, model = s1_fit
    est = aupbc(cohort, phi, model)
    assert abs(est.area - est.closed_form) < 1e-6
    assert est.area_ci[0] < est.area < est.area_ci[1]
    assert est.kappa2 > 0


def test_aupbc_constant_scores_fractional():
    rng = np.random.default_rng(3)
    n = 500
    y, phi = rng.normal(size=n), rng.normal(size=n) + 0.5
    est = aupbc(y, phi, np.ones(n), ties="fractional")
    assert abs(est.area) <= abs(phi.mean()) / n + 1e-12


def test_aupbc_normalized_undefined_for_negative_benefit():
    rng = np.random.default_rng(4)
    phi = rng.normal(size=200) - 2.0
    est = aupbc(np.zeros(200), phi, rng.normal(size=200))
    assert est.normalized is None
    assert est.diagnostics


def test_aupbc_grid_matches_rank_form():
    x = np.random.default_rng(9).uniform(-2, 2, 50000)
    beta = np.abs(x) / 2
    grid_area = aupbc(np.zeros(beta.size), beta, beta).area
    assert abs(grid_area - aupbc_rank_form(beta)) < 1e-3
    assert abs(aupbc_rank_form(beta) - 1 / 12) < 3e-3


def test_oracle_curve_normalized_aupbc():
    x = np.random.default_rng(10).uniform(-2, 2, 20000)
    beta = np.abs(x) / 2
    est = aupbc(np.zeros(beta.size), beta, beta)
    assert abs(est.normalized - 1 / 3) < 0.01


def test_peak_fraction_budget():
    grid = default_grid()
    assert budget_for_peak_fraction(grid, grid - grid ** 2 / 2) == pytest.approx(1 - np.sqrt(0.2), abs=1e-3)
    s2 = (1 - (1 - grid) ** 6) / 2
    assert budget_for_peak_fraction(grid, s2) == pytest.approx(1 - 0.2 ** (1 / 6), abs=2e-3)
    assert budget_for_peak_fraction(grid, np.zeros_like(grid)) is None


def test_margin_diagnostic_is_monotone():
    rng = np.random.default_rng(12)
    out = margin_diagnostic(rng.normal(size=100), rng.normal(size=100), 0.0)
    assert out["t"] == [0.01, 0.02, 0.05, 0.1, 0.2]
    assert np.all(np.diff(out["tau_near_zero"]) >= 0)
    assert np.all(np.diff(out["score_near_quantile"]) >= 0)


@pytest.mark.slow
def test_s1_value_curve_large_sample():
    _, cohort, _, _, phi, model = fitted(n=20000, seed=31)
    for delta in np.arange(1, 10) / 10:
        ev = estimate_value(cohort, phi, model, delta)
        assert abs(ev.value - (delta - delta ** 2 / 2)) <= 3 * ev.se + 0.01



def test_increasing_score_transform_keeps_rule_and_value():
    rng = np.random.default_rng(21)
    y, phi, s = rng.normal(size=300), rng.normal(size=300) + 0.4, rng.normal(size=300)
    for delta in (0.1, 0.37, 0.5, 0.9):
        base = estimate_value(y, phi, s, delta)
        for moved_scores in (np.exp(s), 3 * s + 1):
            moved = estimate_value(y, phi, moved_scores, delta)
            assert np.array_equal(moved.contact, base.contact)
            assert moved.value == base.value
            assert moved.q_hat != base.q_hat
    curve, moved = qini_curve(y, phi, s), qini_curve(y, phi, np.exp(s))
    assert np.array_equal(curve.v_raw, moved.v_raw)
    assert np.array_equal(curve.v_monotone, moved.v_monotone)
    assert moved.aupbc == curve.aupbc


def test_gap_on_s1_with_true_benefit():
    sim = generate(ScenarioSpec("S1", 20000, 13))
    phi, beta = sim.oracle_pseudo_outcomes(), sim.spec.benefit(sim.x)
    half = estimate_value(sim.cohort, phi, beta, 0.5)
    full = estimate_value(sim.cohort, phi, beta, 1.0)
    report = gap_to_unconstrained(half, full)
    # (1 - delta)^2 / 2 below the quantile, bound (1 - delta) * q = 0.25
    assert report["gap"] == pytest.approx(0.125, abs=0.02)
    assert report["bound"] == pytest.approx(0.25, abs=0.01)
    assert report["gap"] <= report["bound"]
    assert report["consistent"]
    assert report["slack"] == pytest.approx(2 * (half.se + full.se))


def test_gap_on_s1_with_learned_scores(s1_fit):
    _, cohort, _, _, phi, model = s1_fit
    report = gap_to_unconstrained(estimate_value(cohort, phi, model, 0.5), estimate_value(cohort, phi, model, 1.0))
    assert report["consistent"]
    assert report["gap"] <= report["bound"] + report["slack"]


def _s1_value_errors(seed):
    sim = generate(ScenarioSpec("S1", 8000, seed, noise_sd=0.5))
    cohort, beta = sim.cohort, sim.spec.benefit(sim.x)
    pi, mu0, mu1 = sim.true_nuisances()
    contact = budget_quantile(beta, 0.5).contact
    truth = np.mean(contact * beta) + cohort.outcome.mean()
    nuisances = {
        "none": (pi, mu0, mu1),
        "outcome": (pi, mu0 + 0.3, mu1 + 0.3),
        "propensity": (pi + 0.3, mu0, mu1),
        "both": (pi + 0.3, mu0 + 0.3, mu1 + 0.3),
    }
    errors = {}
    for name, (p, m0, m1) in nuisances.items():
        phi = pseudo_outcome(cohort.treatment, cohort.outcome, p, m0, m1)
        errors[name] = abs(estimate_value(cohort, phi, beta, 0.5).value - truth)
    return errors


def test_value_survives_one_shifted_nuisance():
    runs = [_s1_value_errors(seed) for seed in range(20)]
    mean_error = {name: np.mean([r[name] for r in runs]) for name in runs[0]}
    assert mean_error["outcome"] <= 3 * mean_error["none"]
    assert mean_error["propensity"] <= 3 * mean_error["none"]
    # both shifted: bias of about 0.084 on the contacted half
    assert mean_error["both"] > 3 * mean_error["none"]
    assert mean_error["both"] > 0.05


def test_plugin_value_inherits_outcome_shift():
    rng = np.random.default_rng(17)
    n = 40000
    x = rng.uniform(-2, 2, n)
    a = (rng.random(n) < 0.7).astype(np.int64)
    y = a * x + rng.normal(size=n)
    cohort = Cohort(("x",), x.reshape(-1, 1), a, y)
    beta = x * ((x > 0) - 0.7)
    contact = budget_quantile(beta, 0.25).contact
    truth = np.mean(contact * beta) + y.mean()
    fits = NuisanceFits(np.full(n, 0.7), np.zeros(n), x + 0.3, 0.01)
    dr = estimate_value(cohort, pseudo_outcomes(cohort, fits), beta, 0.25).value
    plugin = np.mean(contact * plugin_cpb(fits)) + y.mean()
    assert abs(dr - truth) < 0.02
    # contacted units all have x < -1, where tau_hat (h - pi) is off by -0.3 * 0.7
    assert plugin - truth == pytest.approx(-0.21 * 0.25, abs=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize("scenario, area, peak", [
    ("S1", 1 / 3, 1 - np.sqrt(0.2)),
    ("S1star", 1 / 3, 1 - np.sqrt(0.2)),
    ("S2", 5 / 7, 1 - 0.2 ** (1 / 6)),
    ("S2star", 5 / 7, 1 - 0.2 ** (1 / 6)),
])
def test_scenario_curve_constants_large_sample(scenario, area, peak):
    norms, peaks, benefits = [], [], []
    for seed in range(41, 46):
        _, cohort, _, _, phi, model = fitted(scenario, n=20000, seed=seed)
        report = qini_curve(cohort, phi, model)
        norms.append(report.aupbc_norm)
        peaks.append(budget_for_peak_fraction(report.delta_grid, report.v_raw, 0.8))
        benefits.append(phi.mean())
    assert abs(np.mean(norms) - area) < 0.03
    assert abs(np.mean(peaks) - peak) < 0.05
    if scenario.startswith("S1"):
        assert abs(np.mean(benefits) - 0.5) < 0.02


@pytest.mark.slow
def test_wald_interval_coverage_on_s1():
    hits = 0
    for rep in range(200):
        _, cohort, _, _, phi, model = fitted(n=4000, seed=1000 + rep)
        ev = estimate_value(cohort, phi, model, 0.5)
        hits += ev.lower <= 0.375 <= ev.upper
    assert 0.90 <= hits / 200 <= 0.98
