import numpy as np
import pytest

from benefit.pipeline.cpb import dr_learn_cpb, pseudo_outcomes
from benefit.pipeline.dataset import make_folds
from benefit.pipeline.errors import ArgumentError
from benefit.pipeline.nuisance import crossfit_nuisances
from benefit.pipeline.policy import budget_quantile, estimate_value
from benefit.pipeline.sensitivity import (
    breakdown_gamma, exposure_proxy, optimal_gap_bound, sensitivity_bounds, sensitivity_curve,
)
from benefit.pipeline.simulation import ScenarioSpec, generate, oracle, true_gamma
from conftest import constant_fits


def test_gap_bound_formula():
    assert optimal_gap_bound(1.0, 0.5) == 4.5
    assert optimal_gap_bound(0.0, 0.3) == 0.0
    assert optimal_gap_bound(0.1, 1.0) == pytest.approx(0.5)
    with pytest.raises(ArgumentError):
        optimal_gap_bound(-0.1, 0.5)
    with pytest.raises(ArgumentError):
        optimal_gap_bound(1.0, 1.2)


def test_zero_gamma_collapses(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.5)
    band = sensitivity_bounds(cohort, phi, ev, fits, 0.0)
    assert band.width == 0.0
    assert band.lower == band.value == ev.value


def test_zero_budget_collapses(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.0)
    band = sensitivity_bounds(cohort, phi, ev, fits, 5.0)
    assert band.exposure == 0.0
    assert band.width == 0.0
    assert band.value == pytest.approx(cohort.outcome.mean())


def test_width_bound_and_nesting(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    for delta in (0.1, 0.5, 0.9):
        ev = estimate_value(cohort, phi, model, delta)
        bands = sensitivity_curve(cohort, phi, ev, fits, [0.4, 0.1, 0.2])
        assert [b.gamma for b in bands] == [0.1, 0.2, 0.4]
        for b in bands:
            assert b.width <= 2 * b.gamma * delta + 1e-9
            assert b.width_bound == pytest.approx(2 * b.gamma * delta)
            assert b.lower_ci <= b.lower and b.upper <= b.upper_ci
        for small, big in zip(bands, bands[1:]):
            assert big.lower <= small.lower and small.upper <= big.upper


def test_contact_forms_agree(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.3)
    bq = budget_quantile(model.scores, 0.3)
    a = sensitivity_bounds(cohort, phi, ev, fits, 0.2)
    b = sensitivity_bounds(cohort, phi, bq, fits, 0.2)
    assert a.lower == b.lower and a.upper == b.upper


def test_plugin_exposure_estimator(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.5)
    band = sensitivity_bounds(cohort, phi, ev, fits, 0.3, estimator="plugin")
    assert band.estimator == "plugin"
    assert band.exposure == pytest.approx(band.plugin_exposure)
    assert band.width <= 2 * 0.3 * 0.5 + 1e-9
    with pytest.raises(ArgumentError):
        exposure_proxy(cohort.treatment, fits, "sharp")


def test_printed_exposure_form(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.5)
    h = fits.h_star
    expected = np.mean(ev.contact * (h + (1 - 2 * h) * (cohort.treatment - fits.pi_hat)))
    band = sensitivity_bounds(cohort, phi, ev, fits, 0.3, estimator="printed")
    assert band.estimator == "printed"
    assert band.exposure == pytest.approx(expected)
    assert band.lower <= band.value <= band.upper
    assert band.width == pytest.approx(2 * 0.3 * abs(expected))
    assert band.lower_ci <= band.lower and band.upper <= band.upper_ci


def test_printed_exposure_on_constant_nuisances():
    fits = constant_fits(4, pi=0.25)
    out = exposure_proxy(np.array([1, 0, 1, 0]), fits, "printed")
    # tau = 1 everywhere, so h* = 1 and the proxy is 1 - (A - 0.25)
    assert out.tolist() == [0.25, 1.25, 0.25, 1.25]


def test_guards(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.5)
    with pytest.raises(ArgumentError):
        sensitivity_bounds(cohort, phi, ev, fits, -1.0)
    with pytest.raises(ArgumentError):
        sensitivity_bounds(cohort, phi.values[:10], ev, fits, 1.0)


def test_breakdown_gamma_reaches_reference(s1_fit):
    _, cohort, _, fits, phi, model = s1_fit
    ev = estimate_value(cohort, phi, model, 0.5)
    reference = cohort.outcome.mean()
    g = breakdown_gamma(sensitivity_bounds(cohort, phi, ev, fits, 0.0), reference)
    band = sensitivity_bounds(cohort, phi, ev, fits, g)
    assert band.lower == pytest.approx(reference) or band.upper == pytest.approx(reference)
    zero = sensitivity_bounds(cohort, phi, estimate_value(cohort, phi, model, 0.0), fits, 0.0)
    assert breakdown_gamma(zero, reference) is None


@pytest.mark.slow
def test_confounded_truth_inside_band():
    base = ScenarioSpec("confounded", 20000, 0)
    gamma = true_gamma(base)
    truth = oracle(base, deltas=[0.5]).true_value[0]["mean"]
    covered = 0
    for seed in range(100):
        cohort = generate(ScenarioSpec("confounded", 20000, seed)).cohort
        folds = make_folds(cohort.n, 2, seed)
        fits = crossfit_nuisances(cohort, folds, "linear", "linear")
        phi = pseudo_outcomes(cohort, fits)
        model = dr_learn_cpb(cohort, fits, spec="kernel", phi=phi, folds=folds)
        ev = estimate_value(cohort, phi, model, 0.5)
        band = sensitivity_bounds(cohort, phi, ev, fits, gamma)
        covered += band.lower_ci <= truth <= band.upper_ci
    assert covered >= 95
