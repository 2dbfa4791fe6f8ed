import numpy as np
import pandas as pd
import pytest

from benefit.pipeline.cpb import dr_learn_cpb, pseudo_outcomes
from benefit.pipeline.dataset import Cohort, make_folds
from benefit.pipeline.nuisance import NuisanceFits, crossfit_nuisances
from benefit.pipeline.simulation import ScenarioSpec, generate


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, frame):
        path = tmp_path / name
        if isinstance(frame, str):
            path.write_text(frame, encoding="utf-8")
        else:
            pd.DataFrame(frame).to_csv(path, index=False)
        return str(path)

    return _write


@pytest.fixture
def tiny_cohort():
    x = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.0]])
    return Cohort(("x1", "x2"), x, np.array([1, 0, 1, 0]), np.array([0.0, 1.0, 0.0, 1.0]))


def fitted(scenario="S1", n=1500, seed=3, learner="kernel"):
    sim = generate(ScenarioSpec(scenario, n, seed))
    cohort = sim.cohort
    folds = make_folds(cohort.n, 2, seed)
    fits = crossfit_nuisances(cohort, folds, learner, learner)
    phi = pseudo_outcomes(cohort, fits)
    model = dr_learn_cpb(cohort, fits, phi=phi, folds=folds)
    return sim, cohort, folds, fits, phi, model


@pytest.fixture(scope="module")
def s1_fit():
    return fitted()


def constant_fits(n, pi=0.5, mu0=0.0, mu1=1.0, folds=None):
    return NuisanceFits(np.full(n, pi), np.full(n, mu0), np.full(n, mu1), 0.01, fold_of_unit=folds)
