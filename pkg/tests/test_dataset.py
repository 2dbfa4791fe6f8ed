import numpy as np
import pytest

from benefit.pipeline.dataset import (
    Cohort, CohortSchema, load_csv, make_folds, select_covariates,
)
from benefit.pipeline.errors import ArgumentError, CpbError, ParseError, PositivityError, SchemaError
from benefit.services.learners import fit_regression


def test_load_four_rows(write_csv):
    path = write_csv("c.csv", "x,a,y\n0.1,1,1.5\n0.2,0,2.0\n0.3,1,0.0\n0.4,0,-1\n")
    cohort = load_csv(path)
    assert cohort.n == 4
    assert cohort.columns == ("x",)
    assert cohort.treatment.tolist() == [1, 0, 1, 0]
    assert cohort.outcome.tolist() == [1.5, 2.0, 0.0, -1.0]


def test_single_arm_is_positivity_error(write_csv):
    path = write_csv("c.csv", "x,a,y\n1,1,0\n2,1,1\n3,1,2\n")
    with pytest.raises(PositivityError):
        load_csv(path)


def test_parse_error_cites_row(write_csv):
    path = write_csv("c.csv", "x,a,y\n1,1,0.5\n2,0,abc\n3,1,1\n")
    with pytest.raises(ParseError) as err:
        load_csv(path)
    assert err.value.row == 2
    assert err.value.column == "y"
    assert "row 2" in str(err.value)


def test_non_binary_treatment(write_csv):
    path = write_csv("c.csv", "x,a,y\n1,1,0\n2,2,1\n3,0,2\n")
    with pytest.raises(ParseError) as err:
        load_csv(path)
    assert err.value.row == 2


def test_missing_column_and_file(write_csv, tmp_path):
    path = write_csv("c.csv", "x,treat,y\n1,1,0\n2,0,1\n")
    with pytest.raises(SchemaError):
        load_csv(path)
    cohort = load_csv(path, CohortSchema.from_names(treatment="treat"))
    assert cohort.treatment_name == "treat"
    with pytest.raises(CpbError):
        load_csv(str(tmp_path / "nope.csv"))


def test_empty_file_is_parse_error(write_csv):
    with pytest.raises(ParseError):
        load_csv(write_csv("empty.csv", ""))


def test_covariate_subset_from_schema(write_csv):
    path = write_csv("c.csv", "x1,x2,x3,a,y\n1,2,3,1,0\n4,5,6,0,1\n")
    cohort = load_csv(path, CohortSchema.from_names("x3, x1"))
    assert cohort.columns == ("x3", "x1")
    assert cohort.covariates.tolist() == [[3.0, 1.0], [6.0, 4.0]]


def test_csv_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 2)) / 3.0
    a = np.arange(50) % 2
    y = rng.normal(size=50) * 1e-7 + np.pi
    cohort = Cohort(("u", "v"), x, a, y)
    back = load_csv(cohort.to_csv(str(tmp_path / "out" / "c.csv")))
    assert back.columns == cohort.columns
    assert np.array_equal(back.covariates, cohort.covariates)
    assert np.array_equal(back.treatment, cohort.treatment)
    assert np.array_equal(back.outcome, cohort.outcome)


def test_cohort_is_read_only(tiny_cohort):
    with pytest.raises(ValueError):
        tiny_cohort.outcome[0] = 5.0
    with pytest.raises(AttributeError):
        tiny_cohort.columns = ("z",)


def test_subset_and_with_covariate(tiny_cohort):
    sub = tiny_cohort.subset([0, 1])
    assert sub.n == 2
    wider = tiny_cohort.with_covariate("sign", np.sign(tiny_cohort.column("x1")))
    assert wider.columns == ("x1", "x2", "sign")
    assert wider.p == 3
    with pytest.raises(SchemaError):
        tiny_cohort.with_covariate("x1", np.zeros(4))


def test_make_folds_deterministic():
    first = make_folds(10, 2, 7)
    second = make_folds(10, 2, 7)
    assert np.array_equal(first.assignment, second.assignment)


def test_make_folds_balanced():
    folds = make_folds(10, 5, 1)
    assert folds.sizes().tolist() == [2, 2, 2, 2, 2]
    uneven = make_folds(11, 3, 1)
    assert uneven.sizes().max() - uneven.sizes().min() <= 1


def test_make_folds_guards():
    with pytest.raises(ArgumentError):
        make_folds(3, 4, 0)
    with pytest.raises(ArgumentError):
        make_folds(10, 1, 0)


def test_splits_partition_units():
    folds = make_folds(9, 3, 2)
    seen = np.concatenate([test for _, _, test in folds.splits()])
    assert sorted(seen.tolist()) == list(range(9))
    for f, train, test in folds.splits():
        assert np.intersect1d(train, test).size == 0


def test_select_all_columns_is_identity(tiny_cohort):
    view = select_covariates(tiny_cohort, ["x2", "x1"])
    assert view.is_identity
    assert view.matrix.shape == (4, 2)


def test_select_empty_gives_constant_fits(tiny_cohort):
    view = select_covariates(tiny_cohort, [])
    assert view.is_empty
    assert view.matrix.shape == (4, 0)
    model = fit_regression("kernel", view.matrix, [1.0, 2.0, 3.0, 6.0])
    assert np.allclose(model.predict(np.zeros((3, 0))), 3.0)


def test_select_unknown_is_schema_error(tiny_cohort):
    with pytest.raises(SchemaError):
        select_covariates(tiny_cohort, ["z"])
