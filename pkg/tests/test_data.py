import numpy as np
import pytest

from ivqreg.data import (
    Dataset,
    EstimateResult,
    ModelSpec,
    ParameterBox,
    instrument_matrix,
    load_dataset,
    validate,
    write_dataset,
)
from ivqreg.exceptions import ConfigurationError, DataParseError, DomainError


def small_ds(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(
        y=rng.normal(size=n),
        d=rng.integers(0, 2, size=n).astype(float),
        x=np.ones((n, 1)),
        z=rng.integers(0, 2, size=n).astype(float),
    )


def test_shapes_and_defaults():
    ds = small_ds()
    assert (ds.n, ds.s, ds.k, ds.m) == (8, 1, 1, 1)
    assert ds.d_labels == ("d1",) and ds.x_labels == ("x1",) and ds.z_labels == ("z1",)


def test_row_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        Dataset(y=np.zeros(4), d=np.zeros((5, 1)), x=np.ones((4, 1)), z=np.zeros((4, 1)))
    with pytest.raises(ConfigurationError):
        Dataset(y=np.zeros(0), d=np.zeros((0, 1)), x=np.ones((0, 1)), z=np.zeros((0, 1)))


def test_nonfinite_rejected():
    y = np.zeros(4)
    y_bad = y.copy()
    y_bad[2] = np.nan
    with pytest.raises(DataParseError):
        Dataset(y=y_bad, d=np.zeros((4, 1)), x=np.ones((4, 1)), z=np.zeros((4, 1)))


def test_duplicate_labels_rejected():
    with pytest.raises(ConfigurationError):
        Dataset(
            y=np.zeros(4), d=np.zeros((4, 1)), x=np.ones((4, 1)), z=np.zeros((4, 1)),
            d_labels=("a",), x_labels=("a",), z_labels=("z",),
        )


def test_immutability():
    ds = small_ds()
    with pytest.raises(ValueError):
        ds.y[0] = 99.0


def test_no_silent_intercept():
    ds = small_ds()
    assert not np.all(ds.x == 1.0) or ds.k == 1  # x is exactly what was passed
    psi = instrument_matrix(ds, "zx")
    assert psi.shape == (ds.n, 2)
    np.testing.assert_array_equal(psi[:, 0], ds.z[:, 0])
    np.testing.assert_array_equal(psi[:, 1], ds.x[:, 0])


def test_model_spec_domain():
    with pytest.raises(DomainError):
        ModelSpec(tau=0.0)
    with pytest.raises(DomainError):
        ModelSpec(tau=1.2)
    with pytest.raises(ConfigurationError):
        ModelSpec(tau=0.5, alpha_grid=(np.array([1.0, 0.5]),))
    with pytest.raises(ConfigurationError):
        ModelSpec(tau=0.5, instrument_rule="bogus")
    spec = ModelSpec(tau=0.5, alpha_grid=np.linspace(0, 1, 5))
    assert len(spec.alpha_grid) == 1


def test_parameter_box():
    with pytest.raises(ConfigurationError):
        ParameterBox(lower=[0.0, 1.0], upper=[1.0, 1.0])
    box = ParameterBox(lower=[0.0, -1.0], upper=[1.0, 1.0])
    assert box.contains([0.5, 0.0]) and not box.contains([2.0, 0.0])


def test_validate_order_condition_and_corr():
    ds = small_ds(n=200, seed=1)
    rep = validate(ds, ModelSpec(tau=0.5))
    assert rep.r == 2 and rep.order_condition_ok
    assert rep.corr_zd.shape == (1, 1)
    txt = rep.as_text()
    assert "order condition" in txt


def test_validate_constant_instrument_zero_corr():
    n = 50
    ds = Dataset(y=np.arange(n, dtype=float), d=np.arange(n, dtype=float) % 2,
                 x=np.ones((n, 1)), z=np.full((n, 1), 3.0))
    rep = validate(ds, ModelSpec(tau=0.5))
    assert rep.corr_zd[0, 0] == 0.0
    assert rep.constant_z_columns == ("z1",)


def test_estimate_result_covariance_checks():
    with pytest.raises(ConfigurationError):
        EstimateResult(tau=0.5, alpha=[1.0], beta=[0.0], method="iqr", objective=0.0,
                       covariance=np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ConfigurationError):
        EstimateResult(tau=0.5, alpha=[1.0], beta=[0.0], method="iqr", objective=0.0,
                       covariance=np.array([[1.0, 0.0], [0.0, -1.0]]))
    r = EstimateResult(tau=0.5, alpha=[1.0], beta=[0.0], method="iqr", objective=0.0,
                       covariance=np.eye(2))
    np.testing.assert_array_equal(r.theta, [1.0, 0.0])


def test_csv_round_trip(tmp_path):
    ds = small_ds(n=12, seed=3)
    path = tmp_path / "ds.csv"
    write_dataset(ds, path, header_lines=["seed: 3"])
    back = load_dataset(path, {"y": "y", "d": ["d1"], "x": ["x1"], "z": ["z1"]})
    np.testing.assert_array_equal(back.y, ds.y)  # repr round-trip is exact
    np.testing.assert_array_equal(back.d, ds.d)
    np.testing.assert_array_equal(back.z, ds.z)


def test_load_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y,d,x,z\n1.0,0,1,0\n2.0,oops,1,1\n")
    with pytest.raises(DataParseError) as err:
        load_dataset(p, {"y": "y", "d": ["d"], "x": ["x"], "z": ["z"]})
    assert "line 3" in str(err.value)

    p.write_text("y,d,x,z\n1.0,0,1,0\n")
    with pytest.raises(ConfigurationError):
        load_dataset(p, {"y": "y", "d": ["d"], "x": ["missing"], "z": ["z"]})

    p.write_text("y,d,d,z\n1.0,0,1,0\n")
    with pytest.raises(ConfigurationError):
        load_dataset(p, {"y": "y", "d": ["d"], "x": ["d"], "z": ["z"]})

    p.write_text("y,d,x,z\n1.0,0,,0\n")
    with pytest.raises(DataParseError):
        load_dataset(p, {"y": "y", "d": ["d"], "x": ["x"], "z": ["z"]})
