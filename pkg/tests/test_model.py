import json
import warnings

import numpy as np
import pytest

from ergocert import ParameterRangeWarning, build_model, catalog, load_model
from ergocert.model import eval_diffusion, eval_drift, eval_masked


def test_polynomial_drift_and_diffusion():
    m = catalog("polynomial_drift", {"K": 1, "kappa": 2, "d": 1})
    assert eval_drift(m, [2.0])[0] == pytest.approx(-4.0)
    assert m.r0 == 1.0 and m.x0 == (0.0,)
    np.testing.assert_array_equal(eval_drift(m, [0.0]), [0.0])
    m2 = catalog("polynomial_drift", {"d": 2})
    np.testing.assert_array_equal(eval_diffusion(m2, [0.3, -7.0]), np.eye(2))


def test_tempered_coefficients():
    m = catalog("langevin_tempered", {"alpha": 0.2, "beta": 0.3, "c": 1})
    assert eval_drift(m, [2.0])[0] == pytest.approx(-4.0, rel=1e-14)
    assert eval_diffusion(m, [2.0])[0, 0] == pytest.approx(2 ** 1.5, rel=1e-14)
    assert m.r0 == 2.0


def test_oscillating_global_formula():
    m = catalog("oscillating_drift", {"K": 1, "kappa": 2, "rho": 0.5})
    for x in (-3.0, -0.4, 0.0, 0.7, 5.0):
        want = -x * abs(x) * (np.cos(x) + 0.5)
        assert eval_drift(m, [x])[0] == pytest.approx(want, rel=1e-14, abs=1e-300)


def test_catalog_matches_closed_form_at_samples():
    rng = np.random.default_rng(3)
    X = rng.normal(scale=4.0, size=(200, 2))
    m = catalog("polynomial_drift", {"K": 1.7, "kappa": 2.5, "d": 2})
    r = np.linalg.norm(X, axis=1)
    np.testing.assert_allclose(m.drift_at(X), -1.7 * X * r[:, None] ** 1.5, rtol=1e-14)
    m3 = catalog("langevin_tempered", {"alpha": 0.2, "beta": 0.3, "c": 1.3, "d": 2})
    Xo = X[r > 0.5]
    ro = np.linalg.norm(Xo, axis=1)
    want = -((1 - 0.6) / 0.4) * 1.3 ** -0.6 * Xo * ro[:, None] ** (3.0 - 2)
    np.testing.assert_allclose(m3.drift_at(Xo), want, rtol=1e-14)


def test_zero_diffusion_matrix():
    m = build_model("z", 2, 3, ["0", "0"], [["0"] * 3] * 2)
    np.testing.assert_array_equal(eval_diffusion(m, [1.0, 2.0]), np.zeros((2, 3)))


def test_out_of_range_parameters_warn_but_build():
    with pytest.warns(ParameterRangeWarning):
        m = catalog("polynomial_drift", {"kappa": 1})
    assert m.params["kappa"] == 1.0


def test_unknown_catalog_name():
    with pytest.raises(ValueError):
        catalog("nope")


def test_validation_errors():
    with pytest.raises(ValueError):
        build_model("bad", 2, 1, ["0"], [["1"], ["1"]])
    with pytest.raises(ValueError):
        build_model("bad", 1, 1, ["0"], [["1"]], r0=0.0)
    with pytest.raises(ValueError):
        build_model("bad", 1, 1, ["K"], [["1"]], params={"K": float("inf")})


def test_model_file_round_trip(tmp_path):
    doc = {"name": "ou", "d": 1, "n": 1, "x0": [0.0], "r0": 1.0, "params": {"th": 2.0},
           "drift": ["-th*x1"], "diffusion": [["sqrt(2)"]]}
    path = tmp_path / "ou.json"
    path.write_text(json.dumps(doc))
    m = load_model(path)
    assert eval_drift(m, [1.5])[0] == pytest.approx(-3.0)
    assert m.checksum() == load_model(path).checksum()
    with pytest.raises(ValueError):
        load_model_doc = dict(doc)
        del load_model_doc["drift"]
        path.write_text(json.dumps(load_model_doc))
        load_model(path)


def test_eval_masked_drops_bad_rows():
    m = build_model("inv", 1, 1, ["1/x1"], [["1"]])
    B, S, ok, bad = eval_masked(m, [[1.0], [0.0], [2.0]])
    assert list(ok) == [True, False, True] and bad == [1]
    assert B[0, 0] == 1.0 and np.isnan(B[1, 0])


def test_catalog_models_emit_no_warning_in_range():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        catalog("polynomial_drift", {"K": 1, "kappa": 2})
        catalog("oscillating_drift", {"rho": 0.5, "kappa": 1.5})
        catalog("langevin_tempered", {"alpha": 0.2, "beta": 0.3})
