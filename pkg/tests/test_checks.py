import json

import numpy as np
import pytest

from ergocert import build_model, catalog
from ergocert.checks import (BANNER, Status, check_all, check_ellipticity, check_growth,
                             check_local_bound, check_onesided, replay_margin)

EX1 = catalog("polynomial_drift", {"K": 1, "kappa": 2})
EX3 = catalog("langevin_tempered", {"alpha": 0.2, "beta": 0.3, "c": 1})


@pytest.mark.parametrize("m", [EX1, catalog("oscillating_drift", {"rho": 0.5}), EX3,
                               catalog("polynomial_drift", {"d": 2})])
def test_catalog_not_falsified_a1_a3_a5(m):
    reps = {r.assumption: r for r in check_all(m, N=1024)}
    for a in ("A1", "A2", "A3", "A5"):
        assert reps[a].status is Status.NOT_FALSIFIED, a
        assert reps[a].banner == BANNER


def test_tempered_degenerate_at_centre():
    # sigma vanishes at x = 0; the catalog only uses the formula outside the r0-ball
    rep = check_ellipticity(EX3, "A4", N=512)
    assert rep.violated
    assert abs(rep.witness["x"][0]) <= 1e-3
    a5 = check_ellipticity(EX3, "A5", N=512, rmax=8.0)
    assert not a5.violated
    # delta-hat on |x| >= r0 follows r^(2 beta / alpha) = r^3
    for lo, hi, v in a5.constants["min_eig_profile"]:
        assert v >= lo ** 3 * (1 - 1e-9)


def test_local_bound():
    rep = check_local_bound(build_model("inv", 1, 1, ["1/x1"], [["1"]]), 1.0, N=256)
    assert rep.violated and replay_margin(build_model("inv", 1, 1, ["1/x1"], [["1"]]), rep) > 0
    const = build_model("c", 2, 1, ["0", "0"], [["3"], ["4"]])
    rep = check_local_bound(const, 5.0, N=256)
    assert not rep.violated and rep.constants["sup"] == pytest.approx(5.0)


def test_growth():
    cub = build_model("cub", 1, 1, ["x1*abs(x)^2"], [["1"]])
    rep = check_growth(cub, 64.0, N=1024)
    assert rep.violated and rep.constants["max_ray_slope"] > 0.5
    assert replay_margin(cub, rep) == pytest.approx(rep.witness["margin"], abs=1e-12)
    for d in (1, 2, 3):
        bm = build_model("bm", d, d, ["0"] * d, [["1" if i == j else "0" for j in range(d)] for i in range(d)])
        rep = check_growth(bm, 64.0, N=1024)
        assert not rep.violated and rep.constants["gamma_hat_R"] == pytest.approx(d)
    rep = check_growth(EX1, 64.0, N=1024)
    assert not rep.violated and rep.constants["gamma_hat_R"] <= 1.0 + 1e-12


def test_onesided():
    step = build_model("step", 1, 1, ["x1/abs(x1)"], [["1"]])
    rep = check_onesided(step, 2.0, N_pairs=512)
    assert rep.violated
    assert replay_margin(step, rep) == pytest.approx(rep.witness["margin"], abs=1e-12)
    lin = build_model("lin", 1, 1, ["-x1"], [["1"]])
    rep = check_onesided(lin, 2.0, N_pairs=512)
    assert not rep.violated and rep.constants["gamma_r"] == pytest.approx(-2.0)
    rep = check_onesided(EX1, 2.0, N_pairs=512)
    assert not rep.violated and np.isfinite(rep.constants["gamma_r"])


def test_ellipticity_identity_and_degenerate():
    eye = build_model("bm", 2, 2, ["0", "0"], [["1", "0"], ["0", "1"]])
    for region in ("A4", "A5"):
        rep = check_ellipticity(eye, region, N=512)
        assert not rep.violated and rep.constants["delta_hat"] == pytest.approx(1.0)
    for x0 in ((0.0, 0.0), (0.3, 0.0)):
        deg = build_model("deg", 2, 2, ["0", "0"], [["x1", "0"], ["0", "1"]], x0=x0)
        rep = check_ellipticity(deg, "A4", N=512)
        assert rep.violated and abs(rep.witness["x"][0]) <= 1e-6
        assert replay_margin(deg, rep) == pytest.approx(rep.witness["margin"], abs=1e-12)


def test_holder_fit_lipschitz():
    rep = check_ellipticity(EX1, "A4", N=1024)
    assert rep.constants["alpha_hat"] == pytest.approx(1.0, abs=0.02)


def test_report_json_and_determinism():
    a = check_onesided(EX1, 2.0, N_pairs=256, seed=4)
    b = check_onesided(EX1, 2.0, N_pairs=256, seed=4)
    assert a.to_json() == b.to_json()
    doc = json.loads(a.to_json())
    assert doc["status"] == "NOT_FALSIFIED" and doc["banner"].startswith("falsification only")


def test_bad_region():
    with pytest.raises(ValueError):
        check_ellipticity(EX1, "A6")
