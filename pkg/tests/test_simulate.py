import math

import numpy as np
import pytest

from ergocert import build_model, catalog
from ergocert.simulate import (FitRefused, SimConfig, SubordinatorSpec, em_ensemble, fit_exponential_xy,
                               hitting_mc, noise_floor, ou_tv_exact, split_half_tv, subordinate_tv,
                               subordinator_paths, tv_details, tv_estimate, uniform_tv_curve)

EX1 = catalog("polynomial_drift", {"K": 1, "kappa": 2})
OU = build_model("ou", 1, 1, ["-x1"], [["sqrt(2)"]])
BM = build_model("bm", 1, 1, ["0"], [["1"]])


def test_simconfig_validation():
    assert SimConfig(T=2.0).checkpoints == (2.0,)
    for kw in ({"dt": 0.0}, {"checkpoints": (1.0, 0.5)}, {"checkpoints": (0.0, 1.0)},
               {"T": 1.0, "checkpoints": (2.0,)}, {"dt": 0.5, "checkpoints": (0.1, 1.0)},
               {"n_paths": 1}, {"scheme": "milstein"}):
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_brownian_endpoint_moments():
    n = 100_000
    ens = em_ensemble(BM, [0.0], SimConfig(dt=1e-2, T=1.0, n_paths=n, seed=1))
    mo = ens.moments()[0]
    assert abs(mo["mean"][0]) <= 3 / math.sqrt(n)
    assert abs(mo["var"][0] - 1.0) <= 3 * math.sqrt(2 / n)
    assert ens.valid and ens.n_dropped == 0


def test_ou_stationary_variance_and_dt_refinement():
    n = 40_000
    vs = []
    for dt in (4e-3, 2e-3):
        ens = em_ensemble(OU, [0.0], SimConfig(dt=dt, T=5.0, n_paths=n, seed=2))
        vs.append(ens.moments()[0]["var"][0])
    width = 2 * 1.96 * math.sqrt(2 / n)
    assert abs(vs[1] - 1.0) <= width
    assert abs(vs[0] - vs[1]) <= width


def test_polynomial_forgets_start():
    cfg = SimConfig(dt=5e-3, T=5.0, n_paths=50_000, seed=3)
    a = em_ensemble(EX1, [3.0], cfg, stream=1).samples[0]
    b = em_ensemble(EX1, [-3.0], cfg, stream=2).samples[0]
    assert tv_estimate(a, b) <= 0.05


def test_tv_estimator_examples():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(5000)
    assert tv_estimate(a, a) == 0.0
    assert tv_estimate(rng.normal(0, 0.1, 5000), rng.normal(100, 0.1, 5000)) >= 0.99
    assert tv_estimate(rng.standard_normal(100_000), rng.standard_normal(100_000), bins=64) <= 0.03


def test_tv_estimator_errors_and_projection():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        tv_estimate(rng.normal(size=(2000, 2)), rng.normal(size=(2000, 3)))
    with pytest.raises(ValueError):
        tv_estimate(np.empty(0), rng.normal(size=2000))
    with pytest.raises(ValueError):
        tv_estimate(rng.normal(size=100), rng.normal(size=100))
    v, meta = tv_details(rng.normal(size=(5000, 4)), rng.normal(size=(5000, 4)) + 3.0)
    assert meta["estimator"] == "projection-max" and meta["lower_bound"] and v > 0.9


def test_noise_floor_interpolates():
    assert noise_floor(10_000) == pytest.approx(0.0462)
    assert noise_floor(20_000) < noise_floor(10_000)
    assert noise_floor(400_000) < noise_floor(200_000)


def test_fit_exponential_synthetic():
    t = np.array([0.5, 1.0, 2.0, 4.0])
    fit = fit_exponential_xy(t, np.exp(-2 * t))
    assert fit.beta_hat == pytest.approx(2.0, abs=1e-6) and fit.B_hat == pytest.approx(1.0)
    flat = fit_exponential_xy(t, np.full(4, 0.5))
    assert flat.flat and abs(flat.beta_hat) < 1e-9
    with pytest.raises(FitRefused):
        fit_exponential_xy(t, np.array([0.5, 0.4, 0.01, 0.01]), floor=0.05)


def test_ou_exact_tv_oracle():
    assert ou_tv_exact(0.0, 0.0, 1.0) == 0.0
    assert ou_tv_exact(100.0, 0.0, 1.0) > 0.999
    assert ou_tv_exact(1.0, 0.0, 1.0) < 0.3


def test_ou_start_dependence():
    cfg = SimConfig(dt=1e-2, T=1.0, n_paths=20_000, seed=5)
    starts = [[1.0], [-1.0], [10.0], [-10.0], [100.0], [-100.0]]
    curve = uniform_tv_curve(OU, starts, [0.0], cfg)
    tv = curve.tv[:, 0]
    assert tv[4] >= 0.9 and tv[5] >= 0.9
    assert tv[0] <= 0.3 and tv[1] <= 0.3
    for i, x in enumerate(starts):
        assert abs(tv[i] - ou_tv_exact(x[0], 0.0, 1.0)) <= 0.05


def test_tv_curve_invariants_and_trivial_grid():
    cfg = SimConfig(dt=1e-2, T=2.0, checkpoints=(0.5, 1.0, 2.0), n_paths=20_000, seed=6)
    same = uniform_tv_curve(EX1, [[0.0]], [0.0], cfg)
    assert np.all(same.sup_tv <= same.meta["noise_floor"])
    curve = uniform_tv_curve(EX1, [[1.0], [-2.0]], [0.0], cfg)
    assert np.all((curve.tv >= 0) & (curve.tv <= 1))
    assert np.all(curve.sup_tv >= curve.tv.max(axis=0))
    lines = curve.to_csv().splitlines()
    assert lines[0] == "t,start_index,x1,tv" and len(lines) == 1 + 2 * 3
    assert curve.meta["sup_is_grid_proxy"]


def test_reproducibility_bit_identical():
    cfg = SimConfig(dt=1e-2, T=1.0, checkpoints=(0.5, 1.0), n_paths=5000, seed=11)
    a = uniform_tv_curve(EX1, [[1.0], [3.0]], [0.0], cfg)
    b = uniform_tv_curve(EX1, [[1.0], [3.0]], [0.0], cfg)
    assert a.to_csv() == b.to_csv() and a.sup_csv() == b.sup_csv() and a.fit_json() == b.fit_json()
    e1 = em_ensemble(EX1, [2.0], cfg)
    e2 = em_ensemble(EX1, [2.0], cfg)
    assert np.array_equal(e1.samples, e2.samples)


def test_split_half_below_twice_floor():
    cfg = SimConfig(dt=1e-2, T=2.0, n_paths=20_000, seed=7)
    for m in (EX1, catalog("oscillating_drift", {"rho": 1.5, "kappa": 3}),
              catalog("langevin_tempered", {"alpha": 0.2, "beta": 0.3})):
        s = em_ensemble(m, m.center + m.r0, cfg).samples[0]
        assert split_half_tv(s) <= 2 * noise_floor(len(s) // 2)


def test_overflow_guard_drops_paths():
    m = build_model("blow", 1, 1, ["x1^3"], [["1"]])
    ens = em_ensemble(m, [5.0], SimConfig(dt=0.1, T=1.0, n_paths=100, seed=0))
    assert ens.n_dropped == 100 and not ens.valid


def test_hitting():
    est = hitting_mc(EX1, [3.0], T=10.0, cfg=SimConfig(dt=1e-2, T=10.0, n_paths=2000, seed=0))
    assert est.p >= 0.99 and est.ci_low <= est.p <= est.ci_high
    with pytest.raises(ValueError):
        hitting_mc(EX1, [0.5])


def test_subordinators():
    cfg = SimConfig(dt=1e-2, T=2.0, checkpoints=(0.5, 1.0, 2.0), n_paths=100_000, seed=0)
    cp = subordinator_paths(SubordinatorSpec("compound_poisson", rate=1.0, jump_mean=1.0), cfg)
    se = np.sqrt(2 * np.array(cfg.checkpoints) / cfg.n_paths)  # Var S(t) = 2 t
    assert np.all(np.abs(cp.mean(axis=0) - cfg.checkpoints) <= 4 * se)
    st = subordinator_paths(SubordinatorSpec("stable", alpha=0.5), cfg)
    for S in (cp, st):
        assert np.all(np.diff(np.concatenate([np.zeros((len(S), 1)), S], axis=1), axis=1) >= 0)
    w = np.exp(-st[:, 1])
    assert abs(w.mean() - math.exp(-1)) <= 3 * w.std(ddof=1) / math.sqrt(len(w))
    dr = subordinator_paths(SubordinatorSpec("drift", drift=1.0), cfg)
    np.testing.assert_array_equal(dr[0], cfg.checkpoints)
    with pytest.raises(ValueError):
        SubordinatorSpec("stable", alpha=1.5)


def test_subordination_laplace_identity():
    cfg = SimConfig(dt=1e-2, T=2.0, checkpoints=(0.5, 1.0, 2.0), n_paths=100_000, seed=4)
    for s in (SubordinatorSpec("stable", alpha=0.5), SubordinatorSpec("compound_poisson", rate=2.0),
              SubordinatorSpec("drift_compound", drift=0.5, rate=1.0, jump_mean=0.5)):
        S = subordinator_paths(s, cfg)
        for beta in (0.5, 2.0):
            w = np.exp(-beta * S)
            want = np.exp(-np.array(cfg.checkpoints) * s.laplace_exponent(beta))
            assert np.all(np.abs(w.mean(axis=0) - want) <= 3 * w.std(axis=0, ddof=1) / math.sqrt(len(S)) + 1e-12)


def test_identity_time_change_matches_uniform_curve():
    cfg = SimConfig(dt=1e-2, T=1.0, checkpoints=(0.25, 0.5, 1.0), n_paths=20_000, seed=8)
    starts = [[2.0], [-3.0]]
    base = uniform_tv_curve(EX1, starts, [0.0], cfg)
    sub = subordinate_tv(EX1, SubordinatorSpec("drift", drift=1.0), starts, [0.0], cfg)
    assert np.all(np.abs(base.tv - sub.tv) <= 2 * base.meta["noise_floor"])
    assert sub.meta["subordinator"]["kind"] == "drift"


def test_compound_poisson_subordination_no_increase():
    cfg = SimConfig(dt=1e-2, T=4.0, checkpoints=(0.5, 1.0, 2.0, 4.0), n_paths=20_000, seed=9)
    curve = subordinate_tv(EX1, SubordinatorSpec("compound_poisson", rate=1.0), [[3.0], [-3.0]], [0.0], cfg)
    assert np.all(curve.sup_tv <= curve.sup_tv[0] + 2 * curve.meta["noise_floor"])
