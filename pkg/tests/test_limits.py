import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from erperc.kernel import RngStream
from erperc.limits import (
    HittingLaw,
    LimitParams,
    giant_exhaustion_law,
    hitting_cdf,
    hitting_density,
    hitting_law,
    limit_variance,
    ode_limit,
    reflected_hitting_cdf,
    reflected_hitting_density,
    sample_wlimit_path,
    solve_threshold,
)

mpmath.mp.dps = 40


def bisection_root(c, tol=1e-15):
    """Independent oracle: plain bisection on exp(-c a) - (1 - a) in mpmath precision."""
    lo, hi = mpmath.mpf("1e-9"), mpmath.mpf(1)
    f = lambda a: mpmath.exp(-c * a) - (1 - a)  # noqa: E731
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def test_params_validation():
    with pytest.raises(ValueError):
        LimitParams(0, 1.0)
    with pytest.raises(ValueError):
        LimitParams(10, 0.0)
    assert LimitParams(100, 1.6).p == pytest.approx(0.016)


def test_ode_limit_values():
    params = LimitParams(100, 1.6)
    assert ode_limit(0.0, params) == 1.0
    assert ode_limit(1.0, params) == pytest.approx(float(mpmath.exp(-1.6)), abs=1e-15)
    assert ode_limit(1.0, params) == pytest.approx(0.201897, abs=5e-7)
    vals = ode_limit(np.linspace(0, 50, 200), params)
    assert np.all(np.diff(vals) < 0) and vals[-1] < 1e-30
    with pytest.raises(ValueError):
        ode_limit(-0.1, params)


def test_limit_variance_values():
    params = LimitParams(100, 1.6)
    assert limit_variance(0.0, params, "s") == 0.0
    assert limit_variance(0.0, params, "t") == 0.0
    v = float(mpmath.exp(-1.6))
    assert limit_variance(1.0, params, "s") == pytest.approx(v * (1 - v), abs=1e-15)
    assert limit_variance(1.0, params, "s") == pytest.approx(0.161135, abs=1e-6)
    assert limit_variance(1.0, params, "t") == pytest.approx(float(mpmath.expm1(1.6)), rel=1e-14)
    grid = np.linspace(0, 3, 30001)
    peak = grid[np.argmax(limit_variance(grid, params, "s"))]
    assert peak == pytest.approx(math.log(2) / 1.6, abs=2e-4)
    with pytest.raises(ValueError):
        limit_variance(1.0, params, "x")


def test_ode_discretisation():
    n, c = 10_000, 1.6
    params = LimitParams(n, c)
    alpha = np.arange(0, 2 * n) / n
    v = ode_limit(alpha, params)
    resid = np.diff(v) + (c / n) * v[:-1]
    assert np.max(np.abs(resid)) <= c**2 / n**2


@pytest.mark.parametrize("n", [100, 1000])
def test_geometric_vs_exponential_bound(n):
    c = 1.6
    k = np.arange(n + 1)
    gap = np.abs((1 - c / n) ** k - np.exp(-c * k / n))
    assert np.max(gap) <= c**2 * math.e / n


def test_wlimit_trivial_grid():
    path = sample_wlimit_path(LimitParams(100, 1.6), [0.0], RngStream())
    assert path.tolist() == [1.0]


def test_wlimit_rejects_bad_grid():
    params = LimitParams(100, 1.6)
    with pytest.raises(ValueError):
        sample_wlimit_path(params, [0.0, 0.5, 0.4], RngStream())
    with pytest.raises(ValueError):
        sample_wlimit_path(params, [0.1, 0.5], RngStream())


def test_wlimit_marginals():
    n, c = 100, 1.6
    params = LimitParams(n, c)
    peak = math.log(2) / c
    grid = np.array([0.0, 0.2, peak, 1.0, 2.5])
    paths = sample_wlimit_path(params, grid, RngStream(77), size=100_000)
    assert np.all(paths[:, 0] == 1.0)
    assert paths[:, 2].var(ddof=1) == pytest.approx(0.25 / n, rel=0.05)
    v = ode_limit(grid, params)
    h = v * (1 - v)
    assert np.all(np.abs(paths.mean(axis=0) - v) <= 4 * np.sqrt(h / (n * 1e5)) + 1e-15)
    assert np.allclose(paths.var(axis=0, ddof=1)[1:], h[1:] / n, rtol=0.05)


def test_wlimit_reuses_brownian_motion_on_falling_branch():
    # alpha and its mirror around the peak share the same variance, hence the same B value
    c = 1.0
    params = LimitParams(100, c)
    a = 0.3
    v_a = math.exp(-c * a)
    mirror = -math.log(1 - v_a) / c
    path = sample_wlimit_path(params, np.array([0.0, a, mirror]), RngStream(5))
    b1 = (path[1] - v_a) * 10
    b2 = (path[2] - (1 - v_a)) * 10
    assert b1 == pytest.approx(b2, abs=1e-12)


def test_hitting_law_example():
    params = LimitParams(100, 1.0)
    law = hitting_law(0.5, params)
    assert law.alpha0 == pytest.approx(math.log(2), abs=1e-15)
    assert law.sd == pytest.approx(0.1, abs=1e-15)
    t = np.linspace(law.alpha0 - 0.5, law.alpha0 + 0.5, 100_001)
    assert t[np.argmax(hitting_density(t, law, params))] == pytest.approx(law.alpha0, abs=1e-5)
    peak = hitting_density(law.alpha0, law, params)
    for side in (-1, 1):
        assert hitting_density(law.alpha0 + side * law.sd, law, params) == pytest.approx(math.exp(-0.5) * peak, rel=1e-12)


def test_hitting_law_rejects_level():
    params = LimitParams(100, 1.0)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            hitting_law(bad, params)
        with pytest.raises(ValueError):
            hitting_density(0.5, HittingLaw(bad, 0.5, 0.1), params)


@pytest.mark.parametrize("A", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("c", [1.0, 1.5, 2.0])
@pytest.mark.parametrize("n", [100, 400])
def test_density_is_proper(A, c, n):
    params = LimitParams(n, c)
    law = hitting_law(A, params)
    lo, hi = law.alpha0 - 8 * law.sd, law.alpha0 + 8 * law.sd
    total, _ = integrate.quad(lambda t: hitting_density(t, law, params), lo, hi, epsabs=1e-13, epsrel=1e-13, points=[law.alpha0])
    assert abs(total - 1) <= 1e-6
    t = np.linspace(lo - 1, hi + 1, 1001)
    assert np.all(hitting_density(t, law, params) >= 0)
    assert hitting_cdf(law.alpha0, law, params) == pytest.approx(0.5, abs=1e-15)


def test_density_matches_normal():
    from scipy import stats

    params = LimitParams(250, 1.7)
    law = hitting_law(0.3, params)
    t = np.linspace(0, 1.5, 301)
    ref = stats.norm.pdf(t, law.alpha0, law.sd)
    assert np.allclose(hitting_density(t, law, params), ref, rtol=1e-10, atol=1e-300)


def test_reflected_law_centre():
    params = LimitParams(400, 2.0)
    law = hitting_law(0.2, params)
    centre = math.log(0.2) / 2.0
    assert reflected_hitting_cdf(centre, law, params) == pytest.approx(0.5, abs=1e-15)
    assert reflected_hitting_density(centre, law, params) == pytest.approx(hitting_density(law.alpha0, law, params))


def test_threshold_examples():
    sub = solve_threshold(1.0)
    assert sub.alpha_star == 0.0 and sub.subcritical
    assert solve_threshold(0.5).alpha_star == 0.0
    two = solve_threshold(2.0)
    assert not two.subcritical
    assert abs(two.alpha_star - bisection_root(2)) <= 1e-6
    assert abs(two.alpha_star - 0.796812) <= 1e-6
    assert abs(solve_threshold(1.6).alpha_star - 0.642) <= 1e-3


def test_threshold_rejects():
    with pytest.raises(ValueError):
        solve_threshold(0.0)
    with pytest.raises(ValueError):
        solve_threshold(2.0, tol=0.0)


def test_threshold_residuals_and_order():
    grid = np.round(np.arange(1.1, 5.0001, 0.1), 10)
    roots = []
    for c in grid:
        sol = solve_threshold(float(c))
        assert 0 < sol.alpha_star < 1
        assert abs(math.exp(-c * sol.alpha_star) - (1 - sol.alpha_star)) <= 1e-12
        assert abs(sol.alpha_star - bisection_root(float(c))) <= 1e-12
        roots.append(sol.alpha_star)
    assert np.all(np.diff(roots) > 0)
    assert solve_threshold(10.0).alpha_star > 0.9999


@settings(max_examples=200, deadline=None)
@given(c=st.floats(1.0001, 700.0))
def test_threshold_property(c):
    sol = solve_threshold(c)
    assert 0 < sol.alpha_star < 1
    assert sol.residual <= 1e-12
    assert sol.residual == abs(math.exp(-c * sol.alpha_star) - (1 - sol.alpha_star))


def test_giant_law_example():
    law = giant_exhaustion_law(2.0, 400)
    assert law.alpha0 == solve_threshold(2.0).alpha_star
    assert law.alpha0 == pytest.approx(0.796812, abs=1e-6)
    assert law.level_A == pytest.approx(0.203188, abs=1e-6)
    assert law.level_A == pytest.approx(1 - law.alpha0, abs=1e-12)
    root = mpmath.mpf(bisection_root(2))
    sd_oracle = float(mpmath.sqrt(root / (400 * (1 - root))) / 2)
    assert law.sd == pytest.approx(sd_oracle, rel=1e-9)
    assert law.sd == pytest.approx(0.0495073, abs=1e-7)


def test_giant_law_limits():
    with pytest.raises(ValueError):
        giant_exhaustion_law(1.0, 100)
    near = giant_exhaustion_law(1.001, 400)
    assert near.alpha0 < 0.01 and near.sd > near.alpha0
    assert giant_exhaustion_law(2.0, 1600).sd == pytest.approx(giant_exhaustion_law(2.0, 400).sd / 2, rel=1e-12)


def test_json_records():
    import json

    params = LimitParams(400, 2.0)
    rec = json.loads(giant_exhaustion_law(2.0, 400).to_json(params))
    assert set(rec) == {"c", "n", "A", "alpha0", "sd"}
    rec = json.loads(solve_threshold(1.0).to_json())
    assert rec == {"c": 1.0, "alpha_star": 0.0, "subcritical": True, "residual": 0.0}
