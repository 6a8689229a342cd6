import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erperc.urn import (
    UrnConfig,
    UrnTrace,
    first_exhaustion_step,
    martingale_transform,
    scale_trace,
    simulate_urns,
    urn_run,
)


def test_config():
    with pytest.raises(ValueError):
        UrnConfig(0, 0.5)
    with pytest.raises(ValueError):
        UrnConfig(5, 0.0)
    with pytest.raises(ValueError):
        UrnConfig(5, 1.2)
    cfg = UrnConfig.from_c(100, 1.6)
    assert cfg.c == pytest.approx(1.6) and cfg.q == pytest.approx(0.984)


def test_all_balls_move():
    trace = urn_run(UrnConfig(5, 1.0))
    assert trace.u.tolist() == [5, 0]
    assert trace.moved.tolist() == [5]
    assert trace.k_end == 1


def test_single_ball_geometric():
    batch = simulate_urns(1, 0.5, 3, np.arange(100_000))
    assert abs(batch.k_end.mean() - 2.0) < 0.04


def test_mean_law():
    n, p, runs = 100, 0.016, 10_000
    batch = simulate_urns(n, p, 1, np.arange(runs))
    k = np.arange(201)
    mean = batch.sum_u[:201] / runs
    var = (batch.sum_u2[:201] - batch.sum_u[:201].astype(float) ** 2 / runs) / (runs - 1)
    target = n * 0.984**k
    se = np.sqrt(var / runs)
    assert np.all(np.abs(mean - target) <= 4 * np.maximum(se, 1e-12))


def test_csv_layouts():
    trace = urn_run(UrnConfig(6, 0.3, seed=2))
    text = trace.to_csv()
    assert text.startswith("k,u,moved\n0,6,0\n")
    rows = [line.split(",") for line in text.strip().split("\n")[1:]]
    for prev, row in zip(rows, rows[1:]):
        assert int(prev[1]) - int(row[2]) == int(row[1])
    cfg = UrnConfig(6, 0.3, seed=2)
    assert scale_trace(trace, cfg).to_csv().startswith("alpha,s\n0.0,1.0\n")
    assert martingale_transform(trace, cfg).to_csv().startswith("k,t\n0,0.0\n")


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 200), p=st.floats(0.005, 1.0), seed=st.integers(0, 2**64 - 1), sid=st.integers(0, 2**20))
def test_trace_invariants(n, p, seed, sid):
    cfg = UrnConfig(n, p, seed, sid)
    trace = urn_run(cfg)
    u = trace.u
    assert u[0] == n and u[-1] == 0
    assert np.array_equal(u[1:], u[:-1] - trace.moved)
    assert np.all(trace.moved >= 0)
    scaled = scale_trace(trace, cfg)
    assert scaled.s[0] == 1.0
    assert np.all((scaled.s >= 0) & (scaled.s <= 1))
    assert np.all(np.diff(scaled.s) <= 0)
    if cfg.q > 0:
        assert martingale_transform(trace, cfg).t[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 80), p=st.floats(0.01, 1.0), seed=st.integers(0, 2**32), ids=st.lists(st.integers(0, 500), min_size=1, max_size=6))
def test_batch_matches_single_runs(n, p, seed, ids):
    batch = simulate_urns(n, p, seed, ids, keep_traces=True)
    for i, sid in enumerate(ids):
        single = urn_run(UrnConfig(n, p, seed, sid))
        assert np.array_equal(batch.trace(i).u, single.u)
        assert batch.first_exhaustion[i] == first_exhaustion_step(single)


def test_scale_trace_example():
    cfg = UrnConfig(4, 0.5)
    scaled = scale_trace(UrnTrace([4, 0], [4]), cfg)
    assert scaled.alpha.tolist() == [0.0, 0.25]
    assert scaled.s.tolist() == [1.0, 0.0]
    assert scaled.at(0.1) == 1.0
    assert scaled.at(0.25) == 0.0
    assert scaled.at(3.0) == 0.0
    with pytest.raises(ValueError):
        scaled.at(-0.1)


def test_scaled_mean_bound():
    n, runs = 100, 10_000
    p = 1.6 / n
    q = 1 - p
    batch = simulate_urns(n, p, 9, np.arange(runs))
    k = np.arange(len(batch.sum_u))
    mean_s = batch.sum_u / runs / n
    bound = 4 * np.sqrt(p * q * q**k / runs)
    assert np.all(np.abs(mean_s - q**k) <= bound)


def test_martingale_rejects_q_zero():
    cfg = UrnConfig(5, 1.0)
    with pytest.raises(ValueError):
        martingale_transform(urn_run(cfg), cfg)


def test_martingale_formula():
    cfg = UrnConfig(50, 0.05, seed=4)
    trace = urn_run(cfg)
    t = martingale_transform(trace, cfg).t
    k = np.arange(len(trace.u))
    live = trace.u > 0
    expected = trace.u / (math.sqrt(50) * 0.95**k) - math.sqrt(50)
    assert np.allclose(t[live], expected[live], rtol=1e-12, atol=1e-12)


def test_martingale_moments():
    n, runs = 100, 10_000
    p = 1.6 / n
    batch = simulate_urns(n, p, 2, np.arange(runs), horizon=n, keep_traces=True)
    u = batch.u_matrix[:, : n + 1].astype(float)
    k = np.arange(n + 1)
    t = u / (math.sqrt(n) * (1 - p) ** k) - math.sqrt(n)
    assert np.all(t[:, 0] == 0.0)
    var = t.var(axis=0, ddof=1)
    assert abs(var[n] / math.expm1(1.6) - 1) < 0.10
    assert np.all(np.abs(t.mean(axis=0)) <= 4 * np.sqrt(var / runs) + 1e-12)


def test_martingale_increments_uncorrelated_with_state():
    n, runs = 100, 10_000
    p = 1.6 / n
    batch = simulate_urns(n, p, 3, np.arange(runs), horizon=n, keep_traces=True)
    u = batch.u_matrix.astype(float)
    k = np.arange(u.shape[1])
    t = u / (math.sqrt(n) * (1 - p) ** k) - math.sqrt(n)
    for step in (1, 20, 50, 90):
        x, dy = u[:, step], t[:, step + 1] - t[:, step]
        fit = np.polyfit(x - x.mean(), dy, 1, cov=True)
        (slope, intercept), cov = fit
        assert abs(slope) <= 4 * math.sqrt(cov[0, 0])
        assert abs(intercept) <= 4 * math.sqrt(cov[1, 1])


def test_first_exhaustion_semantics():
    # fewer than k balls in urn 2 at step k
    assert first_exhaustion_step(UrnTrace([3, 3, 2, 0], [0, 1, 2])) == 1
    assert first_exhaustion_step(UrnTrace([3, 1, 0], [2, 1])) == 3 + 1
    assert first_exhaustion_step(UrnTrace([3, 2, 1, 1, 0], [1, 1, 0, 1])) == 3


def test_horizon_marks_unknown():
    batch = simulate_urns(500, 0.004, 1, np.arange(20), horizon=3)
    assert np.all(batch.k_end == -1)
    assert len(batch.sum_u) == 4
