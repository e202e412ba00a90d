import io

import numpy as np
import pytest
from scipy import stats

from fairflow import (
    EventCapExceeded,
    EventPath,
    HorizonTooShort,
    NetworkModel,
    allocate,
    fluid_limit_experiment,
    rescale,
    simulate,
    transition_rates,
)


def mm1():
    return NetworkModel.from_arrays([[1]], [1.0], [0.5], [1.0])


def test_rates_at_origin(linear):
    rates = transition_rates(linear, [0, 0, 0])
    assert all(t.kind == "arrival" for t in rates)
    assert sum(t.rate for t in rates) == pytest.approx(1.5)


def test_rates_single_link():
    rates = transition_rates(mm1(), [4])
    assert [(t.kind, t.route) for t in rates] == [("arrival", 0), ("departure", 0)]
    assert rates[0].rate == 0.5
    assert rates[1].rate == pytest.approx(1.0, abs=1e-12)


def test_rates_linear(linear):
    rates = transition_rates(linear, [1, 1, 1])
    dep = [t.rate for t in rates if t.kind == "departure"]
    np.testing.assert_allclose(dep, [2 / 3, 2 / 3, 1 / 3], atol=1e-9)
    np.testing.assert_allclose([t.rate for t in rates if t.kind == "arrival"], 0.5)


def test_rates_need_integer_state(linear):
    with pytest.raises(ValueError):
        transition_rates(linear, [0.5, 1, 1])


@pytest.mark.parametrize("method", ["direct", "time_change"])
def test_no_arrivals_from_empty(linear, method):
    path = simulate(linear, [0, 0, 0], 100.0, 1, method=method, arrival_rates=[0, 0, 0])
    assert path.n_events == 0
    assert np.all(path.N == 0)
    np.testing.assert_allclose(path.U[-1], [100.0, 100.0])


@pytest.mark.parametrize("method", ["direct", "time_change"])
def test_path_invariants(linear, method):
    path = simulate(linear, [3, 0, 2], 200.0, 7, method=method)
    assert path.n_events > 100
    assert np.all(path.N >= 0)
    assert path.identity_holds()
    arr, dep = path.counts()
    assert np.all(dep <= arr + path.N[0])
    assert np.all(np.diff(path.U, axis=0) >= 0) and np.all(path.U >= 0)
    assert np.all(np.diff(path.T, axis=0) >= 0)
    assert np.all(np.diff(path.t) > 0)
    np.testing.assert_allclose(path.U, path.t[:, None] * linear.C - path.T @ linear.A.T, atol=1e-9)
    # T grows at rate Lambda(N) between jumps
    for k in range(0, path.t.size - 1, 37):
        lam = allocate(linear, path.N[k]).lam
        np.testing.assert_allclose(path.T[k + 1] - path.T[k], lam * (path.t[k + 1] - path.t[k]), atol=1e-8)
    assert path.event[0] == 0 and path.event[-1] == 3 and path.t[-1] == 200.0
    jumps = np.abs(np.diff(path.N, axis=0)).sum(axis=1)
    assert np.all(jumps[:-1] == 1) and jumps[-1] == 0


@pytest.mark.parametrize("method", ["direct", "time_change"])
def test_determinism(linear, method):
    a = simulate(linear, [1, 1, 1], 500.0, 42, method=method)
    b = simulate(linear, [1, 1, 1], 500.0, 42, method=method)
    c = simulate(linear, [1, 1, 1], 500.0, 43, method=method)
    for name in ("t", "N", "event", "route", "T", "U"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.t[: min(a.t.size, c.t.size)], c.t[: min(a.t.size, c.t.size)])


def test_event_cap(linear):
    with pytest.raises(EventCapExceeded):
        simulate(linear, [1, 1, 1], 1e6, 0, max_events=100)


def test_bad_inputs(linear):
    with pytest.raises(ValueError):
        simulate(linear, [1, 1, 1], 10, -1)
    with pytest.raises(ValueError):
        simulate(linear, [1, 1, 1], 10, 0, method="tau-leap")
    with pytest.raises(ValueError):
        simulate(linear, [1.5, 1, 1], 10, 0)


def _spaced_samples(path, spacing):
    times = np.arange(spacing, path.horizon, spacing)
    return path.state_at(times)[:, 0]


def test_mm1_geometric_chi_square():
    path = simulate(mm1(), [0], 1.2e6, 2024)
    assert path.n_events >= 1_000_000
    x = _spaced_samples(path, 100.0)
    k = np.arange(8)
    expected = np.append(0.5 ** (k + 1), 0.5**8) * x.size
    observed = np.append([np.sum(x == v) for v in k], np.sum(x >= 8))
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_mm1_mean_time_change():
    path = simulate(mm1(), [0], 2e5, 5, method="time_change")
    mean = np.sum(path.N[:-1, 0] * np.diff(path.t)) / path.horizon
    assert mean == pytest.approx(1.0, abs=0.1)


def test_csv_layout(linear):
    path = simulate(linear, [1, 0, 1], 5.0, 3)
    buf = io.StringIO()
    path.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,event,i,N_1,N_2,N_3,U_1,U_2"
    assert lines[1].startswith("0.0,init,,1,0,1,")
    assert lines[-1].split(",")[1] == "end"
    assert len(lines) == path.t.size + 1


def _constant_path(c, horizon=10.0):
    return EventPath(
        t=np.array([0.0, horizon]), N=np.array([[c], [c]]), event=np.array([0, 3], np.int8),
        route=np.array([-1, -1]), T=np.zeros((2, 1)), U=np.zeros((2, 1)),
        horizon=horizon, seed=0, method="direct",
    )


def test_rescale_identity(linear):
    path = simulate(linear, [2, 1, 0], 50.0, 9)
    grid = np.linspace(0, 50, 11)
    scaled = rescale(path, 1.0, grid)
    np.testing.assert_array_equal(scaled.N, path.state_at(grid))
    np.testing.assert_allclose(scaled.U[-1], path.U[-1])


def test_rescale_constant_and_zero():
    scaled = rescale(_constant_path(6), 4.0, [0, 1, 2.5])
    np.testing.assert_allclose(scaled.N, 1.5)
    np.testing.assert_array_equal(scaled.U, 0)


def test_rescale_uses_left_limits(linear):
    path = simulate(linear, [2, 1, 0], 50.0, 9)
    tj = path.t[1]
    before = rescale(path, 1.0, [tj]).N[0]
    np.testing.assert_array_equal(before, path.N[0])


def test_rescale_horizon_too_short():
    with pytest.raises(HorizonTooShort):
        rescale(_constant_path(1, 10.0), 5.0, [0, 1, 3])


def test_fluid_limit_trivial_scale():
    n0 = np.array([0.3, 0.7, 1.2])
    from fairflow import linear_network

    report = fluid_limit_experiment(linear_network(), n0, [1], [0], 0.0, grid=[0.0])
    assert report.errors[0, 0] == pytest.approx(np.linalg.norm(np.round(n0) - n0))


def test_fluid_limit_on_manifold(linear):
    report = fluid_limit_experiment(linear, [2 / 3, 2 / 3, 4 / 3], [500], range(20), 1.0)
    assert np.all(report.errors < 0.15)


def test_fluid_limit_report_csv_and_jobs(linear):
    rep1 = fluid_limit_experiment(linear, [1, 1, 1], [10, 40], [0, 1], 2.0)
    rep2 = fluid_limit_experiment(linear, [1, 1, 1], [10, 40], [0, 1], 2.0, n_jobs=2)
    np.testing.assert_array_equal(rep1.errors, rep2.errors)
    buf = io.StringIO()
    rep1.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "r,seed,sup_error,max_err_1,max_err_2,max_err_3"
    assert len(lines) == 1 + 2 * 3
    assert lines[3].split(",")[1] == "median"
