import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsarrivals.core import Horizon, RngStream
from dsarrivals.queueing import (ServiceSpec, StaffingPlan, erlang_c, interval_mean_waits,
                                 interval_volumes, minute_checkpoints, run_infinite_server,
                                 run_many_server, staffing_power, staffing_sqrt, summarize_runs)
from dsarrivals.synthetic import RateProfile

from oracles import erlang_c_wait, mms_stationary_pmf

# Erlang-C delay for lambda = 8/h, E(S) = 0.25 h, s = 3 (offered load 2), from the
# Erlang-B recursion in oracles.py; equals P(wait) / (s mu - lambda) = (4/9) / 4.
MMS_LAMBDA, MMS_ES, MMS_S = 8.0, 0.25, 3
MMS_WQ = 0.1111111111111111


def test_frozen_erlang_value():
    assert erlang_c_wait(MMS_LAMBDA, MMS_ES, MMS_S) == pytest.approx(MMS_WQ, rel=1e-14)
    assert erlang_c(MMS_LAMBDA, MMS_ES, MMS_S)[1] == pytest.approx(MMS_WQ, rel=1e-14)


def test_staffing_examples():
    assert staffing_sqrt(100, 0.1, 1) == 14
    assert staffing_sqrt(1000, 0.1, 1) == 110
    assert staffing_sqrt(100, 0.1, 0) == 10
    assert staffing_power(100, 0.1, 1, 0.3) == 17
    assert list(staffing_sqrt(np.array([100.0, 1000.0]), 0.1, 1)) == [14, 110]


def test_staffing_errors():
    with pytest.raises(ValueError):
        staffing_sqrt(100, 0.1, -10)
    with pytest.raises(ValueError):
        staffing_power(100, 0.1, 1, 0.7)
    with pytest.raises(ValueError):
        staffing_sqrt(0, 0.1, 1)


@settings(max_examples=100, deadline=None)
@given(R=st.floats(1.0, 5000.0), es=st.floats(0.01, 2.0), beta=st.floats(0.0, 3.0))
def test_power_with_zero_alpha_is_sqrt(R, es, beta):
    assert staffing_power(R, es, beta, 0.0) == staffing_sqrt(R, es, beta)


def test_interval_volumes_trapezoid():
    rate = RateProfile.from_knots([(0.0, 100.0), (1.0, 200.0)])
    assert np.allclose(interval_volumes(rate, Horizon(1.0, 2)), [0.5 * 125, 0.5 * 175])


def test_staffing_plan_levels_in_time():
    plan = StaffingPlan(np.array([1, 3, 2]), Horizon(3.0, 3))
    assert [plan.servers_at(t) for t in (0.0, 0.999, 1.0, 2.5, 3.0, 10.0)] == [1, 1, 3, 2, 2, 2]
    assert plan.next_change(0.2) == 1.0 and plan.next_change(2.2) == math.inf
    with pytest.raises(ValueError):
        StaffingPlan(np.array([1, 0, 2]), Horizon(3.0, 3))


def test_service_spec():
    s = ServiceSpec(0.2, 0.1)
    x = s.sample(RngStream(0), 100_000)
    assert abs(x.mean() - 0.2) < 3 * math.sqrt(0.1 / 1e5)
    assert ServiceSpec(0.5, distribution="exponential").variance == 0.25
    assert np.all(ServiceSpec(0.5, distribution="deterministic").sample(RngStream(0), 3) == 0.5)
    with pytest.raises(ValueError):
        ServiceSpec(0.2, 0.0)


def test_infinite_server_no_arrivals():
    v = run_infinite_server([], ServiceSpec(0.2, 0.1), minute_checkpoints(Horizon(11, 22)),
                            RngStream(0))
    assert v.shape == (660,) and not v.any()


def test_infinite_server_deterministic_window():
    rng = np.random.default_rng(0)
    a = np.sort(rng.uniform(0, 5, 300))
    d = 0.3
    t = np.linspace(0, 6, 97)
    v = run_infinite_server(a, ServiceSpec(d, distribution="deterministic"), t, RngStream(0))
    want = [np.sum((a > ti - d) & (a <= ti)) for ti in t]
    assert np.array_equal(v, want)


def test_mg_infinity_stationary_mean():
    lam, es = 100.0, 0.2
    horizon, t_obs = 3.0, 3.0
    base = RngStream(1)
    vals = []
    for r in range(10_000):
        rng = base.child(r).generator
        a = np.sort(rng.uniform(0, horizon, rng.poisson(lam * horizon)))
        vals.append(run_infinite_server(a, ServiceSpec(es, distribution="exponential"), [t_obs],
                                        RngStream(2).child(r))[0])
    vals = np.array(vals)
    # transient mean lam * es * (1 - exp(-t/es)) is 20 up to 6e-6
    mean = lam * es * (1 - math.exp(-t_obs / es))
    assert abs(vals.mean() - mean) < 3 * math.sqrt(mean / vals.size)


def test_many_server_hand_traced():
    plan = StaffingPlan.constant(1, Horizon(1.0, 1))
    w = run_many_server([0.0, 0.01], ServiceSpec(0.5, distribution="deterministic"), plan,
                        RngStream(0))
    assert np.allclose(w, [0.0, 0.49])


def test_many_server_huge_staffing_means_no_wait():
    rng = np.random.default_rng(1)
    a = np.sort(rng.uniform(0, 11, 2000))
    plan = StaffingPlan.constant(5000, Horizon(11, 22))
    assert not run_many_server(a, ServiceSpec(0.2, 0.1), plan, RngStream(0)).any()


def test_many_server_capacity_drop_and_rise():
    # two servers in [0,1), one afterwards; three customers at 0.9 with service 1
    plan = StaffingPlan(np.array([2, 1]), Horizon(2.0, 2))
    svc = ServiceSpec(1.0, distribution="deterministic")
    w = run_many_server([0.9, 0.9, 0.9], svc, plan, RngStream(0))
    # third waits for the first departure at 1.9; after 1.0 only one server, and two are
    # busy until 1.9, so the third starts once busy < 1, i.e. at 1.9 both leave
    assert np.allclose(w, [0.0, 0.0, 1.0])
    plan = StaffingPlan(np.array([1, 3]), Horizon(2.0, 2))
    w = run_many_server([0.1, 0.2, 0.3], svc, plan, RngStream(0))
    # extra servers appear at t = 1
    assert np.allclose(w, [0.0, 0.8, 0.7])


def test_mms_mean_wait_matches_erlang_c():
    H = 10.0
    pmf = mms_stationary_pmf(MMS_LAMBDA, MMS_ES, MMS_S, 200)
    plan = StaffingPlan.constant(MMS_S, Horizon(H, 1))
    base = RngStream(11)
    est = []
    for r in range(10_000):
        rng = base.child(r).generator
        n0 = int(rng.choice(pmf.size, p=pmf))
        a = np.sort(rng.uniform(0, H, rng.poisson(MMS_LAMBDA * H)))
        # customers present at time 0 queue ahead (memoryless residual service)
        epochs = np.concatenate([np.zeros(n0), a])
        service = rng.exponential(MMS_ES, epochs.size)
        w = run_many_server(epochs, None, plan, None, service_times=service)
        est.append(w[n0:].sum() / (MMS_LAMBDA * H))
    est = np.array(est)
    half = 1.96 * est.std(ddof=1) / math.sqrt(est.size)
    assert abs(est.mean() - MMS_WQ) < half


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), levels=st.lists(st.integers(1, 4), min_size=1, max_size=6))
def test_many_server_invariants(seed, levels):
    rng = np.random.default_rng(seed)
    T = float(len(levels))
    plan = StaffingPlan(np.array(levels), Horizon(T, len(levels)))
    a = np.sort(rng.uniform(0, T, rng.integers(0, 60)))
    s = rng.exponential(0.5, a.size)
    w = run_many_server(a, None, plan, None, service_times=s)
    start = a + w
    assert np.all(w >= 0)
    assert np.all(np.diff(start) >= -1e-12)  # FCFS
    # at each admission, customers in service (including the new one) fit the current level
    end = start + s
    for k in range(a.size):
        # start is rebuilt as a + w, so allow for one rounding step at departures
        busy = np.sum((start[:k] <= start[k]) & (end[:k] > start[k] + 1e-9)) + 1
        assert busy <= plan.servers_at(start[k])


def test_interval_mean_waits():
    h = Horizon(2.0, 2)
    out = interval_mean_waits([0.5, 0.7, 1.5], np.array([1.0, 3.0, 0.0]), Horizon(3.0, 3))
    assert np.allclose(out[:2], [2.0, 0.0]) and np.isnan(out[2])
    assert np.isnan(interval_mean_waits([], np.array([]), h)).all()


def test_summarize_identical_macro_reps():
    X = np.tile(np.array([[1.0, 2.0], [3.0, 5.0]]), (10, 1))
    rep = summarize_runs(X, "occupancy", 10)
    assert np.all(rep.half_widths["mean"] == 0) and np.all(rep.half_widths["q80"] == 0)
    assert np.allclose(rep.values["mean"], [2.0, 3.5])


def test_summarize_constant_quantile():
    rep = summarize_runs(np.full((40, 3), 7.0), "waiting", 4)
    assert np.all(rep.values["q80"] == 7.0) and np.all(rep.values["variance"] == 0.0)


def test_summarize_type7_quantile():
    X = np.arange(10, dtype=float)[:, None]
    rep = summarize_runs(np.vstack([X, X]), "waiting", 2)
    assert rep.values["q80"][0] == pytest.approx(7.2)


def test_summarize_errors():
    with pytest.raises(ValueError):
        summarize_runs(np.empty((0, 3)), "waiting", 2)
    with pytest.raises(ValueError):
        summarize_runs(np.ones((4, 3)), "waiting", 1)
    with pytest.raises(ValueError):
        summarize_runs(np.ones((4, 3)), "nope", 2)


def test_summarize_ci_coverage():
    rng = np.random.default_rng(5)
    hits = 0
    trials = 1000
    for _ in range(trials):
        rep = summarize_runs(rng.normal(3.0, 2.0, size=(100, 1)), "waiting", 20)
        lo = rep.values["mean"] - rep.half_widths["mean"]
        hi = rep.values["mean"] + rep.half_widths["mean"]
        hits += int(lo[0] <= 3.0 <= hi[0])
    # normal bands with 20 groups undercover slightly (t quantile 2.09 vs 1.96)
    assert 0.91 <= hits / trials <= 0.98


def test_report_csv(tmp_path):
    rep = summarize_runs(np.arange(40, dtype=float).reshape(20, 2), "waiting", 4)
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "interval,statistic,value,ci_lo,ci_hi"
    assert len(lines) == 1 + 3 * 2
    assert lines[1].startswith("1,mean,")
