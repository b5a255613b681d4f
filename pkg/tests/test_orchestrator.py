import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsma.channel import ChannelBatch, FadingParams, db_to_linear, dbm_to_watts, default_geometry
from irsma.irs import batch_gains, codebook
from irsma.orchestrator import (MonotonicityError, SchemeConfig, _keep_floors, average_sum_rate, enumerate_orders,
                                run_ao, run_ao_noma, run_ao_oma, run_experiment)
from irsma.phase import align_tdma_batch, exhaustive
from irsma.power import AllocationTable, PowerBudget, dual_solve, rates_batch

from conftest import SIGMA, make_batch

BUDGET = PowerBudget(dbm_to_watts(20.0), dbm_to_watts(23.0), 0.5)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(access="CDMA")
    with pytest.raises(ValueError):
        SchemeConfig(adjustment="sometimes")
    with pytest.raises(ValueError):
        SchemeConfig(block_size=4, samples_per_block=5)
    with pytest.raises(ValueError):
        run_ao_noma(make_batch(2, 3), BUDGET, SchemeConfig(access="TDMA"), rng(), SIGMA)
    with pytest.raises(ValueError):
        run_ao_oma(make_batch(2, 3), BUDGET, SchemeConfig(access="NOMA"), rng(), SIGMA)


def test_monotonicity_error_is_assertion():
    assert issubclass(MonotonicityError, AssertionError)


# enumerate_orders

def test_enumerate_orders_examples():
    gains = np.array([[10.0, 1.0], [1.0, 10.0], [5.0, 5.0]])
    powers = np.ones((3, 2))
    # the weaker user is decoded first
    np.testing.assert_array_equal(enumerate_orders(gains, powers), [2, 1, 1])


@settings(max_examples=50)
@given(seed=st.integers(0, 2 ** 31))
def test_enumerate_orders_is_sum_rate_max(seed):
    r = np.random.default_rng(seed)
    gains = 10.0 ** r.uniform(-1, 4, size=(1000, 2))
    powers = r.uniform(0, 1, size=(1000, 2))
    first = enumerate_orders(gains, powers)
    s = lambda f: np.sum(rates_batch(gains[:, 0], gains[:, 1], powers[:, 0], powers[:, 1], "NOMA",
                                     first=np.full(1000, f)), axis=0)
    chosen = np.where(first == 1, s(1), s(2))
    assert np.all(chosen >= np.maximum(s(1), s(2)) - 1e-12)


# average_sum_rate

def _table(F, p1, p2, first=1):
    return AllocationTable.single(np.full(F, p1), np.full(F, p2), np.full(F, 0.5), np.full(F, first))


def test_average_sum_rate_single_state():
    b = make_batch(2, 1)
    th = np.zeros(2)
    g = batch_gains(b, th, SIGMA)[0]
    table = _table(1, 0.05, 0.05)
    r1, r2 = rates_batch(g[:1], g[1:], np.array([0.05]), np.array([0.05]), "NOMA", first=np.array([1]))
    assert average_sum_rate(b, table, th, "NOMA", SIGMA) == pytest.approx(float(r1[0] + r2[0]), rel=1e-12)


def test_average_sum_rate_duplicated_states():
    b = make_batch(3, 1)
    two = b.subset([0, 0])
    th = np.zeros(3)
    one_val = average_sum_rate(b, _table(1, 0.02, 0.08), th, "OMA", SIGMA)
    assert average_sum_rate(two, _table(2, 0.02, 0.08), th, "OMA", SIGMA) == pytest.approx(one_val, rel=1e-12)


def test_average_sum_rate_empty_raises():
    b = make_batch(2, 2).subset(np.array([], dtype=int))
    with pytest.raises(ValueError):
        average_sum_rate(b, _table(0, 0.1, 0.1), np.zeros(2), "NOMA", SIGMA)


# _keep_floors

def test_keep_floors_restores_deficient_user():
    old = np.array([[1.0, 1.0], [1.0, 1.0]])
    new = np.array([[3.0, 0.1], [1.5, 0.9]])
    acc = _keep_floors(old, new, np.array([True, True]), 0.9)
    cur = np.where(acc[:, None], new, old)
    assert cur.mean(0)[1] >= 0.9 - 1e-12
    assert acc.tolist() == [False, True]


# AO runs

def test_no_reflection_equals_power_allocation_alone():
    b = make_batch(4, 60)
    zeroed = ChannelBatch(b.h, np.zeros_like(b.g), b.r)
    for access in ("NOMA", "TDMA", "FDMA"):
        res = run_ao(zeroed, BUDGET, SchemeConfig(access=access), rng(), SIGMA)
        ref = dual_solve(np.abs(b.h) ** 2 / SIGMA, BUDGET, access)
        assert res.avg_sum_rate == pytest.approx(float(ref.mean_rates.sum()), rel=1e-9)


@pytest.mark.parametrize("access", ["NOMA", "TDMA", "FDMA"])
@pytest.mark.parametrize("adjustment", ["dynamic", "one_time"])
def test_traces_monotone(access, adjustment):
    for seed in range(4):
        b = make_batch(3, 24, fading_seed=seed)
        cfg = SchemeConfig(access=access, adjustment=adjustment, block_size=8, samples_per_block=4, ao_max_rounds=4)
        res = run_ao(b, BUDGET, cfg, rng(seed), SIGMA)
        t = res.ao_trace
        assert t and all(y >= x - 1e-9 * abs(x) for x, y in zip(t, t[1:]))
        assert res.feasible
        assert res.constraint_residuals["power"] <= 1e-6
        assert res.constraint_residuals["rate"] >= -1e-2


def test_tdma_dynamic_uses_per_user_alignment():
    b = make_batch(4, 20)
    res = run_ao(b, BUDGET, SchemeConfig(access="TDMA", levels=None), rng(), SIGMA)
    assert res.theta.shape == (20, 2, 4)
    g = batch_gains(b, res.theta, SIGMA)
    bound = (np.abs(b.h) + np.sum(np.abs(b.r * b.g[:, None, :]), -1)) ** 2 / SIGMA
    np.testing.assert_allclose(g, bound, rtol=1e-9)
    quant = run_ao(b, BUDGET, SchemeConfig(access="TDMA", levels=2), rng(), SIGMA)
    assert np.all(np.isin(quant.theta, codebook(2)))
    assert quant.rounds == 1


def test_one_time_tdma_equals_fdma():
    b = make_batch(3, 40)
    kw = dict(adjustment="one_time", block_size=10, samples_per_block=4, ao_max_rounds=3)
    t = run_ao(b, BUDGET, SchemeConfig(access="TDMA", **kw), rng(1), SIGMA)
    f = run_ao(b, BUDGET, SchemeConfig(access="FDMA", **kw), rng(1), SIGMA)
    assert t.avg_sum_rate == pytest.approx(f.avg_sum_rate, rel=1e-6)


def test_tdma_dynamic_not_below_fdma_dynamic():
    b = make_batch(3, 30)
    t = run_ao(b, BUDGET, SchemeConfig(access="TDMA", ao_max_rounds=3), rng(2), SIGMA)
    f = run_ao(b, BUDGET, SchemeConfig(access="FDMA", ao_max_rounds=3), rng(2), SIGMA)
    assert t.avg_sum_rate >= f.avg_sum_rate - 1e-9


def _exhaustive_pipeline(b, budget, levels, rounds=4):
    """Reference AO: exact power allocation alternated with exhaustive per-state phases."""
    F = len(b)
    theta = np.zeros((F, b.num_elements))
    best = -np.inf
    for _ in range(rounds):
        res = dual_solve(batch_gains(b, theta, SIGMA), budget, "NOMA")
        best = max(best, float(res.mean_rates.sum()))
        pw = res.allocation.state_powers()
        first = res.allocation.dominant().first[:, 0]
        theta = np.stack([exhaustive(b.state(i), pw[i], "NOMA", levels, SIGMA, first=int(first[i]))[0].theta
                          for i in range(F)])
    return best


def test_noma_ao_close_to_exhaustive_pipeline():
    b = make_batch(4, 50)
    ref = _exhaustive_pipeline(b, BUDGET, 2)
    res = run_ao(b, BUDGET, SchemeConfig(access="NOMA", levels=2, ao_max_rounds=4), rng(3), SIGMA)
    assert res.avg_sum_rate >= 0.95 * ref


def test_infeasible_rate_target_reported():
    bad = PowerBudget(BUDGET.avg_power, BUDGET.peak_power, 50.0)
    res = run_ao(make_batch(2, 10), bad, SchemeConfig(access="FDMA"), rng(), SIGMA)
    assert not res.feasible and res.rounds == 0
    assert res.max_min_rate < 50.0


def test_run_experiment_deterministic():
    geom = default_geometry(1)
    fad = FadingParams(db_to_linear(3.0), 2, SIGMA, seed=1)
    cfg = SchemeConfig(access="NOMA", ao_max_rounds=2)
    a = run_experiment(geom, fad, BUDGET, cfg, 12, seed=4)
    c = run_experiment(geom, fad, BUDGET, cfg, 12, seed=4)
    assert a.avg_sum_rate == c.avg_sum_rate
    assert a.to_dict() == c.to_dict()


def test_workers_match_serial():
    b = make_batch(3, 8)
    s = run_ao(b, BUDGET, SchemeConfig(access="FDMA", ao_max_rounds=2), rng(5), SIGMA)
    p = run_ao(b, BUDGET, SchemeConfig(access="FDMA", ao_max_rounds=2, workers=2), rng(5), SIGMA)
    assert s.avg_sum_rate == pytest.approx(p.avg_sum_rate, rel=1e-12)
