import numpy as np
import pytest
from hypothesis import given, strategies as st

from acqb.errors import AggregationError
from acqb.metrics import (AGGREGATE_COLUMNS, RUN_COLUMNS, RoundRecord, aggregate, per_round_regret,
                          read_aggregate_csv, write_aggregate_csv, write_run_csv)
from acqb.policies import AcqbPolicy, OptimalPolicy, RandomPolicy
from acqb.queue_env import generate_instance
from acqb.simulate import coupled_run


@pytest.fixture(scope="module")
def inst():
    return generate_instance(3, 4, 2, 0.7, 0.03, 50, seed=7)


def constant_run(q, T=5):
    return [RoundRecord(t=t, Q_agent=q, Q_opt=0, per_round_regret=0.0, cum_regret=float(q), explored=False)
            for t in range(1, T + 1)]


def test_per_round_regret_zero_at_optimum(inst):
    for idx in range(inst.pool_size):
        assert per_round_regret(idx, inst.combos[inst.best_combo[idx]], inst) == 0.0
    assert per_round_regret(None, (0, 1), inst) == 0.0
    assert per_round_regret(-1, (0, 1), inst) == 0.0


def test_per_round_regret_range_and_replay(inst):
    from acqb import mnl
    for idx in range(inst.pool_size):
        x = inst.pool[idx]
        best = max(mnl.departure_rate(mnl.disjoint_utilities(x, S, inst.Theta)) for S in inst.combos)
        for S in inst.combos:
            gap = per_round_regret(idx, S, inst)
            assert -1e-12 <= gap <= 1
            assert gap == pytest.approx(best - mnl.departure_rate(mnl.disjoint_utilities(x, S, inst.Theta)),
                                        abs=1e-12)


def test_aggregate_examples():
    agg = aggregate([constant_run(3), constant_run(5)])
    np.testing.assert_allclose(agg.mean_qregret, 4.0)
    np.testing.assert_allclose(agg.std_qregret, np.sqrt(2))
    single = aggregate([constant_run(3)])
    np.testing.assert_array_equal(single.std_qregret, 0.0)
    assert single.runs == 1
    with pytest.raises(AggregationError):
        aggregate([constant_run(3, T=5), constant_run(3, T=6)])
    with pytest.raises(AggregationError):
        aggregate([])


@given(st.permutations(list(range(4))))
def test_aggregate_permutation_invariant(perm):
    runs = [constant_run(q, T=3) for q in (1, 2, 4, 9)]
    a = aggregate(runs)
    b = aggregate([runs[i] for i in perm])
    np.testing.assert_allclose(a.mean_cum_regret, b.mean_cum_regret, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.std_cum_regret, b.std_cum_regret, rtol=0, atol=1e-12)


@pytest.mark.parametrize("policy", [RandomPolicy, lambda: AcqbPolicy(disjoint=True)])
def test_cum_regret_monotone(inst, policy):
    recs = coupled_run(inst, policy(), 300, seed=1)
    cum = np.array([r.cum_regret for r in recs])
    assert np.all(np.diff(cum) >= -1e-12)
    assert all(r.per_round_regret >= -1e-12 for r in recs)


def test_optimal_identity(inst):
    recs = coupled_run(inst, OptimalPolicy(), 500, seed=2)
    assert all(r.qregret == 0 and r.cum_regret == 0 for r in recs)


def test_run_csv(tmp_path, inst):
    recs = coupled_run(inst, RandomPolicy(), 20, seed=3)
    p = tmp_path / "r.csv"
    write_run_csv(p, recs, 4, "random")
    lines = p.read_bytes().split(b"\n")
    assert lines[0].decode() == ",".join(RUN_COLUMNS)
    assert b"\r" not in p.read_bytes()
    first = lines[1].decode().split(",")
    assert first[0] == "4" and first[2] == "random"
    # shortest round-trip floats
    assert float(lines[-2].decode().split(",")[-1]) == recs[-1].cum_regret


def test_aggregate_csv_roundtrip(tmp_path):
    a = aggregate([constant_run(3), constant_run(5)])
    b = aggregate([constant_run(1), constant_run(1)])
    p = tmp_path / "agg.csv"
    write_aggregate_csv(p, {None: a})
    assert p.read_text().splitlines()[0] == ",".join(AGGREGATE_COLUMNS)
    back = read_aggregate_csv(p)
    np.testing.assert_array_equal(back[None]["std_qregret"], a.std_qregret)
    write_aggregate_csv(p, {"x": a, "y": b})
    back = read_aggregate_csv(p)
    assert list(back) == ["x", "y"]
    np.testing.assert_array_equal(back["y"]["mean_cum_regret"], b.mean_cum_regret)
