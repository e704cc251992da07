"""Metrics, the VS-to-AS distance diagnostic, and the density sweep."""

import math

import numpy as np
import pytest

from dirinet.errors import InputError, UnreachableNodesWarning
from dirinet.evaluation import (
    REPORT_HEADER,
    MetricsReport,
    d_v2a,
    density_sweep,
    metrics,
    save_report_csv,
)


# ---------------------------------------------------------------- metrics


def test_metrics_hand_arithmetic():
    rep = metrics(np.array([45.0, 66.0]), np.array([50.0, 60.0]))
    assert rep.mae == pytest.approx(5.5, abs=1e-12)
    assert rep.mape == pytest.approx(10.0, abs=1e-12)
    assert rep.rmse == pytest.approx(math.sqrt(30.5), abs=1e-4)
    assert rep.n_evaluated == 2 and rep.n_excluded_missing == 0


def test_metrics_perfect():
    x = np.random.default_rng(0).uniform(10, 70, (4, 6))
    rep = metrics(x, x)
    assert rep.mape == 0.0 and rep.mae == 0.0 and rep.rmse == 0.0


def test_metrics_excludes_invalid():
    est = np.array([[45.0, 66.0], [10.0, 99.0]])
    truth = np.array([[50.0, 60.0], [20.0, np.nan]])
    valid = np.array([[1, 1], [1, 0]])
    rep = metrics(est, truth, valid)
    assert rep.n_evaluated == 3
    assert rep.n_excluded_missing == 1
    assert rep.mae == pytest.approx((5 + 6 + 10) / 3)


def test_metrics_skips_zero_truth():
    rep = metrics(np.array([5.0, 55.0]), np.array([0.0, 50.0]))
    assert rep.mape == pytest.approx(10.0)
    assert rep.mae == pytest.approx(5.0)
    assert rep.n_zero_truth == 1
    all_zero = metrics(np.array([5.0]), np.array([0.0]))
    assert math.isnan(all_zero.mape)


def test_metrics_errors():
    with pytest.raises(InputError, match="shape"):
        metrics(np.zeros(3), np.zeros(4))
    with pytest.raises(InputError, match="no valid entries"):
        metrics(np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(InputError, match="non-finite"):
        metrics(np.zeros(2), np.array([1.0, np.nan]))


def test_mae_never_exceeds_rmse():
    rng = np.random.default_rng(42)
    for _ in range(200):
        n = rng.integers(1, 30)
        truth = rng.uniform(1, 80, n)
        est = truth + rng.normal(0, rng.uniform(0.1, 15), n)
        rep = metrics(est, truth)
        assert rep.mae <= rep.rmse + 1e-12


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(7)
    truth = rng.uniform(5, 70, 40)
    est = truth + rng.normal(0, 5, 40)
    perm = rng.permutation(40)
    a = metrics(est, truth)
    b = metrics(est[perm], truth[perm])
    assert a.mape == pytest.approx(b.mape, rel=1e-12)
    assert a.mae == pytest.approx(b.mae, rel=1e-12)
    assert a.rmse == pytest.approx(b.rmse, rel=1e-12)


# ---------------------------------------------------------------- d_v2a


def chain_rows(n, seg=1000.0):
    rows = [(f"s{i}", f"s{i + 1}", seg) for i in range(n - 1)]
    rows += [(f"s{i + 1}", f"s{i}", seg) for i in range(n - 1)]
    return rows


def test_d_v2a_adjacent_km():
    rows = chain_rows(6)
    # alternating VS/AS: every VS sits 1000 m from an AS
    vs = ["s0", "s2", "s4"]
    a_s = ["s1", "s3", "s5"]
    assert d_v2a(rows, vs, a_s) == pytest.approx(1.0)


def test_d_v2a_shortest_path_fallback():
    rows = [("a", "b", 500.0), ("b", "c", 700.0)]
    # a -> c has no listed pair; the 1200 m path substitutes
    assert d_v2a(rows, ["a"], ["c"]) == pytest.approx(1.2)


def test_d_v2a_listed_pair_wins():
    # direct listing is used as given even when a shorter path exists
    rows = [("a", "b", 2000.0), ("a", "x", 300.0), ("x", "b", 300.0)]
    assert d_v2a(rows, ["a"], ["b"]) == pytest.approx(2.0)


def test_d_v2a_directed():
    rows = [("a", "b", 800.0)]
    assert d_v2a(rows, ["a"], ["b"]) == pytest.approx(0.8)
    with pytest.warns(UnreachableNodesWarning):
        with pytest.raises(InputError, match="unreachable"):
            d_v2a(rows, ["b"], ["a"])


def test_d_v2a_unreachable_excluded():
    rows = chain_rows(4) + [("lone", "island", 100.0)]
    with pytest.warns(UnreachableNodesWarning, match="island"):
        val = d_v2a(rows, ["s0", "island"], ["s1"])
    assert val == pytest.approx(1.0)


def test_d_v2a_monotone_as_as_shrinks():
    rng = np.random.default_rng(3)
    n = 15
    ids = [f"s{i}" for i in range(n)]
    rows = chain_rows(n)
    extra = set()
    while len(extra) < 10:
        i, j = rng.integers(0, n, 2)
        if i != j and (i, j) not in extra and abs(i - j) > 1:
            extra.add((int(i), int(j)))
    rows += [
        (ids[i], ids[j], float(rng.uniform(500, 5000))) for i, j in extra
    ]
    vs = ["s0", "s7", "s14"]
    big_as = [x for x in ids if x not in vs]
    small_as = big_as[::3]
    assert d_v2a(rows, vs, small_as) >= d_v2a(rows, vs, big_as) - 1e-12


def test_d_v2a_validation():
    rows = chain_rows(4)
    with pytest.raises(InputError, match="overlap"):
        d_v2a(rows, ["s0"], ["s0", "s1"])
    with pytest.raises(InputError, match="nonempty"):
        d_v2a(rows, [], ["s1"])
    with pytest.raises(InputError, match="absent"):
        d_v2a(rows, ["ghost"], ["s1"])
    with pytest.raises(InputError, match="duplicate"):
        d_v2a(rows + [rows[0]], ["s0"], ["s1"])


# ---------------------------------------------------------------- sweep


def toy_runner(ids, truth_by_id, rng_seed=0):
    rng = np.random.default_rng(rng_seed)

    def run(vs_ids):
        truth = np.array([truth_by_id[v] for v in vs_ids])[:, None]
        est = truth + rng.normal(0, 2, truth.shape)
        return est, truth, np.ones(truth.shape)

    return run


def test_density_sweep_rows_and_seeding():
    ids = [f"s{i}" for i in range(20)]
    truth_by_id = {v: 40.0 + i for i, v in enumerate(ids)}
    rows = chain_rows(20)
    tables = []
    for _ in range(2):
        runner = toy_runner(ids, truth_by_id)
        tables.append(
            density_sweep(
                ids, [3, 5, 8], runner, seed=11, distance_rows=rows
            )
        )
    assert len(tables[0]) == 3
    assert [c for c, _ in tables[0]] == [3, 5, 8]
    assert tables[0] == tables[1]
    for _, rep in tables[0]:
        assert rep.d_v2a is not None and rep.d_v2a > 0
        assert rep.mae <= rep.rmse


def test_density_sweep_distinct_draws_per_count():
    ids = [f"s{i}" for i in range(30)]
    seen = []
    def runner(vs_ids):
        seen.append(tuple(vs_ids))
        t = np.ones((len(vs_ids), 2)) * 50
        return t + 1.0, t, np.ones(t.shape)

    density_sweep(ids, [10, 10], runner, seed=5)
    assert seen[0] != seen[1]  # independent draws per row


def test_density_sweep_rejects_degenerate_counts():
    ids = [f"s{i}" for i in range(10)]
    runner = toy_runner(ids, {v: 50.0 for v in ids})
    with pytest.raises(InputError, match="vs_count"):
        density_sweep(ids, [0], runner)
    with pytest.raises(InputError, match="vs_count"):
        density_sweep(ids, [10], runner)


# ---------------------------------------------------------------- csv


def test_report_csv_header_and_values(tmp_path):
    path = tmp_path / "report.csv"
    rows = [
        (5, MetricsReport(10.0, 5.5, 5.522681, 100, 4, 0, 1.3)),
        (8, MetricsReport(8.25, 4.0, 4.5, 200, 0, 2, None)),
    ]
    save_report_csv(path, rows)
    text = path.read_text().splitlines()
    assert text[0] == REPORT_HEADER
    first = text[1].split(",")
    assert first[0] == "5"
    assert float(first[1]) == pytest.approx(1.3)
    assert float(first[2]) == pytest.approx(10.0)
    assert first[5] == "100" and first[6] == "4"
    assert text[2].split(",")[1] == ""  # no d_v2a recorded
