import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pair_count_tau_b
from psdnas.analysis import (
    BenchRecord, BenchStore, correlation_report, kendall_tau, normalize_scores,
    normalized_increase_curves, overlap_matrix, psnr_histogram, random_selection_baseline, top_k,
)
from psdnas.metrics import MetricScores


def test_kendall_extremes():
    x = [0.3, 1.0, 2.5, 4.0, 7.0]
    assert kendall_tau(x, x) == pytest.approx(1.0)
    assert kendall_tau(x, [-v for v in x]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        kendall_tau([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        kendall_tau([1], [2])


@pytest.mark.parametrize("seed", range(5))
def test_kendall_matches_pair_count(seed):
    r = np.random.default_rng(seed)
    x = r.random(50)
    y = np.round(r.random(50) * 10)  # ties in y
    assert abs(kendall_tau(x, y) - pair_count_tau_b(x, y)) < 1e-12
    x2 = np.round(x * 5)
    assert abs(kendall_tau(x2, y) - pair_count_tau_b(x2, y)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_kendall_rank_invariance(seed):
    r = np.random.default_rng(seed)
    x, y = r.random(20), r.random(20)
    assert kendall_tau(np.exp(3 * x), y**3 + 1) == pytest.approx(kendall_tau(x, y), abs=1e-12)


def test_overlap_matrix_cases():
    ids, m = overlap_matrix({"a": {1, 2, 3}, "b": {1, 2, 3}})
    assert (m == 3).all()
    _, m = overlap_matrix({"a": {1, 2}, "b": {3, 4}, "c": {5, 6}})
    assert (m == np.diag([2, 2, 2])).all()
    r = np.random.default_rng(0)
    sets = {f"i{k}": set(r.choice(30, 10, replace=False).tolist()) for k in range(6)}
    ids, m = overlap_matrix(sets)
    for a, ia in enumerate(ids):
        for b, ib in enumerate(ids):
            assert m[a, b] == len([g for g in sets[ia] if g in sets[ib]])
    assert (m == m.T).all() and (np.diag(m) == 10).all()
    with pytest.raises(ValueError):
        overlap_matrix({"a": {1}, "b": {1, 2}})


def test_normalize_scores():
    r = np.random.default_rng(1)
    x = r.normal(5, 3, 100)
    z = normalize_scores(x)
    assert abs(z.mean()) < 1e-9 and abs(z.std() - 1) < 1e-9
    np.testing.assert_allclose(normalize_scores(4 * x + 7), z, atol=1e-12)
    mean = sum(x) / len(x)
    std = math.sqrt(sum((v - mean) ** 2 for v in x) / len(x))
    np.testing.assert_allclose(z, [(v - mean) / std for v in x], atol=1e-12)
    with pytest.raises(ValueError):
        normalize_scores([2.0, 2.0])


def _records(psnrs, metric_values, image_id="img"):
    return [
        BenchRecord(image_id, f"g{k:02d}", "denoising", 300, p, 10 + k, m, m, m, m)
        for k, (p, m) in enumerate(zip(psnrs, metric_values))
    ]


def test_psnr_histogram_highlights():
    r = np.random.default_rng(2)
    psnrs = r.normal(24, 1, 40)
    metric = r.random(40)
    recs = _records(psnrs, metric)
    h = psnr_histogram(recs, "psd_db_strip_mse", ns=(1, 5, 15, 40), bins=10)
    assert h.highlights[40] == psnrs.max()
    assert h.highlights[1] == psnrs[np.argmin(metric)]
    assert h.highlights[1] <= h.highlights[5] <= h.highlights[15] <= h.highlights[40]
    assert h.counts.sum() == 40
    bins = h.highlight_bins()
    assert bins[40] == len(h.counts) - 1


def test_histogram_csv(tmp_path):
    recs = _records([20, 21, 22, 23], [4, 3, 2, 1])
    path = psnr_histogram(recs, ns=(1, 2), bins=4).write_csv(tmp_path / "h.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_left,count,best_of_top1,best_of_top2"
    assert len(lines) == 5


def test_random_baseline():
    r = np.random.default_rng(3)
    recs = _records(r.normal(24, 1, 30), r.random(30))
    best = max(x.final_psnr for x in recs)
    assert random_selection_baseline(recs, 30, 10, 0) == pytest.approx(best, rel=1e-12)
    value = random_selection_baseline(recs, 15, 10, 7)
    assert value <= best
    assert value == random_selection_baseline(recs, 15, 10, 7)
    with pytest.raises(ValueError):
        random_selection_baseline(recs, 31, 10, 0)


def test_bench_store_round_trip(tmp_path):
    store = BenchStore(tmp_path / "bench.csv")
    recs = _records([20.5, 21.25], [1.0, 2.0])
    for rec in recs:
        store.append(rec)
    assert store.read() == recs
    assert store.keys() == {r.key for r in recs}


def test_correlation_report():
    r = np.random.default_rng(4)
    recs = _records(r.normal(24, 1, 12), r.random(12), "a") + _records(r.normal(24, 1, 12), r.random(12), "b")
    lookup = {(x.image_id, x.genome_id): MetricScores(x.genome_id, x.psd_db_mse, x.psd_db_strip_mse,
                                                       x.psd_strip_hist_emd, x.bw99) for x in recs}
    rows = correlation_report(recs, {"N": lookup})
    assert len(rows) == 8
    assert all(-1 <= row.tau_final_psnr <= 1 for row in rows)
    rows = correlation_report(recs, {"N": lookup, "GT": lookup})
    assert len(rows) == 14  # bw99 only for N
    single = correlation_report([x for x in recs if x.image_id == "a"], {"N": lookup})
    assert len(single) == 4


def test_top_k_and_curves():
    recs = _records([20, 25, 22], [1, 1, 1], "a") + _records([21, 20, 24], [1, 1, 1], "b")
    assert top_k([x for x in recs if x.image_id == "a"], 2) == ["g01", "g02"]
    curves = normalized_increase_curves(recs, "a", {"a": 18.0, "b": 18.0})
    assert curves["genome_ids"] == ["g01", "g02", "g00"]
    assert abs(curves["b"].mean()) < 1e-12
