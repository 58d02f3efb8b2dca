#!/usr/bin/env python3
"""
Plug-in functional and target tests: weighted mean, quantile, correlation,
CATE and CDF, the target grammar and the per-group bootstrap sample.
Run with pytest or directly: python test_inference.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.errors import DegenerateTargetError, UsageError
from app.forest import WeightBundle
from app.inference import (
    CUMULATIVE_TOL, ResponseTable, bootstrap_sample, cate, evaluate_target, inference_records,
    parse_target, weighted_cdf, weighted_correlation, weighted_mean, weighted_quantile,
)


def _raises(exc, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc:
        return True
    return False


def test_weighted_mean_uniform():
    assert weighted_mean([0.5, 0.5], [0.0, 2.0])[0] == 1.0


def test_weighted_mean_point_mass():
    Y = np.arange(12, dtype=float).reshape(4, 3)
    assert np.array_equal(weighted_mean([1.0, 0.0, 0.0, 0.0], Y), Y[0])
    assert np.array_equal(weighted_mean([0.0, 1.0, 0.0, 0.0], Y, coords=[2]), [5.0])


def test_weighted_mean_matches_dot_product():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(7))
    y = rng.normal(size=7)
    assert abs(weighted_mean(w, y)[0] - sum(a * b for a, b in zip(w, y))) < 1e-12


def test_weighted_median_of_one_to_ten():
    assert weighted_quantile(np.full(10, 0.1), np.arange(1, 11), 0.5) == 5.0


def test_weighted_quantile_point_mass():
    w = np.array([0.0, 1.0, 0.0])
    for tau in (0.01, 0.5, 0.99):
        assert weighted_quantile(w, [4.0, -2.0, 7.0], tau) == -2.0


def test_weighted_quantile_hand_case():
    assert weighted_quantile([0.2, 0.5, 0.3], [1.0, 2.0, 3.0], 0.7) == 2.0
    # unsorted input
    assert weighted_quantile([0.3, 0.2, 0.5], [3.0, 1.0, 2.0], 0.7) == 2.0


def test_weighted_quantile_level_is_checked():
    assert _raises(UsageError, weighted_quantile, [1.0], [1.0], 1.0)


def test_weighted_correlation_extremes():
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(9))
    y = rng.normal(size=9)
    assert abs(weighted_correlation(w, y, y) - 1.0) < 1e-12
    assert abs(weighted_correlation(w, y, -y) + 1.0) < 1e-12


def test_weighted_correlation_matches_moments():
    rng = np.random.default_rng(2)
    w = rng.dirichlet(np.ones(5))
    a, b = rng.normal(size=5), rng.normal(size=5)
    ma, mb = np.sum(w * a), np.sum(w * b)
    cov = np.sum(w * (a - ma) * (b - mb))
    expected = cov / np.sqrt(np.sum(w * (a - ma) ** 2) * np.sum(w * (b - mb) ** 2))
    assert abs(weighted_correlation(w, a, b) - expected) < 1e-12


def test_weighted_correlation_zero_variance():
    assert _raises(DegenerateTargetError, weighted_correlation, [0.5, 0.5], [1.0, 1.0], [0.0, 1.0])


def test_cate_of_treatment_indicator_is_one():
    t = np.array([0, 1, 0, 1, 1, 0], dtype=float)
    assert cate(np.full(6, 1 / 6), t, t) == 1.0


def test_cate_equal_arm_means_is_zero():
    t = np.array([0, 0, 1, 1], dtype=float)
    assert cate(np.full(4, 0.25), [1.0, 3.0, 3.0, 1.0], t) == 0.0


def test_cate_hand_case():
    t = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    y = np.array([1.0, 2.0, 3.0, 5.0, 7.0, 9.0])
    assert abs(cate(np.full(6, 1 / 6), y, t) - 5.0) < 1e-12


def test_cate_needs_both_arms():
    t = np.array([1, 1, 0], dtype=float)
    assert _raises(DegenerateTargetError, cate, [0.5, 0.5, 0.0], [1.0, 2.0, 3.0], t)


def test_weighted_cdf():
    w = np.full(3, 1 / 3)
    y = [1.0, 2.0, 3.0]
    assert weighted_cdf(w, y, 0.5) == 0.0
    assert weighted_cdf(w, y, 3.0) == 1.0
    assert abs(weighted_cdf(w, y, 2.0) - 2 / 3) < 1e-12


def test_weighted_quantile_is_monotone_and_inverts_the_cdf():
    rng = np.random.default_rng(8)
    w = rng.dirichlet(np.ones(25))
    y = rng.normal(size=25)
    taus = np.linspace(0.01, 0.99, 50)
    qs = [weighted_quantile(w, y, t) for t in taus]
    assert all(a <= b for a, b in zip(qs, qs[1:]))
    for t, q in zip(taus, qs):
        assert weighted_cdf(w, y, q) >= t - 1e-12


def test_quantile_level_just_above_a_cumulative_weight():
    w, y = [0.1, 0.2, 0.7], [1.0, 2.0, 3.0]
    tau = 0.3 + 5e-13
    q = weighted_quantile(w, y, tau)
    assert q == 2.0
    assert weighted_cdf(w, y, q) >= tau - CUMULATIVE_TOL
    assert weighted_quantile(w, y, 0.3 + 1e-9) == 3.0


def test_uniform_weights_reproduce_sample_statistics():
    y = np.random.default_rng(9).normal(size=40)
    w = np.full(40, 1 / 40)
    assert abs(weighted_mean(w, y)[0] - y.mean()) < 1e-12
    assert abs(weighted_cdf(w, y, 0.0) - np.mean(y <= 0.0)) < 1e-12
    assert weighted_quantile(w, y, 0.5) == np.sort(y)[19]


def test_correlation_is_affine_invariant():
    rng = np.random.default_rng(10)
    w = rng.dirichlet(np.ones(12))
    a, b = rng.normal(size=12), rng.normal(size=12)
    assert abs(weighted_correlation(w, a, b) - weighted_correlation(w, 3 * a + 1, 0.5 * b - 2)) < 1e-10


def test_cate_shifts():
    rng = np.random.default_rng(11)
    t = np.array([0, 1] * 5, dtype=float)
    w = rng.dirichlet(np.ones(10))
    y = rng.normal(size=10)
    base = cate(w, y, t)
    assert abs(cate(w, y + 4.0, t) - base) < 1e-12
    assert abs(cate(w, y + 4.0 * t, t) - (base + 4.0)) < 1e-12


def test_parse_targets():
    spec = parse_target("quantile:y@0.1,0.5,0.9")
    assert spec.kind == "quantile" and spec.dimension == 3
    assert spec.labels() == ["quantile:y@0.1", "quantile:y@0.5", "quantile:y@0.9"]
    assert parse_target("mean:y1,y2").dimension == 2
    assert parse_target("cor:y1,y2").columns == ("y1", "y2")
    assert parse_target("cate:y|w").kind == "cate"
    assert parse_target("cdf:y@0").threshold == 0.0
    assert str(parse_target("quantile:y@0.1,0.9")) == "quantile:y@0.1,0.9"


def test_parse_target_errors():
    for text in ("y", "median:y", "quantile:y", "quantile:y@1.5", "cor:y1", "cate:y", "cdf:y@1,2", "mean:"):
        assert _raises(UsageError, parse_target, text), text


def test_evaluate_targets_by_column_name():
    table = ResponseTable(np.array([[1.0, 2.0], [3.0, 6.0]]), ["a", "b"], W=[0, 1])
    w = np.array([0.5, 0.5])
    assert np.allclose(evaluate_target(parse_target("mean:a,b"), w, table), [2.0, 4.0])
    assert evaluate_target(parse_target("cor:a,b"), w, table)[0] == 1.0
    assert evaluate_target(parse_target("cate:b|w"), w, table)[0] == 4.0
    assert _raises(UsageError, evaluate_target, parse_target("mean:c"), w, table)


def _bundle(group_weights):
    G = np.asarray(group_weights, dtype=float)
    return WeightBundle(G.mean(axis=0), G, np.arange(G.shape[0]))


def test_bootstrap_sample_drops_degenerate_groups():
    table = ResponseTable([0.0, 1.0, 2.0, 3.0], ["y"], W=[0, 0, 1, 1])
    bundle = _bundle([[0.5, 0.0, 0.5, 0.0], [0.5, 0.5, 0.0, 0.0], [0.0, 0.5, 0.0, 0.5]])
    bs = bootstrap_sample(parse_target("cate:y|w"), bundle, table)
    assert bs.dropped == 1
    assert bs.effective_B == 2
    assert np.allclose(bs.theta_b[:, 0], [2.0, 2.0])


def test_inference_records_layout():
    rng = np.random.default_rng(3)
    y = rng.normal(size=30)
    G = rng.dirichlet(np.ones(30), size=40)
    records = inference_records(parse_target("quantile:y@0.25,0.75"), _bundle(G), ResponseTable(y, ["y"]),
                                alpha=0.05, tau=[0.0, 0.0])
    estimates = [r for r in records if r["kind"] == "estimate"]
    ellipsoid = records[-1]
    assert len(estimates) == 2
    assert ellipsoid["kind"] == "ellipsoid"
    assert "statistic" in ellipsoid and isinstance(ellipsoid["reject"], bool)
    for r in estimates:
        assert r["gaussian_lower"] <= r["estimate"] <= r["gaussian_upper"]
        assert "quantile_lower" in r and r["effective_B"] == 40


def main():
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        try:
            fn()
            print(f"  [PASS] {name}")
        except Exception as e:
            failed += 1
            print(f"  [FAIL] {name}: {e!r}")
    print(f"\nResults: {len(tests) - failed}/{len(tests)} tests passed")
    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
