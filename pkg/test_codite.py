#!/usr/bin/env python3
"""
CoDiTE tests: two-arm fitting, the MMD statistic, half-sample null draws,
the test decision and the witness band.
Run with pytest or directly: python test_codite.py
"""

import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app.codite import (
    CoditeTestResult, arm_weights, codite_test, evaluate_test, fit_two_groups, mmd_statistic,
    null_draws, probe_grid, run_codite, witness, witness_band,
)
from app.data import Dataset
from app.errors import ConfigError, DataError, SchemaError, UsageError
from app.forest import WeightBundle, make_config
from app.kernel import Bandwidth, GramMatrices, gaussian_kernel, gram
from app.simulate import DEFAULT_CATE_PROBE, DgpSpec, simulate


def _raises(exc, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc:
        return True
    return False


def _config(**overrides):
    values = dict(num_trees=40, num_groups=20, seed=2)
    values.update(overrides)
    return make_config(**values)


def _bundle(group_weights):
    G = np.asarray(group_weights, dtype=float)
    return WeightBundle(G.mean(axis=0), G, np.arange(G.shape[0]))


def test_statistic_is_zero_for_identical_arms():
    bw = Bandwidth(1.0)
    Y = np.random.default_rng(0).normal(size=(5, 1))
    gm = GramMatrices.from_arms(Y, Y, bw)
    w = np.random.default_rng(1).dirichlet(np.ones(5))
    assert mmd_statistic(w, w, gm) < 1e-12


def test_statistic_matches_double_sum():
    rng = np.random.default_rng(4)
    bw = Bandwidth(0.8)
    Y0, Y1 = rng.normal(size=(4, 2)), rng.normal(size=(4, 2)) + 0.5
    w0, w1 = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    k = lambda a, b: gaussian_kernel(a, b, bw)
    expected = (sum(w0[i] * w0[j] * k(Y0[i], Y0[j]) for i in range(4) for j in range(4))
                + sum(w1[i] * w1[j] * k(Y1[i], Y1[j]) for i in range(4) for j in range(4))
                - 2 * sum(w0[i] * w1[j] * k(Y0[i], Y1[j]) for i in range(4) for j in range(4)))
    assert abs(mmd_statistic(w0, w1, GramMatrices.from_arms(Y0, Y1, bw)) - expected) < 1e-10


def test_point_mass_statistic():
    bw = Bandwidth(1.0)
    gm = GramMatrices.from_arms([[0.0]], [[1.5]], bw)
    assert abs(mmd_statistic([1.0], [1.0], gm) - (2 - 2 * gaussian_kernel([0.0], [1.5], bw))) < 1e-12


def test_swapping_arms():
    rng = np.random.default_rng(12)
    bw = Bandwidth(0.7)
    Y0, Y1 = rng.normal(size=(5, 1)), rng.normal(size=(6, 1))
    w0, w1 = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(6))
    a = mmd_statistic(w0, w1, GramMatrices.from_arms(Y0, Y1, bw))
    b = mmd_statistic(w1, w0, GramMatrices.from_arms(Y1, Y0, bw))
    assert abs(a - b) < 1e-12
    grid = np.linspace(-2, 2, 7).reshape(-1, 1)
    assert np.allclose(witness(w0, w1, Y0, Y1, bw, grid), -witness(w1, w0, Y1, Y0, bw, grid))


def test_null_draw_mean_is_stable_across_pairings():
    rng = np.random.default_rng(13)
    bw = Bandwidth(1.0)
    gm = GramMatrices.from_arms(rng.normal(size=(8, 1)), rng.normal(size=(8, 1)), bw)
    b0 = _bundle(rng.dirichlet(np.ones(8), size=200))
    b1 = _bundle(rng.dirichlet(np.ones(8), size=200))
    base = null_draws(b0, b1, gm)
    for _ in range(10):
        other = null_draws(b0, b1, gm, pairing=rng.permutation(200))
        assert abs(other.mean() - base.mean()) < 5 * base.std() / np.sqrt(200)


def test_statistic_checks_weight_lengths():
    gm = GramMatrices.from_arms(np.zeros((2, 1)), np.ones((3, 1)), Bandwidth(1.0))
    assert _raises(UsageError, mmd_statistic, [0.5, 0.5], [0.5, 0.5], gm)


def test_null_draws_vanish_when_groups_agree_with_the_forest():
    gm = GramMatrices.from_arms(np.zeros((2, 1)), np.ones((2, 1)), Bandwidth(1.0))
    b = _bundle([[0.5, 0.5]] * 4)
    assert np.array_equal(null_draws(b, b, gm), np.zeros(4))


def test_null_draws_hand_case():
    e = math.exp(-0.5)
    gm = GramMatrices(np.array([[1.0, e], [e, 1.0]]), np.eye(2), np.array([[1.0, 0.0], [0.0, 1.0]]))
    b0 = _bundle([[1.0, 0.0], [0.0, 1.0]])
    b1 = _bundle([[0.0, 1.0], [1.0, 0.0]])
    # d0 = (0.5, -0.5), d1 = (-0.5, 0.5) in group 0
    q0 = 0.25 * (2 - 2 * e)
    q1 = 0.5
    cross = -0.5
    draws = null_draws(b0, b1, gm)
    assert np.allclose(draws, [q0 + q1 - 2 * cross] * 2)


def test_null_draws_need_matching_group_counts():
    gm = GramMatrices.from_arms(np.zeros((2, 1)), np.ones((2, 1)), Bandwidth(1.0))
    assert _raises(ConfigError, null_draws, _bundle([[0.5, 0.5]] * 3), _bundle([[0.5, 0.5]] * 4), gm)


def test_identical_arms_give_zero_statistic_and_p_one():
    K = gram(np.random.default_rng(5).normal(size=(6, 1)), bw=Bandwidth(1.0))
    gm = GramMatrices(K, K, K)
    G = np.random.default_rng(6).dirichlet(np.ones(6), size=10)
    result = evaluate_test(_bundle(G), _bundle(G), gm, alpha=0.05)
    assert result.statistic == 0.0
    assert result.p_value == 1.0
    assert not result.reject


def test_alpha_is_checked():
    gm = GramMatrices.from_arms(np.zeros((2, 1)), np.ones((2, 1)), Bandwidth(1.0))
    b = _bundle([[0.5, 0.5]] * 4)
    assert _raises(UsageError, evaluate_test, b, b, gm, 0.0)
    assert _raises(UsageError, evaluate_test, b, b, gm, 0.6)


def test_witness_of_identical_arms_is_zero():
    Y = np.linspace(-1, 1, 5).reshape(-1, 1)
    w = np.full(5, 0.2)
    values = witness(w, w, Y, Y, Bandwidth(0.5), np.linspace(-2, 2, 9).reshape(-1, 1))
    assert np.allclose(values, 0.0)


def test_witness_single_point():
    value = witness([1.0], [1.0], [[0.0]], [[1.0]], Bandwidth(1.0), [1.0])
    assert abs(value - (1.0 - math.exp(-0.5))) < 1e-12


def test_zero_threshold_gives_zero_width_band():
    result = CoditeTestResult(0.0, np.zeros(5), 0.0, 1.0, 0.05)
    band = witness_band(result, [1.0], [1.0], [[0.0]], [[1.0]], Bandwidth(1.0))
    values, lower, upper = band.evaluate([[0.0], [1.0]])
    assert band.half_width == 0.0
    assert np.array_equal(lower, values) and np.array_equal(upper, values)


def test_probe_grid():
    grid = probe_grid(np.array([[0.0], [1.0]]), np.array([[2.0]]), Bandwidth(0.5))
    assert grid.shape == (201, 1)
    assert grid[0, 0] == -0.5 and grid[-1, 0] == 2.5
    assert _raises(UsageError, probe_grid, np.zeros((2, 2)), np.zeros((2, 2)), Bandwidth(1.0))


def test_fit_two_groups_partitions_the_data():
    data = simulate(DgpSpec(kind="cate_null", n=300, seed=1))
    fit = fit_two_groups(data, _config())
    assert fit.n0 + fit.n1 == 300
    assert fit.n0 == int((data.W == 0).sum())
    assert fit.forest0.num_groups == fit.forest1.num_groups == 20
    assert fit.forest0.d == 1 and fit.forest1.d == 1
    assert fit.grams.K01.shape == (fit.n0, fit.n1)


def test_fit_two_groups_needs_treatment():
    data = simulate(DgpSpec(kind="quantile_shift", n=100, seed=1))
    assert _raises(SchemaError, fit_two_groups, data, _config())


def test_fit_two_groups_needs_both_arms():
    rng = np.random.default_rng(0)
    data = Dataset(rng.uniform(size=(50, 2)), rng.normal(size=50), np.ones(50))
    assert _raises(DataError, fit_two_groups, data, _config())


def test_band_and_test_agree():
    for seed in range(3):
        data = simulate(DgpSpec(kind="cate_null", n=300, seed=seed))
        fit = fit_two_groups(data, _config(seed=seed))
        result, band = run_codite(fit, DEFAULT_CATE_PROBE, alpha=0.05)
        assert 0.0 < result.p_value <= 1.0
        assert 2 <= result.null_draws.size <= 20
        assert abs(band.half_width - math.sqrt(result.threshold_c)) < 1e-15
        grid = probe_grid(fit.Y0, fit.Y1, fit.bandwidth)
        if not result.reject:
            assert band.contains(grid, 0.0)
        frame = band.to_frame(grid)
        assert list(frame.columns) == ["y", "witness", "lower", "upper"]


def test_codite_test_record():
    data = simulate(DgpSpec(kind="cate_hetero", n=300, seed=4))
    fit = fit_two_groups(data, _config())
    b0, b1 = arm_weights(fit, DEFAULT_CATE_PROBE)
    assert b0.num_groups == b1.num_groups
    record = codite_test(fit, DEFAULT_CATE_PROBE).to_record()
    assert set(record) == {"statistic", "threshold", "p_value", "alpha", "reject", "n0", "n1", "B"}
    assert isinstance(record["reject"], bool)


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
