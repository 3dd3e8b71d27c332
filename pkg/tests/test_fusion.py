import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ichfuse.confmap import ScanRecord, dataset_from_arrays
from ichfuse.fusion import (
    FusionConfig,
    LearnedFusion,
    SingleSliceMeasureError,
    choquet_fuse,
    choquet_scores,
    entropy_weight,
    fuse_baseline,
    grid_search_lambda,
    solve_lambda,
    subset_measure,
    tail_measures,
)
from ichfuse.synth import fig6_config, generate_confidence_dataset

from conftest import random_scan, scans

EXACT_CLASSICAL = FusionConfig(measure="exact", sort="classical")


# ---------------------------------------------------------------- densities


@pytest.mark.parametrize("p, E, g", [
    ((0.9, 0.05, 0.03, 0.01, 0.01), 0.1, 0.9),
    ((0.2,) * 5, 0.8, 0.2),
    ((1, 0, 0, 0, 0), 0.0, 1.0),
])
def test_entropy_weight(p, E, g):
    e, w = entropy_weight(p)
    assert e == pytest.approx(E, abs=1e-15)
    assert w == pytest.approx(g, abs=1e-15)
    assert e + w == pytest.approx(1.0, abs=1e-15)


# ------------------------------------------------------------------- lambda


def test_lambda_additive_case():
    assert solve_lambda([0.5, 0.5]) == 0.0


def test_lambda_closed_form_quadratics():
    # 0.36 l^2 + 1.2 l + 1 = 1 + l  ->  l = -0.2 / 0.36
    assert solve_lambda([0.6, 0.6]) == pytest.approx(-5 / 9, abs=1e-12)
    # 0.09 l^2 + 0.6 l + 1 = 1 + l  ->  l = 0.4 / 0.09
    assert solve_lambda([0.3, 0.3]) == pytest.approx(40 / 9, abs=1e-12)


def test_lambda_single_slice():
    assert solve_lambda([1.0]) == 0.0
    with pytest.raises(SingleSliceMeasureError, match="single-slice"):
        solve_lambda([0.7])


@pytest.mark.parametrize("g", [[0.0, 0.0], [0.3, 0.0], [1.2, 0.3], [-0.1, 0.5]])
def test_lambda_rejects_bad_densities(g):
    with pytest.raises(ValueError):
        solve_lambda(g)


def test_lambda_unit_density_limit():
    # a certain slice pins the normalizing measure to the lambda -> -1 limit
    lam = solve_lambda([1.0, 0.4, 0.3])
    assert lam == -1.0
    assert tail_measures([0.4, 0.3, 1.0], lam)[0] == pytest.approx(1.0, abs=1e-15)


def test_lambda_matches_polynomial_roots(rng):
    for _ in range(200):
        n = rng.integers(2, 8)
        g = rng.uniform(0.05, 0.95, n)
        lam = solve_lambda(g)
        # independent route: real roots of prod(1 + l g) - (1 + l), trivial root removed
        poly = np.polynomial.Polynomial([1.0])
        for gi in g:
            poly = poly * np.polynomial.Polynomial([1.0, gi])
        poly = poly - np.polynomial.Polynomial([1.0, 1.0])
        roots = poly.roots()
        real = roots[np.abs(roots.imag) < 1e-9].real
        real = real[(real > -1) & (np.abs(real) > 1e-9)]
        assert real.size == 1
        assert lam == pytest.approx(real[0], rel=1e-7, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=40))
def test_lambda_sign_and_residual(g):
    g = np.array(g)
    lam = solve_lambda(g)
    # roots closer to -1 than float spacing round to -1.0
    assert lam >= -1
    assert abs(np.prod(1 + lam * g) - (1 + lam)) < 1e-10 * max(1.0, abs(lam))
    s = g.sum()
    if abs(s - 1) > 1e-12:
        assert np.sign(lam) == np.sign(1 - s)


# ------------------------------------------------------------------ measure


def test_subset_measure_additive():
    g = [0.1, 0.2, 0.3, 0.4]
    for i in range(1, 5):
        assert subset_measure(g, 0.0, i) == pytest.approx(sum(g[i - 1 :]), abs=1e-15)


def test_subset_measure_normalization_hand_value():
    assert subset_measure([0.6, 0.6], -5 / 9, 1) == pytest.approx(1.0, abs=1e-12)
    assert subset_measure([0.6, 0.6], -5 / 9, 2) == 0.6


def test_subset_measure_index_range():
    with pytest.raises(IndexError):
        subset_measure([0.5, 0.5], 0.0, 0)
    with pytest.raises(IndexError):
        subset_measure([0.5, 0.5], 0.0, 3)


def test_tail_chain_monotone_and_normalized(rng):
    for _ in range(500):
        n = rng.integers(2, 30)
        g = rng.uniform(0.01, 1.0, n)
        mu = tail_measures(g, solve_lambda(g))
        assert mu[0] == pytest.approx(1.0, abs=1e-9)
        assert np.all(np.diff(mu) <= 1e-12)
        assert np.all(mu >= 0)


# ------------------------------------------------------------------ Choquet

THREE = np.array([
    [0.6, 0.4, 0.0, 0.0, 0.0],
    [0.5, 0.5, 0.0, 0.0, 0.0],
    [0.2, 0.8, 0.0, 0.0, 0.0],
])


def test_three_slice_classical_against_frozen_oracle():
    # exact symbolic evaluation of the level-set Choquet sum, lambda = (-59 + sqrt(1321)) / 24
    fused = choquet_fuse(ScanRecord.from_array("x", THREE), EXACT_CLASSICAL)
    assert fused.lam == pytest.approx((-59 + np.sqrt(1321)) / 24, abs=1e-14)
    np.testing.assert_allclose(fused.F, [0.50504586384039685890, 0.73224260615128749285, 0, 0, 0], atol=1e-14)
    assert fused.decision == 1


def test_three_slice_global_order_against_frozen_oracle():
    fused = choquet_fuse(ScanRecord.from_array("x", THREE), FusionConfig())
    np.testing.assert_allclose(fused.F, [0.27469112738154499142, 0.72530887261845500858, 0, 0, 0], atol=1e-14)
    assert fused.order == (1, 0, 2)
    assert fused.decision == 1


def _enumerated_choquet(P):
    """Test-local oracle: subset lattice built by explicit set unions."""
    n, C = P.shape
    g = P.max(axis=1)
    lam = solve_lambda(g)
    mu = {frozenset(): 0.0}
    for size in range(1, n + 1):
        for S in itertools.combinations(range(n), size):
            head, rest = S[0], frozenset(S[1:])
            mu[frozenset(S)] = g[head] + mu[rest] + lam * g[head] * mu[rest]
    F = np.zeros(C)
    for k in range(C):
        levels = sorted(set(P[:, k]))
        prev = 0.0
        for v in levels:
            F[k] += (v - prev) * mu[frozenset(np.flatnonzero(P[:, k] >= v).tolist())]
            prev = v
    return F


def test_classical_matches_local_enumeration(rng):
    for _ in range(100):
        scan = random_scan(rng, int(rng.integers(2, 7)))
        np.testing.assert_allclose(choquet_fuse(scan, EXACT_CLASSICAL).F, _enumerated_choquet(scan.probs),
                                   atol=1e-12, rtol=0)


def test_single_slice_identity():
    p = (0.7, 0.1, 0.1, 0.05, 0.05)
    for cfg in (FusionConfig(), EXACT_CLASSICAL, FusionConfig(measure="grid", lam=-0.3)):
        fused = choquet_fuse(ScanRecord.from_array("one", [p]), cfg)
        np.testing.assert_array_equal(fused.F, p)
        assert fused.decision == 0


def test_constant_scan_idempotent():
    p = np.array([0.1, 0.5, 0.2, 0.15, 0.05])
    for n in (2, 5, 17):
        fused = choquet_fuse(ScanRecord.from_array("c", np.tile(p, (n, 1))), EXACT_CLASSICAL)
        np.testing.assert_allclose(fused.F, p, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(scans(min_n=2, max_n=10), st.sampled_from(["classical", "paper"]), st.randoms(use_true_random=False))
def test_permutation_invariance(scan, sort, rnd):
    perm = list(range(scan.n))
    rnd.shuffle(perm)
    shuffled = ScanRecord.from_array("h", scan.probs[perm])
    for cfg in (FusionConfig(sort=sort), FusionConfig(measure="grid", sort=sort, lam=-0.4)):
        a, b = choquet_fuse(scan, cfg), choquet_fuse(shuffled, cfg)
        np.testing.assert_array_equal(a.F, b.F)
        assert a.decision == b.decision


@settings(max_examples=200, deadline=None)
@given(scans(min_n=2, max_n=10))
def test_classical_bounded(scan):
    F = choquet_fuse(scan, EXACT_CLASSICAL).F
    assert np.all(F >= scan.probs.min(axis=0) - 1e-12)
    assert np.all(F <= scan.probs.max(axis=0) + 1e-12)


@settings(max_examples=200, deadline=None)
@given(scans(min_n=2, max_n=10), st.floats(-0.99, 3.0), st.sampled_from(["classical", "paper"]))
def test_normalization_keeps_decision(scan, lam, sort):
    raw, mu_full, _ = choquet_scores(scan.probs, lam, sort, normalize=False)
    norm, _, _ = choquet_scores(scan.probs, lam, sort, normalize=True)
    np.testing.assert_allclose(norm * mu_full, raw, rtol=1e-12, atol=1e-15)
    assert np.argmax(raw) == np.argmax(norm)


def test_global_order_allows_negative_increments():
    # class-0 probabilities fall while top-class confidence rises
    P = np.array([[0.5, 0.3, 0.2, 0, 0], [0.1, 0.9, 0, 0, 0]])
    fused = choquet_fuse(ScanRecord.from_array("neg", P), FusionConfig(sort="paper"))
    assert fused.F[0] < P[:, 0].max()
    assert fused.decision == 1


def test_grid_mode_requires_lambda():
    scan = ScanRecord.from_array("x", THREE)
    with pytest.raises(ValueError, match="lambda"):
        choquet_fuse(scan, FusionConfig(measure="grid"))


@pytest.mark.parametrize("kwargs", [
    {"measure": "sugeno"}, {"sort": "random"}, {"grid_step": 0}, {"grid_start": -1.0}, {"grid_stop": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FusionConfig(**kwargs)


def test_default_grid():
    grid = FusionConfig().grid()
    assert grid.size == 99
    assert grid[0] == -0.99 and grid[-1] == -0.01
    assert np.all(np.diff(grid) > 0)


# -------------------------------------------------------------- grid search


@pytest.fixture(scope="module")
def small_cohort():
    from dataclasses import replace

    return generate_confidence_dataset(replace(fig6_config(7), scale=0.05))


def test_grid_search_matches_exhaustive_rerun(small_cohort):
    cfg = FusionConfig(measure="grid", grid_step=0.05, grid_start=-0.95, grid_stop=-0.05)
    lam, grid, acc = grid_search_lambda(small_cohort, cfg, return_scores=True)
    y = small_cohort.labels()
    rerun = []
    for lv in grid:
        c = FusionConfig(measure="grid", lam=float(lv))
        rerun.append(np.mean([choquet_fuse(s, c).decision == t for s, t in zip(small_cohort.scans, y)]))
    rerun = np.array(rerun)
    np.testing.assert_allclose(acc, rerun, atol=0)
    best = max(rerun)
    assert lam == max(lv for lv, a in zip(grid, rerun) if a == best)


def test_grid_search_single_candidate(small_cohort):
    cfg = FusionConfig(measure="grid", grid_start=-0.5, grid_stop=-0.5)
    assert grid_search_lambda(small_cohort, cfg) == -0.5


def test_grid_search_reaches_exact_when_exact_is_perfect():
    rng = np.random.default_rng(3)
    probs, labels = [], []
    for j in range(40):
        y = j % 5
        P = rng.dirichlet(np.full(5, 1.0), size=6) * 0.3
        P[:, y] += 0.7
        probs.append(P)
        labels.append(y)
    d = dataset_from_arrays(probs, labels)
    exact = np.mean([choquet_fuse(s).decision == t for s, t in zip(d.scans, d.labels())])
    assert exact == 1.0
    lam, _, acc = grid_search_lambda(d, FusionConfig(measure="grid"), return_scores=True)
    assert acc.max() == exact


def test_grid_search_needs_labels():
    d = dataset_from_arrays([THREE])
    with pytest.raises(ValueError, match="labelled"):
        grid_search_lambda(d)


# ---------------------------------------------------------------- baselines


def test_mean_baseline_tie_breaks_low():
    scan = ScanRecord.from_array("t", [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0]])
    fused = fuse_baseline(scan, "mean")
    np.testing.assert_array_equal(fused.F, [0.5, 0.5, 0, 0, 0])
    assert fused.decision == 0


def test_majority_vote():
    P = np.eye(5)[[1, 1, 4]] * 0.6 + 0.08
    fused = fuse_baseline(ScanRecord.from_array("v", P), "mv")
    assert fused.decision == 1
    np.testing.assert_allclose(fused.F, [0, 2 / 3, 0, 0, 1 / 3])


def test_mean_idempotent():
    p = [0.1, 0.2, 0.3, 0.25, 0.15]
    fused = fuse_baseline(ScanRecord.from_array("m", [p] * 4), "mean")
    np.testing.assert_allclose(fused.F, p, atol=1e-15)


def test_learned_baseline_requires_model():
    scan = ScanRecord.from_array("x", THREE)
    with pytest.raises(ValueError, match="trained model"):
        fuse_baseline(scan, "learned")
    with pytest.raises(ValueError, match="unknown"):
        fuse_baseline(scan, "median")


def test_learned_baseline_fits(small_cohort):
    model = LearnedFusion().fit(small_cohort)
    fused = [fuse_baseline(s, "mlp", model) for s in small_cohort.scans]
    for f in fused:
        assert f.F.sum() == pytest.approx(1.0, abs=1e-12)
    acc = np.mean([f.decision == t for f, t in zip(fused, small_cohort.labels())])
    assert acc > 0.5
