import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ichfuse.featsel import (
    FeatureTable,
    ImportanceReport,
    PcaModel,
    exact_shapley,
    fit_pca,
    read_table,
    reduce_features,
    reduce_features_grouped,
    select_features,
    shapley_importance,
    shapley_values,
    transform_pca,
    write_table,
)


def table(X, labels=None):
    X = np.asarray(X, dtype=float)
    ids = [(f"scan{i // 3}", f"s{i % 3}") for i in range(X.shape[0])]
    return FeatureTable(ids, X, [f"f{j}" for j in range(X.shape[1])], labels)


def permutation_oracle(f, x, base):
    """Shapley values by averaging marginal gains over all d! orderings."""
    d = x.size
    phi = np.zeros(d)
    perms = list(itertools.permutations(range(d)))
    for order in perms:
        z = base.copy()
        prev = f(z[None])[0]
        for i in order:
            z[i] = x[i]
            cur = f(z[None])[0]
            phi[i] += cur - prev
            prev = cur
    return phi / len(perms)


# ------------------------------------------------------------------- PCA


def test_pca_single_axis():
    X = np.zeros((5, 3))
    X[:, 0] = [-2, -1, 0, 1, 2]
    m = fit_pca(X, 1)
    np.testing.assert_allclose(m.components[0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(m.explained_variance, [2.5])


def test_pca_diagonal_line():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    m = fit_pca(X, 2)
    np.testing.assert_allclose(m.components[0], [1 / math.sqrt(2)] * 2, atol=1e-12)
    np.testing.assert_allclose(m.explained_variance, [2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(transform_pca(m, X)[:, 0], [-math.sqrt(2), 0, math.sqrt(2)], atol=1e-12)


def test_transform_mean_and_identity_model():
    X = np.random.default_rng(8).normal(size=(10, 3))
    m = fit_pca(X, 2)
    np.testing.assert_allclose(transform_pca(m, m.mean[None]), 0.0, atol=1e-15)
    ident = PcaModel(np.zeros(3), np.eye(3), np.ones(3))
    np.testing.assert_array_equal(transform_pca(ident, X), X)
    with pytest.raises(ValueError, match="columns"):
        transform_pca(ident, X[:, :2])


def test_pca_3d_eigenvalues_match_characteristic_roots():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(25, 3)) @ rng.normal(size=(3, 3))
    S = np.cov(X, rowvar=False)
    # det(S - t I) = -t^3 + tr t^2 - c2 t + det, with c2 the sum of principal 2x2 minors
    c2 = sum(S[i, i] * S[j, j] - S[i, j] ** 2 for i, j in ((0, 1), (0, 2), (1, 2)))
    roots = np.sort(np.roots([1.0, -np.trace(S), c2, -np.linalg.det(S)]).real)[::-1]
    np.testing.assert_allclose(fit_pca(X, 3).explained_variance, roots, rtol=1e-9)


def test_pca_2d_eigenvalues_match_quadratic_roots():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 2)) @ np.array([[2.0, 0.3], [0.0, 0.5]])
    S = np.cov(X, rowvar=False)
    tr, det = np.trace(S), np.linalg.det(S)
    disc = math.sqrt(tr * tr - 4 * det)
    m = fit_pca(X, 2)
    np.testing.assert_allclose(m.explained_variance, [(tr + disc) / 2, (tr - disc) / 2], rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_pca_properties(n, d, seed):
    X = np.random.default_rng(seed).normal(size=(n, d))
    k = min(n - 1, d)
    m = fit_pca(X, k)
    np.testing.assert_allclose(m.components @ m.components.T, np.eye(k), atol=1e-10)
    assert np.all(np.diff(m.explained_variance) <= 1e-12)
    pivot = np.argmax(np.abs(m.components), axis=1)
    assert np.all(m.components[np.arange(k), pivot] > 0)
    Z = transform_pca(m, X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-10)
    if k == d:
        np.testing.assert_allclose(Z @ m.components + m.mean, X, atol=1e-10)


def test_pca_errors_and_clamp(caplog):
    X = np.random.default_rng(0).normal(size=(20, 10))
    with pytest.raises(ValueError, match="outside"):
        fit_pca(X, 50)
    with pytest.raises(ValueError, match="zero-variance"):
        fit_pca(np.ones((4, 3)), 1)
    m, z = reduce_features(table(X), 50)
    assert m.k == 10 and z.feature_names[0] == "pc1"
    assert "exceeds" in caplog.text


def test_pca_json_round_trip():
    X = np.random.default_rng(1).normal(size=(9, 4))
    m = fit_pca(X, 3)
    m2 = PcaModel.from_json(m.to_json())
    np.testing.assert_array_equal(transform_pca(m2, X), transform_pca(m, X))


def test_grouped_pca():
    X = np.random.default_rng(2).normal(size=(12, 6))
    models, z = reduce_features_grouped(table(X), {"a": ["f0", "f1", "f2"], "b": ["f3", "f4", "f5"]}, k=2)
    assert set(models) == {"a", "b"}
    assert z.feature_names == ["a_pc1", "a_pc2", "b_pc1", "b_pc2"]


# --------------------------------------------------------------- Shapley


def test_additive_model_gives_weighted_offsets():
    w = np.array([1.0, -2.0, 0.5])
    base = np.array([0.2, 0.1, -1.0])
    x = np.array([1.0, 3.0, 2.0])
    phi = exact_shapley(lambda Z: Z @ w, x, base)
    np.testing.assert_allclose(phi, w * (x - base), atol=1e-12)


def test_interaction_split_evenly():
    phi = exact_shapley(lambda Z: Z[:, 0] * Z[:, 1], np.array([1.0, 1.0, 5.0]), np.zeros(3))
    np.testing.assert_allclose(phi, [0.5, 0.5, 0.0], atol=1e-12)


def test_symmetric_features_share_equally():
    f = lambda Z: np.tanh(Z[:, 0] + Z[:, 1]) + Z[:, 2] ** 2
    phi = exact_shapley(f, np.array([0.7, 0.7, -0.3]), np.array([0.1, 0.1, 0.0]))
    assert phi[0] == pytest.approx(phi[1], abs=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_exact_matches_permutation_enumeration(d):
    rng = np.random.default_rng(d)
    A = rng.normal(size=(d, d))
    f = lambda Z: np.sin(Z @ A).sum(axis=1) + np.prod(Z, axis=1)
    x, base = rng.normal(size=d), rng.normal(size=d)
    np.testing.assert_allclose(exact_shapley(f, x, base), permutation_oracle(f, x, base), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_efficiency_and_dummy(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, 3))
    A[-1] = 0.0  # last feature never influences the output
    f = lambda Z: np.tanh(Z @ A) * np.array([1.0, -0.5, 2.0])
    x, base = rng.normal(size=d), rng.normal(size=d)
    phi = exact_shapley(f, x, base)
    assert phi.shape == (d, 3)
    np.testing.assert_allclose(phi.sum(axis=0), f(x[None])[0] - f(base[None])[0], atol=1e-9)
    np.testing.assert_allclose(phi[-1], 0.0, atol=1e-12)


def test_montecarlo_converges_to_exact():
    rng = np.random.default_rng(7)
    d = 8
    A = rng.normal(size=(d, 4))
    f = lambda Z: np.tanh(Z @ A).sum(axis=1) + Z[:, 0] * Z[:, 1]
    X = rng.normal(size=(3, d))
    bg = rng.normal(size=(30, d))
    ex = shapley_values(f, X, bg, mode="exact")
    mc = shapley_values(f, X, bg, mode="montecarlo", samples=10_000, seed=0)
    for a, b in zip(ex, mc):
        assert np.linalg.norm(b - a) / np.linalg.norm(a) < 0.05
    mc2 = shapley_values(f, X, bg, mode="montecarlo", samples=10_000, seed=0)
    np.testing.assert_array_equal(mc, mc2)


def test_shapley_argument_errors():
    f = lambda Z: Z.sum(axis=1)
    with pytest.raises(ValueError, match="empty background"):
        shapley_values(f, np.ones((1, 3)), np.empty((0, 3)))
    with pytest.raises(ValueError, match="unknown mode"):
        shapley_values(f, np.ones((1, 3)), np.ones((2, 3)), mode="kernel")
    with pytest.raises(ValueError, match="d <= 15"):
        exact_shapley(f, np.ones(16), np.zeros(16))


def test_importance_shares_and_selection():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 4))
    t = table(X)
    w = np.array([3.0, 1.0, 0.0, 0.001])
    r = shapley_importance(lambda Z: Z @ w, t, t)
    assert r.shares.sum() == pytest.approx(1.0)
    assert r.selected == ["f0", "f1"]
    assert r.to_json()["selected"] == ["f0", "f1"]


def test_select_features_edges():
    names = [f"f{i}" for i in range(100)]
    flat = ImportanceReport(names, np.ones(100), np.full(100, 0.01))
    assert select_features(flat, 0.01) == []  # strict threshold
    five = ImportanceReport(list("abcde"), np.ones(5), np.array([0.5, 0.3, 0.2, 0.0, 0.0]))
    assert select_features(five) == ["a", "b", "c"]
    decay = 0.75 ** np.arange(30)
    decay /= decay.sum()
    report = ImportanceReport(names[:30], decay, decay)
    assert select_features(report) == names[:12]
    mixed = ImportanceReport(["a", "b", "c"], np.ones(3), np.array([0.5, 0.01, 0.49]))
    assert select_features(mixed, 0.01) == ["a", "c"]
    assert select_features(mixed, 0.0) == ["a", "b", "c"]


def test_constant_model_rejected():
    t = table(np.random.default_rng(5).normal(size=(6, 3)))
    with pytest.raises(ValueError, match="does not depend"):
        shapley_importance(lambda Z: np.zeros(len(Z)), t, t)


# ------------------------------------------------------------------ table


def test_feature_csv_round_trip():
    X = np.random.default_rng(6).normal(size=(6, 3))
    t = table(X, labels=["IPH"] * 3 + ["SDH"] * 3)
    buf = io.StringIO()
    write_table(t, buf)
    assert buf.getvalue().splitlines()[0] == "scan_id,slice_id,f0,f1,f2,label"
    back = read_table(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(back.X, X)
    assert back.sample_ids == t.sample_ids and back.labels == t.labels


def test_feature_table_rejects_missing_values():
    X = np.ones((3, 2))
    X[1, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        table(X)


def test_row_subset():
    t = table(np.arange(12.0).reshape(6, 2), labels=list("abcdef"))
    s = t.rows([4, 1])
    assert s.sample_ids == [t.sample_ids[4], t.sample_ids[1]] and s.labels == ["e", "b"]
    np.testing.assert_array_equal(s.X, [[8, 9], [2, 3]])
