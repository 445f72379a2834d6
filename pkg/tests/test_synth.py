import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from ngm.synth import (PrecisionMatrix, chain_edges, chain_graph, chain_precision, dependency_curve,
                       linear_fit, partial_correlation, recovery_oracle, sample_mvn,
                       sample_mvn_array, score_recovery)


# -- precision matrices ----------------------------------------------------------------

def test_two_node_offdiagonal_magnitude():
    # sampling rule: off-diagonals from U{(-1, -0.5) u (0.5, 1)}
    for seed in range(50):
        t = chain_precision(2, np.random.default_rng(seed)).theta
        assert 0.5 <= abs(t[0, 1]) <= 1.0


@pytest.mark.parametrize("seed", range(10))
def test_chain_precision_is_spd_tridiagonal(seed):
    t = chain_precision(10, np.random.default_rng(seed)).theta
    np.testing.assert_array_equal(t, t.T)
    assert np.linalg.eigvalsh(t).min() >= 0.1 - 1e-12
    off = np.triu(t, 1) != 0
    assert off.sum() == 9 and all(off[i, i + 1] for i in range(9))


def test_chain_precision_needs_two_nodes():
    with pytest.raises(ValueError):
        chain_precision(1, np.random.default_rng(0))


def test_precision_matrix_validation():
    with pytest.raises(ValueError):
        PrecisionMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValueError):
        PrecisionMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_chain_graph_signs_follow_partial_correlation():
    t = chain_precision(6, np.random.default_rng(4)).theta
    rho = partial_correlation(t)
    g = chain_graph(6, t)
    for e, (i, j) in zip(g.edges, chain_edges(6)):
        assert e.sign == ("+" if rho[i, j] > 0 else "-")


# -- partial correlations -----------------------------------------------------------------

def test_partial_correlation_examples():
    assert partial_correlation(np.array([[2.0, -1.0], [-1.0, 2.0]]))[0, 1] == pytest.approx(0.5)
    np.testing.assert_array_equal(partial_correlation(np.diag([1.0, 2.0, 3.0])), 0.0)
    assert partial_correlation(np.array([[1.0, -0.6], [-0.6, 1.0]]))[0, 1] == pytest.approx(0.6)
    assert np.all(np.diag(partial_correlation(np.array([[2.0, 1.0], [1.0, 2.0]]))) == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_partial_correlation_in_unit_interval(d, seed):
    a = np.random.default_rng(seed).normal(size=(d, d))
    t = a @ a.T + 1e-3 * np.eye(d)
    rho = partial_correlation(t)
    assert np.all(np.abs(rho) <= 1 + 1e-12)


# -- sampling -----------------------------------------------------------------------------

def test_identity_precision_sample_covariance():
    m = 20000
    x = sample_mvn_array(np.eye(3), m, np.random.default_rng(0))
    assert np.abs(np.cov(x, rowvar=False) - np.eye(3)).max() < 5 / np.sqrt(m)


def test_sample_mvn_bitwise_reproducible():
    t = chain_precision(5, np.random.default_rng(0))
    a = sample_mvn_array(t, 100, np.random.default_rng(9))
    b = sample_mvn_array(t, 100, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()


def test_sample_covariance_converges_to_inverse_precision():
    t = chain_precision(4, np.random.default_rng(2))
    x = sample_mvn_array(t, 50000, np.random.default_rng(3))
    np.testing.assert_allclose(np.cov(x, rowvar=False), t.covariance(), atol=0.05)


@pytest.mark.parametrize("seed", range(3))
def test_empirical_partial_correlation_signs(seed):
    rng = np.random.default_rng(seed)
    t = chain_precision(10, rng)
    ds = sample_mvn(t, 2000, rng)
    x = np.column_stack(ds.columns)
    emp = partial_correlation(np.linalg.inv(np.cov(x, rowvar=False)))
    rho = partial_correlation(t.theta)
    for i, j in chain_edges(10):
        assert np.sign(emp[i, j]) == np.sign(rho[i, j])


# -- recovery oracle and scoring -------------------------------------------------------------

def test_oracle_independent_columns_near_zero():
    m = 4000
    x = np.random.default_rng(5).normal(size=(m, 6))
    s = recovery_oracle(x)
    assert s[np.triu_indices(6, 1)].max() < 3 / np.sqrt(m)


def test_oracle_chain_top_edges():
    rng = np.random.default_rng(1)
    t = chain_precision(10, rng)
    s = recovery_oracle(sample_mvn(t, 4000, rng))
    iu = np.triu_indices(10, 1)
    top = np.argsort(-s[iu])[:9]
    assert {(int(iu[0][k]), int(iu[1][k])) for k in top} == set(chain_edges(10))


def test_oracle_singular_without_ridge():
    with pytest.raises(np.linalg.LinAlgError):
        recovery_oracle(np.random.default_rng(0).normal(size=(3, 5)), ridge=0)


def test_perfect_and_inverted_scores():
    adj = np.zeros((4, 4))
    for i, j in chain_edges(4):
        adj[i, j] = adj[j, i] = 1
    met = score_recovery(adj, adj)
    assert met.auc == 1.0 and met.aupr == 1.0
    assert score_recovery(adj, 1 - adj).auc == 0.0
    assert 0 <= met.aupr <= 1 and 0 <= met.auc <= 1


def test_degenerate_labels_rejected():
    with pytest.raises(ValueError):
        score_recovery(np.zeros((3, 3)), np.random.default_rng(0).random((3, 3)))
    with pytest.raises(ValueError):
        score_recovery(np.ones((3, 3)), np.random.default_rng(0).random((3, 3)))


def _labels_scores(d, seed, ties):
    r = np.random.default_rng(seed)
    lab = r.integers(0, 2, size=(d, d))
    lab = np.triu(lab, 1)
    lab = lab + lab.T
    sc = r.random((d, d))
    if ties:
        sc = np.round(sc * 3) / 3
    sc = np.triu(sc, 1) + np.triu(sc, 1).T
    return lab, sc


@settings(max_examples=80, deadline=None)
@given(st.integers(3, 9), st.integers(0, 2 ** 31 - 1), st.booleans())
def test_scores_match_sklearn(d, seed, ties):
    lab, sc = _labels_scores(d, seed, ties)
    iu = np.triu_indices(d, 1)
    y, s = lab[iu], sc[iu]
    if y.min() == y.max():
        return
    met = score_recovery(lab, sc)
    assert met.auc == pytest.approx(roc_auc_score(y, s), abs=1e-12)
    assert met.aupr == pytest.approx(average_precision_score(y, s), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 8), st.integers(0, 2 ** 31 - 1))
def test_scores_invariant_to_monotone_maps(d, seed):
    lab, sc = _labels_scores(d, seed, ties=False)
    if lab[np.triu_indices(d, 1)].min() == lab[np.triu_indices(d, 1)].max():
        return
    a = score_recovery(lab, sc)
    b = score_recovery(lab, np.exp(3 * sc) - 7)
    assert (a.auc, a.aupr) == (b.auc, b.aupr)


def test_edge_list_labels_match_adjacency():
    sc = np.random.default_rng(0).random((5, 5))
    adj = np.zeros((5, 5))
    for i, j in chain_edges(5):
        adj[i, j] = adj[j, i] = 1
    assert score_recovery(chain_edges(5), sc).to_json() == score_recovery(adj, sc).to_json()


# -- curves -----------------------------------------------------------------------------------

def test_linear_fit_exact_line():
    x = np.linspace(-2, 2, 9)
    slope, r2 = linear_fit(np.column_stack([x, 0.5 - 1.5 * x]))
    assert slope == pytest.approx(-1.5) and r2 == pytest.approx(1.0)


def test_dependency_curve_single_point(chain, chain_model):
    c = dependency_curve(chain_model, "x2", "x1", [0.3])
    assert c.shape == (1, 2) and c[0, 0] == 0.3
