import numpy as np
import pytest
from scipy.spatial.distance import jensenshannon
from scipy.special import softmax

from jsdmp import autodiff as ad
from jsdmp.autodiff import Tensor
from jsdmp.errors import ConfigError, DimensionError, DomainError, NonFiniteError
from jsdmp.graph import build_graph
from jsdmp.layers import (
    JsdmpLayerParams,
    aggregate,
    combined_divergence,
    compute_edge_weights,
    contextual_divergence,
    edge_weights,
    jensen_shannon,
    similarity,
    structural_divergence,
    sym_normalize,
)

from conftest import central_difference, grad_of, random_graph, rel_err, value_of

LN2 = np.log(2.0)


def edge_values(dense: np.ndarray, g) -> np.ndarray:
    return dense[g.src, g.dst]


def dense_from_edges(values: np.ndarray, g) -> np.ndarray:
    m = np.zeros((g.n, g.n))
    m[g.src, g.dst] = values.ravel()
    return m


# ---------------------------------------------------------------------------
# similarity


def test_similarity_matches_dense_oracle(rng, graph5):
    F = rng.normal(size=(5, 3))
    X = rng.normal(size=(5, 4))
    a = rng.normal(size=(6, 1))
    S = similarity(Tensor(F), Tensor(X), graph5, Tensor(a)).values[:, 0]
    dense = (F @ a[:3]) + (F @ a[3:]).T + X @ X.T
    np.testing.assert_allclose(S, edge_values(dense, graph5), atol=1e-10)


def test_similarity_examples():
    g = build_graph(2, [(0, 1)])
    zero = similarity(Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 2))), g, Tensor(np.zeros((4, 1))))
    np.testing.assert_array_equal(zero.values, 0.0)
    X = Tensor([[1.0, 0.0], [0.0, 1.0]])
    S = similarity(None, X, g, None).values[:, 0]
    # edges (0,0) (0,1) (1,0) (1,1): orthogonal unit rows
    np.testing.assert_array_equal(S, [1.0, 0.0, 0.0, 1.0])
    with pytest.raises(DimensionError):
        similarity(Tensor(np.ones((2, 2))), None, g, Tensor(np.ones((3, 1))))


# ---------------------------------------------------------------------------
# divergences


def test_divergence_properties_on_random_pairs():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(6), size=1000)
    Q = rng.dirichlet(np.ones(6), size=1000)
    d_pq = jensen_shannon(Tensor(P), Tensor(Q)).values[:, 0]
    d_qp = jensen_shannon(Tensor(Q), Tensor(P)).values[:, 0]
    assert np.all(d_pq >= 0) and np.all(d_pq <= LN2 + 1e-10)
    np.testing.assert_allclose(d_pq, d_qp, atol=1e-12)
    np.testing.assert_allclose(d_pq, jensenshannon(P, Q, axis=1) ** 2, atol=1e-12)
    assert np.all(d_pq > 0)
    same = jensen_shannon(Tensor(P), Tensor(P.copy())).values[:, 0]
    np.testing.assert_allclose(same, 0.0, atol=1e-15)


def test_disjoint_support_gives_ln2():
    rng = np.random.default_rng(1)
    for _ in range(50):
        k = rng.integers(1, 5)
        p = np.zeros(6)
        q = np.zeros(6)
        p[:k] = rng.dirichlet(np.ones(k))
        q[k:] = rng.dirichlet(np.ones(6 - k))
        d = jensen_shannon(Tensor(p[None]), Tensor(q[None])).item()
        assert abs(d - LN2) < 1e-10


def test_normalized_contextual_divergence_matches_scipy(rng, graph5):
    F = rng.normal(size=(5, 4))
    D = contextual_divergence(Tensor(F), graph5).values[:, 0]
    P = softmax(F, axis=1)
    oracle = jensenshannon(P[graph5.src], P[graph5.dst], axis=1) ** 2
    np.testing.assert_allclose(D, oracle, atol=1e-12)
    assert np.all(D[graph5.src == graph5.dst] == 0.0)
    assert np.all(D <= LN2 + 1e-10)


def test_zero_divergence_iff_identical_after_softmax():
    g = build_graph(3, [(0, 1), (1, 2)])
    # rows 0 and 1 differ by a constant shift, so their softmaxes coincide
    F = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [3.0, 2.0, 1.0]])
    D = dense_from_edges(contextual_divergence(Tensor(F), g).values, g)
    assert D[0, 1] == pytest.approx(0.0, abs=1e-15)
    assert D[1, 2] > 0.1


def test_structural_divergence_of_distinct_one_hots():
    g = build_graph(2, [(0, 1)])
    X = np.eye(3)[[0, 2]]
    D = structural_divergence(Tensor(X), g).values[:, 0]
    assert 0.0 < D[1] < LN2
    oracle = jensenshannon(softmax(X[0]), softmax(X[1])) ** 2
    assert D[1] == pytest.approx(oracle, abs=1e-14)


def test_literal_mode_rejects_negative_and_matches_formula(rng, graph5):
    with pytest.raises(DomainError, match="normalized"):
        contextual_divergence(Tensor(-np.ones((5, 2))), graph5, mode="literal")
    F = rng.random((5, 3))
    D = contextual_divergence(Tensor(F), graph5, mode="literal").values[:, 0]
    Fi, Fj = F[graph5.src], F[graph5.dst]
    M = 0.5 * softmax(Fi + Fj, axis=1)
    oracle = 0.5 * (Fi * np.log(Fi / M) + Fj * np.log(Fj / M)).sum(axis=1)
    np.testing.assert_allclose(D, oracle, atol=1e-12)
    with pytest.raises(ConfigError):
        contextual_divergence(Tensor(F), graph5, mode="other")


def test_combined_divergence_mixing(rng):
    Dc = Tensor(rng.random((4, 1)))
    Ds = Tensor(rng.random((4, 1)))
    np.testing.assert_array_equal(combined_divergence(Dc, Ds, 1.0).values, Dc.values)
    np.testing.assert_array_equal(combined_divergence(Dc, Ds, 0.0).values, Ds.values)
    np.testing.assert_allclose(combined_divergence(Dc, Ds, 0.3).values, 0.3 * Dc.values + 0.7 * Ds.values)
    with pytest.raises(ConfigError):
        combined_divergence(Dc, Ds, 1.5)


# ---------------------------------------------------------------------------
# weights and normalization


def test_edge_weights_match_dense_oracle(rng, graph5):
    S = rng.normal(size=(graph5.num_edges, 1))
    D = rng.random((graph5.num_edges, 1))
    E = edge_weights(Tensor(S), Tensor(D), 0.7).values
    Sd, Dd = dense_from_edges(S, graph5), dense_from_edges(D, graph5)
    oracle = np.exp(Sd - 0.7 * Dd)
    np.testing.assert_allclose(E[:, 0], edge_values(oracle, graph5), rtol=1e-10)
    assert edge_weights(Tensor([[0.0]]), Tensor([[0.0]]), 1.0).item() == 1.0
    assert edge_weights(Tensor([[0.0]]), Tensor([[LN2]]), 1.0).item() == pytest.approx(0.5, abs=1e-15)


def test_edge_weights_clamp_and_nonfinite():
    assert edge_weights(Tensor([[1000.0]]), None, 1.0).item() == pytest.approx(np.exp(30.0))
    with pytest.raises(NonFiniteError, match="edge 1"):
        edge_weights(Tensor([[0.0], [np.inf]]), None, 1.0)


def test_sym_normalize_matches_dense_oracle(rng, graph5):
    E = rng.random((graph5.num_edges, 1)) + 0.1
    phi = sym_normalize(Tensor(E), graph5).values[:, 0]
    Ed = dense_from_edges(E, graph5)
    r = Ed.sum(axis=1)
    oracle = Ed / np.sqrt(np.outer(r, r))
    np.testing.assert_allclose(phi, edge_values(oracle, graph5), atol=1e-10)
    with pytest.raises(DimensionError):
        sym_normalize(Tensor(np.ones((3, 1))), graph5)


def test_sym_normalize_examples():
    g = build_graph(2, [(0, 1)])
    phi = sym_normalize(Tensor(np.ones((4, 1))), g).values[:, 0]
    np.testing.assert_allclose(phi, 0.5)
    single = build_graph(1, [])
    assert sym_normalize(Tensor([[3.7]]), single).item() == pytest.approx(1.0)


def test_uniform_weights_give_gcn_normalization():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_graph(int(rng.integers(2, 11)), rng)
        phi = sym_normalize(Tensor(np.ones((g.num_edges, 1))), g).values[:, 0]
        A = g.dense_adjacency()
        d = A.sum(axis=1)
        np.testing.assert_allclose(phi, edge_values(A / np.sqrt(np.outer(d, d)), g), atol=1e-12)


def test_aggregate_matches_dense_product(rng, graph5):
    phi = rng.random((graph5.num_edges, 1))
    F = rng.normal(size=(5, 3))
    out = aggregate(Tensor(phi), Tensor(F), graph5).values
    np.testing.assert_allclose(out, dense_from_edges(phi, graph5) @ F, atol=1e-12)


# ---------------------------------------------------------------------------
# full pipeline


def _layer(rng, d_in=4, d=3, c=3):
    p = JsdmpLayerParams.init(d_in, d, c, rng)
    p.beta_raw = rng.normal(size=(1, 1))
    p.gamma = rng.uniform(0.5, 2.0, size=(1, 1))
    return p


def test_full_pipeline_matches_dense_oracle(rng, graph5):
    p = _layer(rng)
    F = rng.normal(size=(5, 3))
    X = rng.normal(size=(5, 3))
    ew = compute_edge_weights(Tensor(F), Tensor(X), graph5, JsdmpLayerParams(**{k: Tensor(getattr(p, k)) for k in p.FIELDS}))
    A = graph5.dense_adjacency()
    S = F @ p.a[:3] + (F @ p.a[3:]).T + X @ X.T
    Pf, Px = softmax(F, axis=1), softmax(X, axis=1)

    def js(P):
        return np.array([[jensenshannon(P[i], P[j]) ** 2 for j in range(5)] for i in range(5)])

    beta = 1 / (1 + np.exp(-p.beta_raw.item()))
    E = A * np.exp(S - p.gamma.item() * (beta * js(Pf) + (1 - beta) * js(Px)))
    r = E.sum(axis=1)
    phi = E / np.sqrt(np.outer(r, r))
    np.testing.assert_allclose(ew.values.values[:, 0], edge_values(E, graph5), rtol=1e-10)
    np.testing.assert_allclose(ew.normalized.values[:, 0], edge_values(phi, graph5), atol=1e-10)
    # each row of phi reproduces the normalization denominator identity
    np.testing.assert_allclose((phi * np.sqrt(np.outer(r, r))).sum(axis=1), r, rtol=1e-12)


@pytest.mark.parametrize("ablation", ["full", "context_only", "structure_only"])
def test_pipeline_gradient_matches_central_differences(ablation):
    rng = np.random.default_rng(9)
    g = random_graph(5, rng, 0.5)
    p = _layer(rng)
    arrs = {**p.arrays("L"), "H": rng.normal(size=(5, 4)), "X": rng.normal(size=(5, 3))}
    w = rng.normal(size=(5, 3))

    def build(t):
        layer = JsdmpLayerParams.from_mapping(t, "L")
        F = ad.matmul(t["H"], layer.W_f)
        X = ad.matmul(t["X"], layer.W_x)
        ew = compute_edge_weights(F, X, g, layer, ablation)
        return ad.sum_all(ad.hadamard(aggregate(ew.normalized, F, g), Tensor(w)))

    g_an = grad_of(build, arrs)
    for name, arr in arrs.items():
        if ablation != "full" and name == "L.beta_raw":
            assert np.all(g_an[name] == 0.0)
            continue
        num = central_difference(lambda _: value_of(build, arrs), arr)
        assert rel_err(g_an[name], num) < 1e-6, name


def test_literal_pipeline_gradient(rng, graph5):
    arrs = {"F": rng.random((5, 3)) + 0.1}
    build = lambda t: ad.sum_all(contextual_divergence(t["F"], graph5, mode="literal"))
    num = central_difference(lambda _: value_of(build, arrs), arrs["F"])
    assert rel_err(grad_of(build, arrs)["F"], num) < 1e-6


def test_edge_weights_are_permutation_equivariant(rng, graph5):
    p = _layer(rng)
    F = rng.normal(size=(5, 3))
    X = rng.normal(size=(5, 3))
    perm = rng.permutation(5)
    inv = np.argsort(perm)
    g2 = graph5.permuted(perm)
    t = JsdmpLayerParams(**{k: Tensor(getattr(p, k)) for k in p.FIELDS})
    a = dense_from_edges(compute_edge_weights(Tensor(F), Tensor(X), graph5, t).normalized.values, graph5)
    b = dense_from_edges(compute_edge_weights(Tensor(F[inv]), Tensor(X[inv]), g2, t).normalized.values, g2)
    np.testing.assert_allclose(b[np.ix_(perm, perm)], a, atol=1e-12)


def test_none_ablation_ignores_parameters(rng, graph5):
    p = JsdmpLayerParams(**{k: Tensor(v) for k, v in _layer(rng).arrays("x").items() for k in [k.split(".")[1]]})
    ew = compute_edge_weights(Tensor(rng.normal(size=(5, 3))), None, graph5, p, "none")
    np.testing.assert_array_equal(ew.values.values, 1.0)
    with pytest.raises(ConfigError):
        compute_edge_weights(Tensor(np.ones((5, 3))), None, graph5, p, "bogus")
