"""Kernels against dense-arithmetic oracles and closed forms."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalwalks.errors import (
    InvalidParameterError,
    NumericalFailureError,
    ResourceLimitError,
)
from fractalwalks.graphs import WeightedGraph, gasket_graph, lattice_graph
from fractalwalks.kernels import (
    continuous_semigroup,
    heavy_tailed_kernel,
    iter_kernel_powers,
    kernel_fingerprint,
    kernel_power,
    load_kernel,
    nearest_neighbor_kernel,
    perturb_kernel,
    poisson_weights,
    save_kernel,
    semigroup_columns,
    subordinate_kernel,
    subordination_weights,
)


def two_vertex_graph() -> WeightedGraph:
    return WeightedGraph.from_edges(2, [(0, 1, 1.0)], generator="custom")


def test_nearest_neighbor_matches_formula():
    g = gasket_graph(3)
    lazy = 0.25
    K = nearest_neighbor_kernel(g, lazy=lazy)
    adj = g.adjacency().toarray()
    oracle = (1 - lazy) * adj / np.outer(g.mu, g.mu)
    oracle[np.diag_indices_from(oracle)] += lazy / g.mu
    assert np.allclose(K.matrix, oracle, rtol=0, atol=0)
    assert K.markov_defect() <= 1e-14
    assert K.symmetry_defect() == 0.0
    assert K.locality == 1
    P = K.transition()
    assert np.allclose(np.diag(P), lazy)


def test_heavy_tailed_matches_loop_oracle():
    g = gasket_graph(3)
    beta = 1.7
    K = heavy_tailed_kernel(g, beta=beta)
    gamma = g.nominal_df + beta
    n = g.n_vertices
    a = np.zeros((n, n))
    for x in range(n):
        dx = g.distances_from(x)
        for y in range(n):
            if x != y:
                a[x, y] = (1.0 + dx[y]) ** (-gamma)
    s = a @ g.mu
    z = 2.0 * s.max()
    oracle = a / z
    for x in range(n):
        oracle[x, x] = (z - s[x]) / (z * g.mu[x])
    assert np.allclose(K.matrix, oracle, rtol=1e-15, atol=0)
    assert K.markov_defect() <= 1e-13
    assert K.symmetry_defect() <= 1e-16
    # every diagonal entry keeps the laziness floor 1/(2 mu(x))
    assert np.all(np.diag(K.matrix) >= 1.0 / (2.0 * g.mu) - 1e-15)


def test_subordination_weights_match_power_law():
    # frozen from the oracle script: exponent 1 + 2.1/log2(5)
    dw = math.log(5.0) / math.log(2.0)
    w = subordination_weights(2.1, dw, 3)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert w[0] == pytest.approx(0.7191469291166999, abs=1e-15)
    raw = np.array([m ** (-(1 + 2.1 / dw)) for m in (1, 2, 3)])
    assert np.allclose(w, raw / raw.sum(), rtol=1e-15)


def test_subordinate_kernel_matches_dense_power_sum():
    g = gasket_graph(3)
    base = nearest_neighbor_kernel(g, lazy=0.5)
    n_terms = 5
    K = subordinate_kernel(base, beta=2.1, n_terms=n_terms)
    w = subordination_weights(2.1, g.nominal_dw, n_terms)
    P = base.transition()
    acc = np.zeros_like(P)
    Pm = np.eye(g.n_vertices)
    for m in range(1, n_terms + 1):
        Pm = Pm @ P
        acc += w[m - 1] * Pm
    oracle = acc / g.mu[None, :]
    assert np.allclose(K.matrix, oracle, rtol=1e-13, atol=1e-16)
    assert K.markov_defect() <= 1e-12
    assert K.symmetry_defect() <= 1e-14
    assert K.beta == 2.1


def test_perturb_kernel_properties():
    g = gasket_graph(3)
    K = heavy_tailed_kernel(g, beta=1.5)
    A = 2.0
    Kp = perturb_kernel(K, seed=11, amplitude=A)
    Kp2 = perturb_kernel(K, seed=11, amplitude=A)
    assert np.array_equal(Kp.matrix, Kp2.matrix)
    assert Kp.symmetry_defect() <= 1e-15
    assert Kp.markov_defect() <= 1e-13
    off = ~np.eye(g.n_vertices, dtype=bool)
    ratios = Kp.matrix[off] / K.matrix[off]
    renormalized = any("renormalized" in w for w in Kp.warnings())
    if not renormalized:
        assert np.all(ratios >= 1.0 / A - 1e-12)
        assert np.all(ratios <= A + 1e-12)
    assert perturb_kernel(K, seed=11, amplitude=1.0) is K
    with pytest.raises(InvalidParameterError):
        perturb_kernel(K, seed=0, amplitude=5.0)


@given(seed=st.integers(min_value=0, max_value=2**31))
@settings(max_examples=15, deadline=None)
def test_perturb_kernel_stays_markov(seed):
    g = gasket_graph(2)
    K = heavy_tailed_kernel(g, beta=2.0)
    Kp = perturb_kernel(K, seed=seed, amplitude=3.0)
    assert Kp.markov_defect() <= 1e-12
    assert Kp.symmetry_defect() <= 1e-14
    assert np.all(Kp.matrix >= 0)


def test_kernel_powers_match_matrix_power():
    g = gasket_graph(3)
    K = nearest_neighbor_kernel(g, lazy=0.3)
    P = K.transition()
    oracle8 = np.linalg.matrix_power(P, 8) / g.mu[None, :]
    assert np.allclose(kernel_power(K, 8), oracle8, rtol=1e-12, atol=1e-15)
    seen = dict(iter_kernel_powers(K, [1, 2, 8]))
    assert sorted(seen) == [1, 2, 8]
    assert np.allclose(seen[8], oracle8, rtol=1e-12, atol=1e-15)
    assert np.allclose(seen[1], K.matrix)


def test_poisson_weights_match_closed_form():
    w = poisson_weights(3.0, tol=1e-12)
    oracle = [math.exp(-3.0) * 3.0**k / math.factorial(k) for k in range(6)]
    assert np.allclose(w[:6], oracle, rtol=1e-13)
    assert w.sum() >= 1.0 - 1e-12
    with pytest.raises(ResourceLimitError):
        poisson_weights(1e6, tol=1e-12, m_budget=100)
    with pytest.raises(InvalidParameterError):
        poisson_weights(3.0, tol=1e-3)


def test_two_vertex_semigroup_closed_form():
    K = nearest_neighbor_kernel(two_vertex_graph())
    t = 0.7
    h = continuous_semigroup(K, t)
    # exp(t(P-I)) off-diagonal = (1 - e^{-2t})/2 and mu = 1 on both vertices
    assert h[0, 1] == pytest.approx(0.37670151802919677, abs=1e-12)
    assert h[0, 0] == pytest.approx(1.0 - 0.37670151802919677, abs=1e-12)
    assert np.allclose(h, h.T)


def test_semigroup_columns_match_full_semigroup():
    g = gasket_graph(3)
    K = nearest_neighbor_kernel(g, lazy=0.5)
    full = continuous_semigroup(K, 2.5)
    ys = [0, 7, 19]
    cols = semigroup_columns(K, 2.5, ys)
    for j, y in enumerate(ys):
        assert np.allclose(cols[:, j], full[:, y], rtol=1e-10, atol=1e-14)


def test_save_load_round_trip(tmp_path):
    g = gasket_graph(3)
    K = subordinate_kernel(nearest_neighbor_kernel(g, lazy=0.5), beta=1.2, n_terms=8)
    path = tmp_path / "k.hklb"
    save_kernel(path, K)
    K2 = load_kernel(path, g, "subordinated", beta=1.2)
    assert np.array_equal(K2.matrix, K.matrix)
    assert np.array_equal(K2.mu, K.mu)
    other = gasket_graph(2)
    with pytest.raises(NumericalFailureError):
        load_kernel(path, other, "subordinated", beta=1.2)
    with open(path, "r+b") as fh:
        fh.seek(0)
        fh.write(b"XXXX")
    with pytest.raises(NumericalFailureError):
        load_kernel(path, g, "subordinated", beta=1.2)


def test_kernel_fingerprint_sensitivity():
    g = gasket_graph(2)
    spec = {"kind": "subordinated", "beta": 2.1, "laziness": 0.5, "n_terms": 64}
    fp = kernel_fingerprint(g, spec)
    assert fp == kernel_fingerprint(g, spec)
    assert fp != kernel_fingerprint(g, {**spec, "beta": 2.2})
    assert fp != kernel_fingerprint(gasket_graph(3), spec)
    assert len(fp) == 24
