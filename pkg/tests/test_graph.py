"""Network construction, spectral quantities, and contraction properties."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgtsim.graph import (
    GraphError,
    Network,
    contraction_factor,
    generate_network,
    is_strongly_connected,
    metropolis_weights,
    spectral_gap,
)


def _reachable_oracle(adj, start):
    """Independent DFS reachability used to cross-check BFS connectivity."""
    n = adj.shape[0]
    seen = set()
    stack = [start]
    while stack:
        u = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        for v in range(n):
            if adj[v, u] and v not in seen:
                stack.append(v)
    return seen


def test_two_agent_complete_graph_lazified():
    net = generate_network(2, 1.0, seed=123)
    # Metropolis weights on K2 give the averaging matrix (sigma = 0), so the
    # generator must fall back to the lazy version with sigma = 1/2.
    assert np.allclose(net.W, [[0.75, 0.25], [0.25, 0.75]], atol=1e-15)
    assert net.sigma == pytest.approx(0.5, abs=1e-12)


def test_random_network_doubly_stochastic_and_connected():
    net = generate_network(20, 0.3, seed=7)
    # direct summation oracle
    assert np.max(np.abs(net.W.sum(axis=1) - 1.0)) <= 1e-12
    assert np.max(np.abs(net.W.sum(axis=0) - 1.0)) <= 1e-12
    # reachability oracle, forward and reverse
    assert _reachable_oracle(net.adjacency, 0) == set(range(20))
    assert _reachable_oracle(net.adjacency.T, 0) == set(range(20))
    # support constraint
    off = ~(net.adjacency | np.eye(20, dtype=bool))
    assert np.all(net.W[off] == 0.0)
    assert 0.0 < net.sigma < 1.0


def test_ring_sigma_matches_circulant_eigenvalues():
    net = generate_network(5, 0.5, seed=0, topology="ring")
    # brute-force oracle: eigenvalues of the 5x5 lazy-uniform circulant
    W = 0.5 * np.eye(5)
    for i in range(5):
        W[i, (i + 1) % 5] += 0.25
        W[i, (i - 1) % 5] += 0.25
    eigs = np.linalg.eigvalsh(W - np.ones((5, 5)) / 5)
    oracle = float(np.max(np.abs(eigs)))
    assert net.sigma == pytest.approx(oracle, abs=1e-10)
    # frozen closed form |1/2 + (1/2) cos(2 pi / 5)|
    assert net.sigma == pytest.approx(0.6545084971874737, abs=1e-10)
    assert net.sigma == pytest.approx(0.5 + 0.5 * math.cos(2 * math.pi / 5), abs=1e-12)


def test_spectral_gap_identity_and_averaging():
    assert spectral_gap(np.eye(4)) == pytest.approx(1.0, abs=1e-10)
    assert spectral_gap(np.ones((4, 4)) / 4) == 0.0


def test_spectral_gap_matches_dense_eigensolver():
    rng = np.random.default_rng(3)
    adj = np.zeros((6, 6), dtype=bool)
    iu = np.triu_indices(6, k=1)
    adj[iu] = rng.random(len(iu[0])) < 0.6
    adj |= adj.T
    if not is_strongly_connected(adj):
        for i in range(6):
            adj[i, (i + 1) % 6] = adj[(i + 1) % 6, i] = True
    W = metropolis_weights(adj)
    A = W - np.ones((6, 6)) / 6
    oracle = float(np.sqrt(np.max(np.linalg.eigvalsh(A.T @ A))))
    assert spectral_gap(W) == pytest.approx(oracle, abs=1e-8)


def test_contraction_factor_values_and_domain():
    assert contraction_factor(0.3, 0.5) == pytest.approx(0.85, abs=1e-15)
    # gamma -> 0 pushes delta -> 1
    assert contraction_factor(1e-9, 0.0) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(GraphError):
        contraction_factor(1.0, 0.0)
    with pytest.raises(GraphError):
        contraction_factor(0.5, 1.0)
    with pytest.raises(GraphError):
        contraction_factor(-0.1, 0.5)


def test_consensus_contraction_property():
    # || (I + gamma (W (x) I - I)) (w - wbar) || <= delta || w - wbar ||
    net = generate_network(8, 0.4, seed=11)
    d = 3
    n = net.n
    Wk = np.kron(net.W, np.eye(d))
    rng = np.random.default_rng(99)
    for gamma in (0.05, 0.3, 0.9):
        delta = contraction_factor(gamma, net.sigma)
        M = np.eye(n * d) + gamma * (Wk - np.eye(n * d))
        for _ in range(1000 // 3):
            w = rng.standard_normal(n * d)
            wbar = np.tile(w.reshape(n, d).mean(axis=0), n)
            dev = w - wbar
            assert np.linalg.norm(M @ dev) <= delta * np.linalg.norm(dev) + 1e-12


def test_projector_annihilates_mixing_residual():
    net = generate_network(10, 0.35, seed=5)
    n, d = net.n, 2
    H = np.kron(np.ones((n, n)) / n, np.eye(d))
    Wk = np.kron(net.W, np.eye(d))
    resid = np.max(np.abs(H @ (np.eye(n * d) - Wk)))
    assert resid <= 1e-12 * n


def test_same_seed_is_bit_identical():
    a = generate_network(12, 0.3, seed=42)
    b = generate_network(12, 0.3, seed=42)
    assert np.array_equal(a.adjacency, b.adjacency)
    assert np.array_equal(a.W, b.W)
    assert a.sigma == b.sigma


def test_json_round_trip():
    net = generate_network(7, 0.5, seed=2)
    doc = json.loads(net.to_json())
    assert set(doc) == {"n", "edges", "W", "sigma"}
    back = Network.from_json(net.to_json())
    assert np.array_equal(back.adjacency, net.adjacency)
    assert np.array_equal(back.W, net.W)
    assert back.sigma == net.sigma


def test_input_validation():
    with pytest.raises(GraphError):
        generate_network(1, 0.5, seed=0)
    with pytest.raises(GraphError):
        generate_network(5, 0.0, seed=0)
    with pytest.raises(GraphError):
        generate_network(5, 1.5, seed=0)
    with pytest.raises(GraphError):
        generate_network(5, 0.5, seed=0, topology="torus")


def test_sparse_density_still_terminates():
    # density too small for reliable connectivity: cycle augmentation kicks in
    net = generate_network(30, 0.01, seed=9)
    assert is_strongly_connected(net.adjacency)
    net.validate()


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=25),
    density=st.floats(min_value=0.05, max_value=1.0),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_generated_networks_always_valid(n, density, seed):
    net = generate_network(n, density, seed)
    net.validate()
    assert np.max(np.abs(net.W.sum(axis=0) - 1.0)) <= 1e-12
    assert 0.0 < net.sigma < 1.0
