"""Communication networks with nonnegative doubly stochastic mixing weights."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Row/column sums of W must match 1 to this tolerance.
STOCHASTIC_TOL = 1e-12

_POWER_TOL = 1e-10
_POWER_MAX_ITERS = 10_000
_MAX_REGEN_ATTEMPTS = 100


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Network:
    """Strongly connected digraph plus its consensus weight matrix.

    ``adjacency[i, j]`` is True when agent i receives from agent j (self-loops
    are implied, not stored).  ``W`` is nonnegative with unit row and column
    sums, supported on the adjacency plus the diagonal.  ``sigma`` is the
    spectral norm of ``W - (1/n) 11^T``; the consensus step contracts
    disagreement by ``delta = 1 - gamma * (1 - sigma)``.
    """

    n: int
    adjacency: np.ndarray
    W: np.ndarray
    sigma: float

    def validate(self) -> None:
        n, W = self.n, self.W
        if W.shape != (n, n) or self.adjacency.shape != (n, n):
            raise GraphError("matrix shapes do not match n")
        if np.any(W < 0):
            raise GraphError("W has negative entries")
        if np.max(np.abs(W.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
            raise GraphError("row sums of W are not 1")
        if np.max(np.abs(W.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise GraphError("column sums of W are not 1")
        off = ~(self.adjacency | np.eye(n, dtype=bool))
        if np.any(W[off] != 0.0):
            raise GraphError("W has weight outside the adjacency support")
        if not is_strongly_connected(self.adjacency):
            raise GraphError("digraph is not strongly connected")
        if n > 1 and not (0.0 < self.sigma < 1.0):
            raise GraphError(f"sigma={self.sigma} outside (0, 1)")

    def out_degrees(self) -> np.ndarray:
        """Number of receivers per agent, self excluded (column-wise count)."""
        return self.adjacency.sum(axis=0).astype(np.int64)

    def to_json(self) -> str:
        src, dst = np.nonzero(self.adjacency.T)  # adjacency[i,j]: j -> i
        edges = [[int(s), int(d)] for s, d in zip(src, dst)]
        doc = {
            "n": self.n,
            "edges": edges,
            "W": [float(v) for v in self.W.ravel()],
            "sigma": float(self.sigma),
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "Network":
        doc = json.loads(text)
        n = int(doc["n"])
        adj = np.zeros((n, n), dtype=bool)
        for s, d in doc["edges"]:
            adj[d, s] = True
        W = np.asarray(doc["W"], dtype=np.float64).reshape(n, n)
        net = Network(n=n, adjacency=adj, W=W, sigma=float(doc["sigma"]))
        net.validate()
        return net


def is_strongly_connected(adjacency: np.ndarray) -> bool:
    """Reachability check by BFS from node 0 on the graph and its transpose."""
    n = adjacency.shape[0]
    for adj in (adjacency, adjacency.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = []
            for u in frontier:
                for v in np.nonzero(adj[:, u])[0]:
                    if not seen[v]:
                        seen[v] = True
                        nxt.append(int(v))
            frontier = nxt
        if not seen.all():
            return False
    return True


def metropolis_weights(adjacency: np.ndarray) -> np.ndarray:
    """Metropolis-Hastings weights 1/(1+max(deg_i, deg_j)) on a symmetric graph."""
    n = adjacency.shape[0]
    sym = adjacency | adjacency.T
    deg = sym.sum(axis=1)
    W = np.zeros((n, n))
    for i in range(n):
        for j in np.nonzero(sym[i])[0]:
            if j != i:
                W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return W


def spectral_gap(W: np.ndarray, tol: float = _POWER_TOL,
                 max_iters: int = _POWER_MAX_ITERS) -> float:
    """Spectral norm of W - (1/n) 11^T by power iteration on its Gram matrix."""
    n = W.shape[0]
    A = W - 1.0 / n
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        u = A @ v
        w = A.T @ u
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        lam_new = float(v_new @ (A.T @ (A @ v_new)))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-30):
            return float(np.sqrt(max(lam_new, 0.0)))
        lam, v = lam_new, v_new
    raise GraphError(
        f"power iteration did not converge in {max_iters} iterations "
        f"(last residual {abs(lam_new - lam):.3e})")


def contraction_factor(gamma: float, sigma: float) -> float:
    """Consensus contraction delta = 1 - gamma * (1 - sigma)."""
    if not 0.0 < gamma < 1.0:
        raise GraphError(f"gamma={gamma} outside (0, 1)")
    if not 0.0 <= sigma < 1.0:
        raise GraphError(f"sigma={sigma} outside [0, 1)")
    return 1.0 - gamma * (1.0 - sigma)


def _ring_adjacency(n: int) -> np.ndarray:
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        adj[i, (i + 1) % n] = True
        adj[i, (i - 1) % n] = True
    return adj


def _ring_weights(n: int) -> np.ndarray:
    """Lazy uniform ring: 1/2 self weight, 1/4 to each neighbour."""
    W = 0.5 * np.eye(n)
    for i in range(n):
        W[i, (i + 1) % n] += 0.25
        W[i, (i - 1) % n] += 0.25
    return W


def generate_network(n: int, edge_density: float, seed: int,
                     topology: str = "random") -> Network:
    """Build a strongly connected network admitting doubly stochastic weights.

    Random topology: symmetric Erdos-Renyi draws, retried with derived seeds
    until connected; after the retry budget a bidirectional cycle is added so
    construction always terminates.  Degenerate spectra (sigma outside (0,1),
    e.g. complete graphs where W collapses to the averaging matrix) are
    repaired by lazification W <- (W + I)/2.
    """
    if n < 2:
        raise GraphError(f"need at least 2 agents, got {n}")
    if not 0.0 < edge_density <= 1.0:
        raise GraphError(f"edge_density={edge_density} outside (0, 1]")

    if topology == "ring":
        adj = _ring_adjacency(n)
        W = _ring_weights(n)
    elif topology == "random":
        adj = None
        for attempt in range(_MAX_REGEN_ATTEMPTS):
            rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
            upper = rng.random((n, n)) < edge_density
            cand = np.zeros((n, n), dtype=bool)
            iu = np.triu_indices(n, k=1)
            cand[iu] = upper[iu]
            cand |= cand.T
            if is_strongly_connected(cand):
                adj = cand
                break
        if adj is None:
            adj = cand | _ring_adjacency(n)
        W = metropolis_weights(adj)
    else:
        raise GraphError(f"unknown topology {topology!r}")

    sigma = spectral_gap(W)
    if n > 1 and not (1e-12 < sigma < 1.0 - 1e-14):
        W = 0.5 * (W + np.eye(n))
        sigma = spectral_gap(W)

    net = Network(n=n, adjacency=adj, W=W, sigma=sigma)
    net.validate()
    return net
