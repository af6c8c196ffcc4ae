"""Shared hypergraph topology: cosine affinity, K-NN hyperedges, incidence.

One hyperedge is centred on every node.  Neighbour order is by descending
affinity; ties go to the centre node itself first, then to the lower index.
The topology is a discrete choice, so no gradient flows through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import record_kink

DEFAULT_K = 4


@dataclass
class Hypergraph:
    A: np.ndarray          # (N, N) affinity
    neighbors: list        # neighbors[i] = member indices of hyperedge i, best first
    H: np.ndarray          # (N, N) incidence, H[j, i] = 1 iff node j in hyperedge i
    K: int


def affinity(h_agg):
    """Cosine similarity between rows; a zero row has zero affinity to all, itself included."""
    h = np.asarray(getattr(h_agg, "data", h_agg), dtype=np.float64)
    norm = np.linalg.norm(h, axis=1)
    nz = norm > 0
    u = np.zeros_like(h)
    u[nz] = h[nz] / norm[nz, None]
    A = np.clip(u @ u.T, -1.0, 1.0)
    A = (A + A.T) / 2.0
    np.fill_diagonal(A, np.where(nz, 1.0, 0.0))
    return A


def knn_neighbors(A, K):
    A = np.asarray(A)
    n = A.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K must be in [1, {n}], got {K}")
    idx = np.arange(n)
    out = []
    for i in range(n):
        # lexsort: last key is primary
        order = np.lexsort((idx, idx != i, -A[:, i]))
        out.append(order[:K])
    return out


def incidence(neighbors, n):
    H = np.zeros((n, n))
    for i, members in enumerate(neighbors):
        H[members, i] = 1.0
    return H


def build_topology(h_agg, K=DEFAULT_K):
    """Topology for one group; ``K`` is capped at the group size."""
    A = affinity(h_agg)
    k = min(K, A.shape[0])
    nbrs = knn_neighbors(A, k)
    H = incidence(nbrs, A.shape[0])
    record_kink(H.astype(np.uint8))
    return Hypergraph(A=A, neighbors=nbrs, H=H, K=k)
