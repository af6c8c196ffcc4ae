"""Two-stage hypergraph message passing, one independent branch per modality.

node -> hyperedge:  F = relu(H^T (h W_agg))
hyperedge -> node:  h' = relu(H (F W_update))

Sums are unnormalised by default; ``normalize=True`` divides each stage by
the hyperedge / node degree instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ShapeError
from .nn import Module
from .nodeinit import MODALITIES


@dataclass
class RefinedEmbeddings:
    rgb: dc.Tensor
    depth: dc.Tensor
    pose: dc.Tensor
    edges: dict

    def by_modality(self):
        return {"rgb": self.rgb, "depth": self.depth, "pose": self.pose}


class BranchWeights(Module):
    """W_agg and W_update for each modality."""

    def __init__(self, dim, rng, k=4):
        scale = np.sqrt(2.0 / dim) / max(k, 1) ** 0.5
        self.w = {}
        for m in MODALITIES:
            self.w[f"{m}.agg"] = dc.Parameter(f"reason.{m}.W_agg", rng.normal(0.0, scale, (dim, dim)))
            self.w[f"{m}.update"] = dc.Parameter(f"reason.{m}.W_update", rng.normal(0.0, scale, (dim, dim)))

    def agg(self, m):
        return self.w[f"{m}.agg"]

    def update(self, m):
        return self.w[f"{m}.update"]

    @classmethod
    def identity(cls, dim):
        obj = cls.__new__(cls)
        obj.w = {}
        for m in MODALITIES:
            obj.w[f"{m}.agg"] = dc.Parameter(f"reason.{m}.W_agg", np.eye(dim))
            obj.w[f"{m}.update"] = dc.Parameter(f"reason.{m}.W_update", np.eye(dim))
        return obj


def _check(op, h, H, W):
    if H.ndim != 2 or H.shape[0] != h.shape[0] or h.shape[1] != W.shape[0]:
        raise ShapeError(op, h.shape, H.shape, W.shape)


def node_to_edge(h, H, W_agg, normalize=False):
    h = dc.as_tensor(h)
    H = np.asarray(H, dtype=np.float64)
    _check("node_to_edge", h, H, W_agg)
    M = H.T
    if normalize:
        M = M / np.maximum(M.sum(axis=1, keepdims=True), 1.0)
    return dc.relu(dc.matmul(dc.Tensor(M), dc.matmul(h, W_agg)))


def edge_to_node(F, H, W_update, normalize=False):
    F = dc.as_tensor(F)
    H = np.asarray(H, dtype=np.float64)
    if H.shape[1] != F.shape[0] or F.shape[1] != W_update.shape[0]:
        raise ShapeError("edge_to_node", F.shape, H.shape, W_update.shape)
    assert H.any(axis=1).all(), "every node must belong to at least one hyperedge"
    M = H
    if normalize:
        M = M / np.maximum(M.sum(axis=1, keepdims=True), 1.0)
    return dc.relu(dc.matmul(dc.Tensor(M), dc.matmul(F, W_update)))


def reason(embeddings, H, weights, rounds=1, normalize=False, residual=False):
    """Refine every modality over the single shared incidence ``H``."""
    hs = embeddings.by_modality() if hasattr(embeddings, "by_modality") else dict(embeddings)
    out, edges = {}, {}
    for m in MODALITIES:
        h = hs[m]
        for _ in range(rounds):
            F = node_to_edge(h, H, weights.agg(m), normalize)
            new = edge_to_node(F, H, weights.update(m), normalize)
            h = new + h if residual else new
        edges[m] = F
        out[m] = h
    return RefinedEmbeddings(rgb=out["rgb"], depth=out["depth"], pose=out["pose"], edges=edges)
