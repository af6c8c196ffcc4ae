"""
The dual contrastive objective
==============================

People whose ground-truth poses are close are positives for each other.
The intra-modal term pulls positives together within each modality; the
cross-modal term stops a person's three embeddings from pointing apart.
"""

import math

import numpy as np

from comhr.contrast import ContrastConfig, contrastive_loss, cross_loss, intra_loss, positive_sets, sets_from_distances
from comhr.model import CoMHR, ModelConfig
from comhr.nodeinit import build_embeddings, observations
from comhr.scenegen import generate_scene

# Two closed forms first.  An anchor with two equally similar positives
# contributes ln 2; three planar unit vectors 120 degrees apart cost 0.5.
D = np.array([[0, 0.1, 0.1], [0.1, 0, 0.4], [0.1, 0.4, 0]])
P = sets_from_distances(D, 0.15)
h = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [0.6, 0.0, 0.8]])
print("positives:", [s.tolist() for s in P.sets])
# anchors 1 and 2 are singletons (log 1 = 0), so the mean over three anchors is ln2 / 3
print(f"intra loss {intra_loss(h, P).item():.8f}  vs ln2/3 = {math.log(2) / 3:.8f}")
ang = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
v = np.stack([np.cos(ang), np.sin(ang)], axis=1)
print(f"cross loss for the 120 degree triple: {cross_loss(v[:1], v[1:2], v[2:]).item():.3f}")

# On a real scene the positive sets come from root-aligned pose distance.
scene = generate_scene(8, seed=5)
obs = observations(scene)
pos = positive_sets(obs.gt_joints3d, eps_mpjpe=0.15)
print("pairwise pose distance (m)\n", np.round(pos.distances, 2))
print("positive sets:", [s.tolist() for s in pos.sets])

model = CoMHR(ModelConfig())
emb = build_embeddings(obs, model.nodeinit)
total, parts = contrastive_loss(emb, pos, ContrastConfig())
print(f"contrastive total {total.item():.4f}:", {k: round(float(v.data), 4) for k, v in parts.items()})
