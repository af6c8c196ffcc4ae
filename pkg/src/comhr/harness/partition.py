from dataclasses import dataclass

import numpy as np

from ..nodeinit import pelvis_depth


@dataclass(frozen=True)
class Subgroup:
    indices: tuple

    def __len__(self):
        return len(self.indices)


def partition_subgroups(scene, max_n=8, tau_vis=0.5):
    """Split a scene into groups of at most ``max_n`` persons.

    Persons are ordered by pelvis depth, then box centre x, and cut into
    consecutive chunks; each chunk is reasoned over independently, so cost
    grows linearly with the crowd size.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    persons = scene.persons
    tz, _ = pelvis_depth(
        np.stack([p.joints2d for p in persons]),
        np.stack([p.depth_patch for p in persons]),
        np.stack([p.bbox for p in persons]),
        tau_vis,
    )
    cx = np.array([p.bbox[0] for p in persons])
    order = np.lexsort((np.arange(len(persons)), cx, tz))
    return [Subgroup(tuple(int(i) for i in order[k:k + max_n])) for k in range(0, len(order), max_n)]
