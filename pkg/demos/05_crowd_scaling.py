"""
Linear cost in the crowd size
=============================

Large crowds are split into subgroups of at most eight people, ordered by
pelvis depth then horizontal position.  Reasoning runs per subgroup, so
time grows linearly with the number of people while peak memory does not
grow at all.
"""

from comhr.harness import partition_subgroups
from comhr.harness.bench import bench_scaling
from comhr.model import CoMHR
from comhr.scenegen import generate_scene

for m in (8, 9, 20, 200):
    sizes = [len(g) for g in partition_subgroups(generate_scene(m, 0, patch_size=8))]
    print(f"M = {m:3d}: {len(sizes)} subgroups, sizes {sizes if len(sizes) < 6 else sizes[:3] + ['...']}")

table = bench_scaling(CoMHR(), sizes=(8, 40, 80, 200))
print(table)
print(f"time(200) / time(8) = {table.ratio(8, 200):.1f}  (ideal 25)")
print(f"peak memory ratio   = {table.memory_ratio(8, 200):.2f}")
