"""
The four mesh families
======================

Triangles, clipped hexagons, smoothly distorted quadrilaterals and a
locally refined grid with hanging nodes.  Each is a ``PolytopalMesh`` with
cells, deduplicated faces and outward normals.
"""
import numpy as np

from hmmgdm.mesh import generate, write_mesh

# %%
# Size and shape of the first two levels of every family.
for family in ("triangular", "hexagonal", "distorted", "nonconforming"):
    for level in (1, 2):
        m = generate(family, level)
        sizes = np.bincount(m.cell_sizes)
        shapes = ", ".join(f"{n}x{k}-gon" for k, n in enumerate(sizes) if n)
        print(f"{family:>13} L{level}: h={m.h:.5f} cells={m.n_cells:5d} "
              f"faces={m.n_faces:5d} ({shapes})")

# %%
# Every cell is closed: the measure-weighted outward normals sum to zero.
m = generate("nonconforming", 1)
worst = max(np.abs((m.face_measures[m.cell_faces(k), None] * m.outward_normals(k)).sum(0)).max()
            for k in range(m.n_cells))
print("largest closure defect:", worst)

# %%
# A coarse cell next to the refined patch carries a hanging node, so it is
# a pentagon whose long edge is split into two faces.
k = int(np.flatnonzero(m.cell_sizes > 4)[0])
print("cell", k, "vertices:\n", m.vertices[m.cell_vertices(k)])

# %%
# Meshes round-trip through a small text format.
write_mesh(generate("hexagonal", 1), "hexagonal_1.txt")
print(open("hexagonal_1.txt").read().splitlines()[:4])
