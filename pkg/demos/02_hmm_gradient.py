"""
The HMM gradient on a single polygon
====================================

Unknowns live on the cell and on each face.  The gradient is a constant
vector per half-diamond: the consistent cell gradient plus a stabilisation
that vanishes on affine data.
"""
import numpy as np

from hmmgdm.gdm import HMMDiscretisation
from hmmgdm.mesh import build_mesh

angles = np.arange(6) * np.pi / 3
hexagon = build_mesh(np.column_stack([np.cos(angles), np.sin(angles)]), [list(range(6))])
disc = HMMDiscretisation(hexagon)

# %%
# Interpolate an affine function: every half-diamond sees its exact gradient.
u = disc.interpolate(lambda x, y: 3 * x - 2 * y + 1)
print(disc.gradients(u))

# %%
# Perturb one face value.  The consistent gradient moves a little; the
# half-diamond next to that face moves much more.
u[disc.face_dof(0)] += 0.1
print("consistent:", disc.consistent_cell_gradient(u, 0))
print("stabilised:", disc.stabilized_gradient(u, 0, 0))

# %%
# The local matrix is symmetric positive semidefinite with the constants
# as its only kernel.
A = disc.local_diffusion_matrix(0).matrix
print("eigenvalues:", np.round(np.linalg.eigvalsh(A), 6))

# %%
# Fluxes of the affine field are minus its normal derivative.
v = disc.interpolate(lambda x, y: x)
print("fluxes:", np.round(disc.fluxes(v, 0), 12))
print("-n_x:  ", np.round(-hexagon.outward_normals(0)[:, 0], 12))
