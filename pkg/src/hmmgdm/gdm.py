"""Hybrid mimetic mixed (HMM) gradient discretisation on a polytopal mesh.

Unknowns are one value per cell followed by one value per face::

    u = [u_K for K in cells] + [u_sigma for sigma in faces]

so cell ``K`` is dof ``K`` and face ``s`` is dof ``n_cells + s``.  The
function reconstruction is piecewise constant (``u_K`` on ``K``).  The
gradient reconstruction is piecewise constant on the half-diamonds
``D_{K,s}`` (triangle spanned by the cell centre and face ``s``)::

    G_K u        = 1/|K| sum_s |s| u_s n_{K,s}
    grad_{K,s} u = G_K u + alpha*sqrt(2)/d_{K,s} * R_{K,s}(u) n_{K,s}
    R_{K,s}(u)   = u_s - u_K - G_K u . (xbar_s - x_K)

with ``d_{K,s}`` the distance from ``x_K`` to the line of ``s`` and
``alpha`` the stabilisation weight (1 by default).

Half-diamonds are indexed like the flat cell-face arrays of the mesh:
half-diamond ``p`` belongs to cell ``hd_cell[p]`` and face ``hd_face[p]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateCell, DimensionMismatch
from .mesh import PolytopalMesh

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class HalfDiamond:
    cell: int
    face: int
    measure: float
    distance: float


@dataclass(frozen=True)
class LocalDiffusionMatrix:
    """Dense local matrix; dof order is [cell, faces of the cell in local order]."""
    cell: int
    dofs: np.ndarray
    matrix: np.ndarray


class HMMDiscretisation:
    """Discrete space, reconstruction operators and local matrices.

    Everything is precomputed at construction: the sparse operator mapping
    dofs to the per-half-diamond gradients, the consistent cell gradient
    operator, and the (lambda = 1) stiffness matrix.
    """

    def __init__(self, mesh: PolytopalMesh, stabilization: float = 1.0):
        if stabilization <= 0:
            raise ValueError("stabilization weight must be positive")
        self.mesh = mesh
        self.stabilization = float(stabilization)
        self.n_cells = mesh.n_cells
        self.n_faces = mesh.n_faces
        self.n_dofs = self.n_cells + self.n_faces
        self.boundary_dofs = self.n_cells + mesh.boundary_faces
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        self.interior_dofs = np.flatnonzero(mask)

        sizes = mesh.cell_sizes
        self.hd_cell = np.repeat(np.arange(self.n_cells), sizes)
        self.hd_face = mesh.cell_face_flat
        nrm = mesh.face_normals[self.hd_face] * mesh.cell_face_sign[:, None]
        self.hd_normal = nrm
        rel = mesh.face_midpoints[self.hd_face] - mesh.barycenters[self.hd_cell]
        self.hd_distance = np.einsum("pi,pi->p", rel, nrm)
        bad = np.flatnonzero(self.hd_distance <= 0)
        if len(bad):
            p = bad[0]
            raise DegenerateCell(
                f"cell {self.hd_cell[p]}: centre does not lie strictly inside "
                f"(distance to face {self.hd_face[p]} is {self.hd_distance[p]:.3e})")
        self.hd_measure = 0.5 * mesh.face_measures[self.hd_face] * self.hd_distance

        self._local = {}
        rows, cols, vals = [], [], []
        krows, kcols, kvals = [], [], []
        grows, gcols, gvals = [], [], []
        for n, ids in mesh.groups().items():
            loc = self._group_operators(ids, n)
            self._local[n] = loc
            dofs, B, A, G = loc["dofs"], loc["B"], loc["A"], loc["G"]
            m = len(ids)
            p = mesh.cell_ptr[ids][:, None] + np.arange(n)          # (m, n)
            r = 2 * p[:, :, None] + np.arange(2)                    # (m, n, 2)
            rows.append(np.broadcast_to(r[..., None], (m, n, 2, n + 1)).ravel())
            cols.append(np.broadcast_to(dofs[:, None, None, :], (m, n, 2, n + 1)).ravel())
            vals.append(B.ravel())
            krows.append(np.broadcast_to(dofs[:, :, None], A.shape).ravel())
            kcols.append(np.broadcast_to(dofs[:, None, :], A.shape).ravel())
            kvals.append(A.ravel())
            gr = 2 * ids[:, None] + np.arange(2)
            grows.append(np.broadcast_to(gr[..., None], (m, 2, n + 1)).ravel())
            gcols.append(np.broadcast_to(dofs[:, None, :], (m, 2, n + 1)).ravel())
            gvals.append(G.ravel())
        n_hd = len(self.hd_cell)
        self.gradient_operator = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * n_hd, self.n_dofs))
        self.gradient_operator.eliminate_zeros()
        self.stiffness = sp.csr_matrix(
            (np.concatenate(kvals), (np.concatenate(krows), np.concatenate(kcols))),
            shape=(self.n_dofs, self.n_dofs))
        self.consistent_gradient_operator = sp.csr_matrix(
            (np.concatenate(gvals), (np.concatenate(grows), np.concatenate(gcols))),
            shape=(2 * self.n_cells, self.n_dofs))
        self.consistent_gradient_operator.eliminate_zeros()
        self.mass = sp.diags(np.concatenate([mesh.areas, np.zeros(self.n_faces)]),
                             format="csr")

    def _group_operators(self, ids, n):
        mesh = self.mesh
        p = mesh.cell_ptr[ids][:, None] + np.arange(n)
        faces = mesh.cell_face_flat[p]
        nrm = self.hd_normal[p]                                     # (m, n, 2)
        meas = mesh.face_measures[faces]
        area = mesh.areas[ids]
        rel = mesh.face_midpoints[faces] - mesh.barycenters[ids][:, None, :]
        dist = self.hd_distance[p]
        hd = self.hd_measure[p]
        m = len(ids)

        G = np.zeros((m, 2, n + 1))
        G[:, :, 1:] = np.transpose(meas[:, :, None] * nrm, (0, 2, 1)) / area[:, None, None]
        R = -np.einsum("mid,mdk->mik", rel, G)
        R[:, :, 0] -= 1.0
        R[:, np.arange(n), np.arange(n) + 1] += 1.0
        coef = self.stabilization * np.sqrt(2.0) / dist              # (m, n)
        B = G[:, None, :, :] + (coef[:, :, None, None] * nrm[:, :, :, None]
                                * R[:, :, None, :])
        A = np.einsum("mi,miak,mial->mkl", hd, B, B)
        A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
        dofs = np.concatenate([ids[:, None], self.n_cells + faces], axis=1)
        return {"ids": ids, "dofs": dofs, "B": B, "A": A, "G": G, "R": R}

    # -- dof helpers -----------------------------------------------------------

    def cell_dof(self, k: int) -> int:
        return int(k)

    def face_dof(self, s: int) -> int:
        return self.n_cells + int(s)

    def local_dofs(self, k: int) -> np.ndarray:
        return np.concatenate([[k], self.n_cells + self.mesh.cell_faces(k)])

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_dofs)

    def check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_dofs,):
            raise DimensionMismatch(f"expected {self.n_dofs} dofs, got shape {u.shape}")
        return u

    def cell_values(self, u) -> np.ndarray:
        return self.check(u)[:self.n_cells]

    def face_values(self, u) -> np.ndarray:
        return self.check(u)[self.n_cells:]

    def _locate(self, k):
        n = int(self.mesh.cell_sizes[k])
        loc = self._local[n]
        i = int(np.searchsorted(loc["ids"], k))
        return loc, i

    def half_diamond(self, k: int, s: int) -> HalfDiamond:
        p = self._hd_index(k, s)
        return HalfDiamond(int(k), int(s), float(self.hd_measure[p]),
                           float(self.hd_distance[p]))

    def _hd_index(self, k, s):
        faces = self.mesh.cell_faces(k)
        hit = np.flatnonzero(faces == s)
        if not len(hit):
            raise ValueError(f"face {s} is not a face of cell {k}")
        return int(self.mesh.cell_ptr[k] + hit[0])

    # -- reconstructions ---------------------------------------------------------

    def reconstruct(self, u, k: int) -> float:
        """Value of the piecewise-constant reconstruction on cell ``k``."""
        return float(self.check(u)[k])

    def consistent_cell_gradient(self, u, k: int) -> np.ndarray:
        u = self.check(u)
        loc, i = self._locate(k)
        return loc["G"][i] @ u[loc["dofs"][i]]

    def stabilized_gradient(self, u, k: int, s: int) -> np.ndarray:
        """Gradient reconstruction on the half-diamond of cell ``k`` and face ``s``."""
        u = self.check(u)
        loc, i = self._locate(k)
        j = int(self._hd_index(k, s) - self.mesh.cell_ptr[k])
        return loc["B"][i, j] @ u[loc["dofs"][i]]

    def gradients(self, u) -> np.ndarray:
        """All half-diamond gradients, shape (n_half_diamonds, 2)."""
        return (self.gradient_operator @ self.check(u)).reshape(-1, 2)

    def consistent_gradients(self, u) -> np.ndarray:
        """Consistent gradient of every cell, shape (n_cells, 2)."""
        return (self.consistent_gradient_operator @ self.check(u)).reshape(-1, 2)

    def gradient_norm(self, u) -> float:
        """L2 norm of the gradient reconstruction."""
        g = self.gradients(u)
        return float(np.sqrt(np.sum(self.hd_measure * np.einsum("pi,pi->p", g, g))))

    def function_norm(self, u) -> float:
        """L2 norm of the function reconstruction."""
        c = self.cell_values(u)
        return float(np.sqrt(np.sum(self.mesh.areas * c * c)))

    # -- local matrices and fluxes ---------------------------------------------

    def local_diffusion_matrix(self, k: int, lam: float = 1.0) -> LocalDiffusionMatrix:
        loc, i = self._locate(k)
        return LocalDiffusionMatrix(int(k), loc["dofs"][i].copy(), lam * loc["A"][i])

    def local_matrices(self):
        """Yield (dofs, A) blocks for every cell group (lambda = 1)."""
        for loc in self._local.values():
            yield loc["dofs"], loc["A"]

    def fluxes(self, u, k: int, lam: float = 1.0) -> np.ndarray:
        """Fluxes F_{K,s} of cell ``k`` in local face order.

        Defined by sum_s |s| F_{K,s}(u) (v_K - v_s) = lam * int_K grad u . grad v.
        """
        u = self.check(u)
        loc, i = self._locate(k)
        au = lam * loc["A"][i] @ u[loc["dofs"][i]]
        return -au[1:] / self.mesh.face_measures[self.mesh.cell_faces(k)]

    def all_fluxes(self, u, lam: float = 1.0) -> np.ndarray:
        """Fluxes for every half-diamond index p (cell hd_cell[p], face hd_face[p])."""
        u = self.check(u)
        out = np.empty(len(self.hd_cell))
        for loc in self._local.values():
            au = lam * np.einsum("mkl,ml->mk", loc["A"], u[loc["dofs"]])
            n = au.shape[1] - 1
            p = self.mesh.cell_ptr[loc["ids"]][:, None] + np.arange(n)
            out[p] = -au[:, 1:] / self.mesh.face_measures[self.hd_face[p]]
        return out

    def dump_local_matrices(self, stream: TextIO, lam: float = 1.0) -> None:
        for k in range(self.n_cells):
            lm = self.local_diffusion_matrix(k, lam)
            stream.write(f"CELL {k} DOFS {' '.join(map(str, lm.dofs.tolist()))}\n")
            for row in lm.matrix:
                stream.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    # -- interpolation -------------------------------------------------------------

    def interpolate(self, field: ScalarField) -> np.ndarray:
        """Pointwise interpolation at cell centres and face midpoints.

        Boundary faces are included; this is the initial-data interpolant.
        """
        xc, yc = self.mesh.barycenters.T
        xf, yf = self.mesh.face_midpoints.T
        u = np.empty(self.n_dofs)
        u[:self.n_cells] = np.broadcast_to(field(xc, yc), (self.n_cells,))
        u[self.n_cells:] = np.broadcast_to(field(xf, yf), (self.n_faces,))
        return u

    interpolate_initial = interpolate
