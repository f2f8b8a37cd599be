"""Independent reference computations used by several test modules.

Nothing here calls the discretisation's own operators: geometry comes from
the mesh record and every gradient is re-derived from its definition.
"""
import math

import numpy as np


def half_diamond_gradients(mesh, u, k, alpha=1.0):
    """[(gradient, half-diamond measure)] for cell k, by the defining formula."""
    nc = mesh.n_cells
    faces = mesh.cell_faces(k)
    verts = mesh.vertices[mesh.cell_vertices(k)]
    xk = mesh.barycenters[k]
    normals = []
    for i, s in enumerate(faces):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        d = b - a
        normals.append(np.array([d[1], -d[0]]) / np.hypot(*d))
    area = mesh.areas[k]
    G = sum(mesh.face_measures[s] * u[nc + s] * n for s, n in zip(faces, normals)) / area
    out = []
    for s, n in zip(faces, normals):
        xs = mesh.face_midpoints[s]
        dist = abs(np.dot(xs - xk, n))
        R = u[nc + s] - u[k] - G @ (xs - xk)
        out.append((G + alpha * math.sqrt(2.0) / dist * R * n,
                    0.5 * mesh.face_measures[s] * dist, G))
    return out


def brute_step_matrix(mesh, lam, dt, conv_weights):
    """Dense step matrix before boundary elimination.

    Entry (i, j) is the bilinear form evaluated on basis vectors e_j (trial)
    and e_i (test): mass on cells, lam * half-diamond gradient products, and
    |K| a_K . G_K(e_j) on the cell test function.
    """
    n = mesh.n_cells + mesh.n_faces
    eye = np.eye(n)
    grads = [[half_diamond_gradients(mesh, eye[j], k) for k in range(mesh.n_cells)]
             for j in range(n)]
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            val = 0.0
            for k in range(mesh.n_cells):
                for (gi, m, _), (gj, _, Gj) in zip(grads[i][k], grads[j][k]):
                    val += lam * m * gi @ gj
                if i == k:
                    val += mesh.areas[k] * (eye[j][k] / dt + conv_weights[k] @ grads[j][k][0][2])
            M[i, j] = val
    return M


def eliminate_dense(M, dofs):
    M = M.copy()
    M[dofs, :] = 0.0
    M[:, dofs] = 0.0
    M[dofs, dofs] = 1.0
    return M
