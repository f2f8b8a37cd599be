"""Implicit Euler time stepping with Picard linearisation.

One implicit step solves, for all test functions phi,

    1/dt <c - c_prev, phi>_Pi + lam <grad_D c, grad_D phi>
        + <A(g(u), G c), phi>_Pi = <f(u), phi>_Pi

with ``u`` the frozen Picard iterate and ``G`` the consistent cell gradient.
Cell rows of the assembled matrix carry mass, diffusion and convection; face
rows carry only the diffusion form (flux continuity).  Boundary face dofs are
imposed strongly from the model's boundary trace.
"""
from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatch,
    InvalidTimeGrid,
    LinearSolveFailed,
    PicardDiverged,
    StepFailed,
)
from .gdm import HMMDiscretisation
from .models import ModelSpec

log = logging.getLogger(__name__)


class StepBoundWarning(UserWarning):
    """dt violates the sufficient condition dt < 2 lam / (C_D + eps)."""


@dataclass
class SolverConfig:
    dt: float
    T: float
    picard_tol: float = 1e-10
    picard_max: int = 50
    linear_tol: float = 1e-12
    enforce_step_bound: bool = False
    epsilon: float = 1e-3
    coercivity: Optional[float] = None
    # "reuse": condensed direct solver whose factorisation is reused as a
    # GMRES preconditioner; "direct": fresh factorisation every iteration;
    # "gmres": full system, ILU-preconditioned GMRES
    linear_solver: str = "reuse"
    snapshot_every: Optional[int] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be at least dt")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.picard_max < 1:
            raise ValueError("picard_max must be at least 1")
        if self.linear_solver not in ("reuse", "direct", "gmres"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")

    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise InvalidTimeGrid(f"T={self.T!r} is not a multiple of dt={self.dt!r}")
        return n

    def step_bound(self, lam: float) -> Optional[float]:
        if self.coercivity is None:
            return None
        return 2.0 * lam / (self.coercivity + self.epsilon)


@dataclass
class StepSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constrained: np.ndarray
    values: np.ndarray
    n_cells: int
    clamp_events: int = 0


@dataclass
class PicardStats:
    iterations: int
    relative_update: float
    clamp_events: int
    history: list = field(default_factory=list)


@dataclass
class Trajectory:
    times: list
    snapshots: list
    snapshot_steps: list
    picard_iterations: list
    clamp_events: list
    dt: float
    final: np.ndarray = None

    @property
    def n_steps(self) -> int:
        return len(self.picard_iterations)

    def to_csv(self, sink: Optional[TextIO] = None) -> str:
        buf = io.StringIO()
        buf.write("step,time,picard_iters,clamp_events\n")
        for m, (it, cl) in enumerate(zip(self.picard_iterations, self.clamp_events), 1):
            buf.write(f"{m},{m * self.dt:.12g},{it},{cl}\n")
        text = buf.getvalue()
        if sink is not None:
            sink.write(text)
        return text

    def dump_snapshots(self, sink: TextIO) -> None:
        """One block per snapshot: cell values then face values, mesh id order."""
        for step, t, u in zip(self.snapshot_steps, self.times, self.snapshots):
            sink.write(f"SNAPSHOT {step} {float(t)!r} {len(u)}\n")
            for v in u:
                sink.write(f"{float(v)!r}\n")


def constrained_values(disc: HMMDiscretisation, model: ModelSpec, t: float) -> np.ndarray:
    x, y = disc.mesh.face_midpoints[disc.mesh.boundary_faces].T
    return np.broadcast_to(model.boundary_trace(x, y, t), x.shape).astype(float)


def assemble_step(disc: HMMDiscretisation, model: ModelSpec, prev, frozen,
                  t_next: float, dt: float) -> StepSystem:
    """Linear system of one Picard iteration of one implicit Euler step."""
    prev = np.asarray(prev, dtype=float)
    frozen = np.asarray(frozen, dtype=float)
    if prev.shape != (disc.n_dofs,) or frozen.shape != (disc.n_dofs,):
        raise DimensionMismatch(
            f"expected dof vectors of length {disc.n_dofs}, got {prev.shape} and {frozen.shape}")
    nc = disc.n_cells
    areas = disc.mesh.areas
    gval, fval, clamped = model.nonlinear_terms(frozen[:nc])
    a0, a = model.convection_coefficients(np.asarray(gval, dtype=float))

    Gx = disc.consistent_gradient_operator[0::2]
    Gy = disc.consistent_gradient_operator[1::2]
    conv = sp.diags(areas * a[:, 0]) @ Gx + sp.diags(areas * a[:, 1]) @ Gy
    conv = sp.vstack([conv, sp.csr_matrix((disc.n_faces, disc.n_dofs))])
    matrix = (disc.mass / dt + model.lam * disc.stiffness + conv).tocsr()

    rhs = np.zeros(disc.n_dofs)
    rhs[:nc] = areas * (prev[:nc] / dt + fval - a0)

    bnd = disc.boundary_dofs
    vals = constrained_values(disc, model, t_next)
    matrix, rhs = _eliminate(matrix, rhs, bnd, vals)
    return StepSystem(matrix, rhs, bnd, vals, nc, clamped)


def _eliminate(matrix, rhs, dofs, values):
    """Replace the rows of ``dofs`` by identity rows and lift their columns."""
    n = matrix.shape[0]
    rhs = rhs - matrix[:, dofs] @ values
    keep = np.ones(n)
    keep[dofs] = 0.0
    K = sp.diags(keep)
    matrix = (K @ matrix @ K).tocsr()
    diag = np.zeros(n)
    diag[dofs] = 1.0
    matrix = (matrix + sp.diags(diag)).tocsr()
    matrix.eliminate_zeros()
    rhs[dofs] = values
    return matrix, rhs


def solve_linear(system: StepSystem, tol: float = 1e-12, method: str = "direct") -> np.ndarray:
    """Solve a step system; raises LinearSolveFailed on singular systems.

    The direct path eliminates cell unknowns first when the cell-cell block
    is diagonal (always the case for assembled step systems) and factorises
    the face Schur complement.
    """
    A = system.matrix.tocsr()
    b = system.rhs
    try:
        if method == "gmres":
            x = _solve_gmres(A, b, tol)
        else:
            x = _solve_direct(A, b, system.n_cells)
    except (RuntimeError, ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        raise LinearSolveFailed(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailed("non-finite solution")
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(b - A @ x)
    scale = bnorm if bnorm > 0 else 1.0
    if res > tol * scale:
        # one round of iterative refinement before giving up
        try:
            x = x + _solve_direct(A, b - A @ x, system.n_cells)
        except (RuntimeError, ValueError) as exc:
            raise LinearSolveFailed(str(exc)) from exc
        res = np.linalg.norm(b - A @ x)
        if res > tol * scale:
            raise LinearSolveFailed(f"relative residual {res / scale:.3e} exceeds {tol:.1e}")
    return x


def _solve_direct(A, b, nc):
    n = A.shape[0]
    if 0 < nc < n:
        Acc = A[:nc, :nc]
        d = Acc.diagonal()
        if Acc.nnz == np.count_nonzero(d) and np.all(d != 0):
            Bcf = A[:nc, nc:]
            Cfc = A[nc:, :nc]
            Aff = A[nc:, nc:]
            dinv = sp.diags(1.0 / d)
            schur = (Aff - Cfc @ dinv @ Bcf).tocsc()
            lu = spla.splu(schur, permc_spec="MMD_AT_PLUS_A")
            bc, bf = b[:nc], b[nc:]
            xf = lu.solve(bf - Cfc @ (bc / d))
            xc = (bc - Bcf @ xf) / d
            return np.concatenate([xc, xf])
    if np.any(np.diff(A.indptr) == 0):
        raise LinearSolveFailed("matrix has an empty row")
    return spla.splu(A.tocsc()).solve(b)


def _solve_gmres(A, b, tol):
    ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, b, rtol=tol, atol=0.0, M=M, restart=100, maxiter=200)
    if info != 0:
        raise LinearSolveFailed(f"GMRES did not converge (info={info})")
    return x


class StepOperator:
    """Condensed solver for the step systems of one (mesh, model, dt).

    Cell unknowns are eliminated through the constant diagonal cell block
    and boundary faces are lifted, leaving a system on interior faces only.
    Its matrix is ``P + Mx @ wx + My @ wy`` where ``P`` is fixed and ``w``
    are the per-cell convection weights |K| a(g(u_K)); ``Mx``/``My`` map
    those weights to the stored entries of the CSR matrix.

    With ``reuse=True`` the last LU factorisation preconditions GMRES for
    later systems and is refreshed only when GMRES needs more than
    ``max_krylov`` iterations.  With ``reuse=False`` every system is
    factorised afresh.
    """

    def __init__(self, disc: HMMDiscretisation, model: ModelSpec, dt: float,
                 tol: float = 1e-12, reuse: bool = True, max_krylov: int = 8):
        self.disc, self.model, self.dt = disc, model, dt
        self.tol, self.reuse, self.max_krylov = tol, reuse, max_krylov
        self.n_factorizations = 0
        self._lu = None
        nc = disc.n_cells
        lam = model.lam
        S = disc.stiffness.tocsr()
        bfaces = disc.mesh.boundary_faces
        ifaces = np.flatnonzero(~disc.mesh.is_boundary)
        self.bfaces, self.ifaces = bfaces, ifaces
        self.D = disc.mesh.areas / dt + lam * S.diagonal()[:nc]
        Scf = lam * S[:nc, nc:]
        Sfc = lam * S[nc:, :nc]
        Sff = lam * S[nc:, nc:]
        G = disc.consistent_gradient_operator[:, nc:]
        self.Gx, self.Gy = G[0::2].tocsr(), G[1::2].tocsr()
        self.Scf_I, self.Scf_B = Scf[:, ifaces].tocsr(), Scf[:, bfaces].tocsr()
        self.Gx_I, self.Gx_B = self.Gx[:, ifaces].tocsr(), self.Gx[:, bfaces].tocsr()
        self.Gy_I, self.Gy_B = self.Gy[:, ifaces].tocsr(), self.Gy[:, bfaces].tocsr()
        self.Sfc_I = Sfc[ifaces].tocsr()
        self.Sff_IB = Sff[ifaces][:, bfaces].tocsr()
        Dinv = sp.diags(1.0 / self.D)
        P = (Sff[ifaces][:, ifaces] - self.Sfc_I @ Dinv @ self.Scf_I).tocsr()
        # pattern of P covers every face pair sharing a cell; the convection
        # products live on the same pattern
        P.sort_indices()
        self.P = P
        ni = len(ifaces)
        keys = np.repeat(np.arange(ni), np.diff(P.indptr)) * ni + P.indices
        self.Mx = self._weight_map(self.Sfc_I @ Dinv, self.Gx_I, keys, ni)
        self.My = self._weight_map(self.Sfc_I @ Dinv, self.Gy_I, keys, ni)

    @staticmethod
    def _weight_map(L, R, keys, ni):
        # entries of -(L diag(w) R) as a sparse linear map of w
        L = L.tocsc()
        R = R.tocsr()
        rows, cols, vals = [], [], []
        for K in range(L.shape[1]):
            li = L.indices[L.indptr[K]:L.indptr[K + 1]]
            lv = L.data[L.indptr[K]:L.indptr[K + 1]]
            rj = R.indices[R.indptr[K]:R.indptr[K + 1]]
            rv = R.data[R.indptr[K]:R.indptr[K + 1]]
            if len(li) == 0 or len(rj) == 0:
                continue
            rows.append((li[:, None] * ni + rj[None, :]).ravel())
            cols.append(np.full(len(li) * len(rj), K))
            vals.append(-(lv[:, None] * rv[None, :]).ravel())
        if not rows:
            return sp.csr_matrix((len(keys), L.shape[1]))
        pos = np.searchsorted(keys, np.concatenate(rows))
        return sp.csr_matrix((np.concatenate(vals), (pos, np.concatenate(cols))),
                             shape=(len(keys), L.shape[1]))

    def solve(self, prev, frozen, t_next):
        """Solve the step system for ``frozen``; returns (u, clamp_events)."""
        disc, model = self.disc, self.model
        nc = disc.n_cells
        areas = disc.mesh.areas
        gval, fval, clamped = model.nonlinear_terms(frozen[:nc])
        a0, a = model.convection_coefficients(np.asarray(gval, dtype=float))
        wx, wy = areas * a[:, 0], areas * a[:, 1]
        rc = areas * (prev[:nc] / self.dt + fval - a0)
        vb = constrained_values(disc, model, t_next)

        data = self.P.data + self.Mx @ wx + self.My @ wy
        A = sp.csr_matrix((data, self.P.indices, self.P.indptr), shape=self.P.shape)
        Bcf_B_vb = self.Scf_B @ vb + wx * (self.Gx_B @ vb) + wy * (self.Gy_B @ vb)
        rhs = -(self.Sff_IB @ vb) - self.Sfc_I @ ((rc - Bcf_B_vb) / self.D)
        xI = self._solve_reduced(A, rhs)

        Bcf_I_x = self.Scf_I @ xI + wx * (self.Gx_I @ xI) + wy * (self.Gy_I @ xI)
        c = (rc - Bcf_B_vb - Bcf_I_x) / self.D
        u = np.empty(disc.n_dofs)
        u[:nc] = c
        u[nc + self.ifaces] = xI
        u[nc + self.bfaces] = vb
        return u, clamped

    def _factor(self, A):
        try:
            # CSR arrays of A are the CSC arrays of A^T
            AT = sp.csc_matrix((A.data, A.indices, A.indptr), shape=A.shape[::-1])
            self._lu = spla.splu(AT, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise LinearSolveFailed(str(exc)) from exc
        self.n_factorizations += 1

    def _lu_solve(self, b):
        return self._lu.solve(b, trans="T")

    def _solve_reduced(self, A, b):
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return np.zeros_like(b)
        if self.reuse and self._lu is not None:
            x = self._krylov(A, b, bnorm)
            if x is not None:
                return x
        self._factor(A)
        x = self._lu_solve(b)
        res = np.linalg.norm(b - A @ x)
        if res > self.tol * bnorm:
            x = x + self._lu_solve(b - A @ x)
            res = np.linalg.norm(b - A @ x)
        if not np.all(np.isfinite(x)) or res > self.tol * bnorm:
            raise LinearSolveFailed(f"relative residual {res / bnorm:.3e} exceeds {self.tol:.1e}")
        return x

    def _krylov(self, A, b, bnorm):
        M = spla.LinearOperator(A.shape, self._lu_solve)
        x0 = self._lu_solve(b)
        x, info = spla.gmres(A, b, x0=x0, rtol=0.1 * self.tol, atol=0.0, M=M,
                             restart=self.max_krylov, maxiter=1)
        if info != 0 or not np.all(np.isfinite(x)):
            return None
        if np.linalg.norm(b - A @ x) > self.tol * bnorm:
            return None
        return x


def _grad_norm(disc, v):
    return math.sqrt(max(float(v @ (disc.stiffness @ v)), 0.0))


def picard_step(disc: HMMDiscretisation, model: ModelSpec, prev, t_next: float,
                cfg: SolverConfig, operator: Optional[StepOperator] = None):
    """Fixed-point iteration for one implicit step, started from ``prev``.

    Stops when ||grad_D(u_new - u)|| / max(||grad_D u_new||, 1e-30) < picard_tol.
    ``stats.iterations`` counts linear solves.  Without an ``operator`` each
    iteration assembles and solves the full step system; with one, the
    condensed solver is used.
    """
    prev = np.asarray(prev, dtype=float)
    u = prev
    history = []
    clamps = 0
    for k in range(1, cfg.picard_max + 1):
        if operator is None:
            system = assemble_step(disc, model, prev, u, t_next, cfg.dt)
            u_new = solve_linear(system, cfg.linear_tol,
                                 "gmres" if cfg.linear_solver == "gmres" else "direct")
            clamped = system.clamp_events
        else:
            u_new, clamped = operator.solve(prev, u, t_next)
        clamps += clamped
        upd = _grad_norm(disc, u_new - u) / max(_grad_norm(disc, u_new), 1e-30)
        history.append(upd)
        u = u_new
        if not np.isfinite(upd):
            raise PicardDiverged(f"non-finite update at iteration {k}")
        if upd < cfg.picard_tol:
            return u, PicardStats(k, upd, clamps, history)
    trend = "growing" if len(history) > 1 and history[-1] > history[-2] else "stalled"
    raise PicardDiverged(f"no convergence in {cfg.picard_max} iterations "
                         f"({trend}; last relative update {history[-1]:.3e})")


def initial_state(disc: HMMDiscretisation, model: ModelSpec) -> np.ndarray:
    u = disc.interpolate(model.initial)
    u[disc.boundary_dofs] = constrained_values(disc, model, 0.0)
    return u


def check_step_bound(model: ModelSpec, cfg: SolverConfig) -> Optional[float]:
    bound = cfg.step_bound(model.lam)
    if bound is not None and cfg.dt >= bound:
        warnings.warn(f"dt={cfg.dt:g} >= 2*lam/(C_D+eps)={bound:.6g}; "
                      f"uniqueness of the discrete solution is not guaranteed",
                      StepBoundWarning, stacklevel=3)
    return bound


def run(disc: HMMDiscretisation, model: ModelSpec, cfg: SolverConfig,
        progress=None) -> Trajectory:
    """Integrate from t = 0 to cfg.T with N = T/dt uniform steps."""
    n = cfg.n_steps()
    if cfg.enforce_step_bound:
        check_step_bound(model, cfg)
    u = initial_state(disc, model)
    operator = None
    if cfg.linear_solver != "gmres":
        operator = StepOperator(disc, model, cfg.dt, tol=cfg.linear_tol,
                                reuse=cfg.linear_solver == "reuse")
    traj = Trajectory(times=[0.0], snapshots=[u.copy()], snapshot_steps=[0],
                      picard_iterations=[], clamp_events=[], dt=cfg.dt)
    for m in range(1, n + 1):
        t = m * cfg.dt
        try:
            u, stats = picard_step(disc, model, u, t, cfg, operator)
        except (PicardDiverged, LinearSolveFailed) as exc:
            raise StepFailed(m, exc) from exc
        traj.picard_iterations.append(stats.iterations)
        traj.clamp_events.append(stats.clamp_events)
        if m == n or (cfg.snapshot_every and m % cfg.snapshot_every == 0):
            traj.times.append(t)
            traj.snapshots.append(u.copy())
            traj.snapshot_steps.append(m)
        if progress is not None:
            progress(m, n, stats)
    traj.final = u
    log.debug("run finished: %d steps, max Picard iterations %d", n,
              max(traj.picard_iterations))
    return traj
