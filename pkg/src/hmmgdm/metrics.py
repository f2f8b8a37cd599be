"""Quality functionals of the discretisation, error norms and observed rates.

Integrals of closed-form fields use the half-diamond triangles (x_K, a, b)
with a symmetric 3-point rule of degree 2.  Half-diamonds partition every
cell, so this is also a fan triangulation of the mesh.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import EigSolveFailed, LinearSolveFailed, NonPositiveError
from .gdm import HMMDiscretisation
from .mesh import generate
from .models import ModelSpec
from .solver import SolverConfig, run

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]

# barycentric weights of the degree-2 interior rule, equal weights 1/3
_QUAD_BARY = np.array([[2 / 3, 1 / 6, 1 / 6],
                       [1 / 6, 2 / 3, 1 / 6],
                       [1 / 6, 1 / 6, 2 / 3]])


def quadrature_points(disc: HMMDiscretisation):
    """Points (3, n_hd, 2) and weights (3, n_hd) on all half-diamonds."""
    mesh = disc.mesh
    fv = mesh.face_vertices[disc.hd_face]
    P = np.stack([mesh.barycenters[disc.hd_cell], mesh.vertices[fv[:, 0]],
                  mesh.vertices[fv[:, 1]]])
    pts = np.einsum("qj,jpd->qpd", _QUAD_BARY, P)
    w = np.broadcast_to(disc.hd_measure / 3.0, (3, len(disc.hd_cell)))
    return pts, w


def _eval(fn, pts):
    x, y = pts[..., 0], pts[..., 1]
    return np.broadcast_to(fn(x, y), x.shape + np.shape(fn(x[:1, :1], y[:1, :1]))[2:])


def integrate_cells(disc: HMMDiscretisation, fn: Field) -> np.ndarray:
    """Integral of a scalar field over every cell."""
    pts, w = quadrature_points(disc)
    vals = (w * _eval(fn, pts)).sum(axis=0)
    return np.bincount(disc.hd_cell, vals, minlength=disc.n_cells)


def integrate_half_diamonds(disc: HMMDiscretisation, fn: Field) -> np.ndarray:
    """Integrals of a vector field over every half-diamond, shape (n_hd, 2)."""
    pts, w = quadrature_points(disc)
    return (w[..., None] * _eval(fn, pts)).sum(axis=0)


def domain_l2_norm(disc: HMMDiscretisation, fn: Field) -> float:
    pts, w = quadrature_points(disc)
    v = _eval(fn, pts)
    if v.ndim == 3:
        v2 = np.einsum("qpd,qpd->qp", v, v)
    else:
        v2 = v * v
    return math.sqrt(float((w * v2).sum()))


# -- error norms ------------------------------------------------------------------

def l2_error_solution(disc: HMMDiscretisation, dofs, exact: Field,
                      mode: str = "sampled"):
    """(absolute, relative) L2 error of the cell reconstruction.

    ``mode="sampled"`` compares ``c_K`` with the exact value at ``x_K``,
    sqrt(sum_K |K| (c(x_K) - c_K)^2).  ``mode="quadrature"`` integrates
    (c - c_K)^2 over each cell.  The relative error divides by the norm of
    the exact solution computed the same way.
    """
    c = disc.cell_values(dofs)
    if mode == "sampled":
        x, y = disc.mesh.barycenters.T
        ex = np.broadcast_to(exact(x, y), c.shape)
        a = disc.mesh.areas
        abs_err = math.sqrt(float(np.sum(a * (ex - c) ** 2)))
        ref = math.sqrt(float(np.sum(a * ex ** 2)))
    elif mode == "quadrature":
        pts, w = quadrature_points(disc)
        ex = _eval(exact, pts)
        abs_err = math.sqrt(float((w * (ex - c[disc.hd_cell]) ** 2).sum()))
        ref = math.sqrt(float((w * ex ** 2).sum()))
    else:
        raise ValueError(f"unknown error mode {mode!r}")
    return abs_err, _relative(abs_err, ref)


def l2_error_gradient(disc: HMMDiscretisation, dofs, exact_grad: Field,
                      mode: str = "sampled"):
    """(absolute, relative) L2 error of a discrete gradient.

    ``mode="sampled"``: consistent cell gradient G_K against grad c(x_K),
    weighted by |K|.  ``mode="quadrature"``: the stabilised half-diamond
    gradient against grad c integrated over every half-diamond.
    """
    if mode == "sampled":
        g = disc.consistent_gradients(dofs)
        x, y = disc.mesh.barycenters.T
        ex = np.broadcast_to(exact_grad(x, y), g.shape)
        a = disc.mesh.areas
        abs_err = math.sqrt(float(np.sum(a * np.sum((ex - g) ** 2, axis=1))))
        ref = math.sqrt(float(np.sum(a * np.sum(ex ** 2, axis=1))))
    elif mode == "quadrature":
        g = disc.gradients(dofs)
        pts, w = quadrature_points(disc)
        ex = _eval(exact_grad, pts)
        diff = ex - g[None]
        abs_err = math.sqrt(float((w * np.einsum("qpd,qpd->qp", diff, diff)).sum()))
        ref = math.sqrt(float((w * np.einsum("qpd,qpd->qp", ex, ex)).sum()))
    else:
        raise ValueError(f"unknown error mode {mode!r}")
    return abs_err, _relative(abs_err, ref)


def _relative(abs_err, ref):
    if ref > 0:
        return abs_err / ref
    return 0.0 if abs_err == 0 else math.inf


def rates(errors: Sequence[float], hs: Sequence[float]) -> list:
    """Observed orders ln(e[i-1]/e[i]) / ln(h[i-1]/h[i]) for i >= 1."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or e.ndim != 1 or len(e) < 2:
        raise ValueError("errors and hs must be 1-D sequences of equal length >= 2")
    if np.any(e <= 0) or np.any(h <= 0):
        raise NonPositiveError("errors and mesh sizes must be positive")
    if np.any(np.diff(h) >= 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    return (np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])).tolist()


# -- GDM quality functionals ------------------------------------------------------

def _interior_blocks(disc):
    I = disc.interior_dofs
    S = disc.stiffness.tocsr()[I][:, I].tocsc()
    M = disc.mass.tocsr()[I][:, I].tocsc()
    return I, S, M


def coercivity_constant(disc: HMMDiscretisation, dense_limit: int = 400) -> float:
    """C_D = max ||Pi u|| / ||grad_D u|| over nonzero u with zero boundary faces.

    Square root of the largest eigenvalue of M u = mu S u on interior dofs.
    """
    I, S, M = _interior_blocks(disc)
    n = len(I)
    if n <= dense_limit:
        mu, vec = sla.eigh(M.toarray(), S.toarray())
        mu_max, v = mu[-1], vec[:, -1]
    else:
        try:
            mu, vec = spla.eigsh(M, k=1, M=S, which="LA", tol=1e-12)
        except (spla.ArpackError, spla.ArpackNoConvergence, RuntimeError) as exc:
            raise EigSolveFailed(str(exc)) from exc
        mu_max, v = mu[0], vec[:, 0]
    Sv = S @ v
    res = np.linalg.norm(M @ v - mu_max * Sv) / max(abs(mu_max) * np.linalg.norm(Sv), 1e-300)
    if not mu_max > 0 or res > 1e-8:
        raise EigSolveFailed(f"eigenpair residual {res:.3e} (mu={mu_max:.3e})")
    return math.sqrt(mu_max)


def _factor_spd(S):
    try:
        return spla.splu(S, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise LinearSolveFailed(str(exc)) from exc


def interpolant_PD(disc: HMMDiscretisation, w: Field, grad_w: Field) -> np.ndarray:
    """Minimiser over X_{D,0} of ||Pi u - w||^2 + ||grad_D u - grad w||^2."""
    I, S, M = _interior_blocks(disc)
    b = np.zeros(disc.n_dofs)
    b[:disc.n_cells] = integrate_cells(disc, w)
    r = integrate_half_diamonds(disc, grad_w)
    b += disc.gradient_operator.T @ r.ravel()
    u = np.zeros(disc.n_dofs)
    u[I] = _factor_spd((M + S).tocsc()).solve(b[I])
    return u


def pd_objective(disc: HMMDiscretisation, u, w: Field, grad_w: Field):
    """(||Pi u - w||, ||grad_D u - grad w||) by quadrature."""
    pts, wt = quadrature_points(disc)
    c = disc.cell_values(u)[disc.hd_cell]
    fw = _eval(w, pts)
    e0 = math.sqrt(float((wt * (c - fw) ** 2).sum()))
    diff = _eval(grad_w, pts) - disc.gradients(u)[None]
    e1 = math.sqrt(float((wt * np.einsum("qpd,qpd->qp", diff, diff)).sum()))
    return e0, e1


def consistency_defect(disc: HMMDiscretisation, w: Field, grad_w: Field) -> float:
    """S_D(w): sum of the two norms at the least-squares minimiser."""
    u = interpolant_PD(disc, w, grad_w)
    e0, e1 = pd_objective(disc, u, w, grad_w)
    return e0 + e1


def conformity_functional(disc: HMMDiscretisation, xi: Field, div_xi: Field) -> np.ndarray:
    """Dof vector r with r . u = <grad_D u, xi> + <Pi u, div xi>."""
    r = disc.gradient_operator.T @ integrate_half_diamonds(disc, xi).ravel()
    r[:disc.n_cells] += integrate_cells(disc, div_xi)
    return r


def limit_conformity_defect(disc: HMMDiscretisation, xi: Field, div_xi: Field) -> float:
    """W_D(xi) = sqrt(r^T S^{-1} r) on interior dofs."""
    I, S, _ = _interior_blocks(disc)
    r = conformity_functional(disc, xi, div_xi)[I]
    z = _factor_spd(S).solve(r)
    return math.sqrt(max(float(r @ z), 0.0))


# -- standard probes ----------------------------------------------------------------

def bubble(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def bubble_gradient(x, y):
    return np.pi * np.stack([np.cos(np.pi * x) * np.sin(np.pi * y),
                             np.sin(np.pi * x) * np.cos(np.pi * y)], axis=-1)


def curl_bubble(x, y):
    """(d/dy, -d/dx) of (x y (1-x) (1-y))^2; divergence free, zero on the boundary."""
    B = x * (1 - x) * y * (1 - y)
    Bx = (1 - 2 * x) * y * (1 - y)
    By = x * (1 - x) * (1 - 2 * y)
    return np.stack([2 * B * By, -2 * B * Bx], axis=-1)


def zero_divergence(x, y):
    return np.zeros(np.broadcast(x, y).shape)


@dataclass(frozen=True)
class QualityReport:
    C_D: float
    S_D: dict
    W_D: dict
    h: float

    def csv_header(self) -> str:
        return "h,C_D," + ",".join(f"S_D[{k}]" for k in self.S_D) + "," + \
            ",".join(f"W_D[{k}]" for k in self.W_D)

    def csv_row(self) -> str:
        vals = [self.h, self.C_D, *self.S_D.values(), *self.W_D.values()]
        return ",".join(f"{v:.10g}" for v in vals)


def quality_report(disc: HMMDiscretisation) -> QualityReport:
    return QualityReport(
        C_D=coercivity_constant(disc),
        S_D={"bubble": consistency_defect(disc, bubble, bubble_gradient)},
        W_D={"curl_bubble": limit_conformity_defect(disc, curl_bubble, zero_divergence)},
        h=disc.mesh.h,
    )


# -- convergence tables ---------------------------------------------------------------

@dataclass
class ConvergenceRow:
    h: float
    err_c: float
    err_grad: float
    rate_c: Optional[float] = None
    rate_grad: Optional[float] = None


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    model: str = ""
    family: str = ""
    dts: list = field(default_factory=list)
    # per level: largest Picard count over all steps
    max_picard: list = field(default_factory=list)

    def add(self, h: float, err_c: float, err_grad: float) -> ConvergenceRow:
        row = ConvergenceRow(h, err_c, err_grad)
        if self.rows:
            prev = self.rows[-1]
            row.rate_c = rates([prev.err_c, err_c], [prev.h, h])[0]
            row.rate_grad = rates([prev.err_grad, err_grad], [prev.h, h])[0]
        self.rows.append(row)
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("h,err_c,rate_c,err_grad,rate_grad\n")
        for r in self.rows:
            buf.write(f"{r.h:.10g},{r.err_c:.10g},{_fmt(r.rate_c)},"
                      f"{r.err_grad:.10g},{_fmt(r.rate_grad)}\n")
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [f"<!-- model={self.model} family={self.family} "
                 f"dt={','.join(f'{d:g}' for d in self.dts)} -->",
                 "| h | rel. L2 error c | rate | rel. L2 error grad c | rate |",
                 "|---|---|---|---|---|"]
        for r in self.rows:
            lines.append(f"| {r.h:.7f} | {r.err_c:.7g} | {_fmt(r.rate_c, '--')} | "
                         f"{r.err_grad:.7g} | {_fmt(r.rate_grad, '--')} |")
        return "\n".join(lines) + "\n"


def _fmt(v, empty=""):
    return empty if v is None else f"{v:.7f}"


def final_errors(disc: HMMDiscretisation, model: ModelSpec, u, T: float,
                 mode: str = "sampled"):
    """Relative errors (c, grad c) of ``u`` against the exact solution at ``T``."""
    if not model.has_exact:
        raise ValueError("model has no exact solution")
    _, ec = l2_error_solution(disc, u, lambda x, y: model.exact(x, y, T), mode)
    if model.exact_gradient is None:
        raise ValueError("model has no exact gradient")
    _, eg = l2_error_gradient(disc, u, lambda x, y: model.exact_gradient(x, y, T), mode)
    return ec, eg


DEFAULT_DTS = (0.01, 0.005, 0.0025, 0.00125)


def convergence_study(model: ModelSpec, family, levels=(1, 2, 3, 4), dts=DEFAULT_DTS,
                      T: float = 1.0, mode: str = "sampled", on_level=None,
                      **solver_options) -> ConvergenceReport:
    """Run ``model`` on successive levels of a mesh family and tabulate errors.

    ``on_level(level, row, trajectory)`` is called after every level, so a
    caller can flush partial results.
    """
    levels, dts = list(levels), list(dts)
    if len(levels) != len(dts):
        raise ValueError("one dt per level is required")
    report = ConvergenceReport(model=model.name, family=str(getattr(family, "value", family)),
                               dts=dts)
    for level, dt in zip(levels, dts):
        mesh = generate(family, level)
        disc = HMMDiscretisation(mesh)
        traj = run(disc, model, SolverConfig(dt=dt, T=T, **solver_options))
        ec, eg = final_errors(disc, model, traj.final, T, mode)
        row = report.add(mesh.h, ec, eg)
        report.max_picard.append(max(traj.picard_iterations))
        if on_level is not None:
            on_level(level, row, traj)
    return report
