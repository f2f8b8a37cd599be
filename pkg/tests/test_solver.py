import io
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from hmmgdm.errors import InvalidTimeGrid, LinearSolveFailed, PicardDiverged, StepFailed
from hmmgdm.gdm import HMMDiscretisation
from hmmgdm.mesh import build_mesh, generate
from hmmgdm.models import make_gbf, make_heat
from hmmgdm.solver import (SolverConfig, StepBoundWarning, StepOperator, StepSystem,
                           assemble_step, initial_state, picard_step, run, solve_linear,
                           _grad_norm)

from oracles import brute_step_matrix, eliminate_dense


@pytest.fixture(scope="module")
def tri1():
    return HMMDiscretisation(generate("triangular", 1))


def bubble(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


# -- configuration ------------------------------------------------------------------

def test_time_grid():
    assert SolverConfig(dt=0.01, T=1.0).n_steps() == 100
    assert SolverConfig(dt=0.1, T=0.1).n_steps() == 1
    with pytest.raises(InvalidTimeGrid):
        SolverConfig(dt=0.03, T=1.0).n_steps()


@pytest.mark.parametrize("kw", [dict(dt=0), dict(dt=1, T=0.5), dict(picard_max=0),
                                dict(linear_solver="magic")])
def test_bad_config(kw):
    base = dict(dt=0.1, T=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        SolverConfig(**base)


# -- assembly ---------------------------------------------------------------------------

@pytest.mark.parametrize("p", [2.0, 0.5])
def test_assembly_matches_brute_force(two_triangles, p):
    disc = HMMDiscretisation(two_triangles)
    model = make_gbf(p)
    rng = np.random.default_rng(3)
    prev = rng.random(disc.n_dofs)
    frozen = rng.random(disc.n_dofs)
    dt = 0.05
    system = assemble_step(disc, model, prev, frozen, 0.3, dt)
    g, _, _ = model.nonlinear_terms(frozen[:disc.n_cells])
    _, a = model.convection_coefficients(g)
    brute = eliminate_dense(brute_step_matrix(two_triangles, model.lam, dt, a), disc.boundary_dofs)
    np.testing.assert_allclose(system.matrix.toarray(), brute, rtol=0, atol=1e-12)


def test_rhs_and_constraints(tri1):
    model = make_gbf(2.0)
    u0 = initial_state(tri1, model)
    s = assemble_step(tri1, model, u0, u0, 0.01, 0.01)
    fx, fy = tri1.mesh.face_midpoints[tri1.mesh.boundary_faces].T
    np.testing.assert_array_equal(s.rhs[s.constrained], model.exact(fx, fy, 0.01))
    assert s.matrix.shape == (tri1.n_dofs, tri1.n_dofs)


# -- linear solves ------------------------------------------------------------------------

def test_identity_with_constraints():
    n = 6
    vals = np.array([1.0, -2.0])
    s = StepSystem(sp.identity(n, format="csr"), np.r_[0, 0, 0, 0, vals], np.array([4, 5]),
                   vals, 2)
    np.testing.assert_allclose(solve_linear(s), np.r_[0, 0, 0, 0, vals])


@pytest.mark.parametrize("method", ["direct", "gmres"])
def test_manufactured_spd(tri1, method):
    rng = np.random.default_rng(11)
    A = (tri1.mass / 0.1 + tri1.stiffness).tocsr()
    bnd = tri1.boundary_dofs
    keep = np.ones(tri1.n_dofs)
    keep[bnd] = 0
    A = (sp.diags(keep) @ A @ sp.diags(keep) + sp.diags(1 - keep)).tocsr()
    x = rng.standard_normal(tri1.n_dofs)
    s = StepSystem(A, A @ x, bnd, x[bnd], tri1.n_cells)
    got = solve_linear(s, method=method)
    assert np.linalg.norm(got - x) <= 1e-9 * np.linalg.norm(x)


@pytest.mark.parametrize("row", [0, 300])
def test_empty_row_fails(tri1, row):
    model = make_gbf(2.0)
    u0 = initial_state(tri1, model)
    s = assemble_step(tri1, model, u0, u0, 0.01, 0.01)
    A = s.matrix.tolil()
    A[row, :] = 0
    s.matrix = A.tocsr()
    with pytest.raises(LinearSolveFailed):
        solve_linear(s)


# -- Picard --------------------------------------------------------------------------------

def test_heat_zero_data_one_iteration(tri1):
    u, stats = picard_step(tri1, make_heat(), np.zeros(tri1.n_dofs), 0.1, SolverConfig(0.1, 1.0))
    assert stats.iterations == 1 and stats.relative_update == 0 and not u.any()


def test_linear_problem_settles_after_one_extra_solve(tri1):
    model = make_heat(initial=bubble)
    u0 = initial_state(tri1, model)
    _, stats = picard_step(tri1, model, u0, 0.1, SolverConfig(0.1, 1.0))
    assert stats.iterations == 2
    assert stats.history[-1] < 1e-13


@pytest.mark.parametrize("use_operator", [False, True])
def test_gbf_first_step(tri1, use_operator):
    model = make_gbf(2.0)
    cfg = SolverConfig(0.01, 1.0)
    op = StepOperator(tri1, model, 0.01) if use_operator else None
    u, stats = picard_step(tri1, model, initial_state(tri1, model), 0.01, cfg, op)
    assert stats.iterations <= 10 and stats.relative_update < 1e-10
    # re-substituting the converged state changes it by less than 10 * tol
    again = solve_linear(assemble_step(tri1, model, initial_state(tri1, model), u, 0.01, 0.01))
    assert _grad_norm(tri1, again - u) / _grad_norm(tri1, u) < 10 * cfg.picard_tol


def test_condensed_matches_full(tri1):
    model = make_gbf(0.5)
    u0 = initial_state(tri1, model)
    frozen = u0 + 0.01
    full = solve_linear(assemble_step(tri1, model, u0, frozen, 0.02, 0.02))
    op = StepOperator(tri1, model, 0.02)
    cond, _ = op.solve(u0, frozen, 0.02)
    np.testing.assert_allclose(cond, full, atol=1e-12)


def test_huge_step_terminates():
    disc = HMMDiscretisation(generate("hexagonal", 1))
    model = make_gbf(2.0)
    cfg = SolverConfig(1e3, 1e3, picard_max=50)
    try:
        _, stats = picard_step(disc, model, initial_state(disc, model), 1e3, cfg)
        assert stats.iterations <= 50
    except PicardDiverged:
        pass


def test_picard_cap_is_reported_with_step(tri1):
    with pytest.raises(StepFailed) as info:
        run(tri1, make_gbf(2.0), SolverConfig(0.01, 0.05, picard_max=1))
    assert info.value.step == 1
    assert isinstance(info.value.cause, PicardDiverged)


# -- runs ----------------------------------------------------------------------------------

def test_single_step(tri1):
    traj = run(tri1, make_gbf(2.0), SolverConfig(0.01, 0.01))
    assert traj.n_steps == 1 and traj.snapshot_steps == [0, 1]


def test_heat_zero_stays_zero(tri1):
    traj = run(tri1, make_heat(), SolverConfig(0.1, 1.0, snapshot_every=1))
    assert len(traj.snapshots) == 11
    assert all(not s.any() for s in traj.snapshots)


def test_dissipativity(tri1):
    traj = run(tri1, make_heat(initial=bubble), SolverConfig(0.01, 0.2, snapshot_every=1))
    energy = [tri1.function_norm(u) for u in traj.snapshots]
    assert all(b <= a + 1e-15 for a, b in zip(energy, energy[1:]))
    assert energy[-1] < energy[0]


def test_gbf_run_and_boundary_exactness(tri1):
    model = make_gbf(2.0)
    traj = run(tri1, model, SolverConfig(0.01, 1.0, snapshot_every=10))
    assert traj.n_steps == 100 and max(traj.picard_iterations) <= 50
    fx, fy = tri1.mesh.face_midpoints[tri1.mesh.boundary_faces].T
    for t, u in zip(traj.times, traj.snapshots):
        np.testing.assert_array_equal(u[tri1.boundary_dofs], model.exact(fx, fy, t))
    # the discrete fluxes are conservative at every computed state
    F = tri1.all_fluxes(traj.final)
    sums = np.bincount(tri1.hd_face, F, minlength=tri1.n_faces)
    assert np.abs(sums[~tri1.mesh.is_boundary]).max() < 1e-10


def test_deterministic_direct(tri1):
    cfg = SolverConfig(0.05, 0.5, linear_solver="direct")
    a = run(tri1, make_gbf(0.5), cfg)
    b = run(tri1, make_gbf(0.5), cfg)
    np.testing.assert_array_equal(a.final, b.final)
    assert a.to_csv() == b.to_csv()


def test_solver_paths_agree():
    disc = HMMDiscretisation(generate("distorted", 1))
    model = make_gbf(2.0)
    finals = [run(disc, model, SolverConfig(0.02, 0.2, linear_solver=m)).final
              for m in ("reuse", "direct", "gmres")]
    for f in finals[1:]:
        np.testing.assert_allclose(f, finals[0], atol=1e-9)


def test_step_bound_warning(tri1):
    cfg = SolverConfig(10.0, 10.0, enforce_step_bound=True, coercivity=0.2258)
    with pytest.warns(StepBoundWarning):
        run(tri1, make_heat(), cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("error", StepBoundWarning)
        run(tri1, make_heat(), SolverConfig(0.1, 0.1, enforce_step_bound=True, coercivity=0.2258))


def test_trajectory_exports(tri1):
    traj = run(tri1, make_gbf(2.0), SolverConfig(0.01, 0.03))
    lines = traj.to_csv().splitlines()
    assert lines[0] == "step,time,picard_iters,clamp_events"
    assert len(lines) == 4 and lines[3].startswith("3,0.03,")
    buf = io.StringIO()
    traj.dump_snapshots(buf)
    text = buf.getvalue().splitlines()
    assert text[0] == f"SNAPSHOT 0 0.0 {tri1.n_dofs}"
    assert float(text[1]) == traj.snapshots[0][0]


def test_two_cell_run(two_triangles):
    disc = HMMDiscretisation(two_triangles)
    traj = run(disc, make_gbf(2.0), SolverConfig(0.1, 0.5))
    assert np.isfinite(traj.final).all()


def test_hanging_node_run():
    # one coarse cell beside two fine cells; the coarse cell has a collinear vertex
    verts = [(0, 0), (1, 0), (1, 0.5), (1, 1), (0, 1), (2, 0), (2, 0.5), (2, 1)]
    verts = [(x / 2, y) for x, y in verts]
    mesh = build_mesh(verts, [[0, 1, 2, 3, 4], [1, 5, 6, 2], [2, 6, 7, 3]])
    disc = HMMDiscretisation(mesh)
    traj = run(disc, make_gbf(2.0), SolverConfig(0.1, 0.3))
    assert np.isfinite(traj.final).all()
