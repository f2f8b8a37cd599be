"""Problem data for  dc/dt - lam*div(grad c) + A(g(c), grad c) = f(c).

Callables are vectorised: ``g`` and ``f`` map arrays to arrays, ``A(u, q)``
takes ``u`` of shape (n,) and ``q`` of shape (n, 2).  ``A`` must be affine in
``q`` for each fixed ``u``; the Picard linearisation relies on it.
Space-time fields take ``(x, y, t)`` arrays; the initial datum takes
``(x, y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidLambda

Array = np.ndarray


@dataclass(frozen=True)
class GbfParams:
    p: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"GBF exponent must be positive, got {self.p!r}")


@dataclass(frozen=True)
class ModelSpec:
    lam: float
    A: Callable[[Array, Array], Array]
    g: Callable[[Array], Array]
    f: Callable[[Array], Array]
    boundary_trace: Callable[[Array, Array, float], Array]
    initial: Callable[[Array, Array], Array]
    exact: Optional[Callable[[Array, Array, float], Array]] = None
    exact_gradient: Optional[Callable[[Array, Array, float], Array]] = None
    lipschitz: Optional[tuple] = None
    # evaluate g and f at max(c, 0); used for fractional powers
    clamp_negative: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidLambda(f"diffusion coefficient must be positive, got {self.lam!r}")

    @property
    def has_exact(self) -> bool:
        return self.exact is not None

    def nonlinear_terms(self, c: Array):
        """Return ``(g(c), f(c), n_clamped)`` for cell values ``c``."""
        c = np.asarray(c, dtype=float)
        n_clamped = 0
        if self.clamp_negative:
            neg = c < 0
            n_clamped = int(neg.sum())
            if n_clamped:
                c = np.where(neg, 0.0, c)
        return (np.broadcast_to(self.g(c), c.shape),
                np.broadcast_to(self.f(c), c.shape), n_clamped)

    def convection_coefficients(self, u: Array):
        """Split A(u, q) = a0 + a . q; returns a0 (n,) and a (n, 2)."""
        n = len(u)
        zero = np.zeros((n, 2))
        ex = np.zeros((n, 2))
        ex[:, 0] = 1.0
        ey = np.zeros((n, 2))
        ey[:, 1] = 1.0
        a0 = np.broadcast_to(self.A(u, zero), (n,)).astype(float)
        ax = np.broadcast_to(self.A(u, ex), (n,)) - a0
        ay = np.broadcast_to(self.A(u, ey), (n,)) - a0
        return a0, np.column_stack([ax, ay])


# -- generalised Burgers-Fisher --------------------------------------------------

def _gbf_constants(p):
    slope = -2.0 * p / (4.0 * (p + 1.0))
    speed = (4.0 + 2.0 * (p + 1.0) ** 2) / (2.0 * (p + 1.0))
    return slope, speed


def gbf_exact(x, y, t, p):
    """Travelling-wave solution of the 2D generalised Burgers-Fisher equation."""
    slope, speed = _gbf_constants(p)
    z = slope * (np.asarray(x) + np.asarray(y) - speed * t)
    return (0.5 + 0.5 * np.tanh(z)) ** (1.0 / p)


def gbf_exact_gradient(x, y, t, p):
    """(d/dx, d/dy) of :func:`gbf_exact`; both components are equal."""
    slope, speed = _gbf_constants(p)
    z = slope * (np.asarray(x) + np.asarray(y) - speed * t)
    base = 0.5 + 0.5 * np.tanh(z)
    sech2 = 1.0 / np.cosh(z) ** 2
    d = (1.0 / p) * base ** (1.0 / p - 1.0) * 0.5 * sech2 * slope
    return np.stack([d, d], axis=-1)


def gbf_exact_dt(x, y, t, p):
    slope, speed = _gbf_constants(p)
    return -speed * gbf_exact_gradient(x, y, t, p)[..., 0]


def make_gbf(p: float) -> ModelSpec:
    """GBF data: A(u, q) = u (q_x + q_y), g(c) = c^p, f(c) = c (1 - c^p), lam = 1."""
    GbfParams(p)
    p = float(p)

    def A(u, q):
        return u * (q[..., 0] + q[..., 1])

    def g(c):
        return np.power(c, p)

    def f(c):
        return c * (1.0 - np.power(c, p))

    def exact(x, y, t):
        return gbf_exact(x, y, t, p)

    def exact_gradient(x, y, t):
        return gbf_exact_gradient(x, y, t, p)

    return ModelSpec(
        lam=1.0, A=A, g=g, f=f,
        boundary_trace=exact,
        initial=lambda x, y: gbf_exact(x, y, 0.0, p),
        exact=exact,
        exact_gradient=exact_gradient,
        clamp_negative=True,
        name="gbf",
        params={"p": p},
    )


def make_custom(lam: float, A, g, f, *, initial=None, boundary_trace=None,
                exact=None, exact_gradient=None, lipschitz=None,
                clamp_negative=False, name="custom") -> ModelSpec:
    """Wrap user callables.  Missing initial/boundary data default to the
    exact solution when one is supplied, and to zero otherwise."""
    if initial is None:
        initial = ((lambda x, y: exact(x, y, 0.0)) if exact is not None
                   else (lambda x, y: np.zeros(np.broadcast(x, y).shape)))
    if boundary_trace is None:
        boundary_trace = exact if exact is not None else \
            (lambda x, y, t: np.zeros(np.broadcast(x, y).shape))
    return ModelSpec(lam=lam, A=A, g=g, f=f, boundary_trace=boundary_trace,
                     initial=initial, exact=exact, exact_gradient=exact_gradient,
                     lipschitz=lipschitz, clamp_negative=clamp_negative, name=name)


def make_heat(lam: float = 1.0, initial=None, boundary_trace=None, exact=None,
              exact_gradient=None) -> ModelSpec:
    """Pure diffusion: A = g = f = 0."""
    def zero_A(u, q):
        return np.zeros(len(u))

    def zero(c):
        return np.zeros_like(c)

    return make_custom(lam, zero_A, zero, zero, initial=initial,
                       boundary_trace=boundary_trace, exact=exact,
                       exact_gradient=exact_gradient, name="heat")


# -- diagnostics -------------------------------------------------------------------

def check_data_consistency(model: ModelSpec, T: float = 1.0, n: int = 100,
                           seed: int = 0) -> float:
    """Max mismatch of boundary/initial data against the exact solution.

    Samples ``n`` random points on the boundary of the unit square over
    (0, T) and ``n`` random interior points at t = 0.
    """
    if not model.has_exact:
        return 0.0
    rng = np.random.default_rng(seed)
    s = rng.random(n)
    side = rng.integers(0, 4, n)
    x = np.choose(side, [s, np.ones(n), s, np.zeros(n)])
    y = np.choose(side, [np.zeros(n), s, np.ones(n), s])
    t = rng.random(n) * T
    err_b = np.abs(model.boundary_trace(x, y, t) - model.exact(x, y, t)).max()
    xi, yi = rng.random(n), rng.random(n)
    err_i = np.abs(model.initial(xi, yi) - model.exact(xi, yi, 0.0)).max()
    return float(max(err_b, err_i))


def pde_residual(model: ModelSpec, x, y, t, step: float = 1e-5):
    """Residual of the exact solution in the PDE, by central differences.

    Differences are taken in extended precision: at step 1e-5 the double
    precision five-point Laplacian already carries ~1e-6 of rounding error.
    """
    if not model.has_exact:
        raise ValueError("model has no exact solution")
    c = model.exact
    x, y, t = (np.atleast_1d(np.asarray(v, dtype=np.longdouble)) for v in (x, y, t))
    step = np.longdouble(step)
    dt = (c(x, y, t + step) - c(x, y, t - step)) / (2 * step)
    cx = (c(x + step, y, t) - c(x - step, y, t)) / (2 * step)
    cy = (c(x, y + step, t) - c(x, y - step, t)) / (2 * step)
    lap = (c(x + step, y, t) + c(x - step, y, t) + c(x, y + step, t)
           + c(x, y - step, t) - 4 * c(x, y, t)) / step ** 2
    u = c(x, y, t)
    g, f = model.g(u), model.f(u)
    conv = model.A(g, np.column_stack([cx, cy]))
    return (dt - model.lam * lap + conv - f).astype(float)
