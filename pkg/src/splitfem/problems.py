"""Registry of manufactured test problems and error measurement.

Every space-time function takes ``(x, y, t)`` with array ``x, y`` and returns
an array (scalar fields) or a length-2 sequence of arrays (vector fields).
"""

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import element_quad
from .errors import InvalidArgumentError
from .fespace import eval_field
from .quadrature import collapsed_gauss

TWO_PI = 2.0 * math.pi


class ProblemId(str, enum.Enum):
    CD_EXAMPLE1 = "cd-example1"
    CD_EXAMPLE2 = "cd-example2"
    CD_DIFFUSION = "cd-diffusion"
    CD_ZERO = "cd-zero"
    NS_EXAMPLE3 = "ns-example3"
    NS_EXAMPLE4 = "ns-example4"
    NS_ZERO = "ns-zero"
    CAVITY = "cavity"

    @property
    def is_ns(self):
        return self.value.startswith("ns-") or self is ProblemId.CAVITY


@dataclass(frozen=True)
class CdProblem:
    """Scalar convection-diffusion-reaction problem.

    ``F`` is the full source; it is split as ``F = f + g`` with ``f`` used in
    the convection step and ``g = F - f`` in the diffusion correction. ``f``
    defaults to zero.

    ``F_terms`` optionally lists ``(a, G)`` pairs with ``F(x, y, t) = sum a(t) G(x, y)``,
    which lets solvers assemble each spatial load vector once.
    """

    name: str
    b: Callable
    eps: float | Callable
    c: float | Callable
    F: Callable
    u_b: Callable
    u_0: Callable
    T: float = 1.0
    div_b: Callable | None = None
    f: Callable | None = None
    exact: Callable | None = None
    steady_coefficients: bool = True  # b, eps, c independent of t
    F_terms: tuple = ()

    @property
    def g(self):
        if self.f is None:
            return self.F
        F, f = self.F, self.f
        return lambda x, y, t: F(x, y, t) - f(x, y, t)


@dataclass(frozen=True)
class NsProblem:
    """Incompressible Navier-Stokes problem; ``g`` is the whole body force."""

    name: str
    Re: float
    g: Callable
    u_b: Callable
    u_0: Callable
    T: float | None = 1.0
    exact_u: Callable | None = None
    exact_p: Callable | None = None

    @property
    def exact(self):
        if self.exact_u is None:
            return None
        return (self.exact_u, self.exact_p)


def _zeros(x, y, t):
    return np.zeros(np.shape(x))


def _zeros2(x, y, t):
    z = np.zeros(np.shape(x))
    return np.stack([z, z])


def _const_vector(bx, by):
    def b(x, y, t):
        return np.stack([np.full(np.shape(x), bx), np.full(np.shape(x), by)])
    return b


# ---------------------------------------------------------------- CD examples

def sine_problem(name, b=(1.0, -1.0), eps=1e-8, c=1.0, T=1.0):
    """``u = exp(2 pi t) sin(2 pi x) sin(2 pi y)`` with constant ``b, eps, c``."""
    b1, b2 = b

    def exact(x, y, t):
        return np.exp(TWO_PI * t) * np.sin(TWO_PI * x) * np.sin(TWO_PI * y)

    def G(x, y):
        sx, cx = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
        sy, cy = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
        return (TWO_PI + 2.0 * TWO_PI ** 2 * eps + c) * sx * sy + TWO_PI * (b1 * cx * sy + b2 * sx * cy)

    def a(t):
        return np.exp(TWO_PI * t)

    def F(x, y, t):
        return np.exp(TWO_PI * t) * G(x, y)

    return CdProblem(name, _const_vector(b1, b2), eps, c, F, exact, exact, T=T, exact=exact,
                     F_terms=((a, G),))


def cos_problem(name, b=(2.0, -1.0), eps=1e-8, c=1.0, T=1.0):
    """``u = t^2 cos(x y^2)`` with constant ``b, eps, c``."""
    b1, b2 = b

    def exact(x, y, t):
        return t * t * np.cos(x * y * y)

    def G1(x, y):
        return np.cos(x * y * y)

    def G2(x, y):
        # spatial part multiplying t^2: convection, diffusion and reaction of cos(x y^2)
        arg = x * y * y
        s, co = np.sin(arg), np.cos(arg)
        u_x = -y * y * s
        u_y = -2.0 * x * y * s
        lap = -y ** 4 * co - 2.0 * x * s - 4.0 * x * x * y * y * co
        return b1 * u_x + b2 * u_y - eps * lap + c * co

    def F(x, y, t):
        return 2.0 * t * G1(x, y) + t * t * G2(x, y)

    return CdProblem(name, _const_vector(b1, b2), eps, c, F, exact, exact, T=T, exact=exact,
                     F_terms=((lambda t: 2.0 * t, G1), (lambda t: t * t, G2)))


def zero_cd_problem(T=1.0):
    return CdProblem("cd-zero", _const_vector(1.0, -1.0), 1e-8, 1.0, _zeros, _zeros, _zeros,
                     T=T, exact=_zeros)


# ---------------------------------------------------------------- NS examples

def _A(s):
    return s * s * (s - 1.0) ** 2


def _A1(s):
    return 2.0 * s * (s - 1.0) * (2.0 * s - 1.0)


def _A2(s):
    return 12.0 * s * s - 12.0 * s + 2.0


def _A3(s):
    return 24.0 * s - 12.0


def example3(Re=5000.0, T=1.0):
    """Trigonometric-in-time polynomial flow with ``p = (x^2 - y^2) cos t``.

    The velocity is the curl of ``5 A(x) A(y) cos t`` with ``A(s) = s^2 (s-1)^2``.
    """

    def exact_u(x, y, t):
        c = np.cos(t)
        return np.stack([5.0 * _A(x) * _A1(y) * c, -5.0 * _A1(x) * _A(y) * c])

    def exact_p(x, y, t):
        return (x * x - y * y) * np.cos(t)

    def g(x, y, t):
        c, s = np.cos(t), np.sin(t)
        ax, a1x, a2x, a3x = _A(x), _A1(x), _A2(x), _A3(x)
        ay, a1y, a2y, a3y = _A(y), _A1(y), _A2(y), _A3(y)
        u1 = 5.0 * ax * a1y * c
        u2 = -5.0 * a1x * ay * c
        u1x, u1y = 5.0 * a1x * a1y * c, 5.0 * ax * a2y * c
        u2x, u2y = -5.0 * a2x * ay * c, -5.0 * a1x * a1y * c
        lap1 = 5.0 * c * (a2x * a1y + ax * a3y)
        lap2 = -5.0 * c * (a3x * ay + a1x * a2y)
        g1 = -5.0 * ax * a1y * s + u1 * u1x + u2 * u1y - lap1 / Re + 2.0 * x * c
        g2 = 5.0 * a1x * ay * s + u1 * u2x + u2 * u2y - lap2 / Re - 2.0 * y * c
        return np.stack([g1, g2])

    return NsProblem("ns-example3", Re, g, exact_u, exact_u, T=T, exact_u=exact_u, exact_p=exact_p)


def example4(Re=5000.0, T=1.0):
    """``u = (t^3 y^2, t^2 x)``, ``p = t x + y - (t + 1)/2``: representable exactly in space."""

    def exact_u(x, y, t):
        return np.stack([t ** 3 * y * y + 0.0 * x, t * t * x + 0.0 * y])

    def exact_p(x, y, t):
        return t * x + y - 0.5 * (t + 1.0)

    def g(x, y, t):
        g1 = 3.0 * t * t * y * y + 2.0 * t ** 5 * x * y - 2.0 * t ** 3 / Re + t
        g2 = 2.0 * t * x + t ** 5 * y * y + 1.0
        return np.stack([g1 + 0.0 * x, g2 + 0.0 * y])

    return NsProblem("ns-example4", Re, g, exact_u, exact_u, T=T, exact_u=exact_u, exact_p=exact_p)


def zero_ns_problem(Re=100.0, T=1.0):
    return NsProblem("ns-zero", Re, _zeros2, _zeros2, _zeros2, T=T,
                     exact_u=_zeros2, exact_p=_zeros)


def lid_velocity(x, y, t):
    """Unit tangential lid on ``y = 1`` (corners included), no slip elsewhere."""
    on_lid = np.isclose(np.asarray(y, dtype=float), 1.0, rtol=0.0, atol=1e-12)
    return np.stack([np.where(on_lid, 1.0, 0.0) + 0.0 * x, np.zeros(np.shape(x))])


def cavity(Re):
    if Re <= 0:
        raise InvalidArgumentError("Reynolds number must be positive")
    return NsProblem(f"cavity-Re{Re:g}", float(Re), _zeros2, lid_velocity, _zeros2, T=None)


def make_problem(problem_id, Re=None):
    """Build a registered problem. ``Re`` applies to Navier-Stokes problems."""
    pid = ProblemId(problem_id)
    if pid is ProblemId.CD_EXAMPLE1:
        return sine_problem("cd-example1", b=(1.0, -1.0))
    if pid is ProblemId.CD_EXAMPLE2:
        return cos_problem("cd-example2", b=(2.0, -1.0))
    if pid is ProblemId.CD_DIFFUSION:
        return sine_problem("cd-diffusion", b=(0.0, 0.0), eps=1e-2)
    if pid is ProblemId.CD_ZERO:
        return zero_cd_problem()
    if pid is ProblemId.NS_EXAMPLE3:
        return example3(5000.0 if Re is None else Re)
    if pid is ProblemId.NS_EXAMPLE4:
        return example4(5000.0 if Re is None else Re)
    if pid is ProblemId.NS_ZERO:
        return zero_ns_problem(100.0 if Re is None else Re)
    return cavity(1000.0 if Re is None else Re)


# ---------------------------------------------------------------- residual checks

def _fd(fun, x, y, t, h):
    """Central-difference time derivative, gradient and Laplacian."""
    u = np.asarray(fun(x, y, t))
    ut = (np.asarray(fun(x, y, t + h)) - np.asarray(fun(x, y, t - h))) / (2 * h)
    fxp, fxm = np.asarray(fun(x + h, y, t)), np.asarray(fun(x - h, y, t))
    fyp, fym = np.asarray(fun(x, y + h, t)), np.asarray(fun(x, y - h, t))
    ux = (fxp - fxm) / (2 * h)
    uy = (fyp - fym) / (2 * h)
    lap = (fxp + fxm + fyp + fym - 4 * u) / (h * h)
    return u, ut, ux, uy, lap


def cd_strong_residual(problem, x, y, t, h=1e-5):
    """Residual of ``u_t + div(b u) - eps lap u + c u - F`` by finite differences.

    Returns ``(residual, scale)`` with ``scale`` the largest term magnitude.
    """
    u, ut, ux, uy, lap = _fd(problem.exact, x, y, t, h)
    b = eval_field(problem.b, x, y, t, 2)
    div_b = 0.0 if problem.div_b is None else problem.div_b(x, y, t)
    eps = problem.eps(x, y, t) if callable(problem.eps) else problem.eps
    c = problem.c(x, y, t) if callable(problem.c) else problem.c
    conv = b[0] * ux + b[1] * uy + div_b * u
    F = problem.F(x, y, t)
    terms = [ut, conv, eps * lap, c * u, F]
    scale = np.max([np.max(np.abs(v)) for v in np.broadcast_arrays(*terms)])
    return ut + conv - eps * lap + c * u - F, scale


def ns_strong_residual(problem, x, y, t, h=1e-5):
    """Momentum and continuity residuals of the exact solution, by finite differences."""
    u, ut, ux, uy, lap = _fd(problem.exact_u, x, y, t, h)
    _, _, px, py, _ = _fd(problem.exact_p, x, y, t, h)
    adv = u[0] * ux + u[1] * uy
    grad_p = np.stack([px, py])
    g = np.asarray(problem.g(x, y, t))
    mom = ut + adv - lap / problem.Re + grad_p - g
    terms = [ut, adv, lap / problem.Re, grad_p, g]
    scale = max(float(np.max(np.abs(v))) for v in terms)
    div = ux[0] + uy[1]
    return mom, div, scale


# ---------------------------------------------------------------- errors

def error_rule(space):
    """Quadrature used for error norms.

    A 49-point conical product rule (exact to degree 12) for both P1 and P2 keeps
    the quadrature error of smooth exact solutions far below the discretization
    error, about 1e-16 relative on the test problems.
    """
    return collapsed_gauss(7)


def l2_error(field, space, exact, t):
    """``|| u_h - u(., t) ||_{L2}``; vector fields sum componentwise squares."""
    q = element_quad(space, rule=error_rule(space))
    coeffs = space.split(field)
    ex = eval_field(exact, q.x, q.y, t, space.components)
    if space.components == 1:
        ex = ex[None]
    dofs = space.scalar_cell_dofs
    total = 0.0
    for k in range(space.components):
        uh = np.einsum("ei,qi->eq", coeffs[k][dofs], q.phi)
        total += float(np.sum(q.w * (uh - ex[k]) ** 2))
    return math.sqrt(total)


def l2_norm(field, space):
    return l2_error(field, space, _zeros if space.components == 1 else _zeros2, 0.0)


def exact_norm(space, exact, t):
    """``|| u(., t) ||_{L2}`` by the same quadrature as :func:`l2_error`."""
    return l2_error(np.zeros(space.n_dofs), space, exact, t)


def convergence_order(errors):
    """Observed orders ``log(e_{k-1}/e_k) / log(r_{k-1}/r_k)`` for (step size, error) rows.

    Resolutions are step sizes (``h`` or ``dt``), so refinement gives positive orders.

    The first row has no order (``None``). For halving resolutions this is
    ``log2(e_{k-1} / e_k)``.
    """
    rows = list(errors)
    if len(rows) < 2:
        raise InvalidArgumentError("need at least two (resolution, error) rows")
    for r, e in rows:
        if not (e > 0) or not (r > 0):
            raise InvalidArgumentError(f"errors and resolutions must be positive, got ({r}, {e})")
    orders = [None]
    for (r0, e0), (r1, e1) in zip(rows, rows[1:]):
        orders.append(math.log(e0 / e1) / math.log(r0 / r1))
    return orders
