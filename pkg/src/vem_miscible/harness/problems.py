"""Manufactured solution on the unit square and its source terms.

The exact fields are

    c = t^2 (x^2 (x-1)^2 + y^2 (y-1)^2)
    u = 2 t^2 (x (x-1)(2x-1), y (y-1)(2y-1))  (= grad c)
    p = -c^2/2 - 2c + 17 t^4 / 6300 + 2 t^2 / 15

with ``d = b = c + 2``, ``phi = 1``, ``D(u) = (|u| + 0.02) I`` and inverse
mobility ``A(c) = c + 2``, so that ``u = -a(c) grad p`` holds exactly. The sources
``q = d p_t + div u`` and ``f = phi c_t + b p_t + u.grad c - div(D grad c)`` are
derived symbolically and checked against finite differences of the exact fields.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import sympy as sp

from ..forms import CoefficientSet, dispersion_tensor


class SourceValidationError(RuntimeError):
    pass


X, Y, T = sp.symbols("x y t", real=True)


@dataclass
class ManufacturedProblem:
    c_expr: sp.Expr
    p_expr: sp.Expr
    u_expr: tuple[sp.Expr, sp.Expr]
    A_law: object  # sympy lambda of c
    d_law: object
    b_law: object
    phi: float = 1.0
    d_m: float = 0.0
    d_l: float = 0.0
    d_t: float = 0.0
    T_final: float = 0.1
    name: str = "manufactured"
    _cache: dict = field(default_factory=dict, repr=False)

    # exact fields --------------------------------------------------------

    @cached_property
    def exact_c(self):
        return _lambdify(self.c_expr)

    @cached_property
    def exact_p(self):
        return _lambdify(self.p_expr)

    @cached_property
    def exact_u(self):
        fx, fy = _lambdify(self.u_expr[0]), _lambdify(self.u_expr[1])
        return lambda x, y, t: (fx(x, y, t), fy(x, y, t))

    @cached_property
    def exact_grad_c(self):
        gx = _lambdify(sp.diff(self.c_expr, X))
        gy = _lambdify(sp.diff(self.c_expr, Y))
        return lambda x, y, t: (gx(x, y, t), gy(x, y, t))

    # symbolic sources ------------------------------------------------------

    def _dispersion_flux(self):
        ux, uy = self.u_expr
        speed = sp.sqrt(ux**2 + uy**2)
        cx, cy = sp.diff(self.c_expr, X), sp.diff(self.c_expr, Y)
        iso = self.phi * (self.d_m + self.d_t * speed)
        udotg = ux * cx + uy * cy
        aniso = self.phi * (self.d_l - self.d_t) * udotg / speed
        return iso * cx + aniso * ux, iso * cy + aniso * uy

    @cached_property
    def q_expr(self) -> sp.Expr:
        c, p = self.c_expr, self.p_expr
        return self.d_law(c) * sp.diff(p, T) + sp.diff(self.u_expr[0], X) + sp.diff(self.u_expr[1], Y)

    @cached_property
    def f_expr(self) -> sp.Expr:
        c, p = self.c_expr, self.p_expr
        ux, uy = self.u_expr
        Fx, Fy = self._dispersion_flux()
        return (
            self.phi * sp.diff(c, T)
            + self.b_law(c) * sp.diff(p, T)
            + ux * sp.diff(c, X)
            + uy * sp.diff(c, Y)
            - sp.diff(Fx, X)
            - sp.diff(Fy, Y)
        )

    @cached_property
    def source_q(self):
        return _lambdify(self.q_expr)

    @cached_property
    def source_f(self):
        return _lambdify(self.f_expr)

    def coefficients(self) -> CoefficientSet:
        A, d, b = (_lambdify_law(law) for law in (self.A_law, self.d_law, self.b_law))
        return CoefficientSet(
            A=A, d=d, b=b, phi=self.phi, d_m=self.d_m, d_l=self.d_l, d_t=self.d_t,
            q=self.source_q, f=self.source_f,
        )


def _lambdify(expr):
    fn = sp.lambdify((X, Y, T), expr, modules="numpy")

    def wrapped(x, y, t):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.broadcast_to(fn(x, y, t), np.broadcast(x, y, t).shape).astype(float)
        # |u| is not differentiable where u = 0; use the zero-speed limit value
        return np.nan_to_num(val, nan=0.0, posinf=0.0, neginf=0.0)

    return wrapped


def _lambdify_law(law):
    c = sp.Symbol("c", real=True)
    fn = sp.lambdify(c, law(c), modules="numpy")

    def wrapped(cv, x=None, y=None):
        cv = np.asarray(cv, dtype=float)
        return np.broadcast_to(fn(cv), cv.shape).astype(float)

    return wrapped


def example1() -> ManufacturedProblem:
    c = T**2 * (X**2 * (X - 1) ** 2 + Y**2 * (Y - 1) ** 2)
    u = (2 * T**2 * X * (X - 1) * (2 * X - 1), 2 * T**2 * Y * (Y - 1) * (2 * Y - 1))
    p = -c**2 / 2 - 2 * c + sp.Rational(17, 6300) * T**4 + sp.Rational(2, 15) * T**2
    lin = lambda s: s + 2  # noqa: E731
    return ManufacturedProblem(
        c_expr=c, p_expr=p, u_expr=u,
        A_law=lin, d_law=lin, b_law=lin,
        phi=1.0, d_m=0.02, d_l=1.0, d_t=1.0, T_final=0.1, name="example1",
    )


# ---------------------------------------------------------------------------
# finite-difference validation gate
# ---------------------------------------------------------------------------


def _fd_residuals(problem: ManufacturedProblem, x, y, t, h: float):
    """PDE residual sources computed only from exact fields and central differences."""
    c, p, u = problem.exact_c, problem.exact_p, problem.exact_u
    A = _lambdify_law(problem.A_law)
    d = _lambdify_law(problem.d_law)
    b = _lambdify_law(problem.b_law)

    def grad(f, x, y):
        return (f(x + h, y, t) - f(x - h, y, t)) / (2 * h), (f(x, y + h, t) - f(x, y - h, t)) / (2 * h)

    def c_grad(x, y):
        return grad(c, x, y)

    def flux(x, y):
        uu = np.stack(u(x, y, t), axis=-1)
        D = dispersion_tensor(uu, problem.phi, problem.d_m, problem.d_l, problem.d_t)
        g = np.stack(c_grad(x, y), axis=-1)
        return np.einsum("...ij,...j->...i", D, g)

    ct = (c(x, y, t + h) - c(x, y, t - h)) / (2 * h)
    pt = (p(x, y, t + h) - p(x, y, t - h)) / (2 * h)
    cv = c(x, y, t)
    ux, uy = u(x, y, t)
    divu = (u(x + h, y, t)[0] - u(x - h, y, t)[0] + u(x, y + h, t)[1] - u(x, y - h, t)[1]) / (2 * h)
    divF = (flux(x + h, y)[..., 0] - flux(x - h, y)[..., 0]
            + flux(x, y + h)[..., 1] - flux(x, y - h)[..., 1]) / (2 * h)
    gx, gy = c_grad(x, y)
    q = d(cv) * pt + divu
    f = problem.phi * ct + b(cv) * pt + ux * gx + uy * gy - divF
    # Darcy law residual: u + a(c) grad p
    px, py = grad(p, x, y)
    darcy = np.hypot(ux + px / A(cv), uy + py / A(cv))
    return q, f, darcy


def validate_sources(
    problem: ManufacturedProblem, n_samples: int = 1000, tol: float = 1e-6,
    step: float = 1e-5, seed: int = 1234,
) -> dict:
    """Compare symbolic ``q, f`` with finite-difference residuals at random points.

    Raises :class:`SourceValidationError` when any sample differs by more than
    ``tol``. Returns the maximum deviations.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n_samples)
    y = rng.uniform(0.0, 1.0, n_samples)
    t = rng.uniform(0.0, problem.T_final, n_samples)
    qf, ff, dar = _fd_residuals(problem, x, y, t, step)
    errs = {
        "q": float(np.max(np.abs(qf - problem.source_q(x, y, t)))),
        "f": float(np.max(np.abs(ff - problem.source_f(x, y, t)))),
        "darcy": float(np.max(dar)),
    }
    bad = {k: v for k, v in errs.items() if not v <= tol}
    if bad:
        raise SourceValidationError(f"source validation failed: {bad} (tol {tol:g})")
    return errs
