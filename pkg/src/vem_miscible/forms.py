"""Coefficient laws and local VEM matrices of the discrete miscible system.

Local matrices are written for outward-oriented velocity DOFs and edge-mean
concentration DOFs; rows index test functions and columns trial functions.
Every builder accepts a single cell or a stack of cells (leading batch axis).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .vemspaces import ElementOperators

ScalarLaw = Callable[..., np.ndarray]  # f(c, x, y)


def _const(value: float) -> ScalarLaw:
    def law(c, x, y):
        return np.full(np.broadcast(c, x, y).shape, float(value))

    return law


@dataclass
class CoefficientSet:
    """Physical coefficients of the miscible displacement model.

    ``A`` is the inverse mobility ``mu(c)/k(x)``; ``a`` is derived from it.
    ``d`` and ``b`` are compressibility laws of ``(c, x, y)``; use
    :func:`compressibility_laws` for the two-component mixture rule or pass
    functions directly. ``q`` is either a field ``q(x, y, t)`` or a
    :class:`~vem_miscible.system.WellSet`. When ``f`` is given it replaces the
    well term ``q (c_hat - c)`` on the right of the transport equation.
    """

    A: ScalarLaw = field(default_factory=lambda: _const(1.0))
    d: ScalarLaw = field(default_factory=lambda: _const(1.0))
    b: ScalarLaw = field(default_factory=lambda: _const(0.0))
    phi: Callable[..., np.ndarray] | float = 1.0
    d_m: float = 0.0
    d_l: float = 0.0
    d_t: float = 0.0
    q: object = None
    c_hat: Optional[Callable[..., np.ndarray]] = None
    f: Optional[Callable[..., np.ndarray]] = None
    gamma: Optional[Callable[..., tuple]] = None

    def a(self, c, x, y):
        return 1.0 / self.A(c, x, y)

    def porosity(self, x, y) -> np.ndarray:
        if callable(self.phi):
            return np.asarray(self.phi(x, y), dtype=float) * np.ones_like(x)
        return np.full(np.shape(x), float(self.phi))


def compressibility_laws(z1: float, z2: float, phi: float = 1.0):
    """``(d, b)`` laws of the two-component mixture with ``c = c_1 = 1 - c_2``."""

    def d(c, x=None, y=None):
        return coeff_d_b(c, z1, z2, phi)[0]

    def b(c, x=None, y=None):
        return coeff_d_b(c, z1, z2, phi)[1]

    return d, b


def coeff_d_b(c, z1: float, z2: float, phi=1.0):
    c = np.asarray(c, dtype=float)
    mix = z1 * c + z2 * (1.0 - c)
    return phi * mix, phi * c * (z1 - mix)


def dispersion_tensor(u, phi=1.0, d_m=0.0, d_l=0.0, d_t=0.0) -> np.ndarray:
    """``phi [d_m I + |u| (d_l E(u) + d_t (I - E(u)))]`` for ``u`` of shape ``(..., 2)``.

    Written as ``phi [(d_m + d_t |u|) I + (d_l - d_t) u u^T / |u|]`` with the
    last term taken as zero at ``u = 0`` (its continuous extension).
    """
    u = np.asarray(u, dtype=float)
    speed = np.hypot(u[..., 0], u[..., 1])
    eye = np.eye(2)
    outer = u[..., :, None] * u[..., None, :]
    safe = np.where(speed > 0.0, speed, 1.0)
    aniso = np.where((speed > 0.0)[..., None, None], outer / safe[..., None, None], 0.0)
    phi = np.asarray(phi, dtype=float)[..., None, None]
    return phi * ((d_m + d_t * speed)[..., None, None] * eye + (d_l - d_t) * aniso)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _quad_xy(ops: ElementOperators):
    p = ops.quad_points
    return p[..., 0], p[..., 1]


def _integrate(ops: ElementOperators, values) -> np.ndarray:
    return np.sum(ops.quad_weights * values, axis=-1)


def _gram(ops: ElementOperators, weight) -> np.ndarray:
    """``int_K w m_a m_b`` for the scaled monomials, shape ``(..., 3, 3)``."""
    mw = ops.quad_monomials * (ops.quad_weights * weight)[..., None]
    return np.einsum("...qa,...qb->...ab", mw, ops.quad_monomials)


def _moments(ops: ElementOperators, weight) -> np.ndarray:
    """``int_K w m_a``, shape ``(..., 3)``."""
    return np.einsum("...q,...qa->...a", ops.quad_weights * weight, ops.quad_monomials)


def _kernel_gram(kernel: np.ndarray) -> np.ndarray:
    return np.einsum("...ki,...kj->...ij", kernel, kernel)


def _centroid_xy(ops: ElementOperators):
    c = ops.geometry.centroid
    return c[..., 0], c[..., 1]


def porosity_mean(ops: ElementOperators, coeffs: CoefficientSet) -> np.ndarray:
    x, y = _quad_xy(ops)
    return _integrate(ops, coeffs.porosity(x, y)) / ops.area


# ---------------------------------------------------------------------------
# flow forms
# ---------------------------------------------------------------------------


def local_Ah(ops: ElementOperators, coeffs: CoefficientSet, c_local) -> np.ndarray:
    """Velocity matrix ``int A(Pi c) Pi u . Pi v + nu_A |K| dofi-dofi`` on kernels."""
    x, y = _quad_xy(ops)
    a_int = _integrate(ops, coeffs.A(ops.concentration_at_quad(c_local), x, y))
    P = ops.pi0_velocity
    consistency = a_int[..., None, None] * np.einsum("...di,...dj->...ij", P, P)
    cx, cy = _centroid_xy(ops)
    nu = np.abs(coeffs.A(ops.concentration_mean(c_local), cx, cy))
    stab = (nu * ops.area)[..., None, None] * _kernel_gram(ops.stab_kernel_v)
    return consistency + stab


def local_B(ops: ElementOperators) -> np.ndarray:
    """``B(v, 1_K) = -int_K div v`` as a row over outward flux DOFs."""
    return -ops.area[..., None] * ops.div_functional


def local_Wh(ops: ElementOperators, coeffs: CoefficientSet, c_local) -> np.ndarray:
    x, y = _quad_xy(ops)
    return _integrate(ops, coeffs.d(ops.concentration_at_quad(c_local), x, y))


def local_gamma_rhs(ops: ElementOperators, coeffs: CoefficientSet, c_local) -> np.ndarray:
    """``int_K gamma(Pi c) . Pi v`` (zero when no gravity-like term is set)."""
    if coeffs.gamma is None:
        return np.zeros(ops.div_functional.shape)
    x, y = _quad_xy(ops)
    gx, gy = coeffs.gamma(ops.concentration_at_quad(c_local), x, y)
    g = np.stack([_integrate(ops, gx * np.ones_like(x)), _integrate(ops, gy * np.ones_like(x))], axis=-1)
    return np.einsum("...d,...dm->...m", g, ops.pi0_velocity)


# ---------------------------------------------------------------------------
# transport forms
# ---------------------------------------------------------------------------


def local_Mh(ops: ElementOperators, coeffs: CoefficientSet) -> np.ndarray:
    """Mass matrix ``int phi Pi c Pi z + nu_M |K| dofi-dofi`` on kernels."""
    x, y = _quad_xy(ops)
    phi = coeffs.porosity(x, y)
    Pi = ops.pi0_c
    consistency = np.einsum("...ai,...ab,...bj->...ij", Pi, _gram(ops, phi), Pi)
    nu = np.abs(_integrate(ops, phi) / ops.area)
    return consistency + (nu * ops.area)[..., None, None] * _kernel_gram(ops.stab_kernel_c_l2)


def local_Kh(ops: ElementOperators, coeffs: CoefficientSet, c_local) -> np.ndarray:
    """Column ``int b(Pi c) Pi z``; multiply by the pressure increment rate."""
    x, y = _quad_xy(ops)
    b = coeffs.b(ops.concentration_at_quad(c_local), x, y)
    return np.einsum("...ai,...a->...i", ops.pi0_c, _moments(ops, b))


def local_Th(ops: ElementOperators, u_local) -> np.ndarray:
    """Convection ``int (Pi u . Pi grad c) Pi z`` (nonsymmetric)."""
    u0 = ops.velocity_constant(u_local)
    row = np.einsum("...d,...dj->...j", u0, ops.pi0_grad_c)
    w = np.einsum("...ai,...a->...i", ops.pi0_c, ops.monomial_moments)
    return w[..., :, None] * row[..., None, :]


def local_Dh(ops: ElementOperators, coeffs: CoefficientSet, u_local) -> np.ndarray:
    """Diffusion ``int D(Pi u) Pi grad c . Pi grad z + nu_D dofi-dofi`` on kernels."""
    x, y = _quad_xy(ops)
    phi_int = _integrate(ops, coeffs.porosity(x, y))
    u0 = ops.velocity_constant(u_local)
    Dint = dispersion_tensor(u0, phi_int, coeffs.d_m, coeffs.d_l, coeffs.d_t)
    G = ops.pi0_grad_c
    consistency = np.einsum("...di,...de,...ej->...ij", G, Dint, G)
    nu_m = np.abs(phi_int / ops.area)
    nu = nu_m * (coeffs.d_m + coeffs.d_t * np.hypot(u0[..., 0], u0[..., 1]))
    return consistency + nu[..., None, None] * _kernel_gram(ops.stab_kernel_c_grad)


def local_reaction(ops: ElementOperators, weight) -> np.ndarray:
    """``int w Pi c Pi z`` for a weight sampled at the quadrature points."""
    Pi = ops.pi0_c
    return np.einsum("...ai,...ab,...bj->...ij", Pi, _gram(ops, weight), Pi)


def local_load(ops: ElementOperators, weight) -> np.ndarray:
    """``int w Pi z`` for a weight sampled at the quadrature points."""
    return np.einsum("...ai,...a->...i", ops.pi0_c, _moments(ops, weight))


def local_source_q(ops: ElementOperators, t: float, coeffs: CoefficientSet):
    """Source contributions of a field ``q(x, y, t)`` on the given cells.

    Returns ``(pressure_rhs, reaction_matrix, transport_rhs)``: ``int q``,
    ``int q+ Pi c Pi z`` and ``int q+ c_hat Pi z`` (or ``int f Pi z`` when a
    transport source override is set). Only injection (``q > 0``) enters the
    transport terms because ``c_hat = c`` at sinks.
    """
    x, y = _quad_xy(ops)
    shape = x.shape
    if callable(coeffs.q):
        qv = np.broadcast_to(np.asarray(coeffs.q(x, y, t), dtype=float), shape)
    else:
        qv = np.zeros(shape)
    pressure = _integrate(ops, qv)
    if coeffs.f is not None:
        m = ops.m
        react = np.zeros((*shape[:-1], m, m))
        fv = np.broadcast_to(np.asarray(coeffs.f(x, y, t), dtype=float), shape)
        return pressure, react, local_load(ops, fv)
    inj = np.maximum(qv, 0.0)
    react = local_reaction(ops, inj)
    chat = coeffs.c_hat(x, y, t) if coeffs.c_hat is not None else 0.0
    return pressure, react, local_load(ops, inj * chat)
