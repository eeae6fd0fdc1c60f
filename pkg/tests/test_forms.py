import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vem_miscible.forms import (
    CoefficientSet,
    coeff_d_b,
    compressibility_laws,
    dispersion_tensor,
    local_Ah,
    local_B,
    local_Dh,
    local_Kh,
    local_Mh,
    local_source_q,
    local_Th,
    local_Wh,
)
from vem_miscible.harness.problems import example1
from vem_miscible.mesh import CellGeometry
from vem_miscible.vemspaces import (
    concentration_dofs_of_monomials,
    element_operators,
    mesh_operators,
    velocity_dofs_of_constants,
)

from conftest import CHEVRON_CELL, PENTAGON_CELL, UNIT_SQUARE_CELL

# unit square, edges bottom/right/top/left: I and the opposite-edge swap J
I4 = np.eye(4)
J4 = np.eye(4)[[2, 3, 0, 1]]
ONES4 = np.ones((4, 4))
X_FLUX = np.array([0.0, 1.0, 0.0, -1.0])  # outward flux DOFs of (1, 0)


def law(f):
    return lambda c, x, y: f(np.asarray(c, dtype=float)) * np.ones_like(x)


@pytest.fixture
def square_ops():
    return element_operators(CellGeometry(UNIT_SQUARE_CELL), quad_degree=6)


class TestDispersion:
    def test_zero_velocity(self):
        assert np.allclose(dispersion_tensor([0.0, 0.0], 1.0, 0.02, 1.0, 1.0), 0.02 * np.eye(2), atol=1e-16)

    def test_isotropic(self):
        assert np.allclose(dispersion_tensor([3.0, 4.0], 1.0, 0.02, 1.0, 1.0), 5.02 * np.eye(2), atol=1e-14)

    def test_longitudinal_only(self):
        assert np.allclose(dispersion_tensor([1.0, 0.0], 1.0, 0.0, 1.0, 0.0), [[1, 0], [0, 0]], atol=1e-16)

    @settings(max_examples=50, deadline=None)
    @given(ux=st.floats(-10, 10), uy=st.floats(-10, 10), phi=st.floats(0.01, 1),
           d_m=st.floats(0, 1), d_t=st.floats(0, 1), extra=st.floats(0, 1))
    def test_eigen_structure(self, ux, uy, phi, d_m, d_t, extra):
        d_l = d_t + extra
        D = dispersion_tensor([ux, uy], phi, d_m, d_l, d_t)
        speed = np.hypot(ux, uy)
        assert np.allclose(D, D.T)
        expected = sorted([phi * (d_m + d_t * speed), phi * (d_m + d_l * speed)])
        assert np.allclose(np.linalg.eigvalsh(D), expected, atol=1e-12 * (1 + speed))

    def test_batched(self):
        u = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
        D = dispersion_tensor(u, 1.0, 0.1, 1.0, 0.5)
        for k in range(3):
            assert np.array_equal(D[k], dispersion_tensor(u[k], 1.0, 0.1, 1.0, 0.5))


class TestCompressibility:
    @pytest.mark.parametrize("phi", [1.0, 0.1])
    def test_pure_components(self, phi):
        assert coeff_d_b(0.0, 2.0, 4.0, phi) == pytest.approx((phi * 4.0, 0.0))
        assert coeff_d_b(1.0, 2.0, 4.0, phi) == pytest.approx((phi * 2.0, 0.0))

    def test_half_mixture(self):
        d, b = coeff_d_b(0.5, 2.0, 4.0, 1.0)
        assert (d, b) == (3.0, -0.5)

    def test_laws_match(self):
        d, b = compressibility_laws(1e-6, 1e-6, 0.1)
        c = np.linspace(0, 1, 5)
        assert np.allclose(d(c), 1e-7, rtol=1e-15)
        assert np.allclose(b(c), 0.0, atol=1e-22)


class TestFlowForms:
    def test_Ah_unit_square(self, square_ops):
        Ah = local_Ah(square_ops, CoefficientSet(), np.zeros(4))
        assert np.allclose(Ah, 0.75 * I4 + 0.25 * J4, atol=1e-12)

    def test_Ah_stabilization_vanishes_on_constants(self, square_ops):
        Ah = local_Ah(square_ops, CoefficientSet(), np.zeros(4))
        P = square_ops.pi0_velocity
        assert np.allclose(Ah @ X_FLUX, P.T @ P @ X_FLUX, atol=1e-14)

    @pytest.mark.parametrize("kappa", [0.0, 0.7, -1.3])
    def test_Ah_nu_follows_shift(self, square_ops, kappa):
        A = law(lambda c: 1.0 / (c + 2.0))
        Ah = local_Ah(square_ops, CoefficientSet(A=A), np.full(4, kappa))
        nu = abs(1.0 / (kappa + 2.0))
        P = square_ops.pi0_velocity
        stab = Ah - nu * P.T @ P  # A is constant on the cell too
        assert np.allclose(stab, nu * 0.5 * (I4 + J4), atol=1e-12)

    def test_B_unit_outflow(self, square_ops):
        assert local_B(square_ops) @ np.ones(4) == pytest.approx(-4.0, abs=1e-14)
        assert abs(local_B(square_ops) @ X_FLUX) < 1e-15

    @pytest.mark.parametrize("s", [0.5, 3.0])
    def test_B_scales_with_size(self, s):
        row = local_B(element_operators(CellGeometry(s * UNIT_SQUARE_CELL)))
        assert np.allclose(row, -s, rtol=1e-14)

    def test_Wh(self, square_ops):
        lin = law(lambda c: c + 2.0)
        assert local_Wh(square_ops, CoefficientSet(), np.zeros(4)) == pytest.approx(1.0, abs=1e-14)
        assert local_Wh(square_ops, CoefficientSet(d=lin), np.zeros(4)) == pytest.approx(2.0, abs=1e-14)
        c_x = square_ops.geometry.midpoint[:, 0]
        assert local_Wh(square_ops, CoefficientSet(d=lin), c_x) == pytest.approx(2.5, abs=1e-14)


class TestTransportForms:
    def test_Mh_unit_square(self, square_ops):
        Mh = local_Mh(square_ops, CoefficientSet())
        expected = 19 / 48 * I4 + 11 / 48 * J4 - 3 / 16 * (ONES4 - I4 - J4)
        assert np.allclose(Mh, expected, atol=1e-12)
        assert np.allclose(Mh @ np.ones(4), 0.25, atol=1e-14)

    def test_Dh_unit_square_zero_velocity(self, square_ops):
        Dh = local_Dh(square_ops, CoefficientSet(d_m=0.02, d_l=1.0, d_t=1.0), np.zeros(4))
        G = square_ops.pi0_grad_c
        expected = 0.02 * (G.T @ G) + 0.02 * (0.5 * (I4 + J4) - ONES4 / 4)
        assert np.allclose(G.T @ G, I4 - J4, atol=1e-14)
        assert np.allclose(Dh, expected, atol=1e-12)
        assert np.allclose(Dh @ np.ones(4), 0.0, atol=1e-15)

    def test_Th_constant_velocity(self, square_ops):
        Th = local_Th(square_ops, X_FLUX)
        assert np.allclose(Th, 0.25 * np.outer(np.ones(4), X_FLUX), atol=1e-14)
        # affine c = 3x - y + 1: int dc/dx * Pi z_i = 3 * |K| / 4
        mid = square_ops.geometry.midpoint
        c = 3 * mid[:, 0] - mid[:, 1] + 1
        assert np.allclose(Th @ c, 0.75, atol=1e-14)

    def test_Kh(self, square_ops):
        assert np.allclose(local_Kh(square_ops, CoefficientSet(b=law(lambda c: np.ones_like(c))), np.zeros(4)),
                           0.25, atol=1e-14)
        c_x = square_ops.geometry.midpoint[:, 0]
        kh = local_Kh(square_ops, CoefficientSet(b=law(lambda c: c + 2.0)), c_x)
        assert np.allclose(kh, 0.625 + np.array([0, 1, 0, -1]) / 12, atol=1e-14)


class TestSources:
    def test_zero(self, square_ops):
        p, R, F = local_source_q(square_ops, 0.0, CoefficientSet(q=lambda x, y, t: 0.0))
        assert p == 0 and not R.any() and not F.any()

    def test_unit(self, square_ops):
        p, R, F = local_source_q(square_ops, 0.0, CoefficientSet(q=lambda x, y, t: 1.0))
        assert p == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(R, local_Mh(square_ops, CoefficientSet()) - 0.5 * (I4 + J4) + ONES4 / 4, atol=1e-13)
        assert not F.any()  # no injected concentration set

    def test_sinks_do_not_react(self, square_ops):
        p, R, F = local_source_q(square_ops, 0.0, CoefficientSet(q=lambda x, y, t: -2.0))
        assert p == pytest.approx(-2.0) and not R.any()

    def test_manufactured_q_quarter_square(self):
        prob = example1()
        geom = CellGeometry(0.5 * UNIT_SQUARE_CELL)
        ops = element_operators(geom, quad_degree=16)
        p, _, _ = local_source_q(ops, 0.1, CoefficientSet(q=prob.source_q))
        # tensor Gauss oracle, independent of the fan rule
        s, w = np.polynomial.legendre.leggauss(24)
        s, w = 0.25 * (s + 1), 0.25 * w
        X, Y = np.meshgrid(s, s, indexing="ij")
        oracle = np.sum(np.outer(w, w) * prob.source_q(X, Y, 0.1))
        assert p == pytest.approx(oracle, rel=1e-10, abs=1e-14)


CELLS = [UNIT_SQUARE_CELL, CHEVRON_CELL, PENTAGON_CELL]


@pytest.mark.parametrize("cell", CELLS, ids=["square", "chevron", "pentagon"])
def test_patch_identity(cell):
    """Affine data in the reproduced space: consistency equals exact integration."""
    ops = element_operators(CellGeometry(cell), quad_degree=4)
    g = ops.geometry
    D = concentration_dofs_of_monomials(g)
    # z^T M c = int c z for affine c, z (monomial Gram by quadrature exact to degree 4)
    gram = np.einsum("q,qa,qb->ab", ops.quad_weights, ops.quad_monomials, ops.quad_monomials)
    assert np.allclose(D.T @ local_Mh(ops, CoefficientSet()) @ D, gram, atol=1e-12)
    # constant velocities: v^T A u = |K| a.b
    V = velocity_dofs_of_constants(g)
    assert np.allclose(V.T @ local_Ah(ops, CoefficientSet(), np.zeros(g.n_edges)) @ V,
                       g.area * np.eye(2), atol=1e-12)
    # diffusion of affine fields: grad c . grad z * d_m |K|
    Dh = local_Dh(ops, CoefficientSet(d_m=0.3), np.zeros(g.n_edges))
    grads = np.diag([0.0, 1.0, 1.0]) / g.diameter
    assert np.allclose(D.T @ Dh @ D, 0.3 * g.area * grads @ grads, atol=1e-12)


def positive_on_complement_of_constants(M):
    """Smallest eigenvalue of M restricted to vectors orthogonal to 1."""
    m = M.shape[-1]
    Q, _ = np.linalg.qr(np.column_stack([np.ones(m), np.eye(m)[:, : m - 1]]))
    Z = Q[:, 1:]
    return np.linalg.eigvalsh(Z.T @ M @ Z).min(axis=-1)


def test_spd_on_all_families(small_meshes):
    rng = np.random.default_rng(11)
    coeffs = CoefficientSet(A=law(lambda c: 1.0 / (c + 2.0)), d_m=0.02, d_l=1.0, d_t=0.5)
    for mesh in small_meshes.values():
        for g, ops in zip(mesh.groups, mesh_operators(mesh)):
            c = rng.uniform(0, 1, g.edge_ids.shape)
            u = rng.normal(size=g.edge_ids.shape)
            for M in (local_Ah(ops, coeffs, c), local_Mh(ops, coeffs)):
                assert np.allclose(M, np.swapaxes(M, -1, -2), atol=1e-13)
                assert np.linalg.eigvalsh(M).min() > 0
            # constants are the kernel of any diffusion form
            Dh = local_Dh(ops, coeffs, u)
            assert np.allclose(Dh, np.swapaxes(Dh, -1, -2), atol=1e-13)
            assert np.abs(Dh.sum(axis=-1)).max() < 1e-13
            assert positive_on_complement_of_constants(Dh).min() > 0
