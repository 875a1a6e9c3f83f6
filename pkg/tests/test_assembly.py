import numpy as np
import pytest
import scipy.sparse

from ietidg.assembly import (
    _side_quadrature,
    assemble_interface_terms,
    assemble_volume,
    build_local_system,
    extended_layout,
    interface_side_terms,
    trace_basis_on_edge,
)
from ietidg.bspline import KnotVector, TensorSplineSpace
from ietidg.domains import t_domain
from ietidg.errors import ConfigError
from ietidg.geometry import MultiPatchDomain

from conftest import two_patch_domain, unit_square_patch


def coo_to_dense(tri, n):
    r, c, v = tri.arrays()
    return scipy.sparse.coo_matrix((v, (r, c)), shape=(n, n)).toarray()


def q1_stiffness_oracle():
    """Independent hand assembly of the bilinear element Laplacian on [0,1]^2.

    Basis ordered (i, j) with flat = 2 i + j: (1-u)(1-v), (1-u)v, u(1-v), uv.
    2x2 Gauss rule, exact for these integrands.
    """
    g = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    w = np.array([0.5, 0.5])
    funcs = [
        lambda u, v: np.array([-(1 - v), -(1 - u)]),
        lambda u, v: np.array([-v, (1 - u)]),
        lambda u, v: np.array([(1 - v), -u]),
        lambda u, v: np.array([v, u]),
    ]
    K = np.zeros((4, 4))
    for a, ga in enumerate(g):
        for b, gb in enumerate(g):
            for i in range(4):
                for j in range(4):
                    K[i, j] += w[a] * w[b] * funcs[i](ga, gb) @ funcs[j](ga, gb)
    return K


def trace_mass_oracle(kv, weight):
    """Independent 1D quadrature of weight * int B_i B_j over [0, 1]."""
    n = kv.n
    M = np.zeros((n, n))
    nodes, wts = np.polynomial.legendre.leggauss(kv.p + 2)
    from ietidg.bspline import eval_matrix

    for lo, hi in zip(kv.breakpoints[:-1], kv.breakpoints[1:]):
        pts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes
        B = eval_matrix(kv, pts)
        for q in range(pts.size):
            M += 0.5 * (hi - lo) * wts[q] * np.outer(B[q], B[q])
    return weight * M


class TestTraceBasis:
    def test_examples(self):
        kv2 = KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1])
        space = TensorSplineSpace(kv2, kv2)
        tb = trace_basis_on_edge(space, "south", (0.0, 0.5))
        assert tb.edge_indices == [0, 1, 2]
        tb = trace_basis_on_edge(space, "south", (0.0, 1.0))
        assert tb.edge_indices == [0, 1, 2, 3]
        kv1 = KnotVector(1, [0, 0, 0.5, 1, 1])
        space1 = TensorSplineSpace(kv1, kv1)
        tb = trace_basis_on_edge(space1, "south", (0.5, 1.0))
        assert tb.edge_indices == [1, 2]

    def test_dirichlet_functions_excluded(self):
        kv = KnotVector(2, [0, 0, 0, 0.5, 1, 1, 1])
        space = TensorSplineSpace(kv, kv, {"west"})
        tb = trace_basis_on_edge(space, "south", (0.0, 1.0))
        assert tb.edge_indices == [1, 2, 3]

    def test_degenerate_interface_error(self):
        kv = KnotVector(1, [0, 0, 1, 1])
        space = TensorSplineSpace(kv, kv, {"west", "east"})
        with pytest.raises(ConfigError):
            trace_basis_on_edge(space, "west", (0.0, 1.0))


class TestVolume:
    def test_q1_unit_square(self):
        patch = unit_square_patch(0, 1, 0, 1, 1, 0, set())
        tri, load = assemble_volume(patch, source=1.0)
        A = coo_to_dense(tri, 4)
        np.testing.assert_allclose(A, q1_stiffness_oracle(), atol=1e-14)
        assert A[0, 0] == pytest.approx(2.0 / 3.0)
        np.testing.assert_allclose(A.sum(axis=1), 0.0, atol=1e-14)
        np.testing.assert_allclose(load, 0.25, atol=1e-15)

    def test_constants_in_kernel(self, rng):
        patch = unit_square_patch(0, 1, 0, 1, 2, 2, set())
        tri, _ = assemble_volume(patch)
        n = patch.space.dimension
        A = coo_to_dense(tri, n)
        np.testing.assert_allclose(A @ np.ones(n), 0.0, atol=1e-13)

    def test_alpha_linearity(self):
        p1 = unit_square_patch(0, 1, 0, 1, 2, 1, set(), alpha=1.0)
        p10 = unit_square_patch(0, 1, 0, 1, 2, 1, set(), alpha=10.0)
        n = p1.space.n_u * p1.space.n_v
        A1 = coo_to_dense(assemble_volume(p1)[0], n)
        A10 = coo_to_dense(assemble_volume(p10)[0], n)
        np.testing.assert_allclose(A10, 10.0 * A1, rtol=0, atol=1e-13 * np.abs(A1).max())

    def test_vector_source_zero_for_constant_field(self):
        # int W . grad(v) vanishes for all-Dirichlet test functions, W constant
        patch = unit_square_patch(0, 1, 0, 1, 2, 2, {"west", "east", "south", "north"})
        _, load = assemble_volume(patch, vector_source=lambda x, y: np.stack(
            [np.full_like(x, 0.7), np.full_like(x, -1.3)], axis=-1))
        free = patch.space.free_mask.ravel()
        np.testing.assert_allclose(load[free], 0.0, atol=1e-14)

    def test_spd_on_dirichlet_patch(self, rng):
        patch = unit_square_patch(0, 1, 0, 1, 2, 2, {"west", "east", "south", "north"})
        tri, _ = assemble_volume(patch)
        r, c, v = tri.arrays()
        dof = patch.space.dof_map.ravel()
        keep = (dof[r] >= 0) & (dof[c] >= 0)
        n = patch.space.dimension
        A = scipy.sparse.coo_matrix((v[keep], (dof[r][keep], dof[c][keep])), shape=(n, n)).toarray()
        ev = np.linalg.eigvalsh(A)
        assert ev[0] > 0


class TestInterfaceTerms:
    def test_penalty_block_is_scaled_trace_mass(self):
        # two unit squares, p = 1, single span: the artificial-artificial
        # penalty block is (delta p^2 / min(h_k, h_l)) times the 1D mass matrix
        dom = two_patch_domain(p=1, r=0, dirichlet=False)
        terms = interface_side_terms(dom, dom.interfaces[0], 12.0)
        r, c, v = terms["r_aa"].arrays()
        Raa = scipy.sparse.coo_matrix((v, (r, c)), shape=(2, 2)).toarray()
        h = dom.metrics["h"][0]
        assert h == pytest.approx(np.sqrt(2.0), rel=1e-9)
        expected = trace_mass_oracle(KnotVector(1, [0, 0, 1, 1]), 12.0 * 1.0 / h)
        np.testing.assert_allclose(Raa, expected, rtol=1e-12)

    def test_matched_function_no_penalty_energy(self):
        # equal trace and artificial coefficients: zero jump, zero r-energy
        dom = two_patch_domain(p=2, r=1, dirichlet=False)
        layout = extended_layout(dom, 0)
        n_patch, artificial, traces, _ = layout
        n_total = n_patch + sum(ab.size for ab in artificial)
        m_tri, r_tri = assemble_interface_terms(dom, 0, 0, 12.0, layout)
        R = coo_to_dense(r_tri, n_total)
        M = coo_to_dense(m_tri, n_total)
        v = np.zeros(n_total)
        ab = artificial[0]
        for pos, (edge, _) in enumerate(ab.sources):
            i, j = dom.patches[0].space.edge_lattice("east", edge)
            v[dom.patches[0].space.dof_map[i, j]] = 2.5
            v[ab.offset + pos] = 2.5
        assert abs(v @ R @ v) <= 1e-12
        # constants: both the consistency and penalty terms annihilate them
        ones = np.ones(n_total)
        np.testing.assert_allclose(R @ ones, 0.0, atol=1e-12)
        np.testing.assert_allclose(M @ ones, 0.0, atol=1e-12)

    def test_quadrature_consistency_polynomial(self):
        # the merged-breakpoint rule integrates a degree-2p+1 polynomial exactly
        dom = two_patch_domain(p=2, r=2)
        sq = _side_quadrature(dom, dom.interfaces[0], 3)
        for deg in range(6):
            approx = np.sum(sq.weights * sq.ts**deg)
            exact = 1.0 / (deg + 1)  # unit-length straight edge
            assert approx == pytest.approx(exact, abs=1e-12)

    def test_normals_point_outward(self):
        dom = t_domain(degree=1, refinements=1)
        for idx, g in enumerate(dom.interfaces):
            for ori in (g, g.flipped()):
                sq = _side_quadrature(dom, ori, 2)
                np.testing.assert_allclose(np.linalg.norm(sq.normals, axis=1), 1.0, rtol=1e-12)


class TestLocalSystem:
    def test_no_neighbors_equals_volume(self):
        patch = unit_square_patch(0, 1, 0, 1, 2, 1, {"west", "east", "south", "north"})
        dom = MultiPatchDomain([patch], []).validate()
        sysk = build_local_system(dom, 0, 12.0)
        assert sysk.n_total == sysk.n_patch == patch.space.dimension
        ev = np.linalg.eigvalsh(sysk.A.toarray())
        assert ev[0] > 0

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_symmetry_on_tdomain(self, p):
        dom = t_domain(degree=p, refinements=1)
        for k in range(dom.num_patches):
            sysk = build_local_system(dom, k, 12.0)
            A = sysk.A.csr
            asym = abs(A - A.T).max()
            assert asym <= 1e-12 * max(abs(A.max()), abs(A.min()))

    def test_floating_patch_constant_kernel(self):
        dom = two_patch_domain(p=2, r=1, dirichlet=False)
        sysk = build_local_system(dom, 0, 12.0)
        ones = np.ones(sysk.n_total)
        scale = abs(sysk.A.csr.max())
        np.testing.assert_allclose(sysk.A.csr @ ones, 0.0, atol=1e-12 * scale)

    def test_load_on_patch_dofs_only(self):
        dom = t_domain(degree=2, refinements=1)
        sysk = build_local_system(dom, 0, 12.0, source=1.0)
        assert np.all(sysk.f[sysk.n_patch:] == 0.0)
        assert np.any(sysk.f[: sysk.n_patch] != 0.0)

    def test_artificial_rows_have_no_volume_coupling(self):
        # artificial-artificial coupling comes from the penalty term alone
        dom = two_patch_domain(p=2, r=1)
        sysk = build_local_system(dom, 0, 12.0)
        layout = extended_layout(dom, 0)
        _, r_tri = assemble_interface_terms(dom, 0, 0, 12.0, layout)
        R = coo_to_dense(r_tri, sysk.n_total)
        A = sysk.A.toarray()
        art = slice(sysk.n_patch, sysk.n_total)
        np.testing.assert_allclose(A[art, art], R[art, art], atol=1e-13 * np.abs(A).max())

    def test_alpha_scaling_equivariance(self):
        dom1 = two_patch_domain(p=2, r=1, alphas=(1.0, 3.0))
        dom2 = two_patch_domain(p=2, r=1, alphas=(5.0, 15.0))
        A1 = build_local_system(dom1, 0, 12.0).A.toarray()
        A2 = build_local_system(dom2, 0, 12.0).A.toarray()
        np.testing.assert_allclose(A2, 5.0 * A1, atol=1e-12 * np.abs(A2).max())

    @pytest.mark.parametrize("factory,label", [
        (lambda: t_domain(degree=2, refinements=1), "tdomain"),
        (lambda: two_patch_domain(p=3, r=1, dirichlet=False), "floating"),
    ])
    def test_coercivity_probe(self, rng, factory, label):
        dom = factory()
        for k in range(dom.num_patches):
            sysk = build_local_system(dom, k, 12.0)
            A = sysk.A.csr
            scale = max(abs(A.max()), abs(A.min()))
            for _ in range(50):
                v = rng.standard_normal(sysk.n_total)
                quad = v @ (A @ v)
                assert quad >= -1e-10 * scale * (v @ v)
