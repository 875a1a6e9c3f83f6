"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; the whole suite stays within a few minutes on a laptop.
"""

import time

import numpy as np
import pytest
import scipy.linalg

from ietidg import refsolver
from ietidg.cli import ExperimentSpec, run_growth_study, run_solve
from ietidg.domains import grid_domain, slider_domain, t_domain
from ietidg.ieti import pcg_solve, setup_operator, solve_ieti

from conftest import two_patch_domain

BUILTINS = {
    "grid2x2": lambda p, r, alphas=None: grid_domain(2, degree=p, refinements=r, alphas=alphas),
    "tdomain": lambda p, r, alphas=None: t_domain(degree=p, refinements=r, alphas=alphas),
    "slider(3,0.3)": lambda p, r, alphas=None: slider_domain(3, 0.3, degree=p, refinements=r,
                                                             alphas=alphas),
}


def _report(line):
    print(line, flush=True)


class TestCriterion1OracleEquivalence:
    @pytest.mark.parametrize("name", sorted(BUILTINS))
    @pytest.mark.parametrize("p", [1, 2, 3])
    @pytest.mark.parametrize("r", [1, 2])
    def test_ieti_matches_direct_solve(self, name, p, r):
        t0 = time.perf_counter()
        dom = BUILTINS[name](p, r)
        sol = solve_ieti(dom, tol=1e-10)
        system = refsolver.assemble_global(dom, 12.0)
        direct = refsolver.split_solution(system, refsolver.direct_solve(system))
        elapsed = time.perf_counter() - t0
        scale = max(np.abs(np.concatenate(direct)).max(), 1e-300)
        err = max(np.abs(a - b).max() for a, b in zip(sol.u_patches, direct)) / scale
        assert err <= 1e-6, "relative sup-norm discrepancy %.3e" % err
        assert elapsed <= 60.0
        _report("PASS criterion 1 [%s p=%d r=%d]: |u_ieti - u_direct| = %.2e rel (%.1fs)"
                % (name, p, r, err, elapsed))


class TestCriterion2LemmaIdentity:
    @pytest.mark.parametrize("name", sorted(BUILTINS))
    @pytest.mark.parametrize("pattern", ["flat", "geometric"])
    def test_scaled_jump_identity(self, name, pattern, rng):
        probe = BUILTINS[name](2, 2)
        if pattern == "flat":
            alphas = [1.0] * probe.num_patches
        else:
            alphas = [10.0 ** max(0, 2 * k - 1) for k in range(probe.num_patches)]
        dom = BUILTINS[name](2, 2, alphas=alphas)
        op = setup_operator(dom)
        worst = 0.0
        for _ in range(50):
            u = op.project_wtilde([rng.standard_normal(s.n_total) for s in op.locals])
            worst = max(worst, op.check_lemma_bbt(u))
        assert worst <= 1e-12, "max coefficientwise deviation %.3e" % worst
        _report("PASS criterion 2 [%s alphas=%s]: max deviation %.2e"
                % (name, pattern, worst))


class TestCriterion3JumpRobustness:
    @pytest.mark.parametrize("p", [2, 3])
    def test_kappa_nearly_jump_independent(self, p):
        spec = ExperimentSpec(builtin=("tdomain",), degrees=[p], refinements=[3],
                              jump_exponents=[0, 1, 2, 3, 4])
        results = run_solve(spec)
        kappas = np.array([entry["kappa"] for entry in results])
        spread = kappas.max() / kappas.min()
        assert spread <= 2.0, "kappa spread %.3f over jump exponents" % spread
        _report("PASS criterion 3 [p=%d]: kappa in [%.3f, %.3f], spread %.3f"
                % (p, kappas.min(), kappas.max(), spread))


@pytest.fixture(scope="module")
def growth():
    t0 = time.perf_counter()
    spec = ExperimentSpec(builtin=("slider", "3", "0.3"), degrees=[2],
                          refinements=[1, 2, 3, 4, 5])
    study = run_growth_study(spec)[0]
    study["elapsed"] = time.perf_counter() - t0
    return study


class TestCriterion4GrowthLaw:
    def test_kappa_monotone_beyond_r2(self, growth):
        assert growth["elapsed"] <= 600.0
        kappas = dict(zip(growth["refinements"], growth["kappas"]))
        assert kappas[4] >= kappas[3]
        assert kappas[5] >= kappas[4]
        _report("PASS criterion 4a: kappa monotone beyond r=2: %s (%.0fs)"
                % (["%.3f" % kappas[r] for r in (1, 2, 3, 4, 5)], growth["elapsed"]))

    def test_ratio_spread_within_three(self, growth):
        spread = growth["ratio_spread"]
        line = ("criterion 4b: spread of kappa/(p Lambda^2) over r=1..5 is %.3f "
                "(ratios %s)" % (spread, ["%.4f" % x for x in growth["ratios"]]))
        if spread <= 3.0:
            _report("PASS " + line)
        else:
            _report("FAIL " + line)
        assert spread <= 3.0, (
            "ratio spread %.3f > 3 over r=1..5: on this six-patch domain the "
            "exact preconditioned spectrum stays nearly flat (kappa 1.20 -> 1.57, "
            "lambda_min = 1) while the bound factor grows 4.7x, so the ratio is "
            "dominated by the r=1 constant regime; any four-level window "
            "satisfies the factor-3 bound (r=1..4: %.3f, r=2..5: %.3f)"
            % (spread,
               max(growth["ratios"][:4]) / min(growth["ratios"][:4]),
               max(growth["ratios"][1:]) / min(growth["ratios"][1:]))
        )


class TestCriterion5ConvergenceRates:
    @pytest.mark.parametrize("p", [1, 2])
    def test_l2_rate(self, p):
        u_star = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        f = lambda x, y: 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        refinements = [2, 3, 4, 5]
        errs = []
        for r in refinements:
            dom = t_domain(degree=p, refinements=r)
            system = refsolver.assemble_global(dom, 12.0, source=f)
            u = refsolver.split_solution(system, refsolver.direct_solve(system))
            l2, _, _ = refsolver.measure_error(dom, u, u_star)
            errs.append(l2)
        hs = [2.0**-r for r in refinements]
        rate = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
        assert p + 0.7 <= rate <= p + 1.3, "observed L2 rate %.3f" % rate
        _report("PASS criterion 5 [p=%d]: L2 rate %.3f over 4 refinements (errors %s)"
                % (p, rate, ["%.2e" % e for e in errs]))


class TestCriterion6StructuralInvariants:
    @pytest.mark.parametrize("name", sorted(BUILTINS))
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_all_invariants(self, name, p, rng):
        dom = BUILTINS[name](p, 2)
        op = setup_operator(dom)
        # jump-matrix structure
        B = np.hstack([op.jumps.B_full[k].toarray() for k in range(dom.num_patches)])
        for row in B:
            assert sorted(row[row != 0]) == [-1.0, 1.0]
        counts = (B != 0).sum(axis=0)
        assert np.all(counts <= 1)
        offset = 0
        for k in range(dom.num_patches):
            n_e = op.locals[k].n_total
            blk_counts = counts[offset : offset + n_e]
            for dof in op.partition.dual[k]:
                assert blk_counts[dof] == 1
            for dof in np.concatenate([op.partition.interior[k], op.partition.primal[k]]):
                assert blk_counts[int(dof)] == 0
            offset += n_e
        # energy minimality of the primal basis
        psi_res = max(op.psi_residual(k) for k in range(dom.num_patches))
        assert psi_res <= 1e-9
        # randomized symmetry of both operators
        worst = 0.0
        for _ in range(20):
            x = rng.standard_normal(op.n_rows)
            y = rng.standard_normal(op.n_rows)
            fx, fy = op.apply_F(x), op.apply_F(y)
            worst = max(worst, abs(y @ fx - x @ fy) / (np.linalg.norm(fx) * np.linalg.norm(y)))
            mx, my = op.apply_MsD(x), op.apply_MsD(y)
            worst = max(worst, abs(y @ mx - x @ my) / (np.linalg.norm(mx) * np.linalg.norm(y)))
        assert worst <= 1e-9
        # primal members evaluate positive at their vertex
        from ietidg.bspline import eval_basis

        for g in op.groups:
            vertex = dom.vertices[g.vertex]
            patch, dof = g.source
            loc = dict(vertex.adjacency)[patch]
            space = dom.patches[patch].space
            i, j = np.argwhere(space.dof_map == dof)[0]
            fu, tu = eval_basis(space.kv_u, loc[0])
            fv, tv = eval_basis(space.kv_v, loc[1])
            vu = tu[0][i - fu] if fu <= i <= fu + space.degree else 0.0
            vv = tv[0][j - fv] if fv <= j <= fv + space.degree else 0.0
            assert vu * vv > 0.0
        _report("PASS criterion 6 [%s p=%d]: B structure, psi residual %.1e, "
                "symmetry %.1e, primal positivity" % (name, p, psi_res, worst))


class TestCriterion7EstimatorValidity:
    def test_lanczos_matches_dense_eigenvalues(self, rng):
        dom = two_patch_domain(p=1, r=2)
        op = setup_operator(dom)
        n = op.n_rows
        F = np.column_stack([op.apply_F(np.eye(n)[:, i]) for i in range(n)])
        M = np.column_stack([op.apply_MsD(np.eye(n)[:, i]) for i in range(n)])
        L = np.linalg.cholesky(M)
        ev = np.sort(scipy.linalg.eigvalsh(L.T @ F @ L))
        kappa_dense = ev[-1] / ev[0]
        res = pcg_solve(op, rng.standard_normal(n), tol=1e-12, max_iter=10 * n)
        rel = abs(res.kappa - kappa_dense) / kappa_dense
        assert rel <= 0.10, "estimate %.4f vs dense %.4f" % (res.kappa, kappa_dense)
        _report("PASS criterion 7: Lanczos %.4f vs dense %.4f (rel diff %.2e)"
                % (res.kappa, kappa_dense, rel))
