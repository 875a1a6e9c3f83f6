"""Dual-primal tearing and interconnecting solver for the torn patch systems.

Per patch, the dofs split into interior (I), dual (Delta) and primal (Pi)
sets.  Primal dofs follow the fat-vertex rule: at every vertex, all basis
functions that do not vanish there are primal, together with every
artificial copy of them; at a regular corner this reduces to the classic
single corner function per patch, at a T-junction the long side
contributes up to p + 1 functions.  Dual dofs are coupled in matched
pairs (+1/-1 rows of the jump matrix B); the primal coefficients are
eliminated through the energy-minimizing basis Psi and a global coarse
problem.  The multipliers solve F lambda = d by PCG with the
coefficient-scaled Dirichlet preconditioner
``M_sD = B_Gamma D^{-1} S D^{-1} B_Gamma^T``.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .assembly import build_local_system
from .bspline import nonzero_at_point
from .errors import NumericalError
from .linalg import factorize, pcg

log = logging.getLogger(__name__)


@dataclass
class PrimalGroup:
    """One primal coefficient: a source basis function and all its copies.

    ``source`` is ``(patch, dof)``; ``members`` lists ``(block, local
    extended dof)`` pairs including the source itself.  All members share
    one global coefficient, indexed by `index`.
    """

    vertex: int
    source: tuple
    members: tuple
    index: int = -1


def select_primal(domain, local_systems):
    """Fat-vertex primal dof selection.

    For every vertex and every adjacent patch, all basis functions with a
    positive value at the vertex become primal sources (Dirichlet-constrained
    candidates are dropped with a log note); each source is grouped with all
    of its artificial copies.  A source claimed by several vertices joins
    one group only.
    """
    copies = {}
    for sysk in local_systems:
        for ab in sysk.artificial:
            for pos, (_, sdof) in enumerate(ab.sources):
                copies.setdefault((ab.neighbor, sdof), []).append((sysk.k, ab.offset + pos))

    groups = []
    claimed = set()
    for v_idx, vertex in enumerate(domain.vertices):
        for patch, (u0, v0) in vertex.adjacency:
            space = domain.patches[patch].space
            for i in nonzero_at_point(space.kv_u, u0):
                for j in nonzero_at_point(space.kv_v, v0):
                    dof = int(space.dof_map[i, j])
                    if dof < 0:
                        log.info(
                            "patch %d: basis (%d, %d) at vertex %s is Dirichlet-constrained, "
                            "not a primal dof", patch, i, j, vertex.point,
                        )
                        continue
                    key = (patch, dof)
                    if key in claimed:
                        continue
                    claimed.add(key)
                    members = ((patch, dof),) + tuple(copies.get(key, ()))
                    groups.append(PrimalGroup(v_idx, key, members))
    groups.sort(key=lambda g: g.source)
    for gi, g in enumerate(groups):
        g.index = gi
    return groups


def degenerate_tjunction_count(domain):
    """Number of T-junction sides whose fat vertex degenerates to one function."""
    count = 0
    for vertex in domain.vertices:
        if vertex.kind != "tjunction":
            continue
        for patch in vertex.long_patches:
            loc = dict(vertex.adjacency)[patch]
            space = domain.patches[patch].space
            n_pos = len(nonzero_at_point(space.kv_u, loc[0])) * len(
                nonzero_at_point(space.kv_v, loc[1])
            )
            if n_pos == 1:
                count += 1
    return count


@dataclass
class DofPartition:
    """Per-block interior/dual/primal index sets over the extended dofs."""

    interior: list
    dual: list
    primal: list

    def tilde_index(self, k):
        return np.concatenate([self.interior[k], self.dual[k]]).astype(int)

    def gamma_index(self, k):
        return np.concatenate([self.dual[k], self.primal[k]]).astype(int)


def build_partition(domain, local_systems, groups):
    """Split every block's dofs into (I, Delta, Pi)."""
    K = len(local_systems)
    primal_sets = [set() for _ in range(K)]
    for g in groups:
        for blk, loc in g.members:
            primal_sets[blk].add(loc)
    interior, dual, primal = [], [], []
    for sysk in local_systems:
        trace_active = set()
        for tb in sysk.traces.values():
            trace_active.update(d for _, d in tb.entries)
        for ab in sysk.artificial:
            trace_active.update(range(ab.offset, ab.offset + ab.size))
        pset = primal_sets[sysk.k]
        if not pset <= trace_active:
            raise NumericalError("block %d: primal dof outside the trace-active set" % sysk.k)
        primal.append(np.array(sorted(pset), dtype=int))
        dual.append(np.array(sorted(trace_active - pset), dtype=int))
        rest = set(range(sysk.n_total)) - trace_active
        interior.append(np.array(sorted(rest), dtype=int))
    return DofPartition(interior, dual, primal)


@dataclass
class JumpMatrices:
    """Signed matching constraints and the coefficient scaling.

    Every row carries exactly one +1 (a patch trace dof) and one -1 (its
    artificial copy); no dof appears in two rows.  ``B_full`` spans all
    extended dofs, ``B_tilde`` the (I, Delta) columns and ``B_gamma`` the
    (Delta, Pi) columns (with zero Pi columns).  `D` holds the diagonal
    coefficient scaling ``(alpha_k + alpha_l) / alpha_l`` per block over
    the (Delta, Pi) dofs.
    """

    n_rows: int
    B_full: list
    B_tilde: list
    B_gamma: list
    D: list
    pairs: list  # (row, block_k, dof_k, block_l, dof_l, iface_index)


def build_jump_matrices(domain, local_systems, partition, groups):
    """One row per matched non-primal (trace dof, artificial copy) pair."""
    K = len(local_systems)
    primal_sets = [set(partition.primal[k]) for k in range(K)]
    rows = [[] for _ in range(K)]
    used = [set() for _ in range(K)]
    pairs = []
    n_rows = 0
    for idx, g in enumerate(domain.interfaces):
        for src, dst in ((g.k, g.l), (g.l, g.k)):
            tb = local_systems[src].traces[idx]
            ab = local_systems[dst].artificial_for(idx)
            if ab.neighbor != src or len(ab.sources) != len(tb.entries):
                raise NumericalError("interface %d: trace/copy bases out of sync" % idx)
            for pos, (edge, sdof) in enumerate(tb.entries):
                if ab.sources[pos][0] != edge or ab.sources[pos][1] != sdof:
                    raise NumericalError("interface %d: copy-map misaligned" % idx)
                copy = ab.offset + pos
                s_primal = sdof in primal_sets[src]
                c_primal = copy in primal_sets[dst]
                if s_primal != c_primal:
                    raise NumericalError(
                        "interface %d: pair (%d:%d, %d:%d) is only half primal"
                        % (idx, src, sdof, dst, copy)
                    )
                if s_primal:
                    continue
                if sdof in used[src] or copy in used[dst]:
                    raise NumericalError(
                        "dof matched by two constraints; primal selection missed a vertex"
                    )
                used[src].add(sdof)
                used[dst].add(copy)
                rows[src].append((n_rows, sdof, 1.0))
                rows[dst].append((n_rows, copy, -1.0))
                pairs.append((n_rows, src, sdof, dst, copy, idx))
                n_rows += 1

    def block_csr(k, n_cols, pos_of):
        data = [(r, pos_of[d], s) for r, d, s in rows[k] if pos_of[d] >= 0]
        if not data:
            return scipy.sparse.csr_matrix((n_rows, n_cols))
        rr, cc, vv = zip(*data)
        return scipy.sparse.csr_matrix((vv, (rr, cc)), shape=(n_rows, n_cols))

    B_full, B_tilde, B_gamma, D = [], [], [], []
    for k, sysk in enumerate(local_systems):
        n_e = sysk.n_total
        full_pos = np.arange(n_e)
        tilde = partition.tilde_index(k)
        gamma = partition.gamma_index(k)
        pos_tilde = -np.ones(n_e, dtype=int)
        pos_tilde[tilde] = np.arange(tilde.size)
        pos_gamma = -np.ones(n_e, dtype=int)
        pos_gamma[gamma] = np.arange(gamma.size)
        for r, d, _ in rows[k]:
            if pos_tilde[d] < 0 or pos_gamma[d] < 0:
                raise NumericalError("constraint row %d touches a non-dual dof" % r)
        B_full.append(block_csr(k, n_e, full_pos))
        B_tilde.append(block_csr(k, tilde.size, pos_tilde))
        B_gamma.append(block_csr(k, gamma.size, pos_gamma))

        assoc = {}
        for idx, tb in sysk.traces.items():
            nb = sysk.iface_neighbors[idx]
            for _, dof in tb.entries:
                assoc.setdefault(dof, set()).add(nb)
        for ab in sysk.artificial:
            for pos in range(ab.size):
                assoc[ab.offset + pos] = {ab.neighbor}
        alpha_k = domain.patches[k].alpha
        d_vals = np.empty(gamma.size)
        for g_pos, dof in enumerate(gamma):
            nbs = assoc.get(int(dof))
            if not nbs:
                raise NumericalError("block %d: skeleton dof %d has no interface" % (k, dof))
            l = min(nbs)
            alpha_l = domain.patches[l].alpha
            d_vals[g_pos] = (alpha_k + alpha_l) / alpha_l
        D.append(d_vals)
    return JumpMatrices(n_rows, B_full, B_tilde, B_gamma, D, pairs)


def _pmap(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def build_psi(local_system, partition, name=""):
    """Energy-minimizing basis of the local primal dofs.

    Returns ``(psi, tilde_fac)``: `psi` has one column per local primal
    dof, identity on the primal rows, and its (I, Delta) rows solve the
    torn block against the negative primal coupling columns, so those rows
    of ``A psi`` vanish.  Raises when the torn block is not SPD.
    """
    k = local_system.k
    A = local_system.A.csr
    tilde = partition.tilde_index(k)
    P = partition.primal[k]
    tilde_fac = factorize(A[tilde][:, tilde], name=name or "patch %d (I,Delta) block" % k)
    try:
        tilde_fac.assert_spd()
    except NumericalError as exc:
        raise NumericalError(
            "patch %d: torn block is not SPD; either the penalty is too "
            "small for coercivity or a floating patch lacks primal "
            "constraints (%s)" % (k, exc)
        ) from exc
    psi = np.zeros((local_system.n_total, P.size))
    if P.size:
        rhs = -A[tilde][:, P].toarray()
        psi[tilde] = tilde_fac.solve(rhs)
        psi[P, np.arange(P.size)] = 1.0
    return psi, tilde_fac


class IetiOperator:
    """Factorized per-block data plus the coarse problem; applies F and M_sD.

    Immutable after construction; applications are read-only and safe to
    call concurrently.
    """

    def __init__(self, domain, local_systems, groups, partition, jumps, workers=1):
        self.domain = domain
        self.locals = local_systems
        self.groups = groups
        self.partition = partition
        self.jumps = jumps
        self.n_rows = jumps.n_rows
        self.n_primal = len(groups)
        K = len(local_systems)

        # global index of every local primal dof, per block
        member_index = {}
        for g in groups:
            for blk, loc in g.members:
                member_index[(blk, loc)] = g.index
        self.primal_global = [
            np.array([member_index[(k, int(d))] for d in partition.primal[k]], dtype=int)
            for k in range(K)
        ]

        def prep(k):
            sysk = local_systems[k]
            A = sysk.A.csr
            I = partition.interior[k]
            tilde = partition.tilde_index(k)
            gamma = partition.gamma_index(k)
            psi, tilde_fac = build_psi(sysk, partition)
            aii_fac = factorize(A[I][:, I], name="patch %d interior block" % k).assert_spd()
            return {
                "A": A,
                "A_tilde": A[tilde][:, tilde],
                "tilde_fac": tilde_fac,
                "aii_fac": aii_fac,
                "A_GG": A[gamma][:, gamma],
                "A_IG": A[I][:, gamma],
                "A_GI": A[gamma][:, I],
                "psi": psi,
                "f": sysk.f,
                "f_tilde": sysk.f[tilde],
                "tilde": tilde,
                "gamma": gamma,
            }

        self.blocks = _pmap(prep, range(K), workers)

        coarse = np.zeros((self.n_primal, self.n_primal))
        for k in range(K):
            blk = self.blocks[k]
            if blk["psi"].shape[1] == 0:
                continue
            local = blk["psi"].T @ (blk["A"] @ blk["psi"])
            gk = self.primal_global[k]
            np.add.at(coarse, (gk[:, None], gk[None, :]), local)
        self.coarse_matrix = coarse
        if self.n_primal:
            self.coarse_fac = factorize(coarse, name="coarse problem").assert_spd()
        else:
            self.coarse_fac = None

    # -- F and d ---------------------------------------------------------

    def _coarse_rhs(self, block_vectors):
        w = np.zeros(self.n_primal)
        for k, blk in enumerate(self.blocks):
            if blk["psi"].shape[1]:
                np.add.at(w, self.primal_global[k], blk["psi"].T @ block_vectors[k])
        return w

    def apply_F(self, lam):
        y = np.zeros(self.n_rows)
        for k, blk in enumerate(self.blocks):
            Bt = self.jumps.B_tilde[k]
            y += Bt @ blk["tilde_fac"].solve(Bt.T @ lam)
        if self.n_primal:
            w = self._coarse_rhs([self.jumps.B_full[k].T @ lam for k in range(len(self.blocks))])
            mu = self.coarse_fac.solve(w)
            for k, blk in enumerate(self.blocks):
                if blk["psi"].shape[1]:
                    y += self.jumps.B_full[k] @ (blk["psi"] @ mu[self.primal_global[k]])
        return y

    def compute_d(self):
        d = np.zeros(self.n_rows)
        for k, blk in enumerate(self.blocks):
            d += self.jumps.B_tilde[k] @ blk["tilde_fac"].solve(blk["f_tilde"])
        if self.n_primal:
            mu = self.coarse_fac.solve(self._coarse_rhs([blk["f"] for blk in self.blocks]))
            for k, blk in enumerate(self.blocks):
                if blk["psi"].shape[1]:
                    d += self.jumps.B_full[k] @ (blk["psi"] @ mu[self.primal_global[k]])
        return d

    # -- preconditioner ----------------------------------------------------

    def apply_S(self, k, g):
        """Block Schur complement on the skeleton dofs (Delta, Pi) of block k."""
        blk = self.blocks[k]
        return blk["A_GG"] @ g - blk["A_GI"] @ blk["aii_fac"].solve(blk["A_IG"] @ g)

    def apply_MsD(self, mu):
        y = np.zeros(self.n_rows)
        for k in range(len(self.blocks)):
            Bg = self.jumps.B_gamma[k]
            g = (Bg.T @ mu) / self.jumps.D[k]
            y += Bg @ (self.apply_S(k, g) / self.jumps.D[k])
        return y

    # -- solution recovery -------------------------------------------------

    def recover_solution(self, lam):
        """Per-block coefficient vectors from the converged multipliers."""
        u_blocks = []
        for k, blk in enumerate(self.blocks):
            u = np.zeros(self.locals[k].n_total)
            rhs = blk["f_tilde"] - self.jumps.B_tilde[k].T @ lam
            u[blk["tilde"]] = blk["tilde_fac"].solve(rhs)
            u_blocks.append(u)
        if self.n_primal:
            w = self._coarse_rhs(
                [blk["f"] - self.jumps.B_full[k].T @ lam for k, blk in enumerate(self.blocks)]
            )
            u_pi = self.coarse_fac.solve(w)
            for k, blk in enumerate(self.blocks):
                if blk["psi"].shape[1]:
                    u_blocks[k] += blk["psi"] @ u_pi[self.primal_global[k]]
        return u_blocks

    def patch_solutions(self, u_blocks):
        return [u[: self.locals[k].n_patch] for k, u in enumerate(u_blocks)]

    # -- diagnostics ---------------------------------------------------------

    def psi_residual(self, k):
        """Energy-minimality residual of Psi: max |(I,Delta) rows of A Psi| / max |A|."""
        blk = self.blocks[k]
        if not blk["psi"].shape[1]:
            return 0.0
        res = (blk["A"] @ blk["psi"])[blk["tilde"]]
        scale = max(abs(blk["A"].max()), abs(blk["A"].min()), 1e-300)
        return float(np.abs(res).max() / scale)

    def project_wtilde(self, u_blocks):
        """Project block vectors onto the primal-constrained subspace by group averaging."""
        out = [u.copy() for u in u_blocks]
        for g in self.groups:
            avg = np.mean([out[blk][loc] for blk, loc in g.members])
            for blk, loc in g.members:
                out[blk][loc] = avg
        return out

    def check_lemma_bbt(self, u_blocks):
        """Verify the closed form of w = B_D^T B_Gamma u for primal-constrained u.

        For every matched pair on an interface between patches k and l the
        scaled jump ``alpha_l / (alpha_k + alpha_l) * (u_k - u_l_copy)``
        must appear at the block-k dof, and the complementary-scaled
        negative jump at the copy.  Returns the max coefficientwise
        deviation (all non-pair skeleton dofs must carry zero).
        """
        gam = [u_blocks[k][blk["gamma"]] for k, blk in enumerate(self.blocks)]
        mu = np.zeros(self.n_rows)
        for k in range(len(self.blocks)):
            mu += self.jumps.B_gamma[k] @ gam[k]
        w = [(self.jumps.B_gamma[k].T @ mu) / self.jumps.D[k] for k in range(len(self.blocks))]
        expected = [np.zeros_like(wk) for wk in w]
        pos_gamma = []
        for k, blk in enumerate(self.blocks):
            pg = -np.ones(self.locals[k].n_total, dtype=int)
            pg[blk["gamma"]] = np.arange(blk["gamma"].size)
            pos_gamma.append(pg)
        for _, k, dof_k, l, dof_l, _ in self.jumps.pairs:
            a_k = self.domain.patches[k].alpha
            a_l = self.domain.patches[l].alpha
            jump = u_blocks[k][dof_k] - u_blocks[l][dof_l]
            expected[k][pos_gamma[k][dof_k]] = a_l / (a_k + a_l) * jump
            expected[l][pos_gamma[l][dof_l]] = -a_k / (a_k + a_l) * jump
        return max(
            float(np.abs(w[k] - expected[k]).max()) if w[k].size else 0.0
            for k in range(len(self.blocks))
        )


@dataclass
class SolveReport:
    """Iteration counts, condition estimate and bookkeeping of one solve."""

    domain: str
    p: int
    refinement: int
    num_patches: int
    dofs: int
    extended_dofs: int
    multipliers: int
    primal_dofs: int
    iterations: int
    converged: bool
    kappa: float
    lambda_factor: float
    residuals: list = field(default_factory=list, repr=False)
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    degenerate_tjunctions: int = 0

    CSV_COLUMNS = (
        "domain", "p", "r", "K", "dofs", "multipliers", "it",
        "kappa", "lambda_bound", "kappa_over_bound",
    )

    @property
    def bound(self):
        return self.p * self.lambda_factor**2

    def csv_row(self):
        return [
            self.domain, self.p, self.refinement, self.num_patches, self.dofs,
            self.multipliers, self.iterations,
            "%.6g" % self.kappa, "%.6g" % self.bound, "%.6g" % (self.kappa / self.bound),
        ]

    def to_json_dict(self):
        return {
            "domain": self.domain,
            "p": self.p,
            "r": self.refinement,
            "K": self.num_patches,
            "dofs": self.dofs,
            "extended_dofs": self.extended_dofs,
            "multipliers": self.multipliers,
            "primal_dofs": self.primal_dofs,
            "iterations": self.iterations,
            "converged": self.converged,
            "kappa": self.kappa,
            "lambda_factor": self.lambda_factor,
            "lambda_bound": self.bound,
            "kappa_over_bound": self.kappa / self.bound,
            "residuals": list(self.residuals),
            "setup_seconds": self.setup_seconds,
            "solve_seconds": self.solve_seconds,
            "degenerate_tjunctions": self.degenerate_tjunctions,
        }


@dataclass
class IetiSolution:
    u_patches: list
    u_blocks: list
    multipliers: np.ndarray
    report: SolveReport
    operator: IetiOperator


def lambda_factor(domain):
    """1 + log p + max_k log(H_k / h_k); the square times p bounds the condition number."""
    hhat = domain.metrics["hhat"]
    return float(1.0 + np.log(domain.degree) + np.log(1.0 / hhat.min()))


def setup_operator(domain, delta=12.0, source=1.0, vector_source=None, workers=1):
    """Assemble all extended local systems and build the IETI operator."""
    local_systems = _pmap(
        lambda k: build_local_system(domain, k, delta, source=source, vector_source=vector_source),
        range(domain.num_patches),
        workers,
    )
    groups = select_primal(domain, local_systems)
    partition = build_partition(domain, local_systems, groups)
    jumps = build_jump_matrices(domain, local_systems, partition, groups)
    return IetiOperator(domain, local_systems, groups, partition, jumps, workers=workers)


def pcg_solve(operator, d, tol=1e-6, max_iter=1000):
    """PCG on F lambda = d with the scaled Dirichlet preconditioner."""
    result = pcg(operator.apply_F, operator.apply_MsD, d, tol=tol, max_iter=max_iter)
    if not result.converged and d.size:
        log.warning("PCG stopped after %d iterations without convergence", result.iterations)
    return result


def solve_ieti(domain, delta=12.0, tol=1e-6, max_iter=1000, source=1.0,
               vector_source=None, workers=1, label=None, refinement=-1):
    """Full pipeline: assemble, set up, solve the multiplier system, recover."""
    t0 = time.perf_counter()
    op = setup_operator(domain, delta, source=source, vector_source=vector_source, workers=workers)
    d = op.compute_d()
    t1 = time.perf_counter()
    result = pcg_solve(op, d, tol=tol, max_iter=max_iter)
    u_blocks = op.recover_solution(result.x)
    t2 = time.perf_counter()
    report = SolveReport(
        domain=label or domain.name,
        p=domain.degree,
        refinement=refinement,
        num_patches=domain.num_patches,
        dofs=sum(p.space.dimension for p in domain.patches),
        extended_dofs=sum(s.n_total for s in op.locals),
        multipliers=op.n_rows,
        primal_dofs=op.n_primal,
        iterations=result.iterations,
        converged=result.converged,
        kappa=result.kappa,
        lambda_factor=lambda_factor(domain),
        residuals=result.residuals,
        setup_seconds=t1 - t0,
        solve_seconds=t2 - t1,
        degenerate_tjunctions=degenerate_tjunction_count(domain),
    )
    return IetiSolution(op.patch_solutions(u_blocks), u_blocks, result.x, report, op)
