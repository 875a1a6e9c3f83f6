"""Patch-local assembly of the coupled bilinear form.

Each patch carries an extended space: its own tensor-product functions
followed by one block of "artificial" trace functions per interface,
holding copies of the neighbor's basis restricted to the shared curve.
The volume term couples patch functions only; the consistency and penalty
terms couple patch traces with the artificial copies, so the full problem
decomposes into independent per-patch systems.

Interface integrals run over the union of both sides' mapped breakpoints
(the integrand is piecewise polynomial only on the merged partition), with
``p + 1`` Gauss points per sub-interval and the arc-length measure and
outward normal taken from the owning patch's geometry map.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .bspline import active_on_interval, eval_basis, span_quadrature, gauss_rule
from .errors import ConfigError, NumericalError
from .geometry import side_axis, side_normal_hat, side_point

_SINGULAR_RTOL = 1e-12


@dataclass(frozen=True)
class TraceBasis:
    """Boundary-layer functions of one patch active on an interface range.

    ``entries`` holds ``(edge_index, patch_dof)`` pairs in increasing edge
    order; Dirichlet-constrained functions are excluded.
    """

    side: str
    prange: tuple
    edge_kv: object
    entries: tuple

    @property
    def edge_indices(self):
        return [e for e, _ in self.entries]

    @property
    def dofs(self):
        return [d for _, d in self.entries]


def trace_basis_on_edge(space, side, prange):
    """Edge dof list for functions of `space` with nonvanishing trace on the range.

    Includes every function whose support meets the open range, also those
    whose Greville point lies outside it.
    """
    ekv = space.edge_kv(side)
    entries = []
    for e in active_on_interval(ekv, prange[0], prange[1]):
        i, j = space.edge_lattice(side, int(e))
        dof = space.dof_map[i, j]
        if dof >= 0:
            entries.append((int(e), int(dof)))
    if not entries:
        raise ConfigError("degenerate interface: no active trace functions on %s %s" % (side, prange))
    return TraceBasis(side, tuple(prange), ekv, tuple(entries))


@dataclass(frozen=True)
class ArtificialInterfaceBasis:
    """Copies of neighbor basis functions attached to the owning patch.

    The copy-map sends local artificial dof ``offset + pos`` to
    ``sources[pos] = (edge_index, dof index in the neighbor's space)``;
    it is injective by construction.
    """

    owner: int
    neighbor: int
    iface_index: int
    sources: tuple         # (edge_index, neighbor patch dof)
    offset: int

    @property
    def size(self):
        return len(self.sources)

    def position_of_edge(self):
        return {e: pos for pos, (e, _) in enumerate(self.sources)}


@dataclass
class ExtendedLocalSystem:
    """Matrix and load of one patch over its extended space.

    Dof order: the patch's free tensor-product dofs first (compact
    numbering of the space), then one artificial block per interface in
    increasing interface-index order.
    """

    k: int
    A: linalg.SparseSym
    f: np.ndarray
    n_patch: int
    n_total: int
    artificial: list          # ArtificialInterfaceBasis, ordered by iface index
    traces: dict              # iface index -> TraceBasis of this patch's own side
    iface_neighbors: dict     # iface index -> neighbor patch

    def artificial_for(self, iface_index):
        for ab in self.artificial:
            if ab.iface_index == iface_index:
                return ab
        raise KeyError(iface_index)


class _Triplets:
    """Append-only triplet accumulator."""

    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        self.rows.append(np.asarray(rows, dtype=int).ravel())
        self.cols.append(np.asarray(cols, dtype=int).ravel())
        self.vals.append(np.asarray(vals, dtype=float).ravel())

    def arrays(self):
        if not self.rows:
            z = np.zeros(0)
            return z.astype(int), z.astype(int), z
        return (np.concatenate(self.rows), np.concatenate(self.cols), np.concatenate(self.vals))


def _inv_transpose(J, where="", points=None):
    """Batch inverse-transpose of 2x2 Jacobians, with singularity guard.

    `points` (same leading shape as `J`, trailing dim 2) makes the error
    message name the offending parameter point.
    """
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    scale = np.max(np.abs(J)) ** 2
    bad = np.abs(det) <= _SINGULAR_RTOL * max(scale, 1e-300)
    if np.any(bad):
        q = int(np.argmax(np.ravel(bad)))
        at = ""
        if points is not None:
            uv = np.reshape(points, (-1, 2))[q]
            at = " at parameter (%.6g, %.6g)" % (uv[0], uv[1])
        raise NumericalError(
            "singular Jacobian%s%s" % (at, ", " + where if where else "")
        )
    JinvT = np.empty_like(J)
    JinvT[..., 0, 0] = J[..., 1, 1]
    JinvT[..., 0, 1] = -J[..., 1, 0]
    JinvT[..., 1, 0] = -J[..., 0, 1]
    JinvT[..., 1, 1] = J[..., 0, 0]
    return JinvT / det[..., None, None], det


def assemble_volume(patch, source=None, vector_source=None, n_gauss=None, label=""):
    """Stiffness and load of the diffusion term on one patch.

    Returns triplets over the *full lattice* index space together with the
    lattice load vector; callers restrict to free dofs.  `source` is a
    scalar or callable f(x, y); `vector_source` an optional callable
    W(x, y) -> (2,) adding the weakly integrated-by-parts contribution
    of a divergence-form right-hand side.
    """
    space, geo, alpha = patch.space, patch.geometry, patch.alpha
    p = space.degree
    ng = n_gauss or (max(p, geo.kv_u.p, geo.kv_v.p) + 1)
    squ = span_quadrature(space.kv_u, ng, 1)
    sqv = span_quadrature(space.kv_v, ng, 1)
    pu, pv = squ.points.ravel(), sqv.points.ravel()
    pts, jac = geo.jacobian_grid(pu, pv)
    n_v = space.n_v
    m = (p + 1) ** 2
    tri = _Triplets()
    load = np.zeros(space.n_u * n_v)
    for a in range(squ.spans.size):
        Bu = squ.tables[a]
        wu = squ.weights[a]
        fu = squ.first_active[a]
        ia = slice(a * ng, (a + 1) * ng)
        for b in range(sqv.spans.size):
            Bv = sqv.tables[b]
            wv = sqv.weights[b]
            fv = sqv.first_active[b]
            ib = slice(b * ng, (b + 1) * ng)
            N = (Bu[:, 0][:, None, :, None] * Bv[:, 0][None, :, None, :]).reshape(-1, m)
            Gu = (Bu[:, 1][:, None, :, None] * Bv[:, 0][None, :, None, :]).reshape(-1, m)
            Gv = (Bu[:, 0][:, None, :, None] * Bv[:, 1][None, :, None, :]).reshape(-1, m)
            Ghat = np.stack([Gu, Gv], axis=1)
            J = jac[ia, ib].reshape(-1, 2, 2)
            uv = np.stack(np.meshgrid(squ.points[a], sqv.points[b], indexing="ij"), axis=-1)
            JinvT, det = _inv_transpose(J, where=label, points=uv)
            grads = np.einsum("qab,qbm->qam", JinvT, Ghat)
            w = (wu[:, None] * wv[None, :]).ravel() * np.abs(det)
            elem = np.einsum("qam,qan,q->mn", grads, grads, alpha * w)
            lat = ((fu + np.arange(p + 1))[:, None] * n_v + (fv + np.arange(p + 1))[None, :]).ravel()
            tri.add(np.repeat(lat, m), np.tile(lat, m), elem)
            x = pts[ia, ib].reshape(-1, 2)
            if source is not None:
                fvals = source(x[:, 0], x[:, 1]) if callable(source) else float(source)
                load[lat] += N.T @ (w * fvals)
            if vector_source is not None:
                W = np.asarray(vector_source(x[:, 0], x[:, 1]), dtype=float)
                if W.shape != (x.shape[0], 2):
                    W = W.reshape(x.shape[0], 2)
                load[lat] += np.einsum("qam,qa,q->m", grads, W, w)
    return tri, load


def _merged_edge_partition(domain, ori):
    """Breakpoints of both sides merged, expressed in the owner's edge parameter."""
    own_kv = domain.patches[ori.k].space.edge_kv(ori.side_k)
    nb_kv = domain.patches[ori.l].space.edge_kv(ori.side_l)
    a, b = ori.range_k
    c, d = sorted(ori.range_l)
    pts = [a, b]
    pts += [t for t in own_kv.breakpoints if a < t < b]
    for s in nb_kv.breakpoints:
        if c < s < d:
            # invert the affine correspondence
            frac = (s - ori.range_l[0]) / (ori.range_l[1] - ori.range_l[0])
            if ori.reversed_:
                frac = 1.0 - frac
            pts.append(a + frac * (b - a))
    pts = np.array(sorted(pts))
    keep = np.concatenate([[True], np.diff(pts) > 1e-12 * (b - a)])
    return pts[keep]


@dataclass
class _SideQuadrature:
    """Quadrature data for one oriented interface side."""

    ts: np.ndarray           # owner edge parameters
    ss: np.ndarray           # neighbor edge parameters
    weights: np.ndarray      # Gauss weight times arc measure
    normals: np.ndarray      # outward unit normals of the owner
    points: np.ndarray       # physical points
    jinv_t: np.ndarray       # inverse-transpose Jacobians of the owner
    fixed_first: int
    fixed_tab: np.ndarray    # (2, p+1) values/derivs of the owner's normal-direction kv


def _side_quadrature(domain, ori, n_gauss):
    geo = domain.patches[ori.k].geometry
    space = domain.patches[ori.k].space
    side = ori.side_k
    breaks = _merged_edge_partition(domain, ori)
    rule = gauss_rule(n_gauss)
    ts, wts = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        q, w = rule.mapped(lo, hi)
        ts.append(q)
        wts.append(w)
    ts = np.concatenate(ts)
    wts = np.concatenate(wts)
    ss = np.asarray(ori.map_param(ts))

    axis = side_axis(side)
    if axis == 1:
        fixed = 0.0 if side == "west" else 1.0
        pts, jac = geo.jacobian_grid([fixed], ts)
        pts, jac = pts[0], jac[0]
    else:
        fixed = 0.0 if side == "south" else 1.0
        pts, jac = geo.jacobian_grid(ts, [fixed])
        pts, jac = pts[:, 0], jac[:, 0]
    tangent = jac[:, :, axis]
    arc = np.linalg.norm(tangent, axis=1)
    uv = np.array([side_point(side, t) for t in ts])
    JinvT, _ = _inv_transpose(jac, where="patch %d side %s" % (ori.k, side), points=uv)
    n_hat = side_normal_hat(side)
    normals = JinvT @ n_hat
    normals /= np.linalg.norm(normals, axis=1)[:, None]

    # probe: a step inward from the edge must oppose the normal
    eps = 1e-4
    u0, v0 = side_point(side, ts[0])
    du, dv = -eps * n_hat
    probe = geo(min(max(u0 + du, 0.0), 1.0), min(max(v0 + dv, 0.0), 1.0))
    if np.dot(probe - pts[0], normals[0]) >= 0:
        raise NumericalError(
            "outward normal of patch %d points inward on side %s" % (ori.k, side)
        )

    nkv = space.kv_u if axis == 1 else space.kv_v
    fixed_first, fixed_tab = eval_basis(nkv, fixed, 1)
    return _SideQuadrature(ts, ss, wts * arc, normals, pts, JinvT, fixed_first, fixed_tab)


def interface_side_terms(domain, ori, delta):
    """Consistency (m) and penalty (r) triplets for one oriented interface side.

    Rows/cols come in two index spaces: lattice indices of the owner patch
    ('pp', 'pa' rows) and neighbor *edge indices* ('pa' cols, 'aa'); the
    caller maps edge indices onto artificial dofs or neighbor patch dofs.
    Returns the dict ``{'m_pp', 'm_pa', 'r_pp', 'r_pa', 'r_aa'}``.
    """
    patch = domain.patches[ori.k]
    space = patch.space
    p = space.degree
    geo = patch.geometry
    ng = max(p, geo.kv_u.p, geo.kv_v.p) + 1
    sq = _side_quadrature(domain, ori, ng)
    nb_space = domain.patches[ori.l].space
    nb_kv = nb_space.edge_kv(ori.side_l)
    axis = side_axis(ori.side_k)
    tkv = space.kv_v if axis == 1 else space.kv_u
    n_v = space.n_v
    alpha = patch.alpha
    h_k = domain.metrics["h"][ori.k]
    h_l = domain.metrics["h"][ori.l]
    rho = alpha * delta * p * p / min(h_k, h_l)

    out = {key: _Triplets() for key in ("m_pp", "m_pa", "r_pp", "r_pa", "r_aa")}
    win = np.arange(p + 1)
    for q in range(sq.ts.size):
        t, s, w, n = sq.ts[q], sq.ss[q], sq.weights[q], sq.normals[q]
        ft, tab_t = eval_basis(tkv, t, 1)
        if axis == 1:
            # u fixed, v tangential
            N = np.outer(sq.fixed_tab[0], tab_t[0]).ravel()
            Gu = np.outer(sq.fixed_tab[1], tab_t[0]).ravel()
            Gv = np.outer(sq.fixed_tab[0], tab_t[1]).ravel()
            lat = ((sq.fixed_first + win)[:, None] * n_v + (ft + win)[None, :]).ravel()
        else:
            N = np.outer(tab_t[0], sq.fixed_tab[0]).ravel()
            Gu = np.outer(tab_t[1], sq.fixed_tab[0]).ravel()
            Gv = np.outer(tab_t[0], sq.fixed_tab[1]).ravel()
            lat = ((ft + win)[:, None] * n_v + (sq.fixed_first + win)[None, :]).ravel()
        grads = sq.jinv_t[q] @ np.stack([Gu, Gv])
        dn = n @ grads

        fs, tab_s = eval_basis(nb_kv, s, 0)
        psi = tab_s[0]
        edge = fs + win

        m = lat.size
        E = np.outer(dn, N)
        out["m_pp"].add(np.repeat(lat, m), np.tile(lat, m), (-0.5 * alpha * w) * (E + E.T))
        out["m_pa"].add(
            np.repeat(lat, p + 1), np.tile(edge, m), (0.5 * alpha * w) * np.outer(dn, psi)
        )
        out["r_pp"].add(np.repeat(lat, m), np.tile(lat, m), (rho * w) * np.outer(N, N))
        out["r_pa"].add(
            np.repeat(lat, p + 1), np.tile(edge, m), (-rho * w) * np.outer(N, psi)
        )
        out["r_aa"].add(
            np.repeat(edge, p + 1), np.tile(edge, p + 1), (rho * w) * np.outer(psi, psi)
        )
    return out


def extended_layout(domain, k):
    """Dof layout of patch `k`'s extended space.

    Returns ``(n_patch, artificial, traces, neighbors)`` with artificial
    blocks ordered by interface index.
    """
    space = domain.patches[k].space
    n_patch = space.dimension
    artificial = []
    traces = {}
    neighbors = {}
    offset = n_patch
    for idx, ori in sorted(domain.interfaces_of(k), key=lambda kv: kv[0]):
        nb_trace = trace_basis_on_edge(domain.patches[ori.l].space, ori.side_l, ori.range_l)
        artificial.append(
            ArtificialInterfaceBasis(k, ori.l, idx, nb_trace.entries, offset)
        )
        offset += len(nb_trace.entries)
        traces[idx] = trace_basis_on_edge(space, ori.side_k, ori.range_k)
        neighbors[idx] = ori.l
    return n_patch, artificial, traces, neighbors


def _map_lattice_to_free(space, rows, cols, vals):
    dof = space.dof_map.ravel()
    r, c = dof[rows], dof[cols]
    keep = (r >= 0) & (c >= 0)
    return r[keep], c[keep], vals[keep]


def assemble_interface_terms(domain, k, iface_index, delta, layout=None):
    """m and r contributions of one interface into patch `k`'s extended matrix.

    Returns two coo-style triplet arrays ``(m_terms, r_terms)`` over the
    extended dof space of patch `k`.
    """
    if layout is None:
        layout = extended_layout(domain, k)
    n_patch, artificial, traces, _ = layout
    ori = dict(domain.interfaces_of(k))[iface_index]
    ab = next(a for a in artificial if a.iface_index == iface_index)
    space = domain.patches[k].space
    terms = interface_side_terms(domain, ori, delta)
    pos = ab.position_of_edge()

    def paste(keys):
        tri = _Triplets()
        for key in keys:
            rows, cols, vals = terms[key].arrays()
            if key.endswith("pp"):
                r, c, v = _map_lattice_to_free(space, rows, cols, vals)
                tri.add(r, c, v)
            elif key.endswith("pa"):
                r = space.dof_map.ravel()[rows]
                c = np.array([pos.get(e, -1) for e in cols])
                keep = (r >= 0) & (c >= 0)
                ra, ca, va = r[keep], ab.offset + c[keep], vals[keep]
                tri.add(ra, ca, va)
                tri.add(ca, ra, va)  # symmetric counterpart
            else:  # aa
                r = np.array([pos.get(e, -1) for e in rows])
                c = np.array([pos.get(e, -1) for e in cols])
                keep = (r >= 0) & (c >= 0)
                tri.add(ab.offset + r[keep], ab.offset + c[keep], vals[keep])
        return tri

    return paste(["m_pp", "m_pa"]), paste(["r_pp", "r_pa", "r_aa"])


def build_local_system(domain, k, delta, source=None, vector_source=None):
    """Assemble the extended local system of patch `k`.

    The load is supported on the patch dofs only; the interface blocks
    receive consistency and penalty couplings.
    """
    patch = domain.patches[k]
    space = patch.space
    layout = extended_layout(domain, k)
    n_patch, artificial, traces, neighbors = layout
    n_total = n_patch + sum(ab.size for ab in artificial)

    tri = _Triplets()
    vol, load_lat = assemble_volume(patch, source=source, vector_source=vector_source,
                                    label="patch %d" % k)
    rows, cols, vals = vol.arrays()
    tri.add(*_map_lattice_to_free(space, rows, cols, vals))
    f = np.zeros(n_total)
    f[:n_patch] = load_lat[space.free_mask.ravel()]

    for ab in artificial:
        m_tri, r_tri = assemble_interface_terms(domain, k, ab.iface_index, delta, layout)
        tri.add(*m_tri.arrays())
        tri.add(*r_tri.arrays())

    A = linalg.SparseSym.from_triplets(n_total, *tri.arrays())
    return ExtendedLocalSystem(k, A, f, n_patch, n_total, artificial, traces, neighbors)
