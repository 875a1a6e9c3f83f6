"""Patch geometry maps and multi-patch topology with partial-edge interfaces.

The decomposition is declared explicitly (patches, interfaces with
parametric sub-ranges on both sides) and then validated geometrically;
vertices are discovered by clustering interface endpoints and classified
as regular corners or T-junctions.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .bspline import SIDES, KnotVector, TensorSplineSpace, eval_matrix
from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

_CORNER_TOL = 1e-12


def side_point(side, t):
    """Parameter-square point on `side` at edge parameter `t`."""
    if side == "west":
        return (0.0, t)
    if side == "east":
        return (1.0, t)
    if side == "south":
        return (t, 0.0)
    if side == "north":
        return (t, 1.0)
    raise ConfigError("unknown side %r" % side)


def side_axis(side):
    """Parameter axis running along the side: 0 for south/north, 1 for west/east."""
    return 1 if side in ("west", "east") else 0


def side_normal_hat(side):
    """Outward unit normal of the parameter square on `side`."""
    return {
        "west": np.array([-1.0, 0.0]),
        "east": np.array([1.0, 0.0]),
        "south": np.array([0.0, -1.0]),
        "north": np.array([0.0, 1.0]),
    }[side]


class GeometryMap:
    """Tensor-product B-spline map from the unit square into the plane.

    Parameters
    ----------
    kv_u, kv_v : KnotVector
        Knot vectors of the geometry space (independent of the
        discretization space).
    control : array_like, shape (n_u, n_v, 2)
        Control net.
    """

    def __init__(self, kv_u, kv_v, control):
        control = np.asarray(control, dtype=float)
        if control.shape != (kv_u.n, kv_v.n, 2):
            raise ConfigError(
                "control net shape %s does not match spaces (%d, %d, 2)"
                % (control.shape, kv_u.n, kv_v.n)
            )
        self.kv_u = kv_u
        self.kv_v = kv_v
        self.control = control

    @classmethod
    def bilinear(cls, sw, se, nw, ne):
        """Bilinear map from four corner points (p = 1, single span)."""
        kv = KnotVector(1, [0.0, 0.0, 1.0, 1.0])
        control = np.array([[sw, nw], [se, ne]], dtype=float)
        return cls(kv, kv, control)

    def eval_grid(self, u_pts, v_pts, deriv=0):
        """Evaluate the map (or a first partial) on the tensor grid of points.

        Returns an array of shape ``(len(u_pts), len(v_pts), 2)``; with
        ``deriv=(du, dv)`` entries are mixed partial derivatives.
        """
        du, dv = deriv if isinstance(deriv, tuple) else (deriv, deriv)
        BU = eval_matrix(self.kv_u, u_pts, du)
        BV = eval_matrix(self.kv_v, v_pts, dv)
        return np.einsum("ui,ijc,vj->uvc", BU, self.control, BV)

    def jacobian_grid(self, u_pts, v_pts):
        """Points and Jacobians on a tensor grid.

        Returns
        -------
        points : ndarray, shape (nu, nv, 2)
        jac : ndarray, shape (nu, nv, 2, 2)
            ``jac[..., :, 0]`` is the u-partial, ``jac[..., :, 1]`` the v-partial.
        """
        pts = self.eval_grid(u_pts, v_pts, deriv=(0, 0))
        ju = self.eval_grid(u_pts, v_pts, deriv=(1, 0))
        jv = self.eval_grid(u_pts, v_pts, deriv=(0, 1))
        return pts, np.stack([ju, jv], axis=-1)

    def __call__(self, u, v):
        return self.eval_grid([u], [v])[0, 0]

    def jacobian(self, u, v):
        _, jac = self.jacobian_grid([u], [v])
        return jac[0, 0]

    def check_bijective(self, n_samples=9):
        """Reject the patch unless det(Jacobian) keeps one sign on a sample grid."""
        s = np.linspace(1e-3, 1.0 - 1e-3, n_samples)
        _, jac = self.jacobian_grid(s, s)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        scale = np.abs(jac).max() ** 2
        if np.any(np.abs(det) <= 1e-12 * scale) or (det.max() > 0 and det.min() < 0):
            raise ConfigError("geometry map is not bijective: Jacobian determinant changes sign")

    def as_dict(self):
        return {
            "degree": self.kv_u.p,
            "knots_u": self.kv_u.knots.tolist(),
            "knots_v": self.kv_v.knots.tolist(),
            "control_points": self.control.tolist(),
        }


@dataclass(frozen=True)
class Interface:
    """A shared curve piece between two patches, with parametric ranges.

    ``range_k`` is the edge-parameter interval on side ``side_k`` of patch
    `k` and likewise for patch `l`; `reversed_` flags counter-directed
    parametrizations.  The correspondence between the ranges is affine.
    """

    k: int
    side_k: str
    range_k: tuple
    l: int
    side_l: str
    range_l: tuple
    reversed_: bool = False

    def __post_init__(self):
        for side in (self.side_k, self.side_l):
            if side not in SIDES:
                raise ConfigError("unknown side %r" % side)
        for rng in (self.range_k, self.range_l):
            a, b = rng
            if not (0.0 <= a < b <= 1.0):
                raise ConfigError("interface range %r must be a positive sub-interval of [0,1]" % (rng,))

    def map_param(self, t):
        """Affine edge-parameter correspondence from side k to side l."""
        a, b = self.range_k
        c, d = self.range_l
        s = (np.asarray(t) - a) / (b - a)
        return d - (d - c) * s if self.reversed_ else c + (d - c) * s

    def flipped(self):
        """Same interface seen from patch `l`."""
        return Interface(self.l, self.side_l, self.range_l, self.k, self.side_k,
                         self.range_k, self.reversed_)


@dataclass
class Vertex:
    """A clustered interface endpoint with its patch adjacency."""

    point: np.ndarray
    adjacency: list  # (patch index, (u, v)) pairs
    kind: str = "regular"
    long_patches: tuple = ()


@dataclass(frozen=True)
class Patch:
    geometry: GeometryMap
    alpha: float
    space: TensorSplineSpace


class MultiPatchDomain:
    """Patches, interfaces, classified vertices and derived mesh metrics.

    Immutable after :meth:`validate`; all queries are read-only and safe
    for concurrent use.
    """

    def __init__(self, patches, interfaces, name="domain"):
        if not patches:
            raise ConfigError("domain needs at least one patch")
        degrees = {p.space.degree for p in patches}
        if len(degrees) != 1:
            raise ConfigError("mixed spline degrees across patches are unsupported")
        for i, p in enumerate(patches):
            if not p.alpha > 0:
                raise ConfigError("diffusion coefficient of patch %d must be positive" % i)
        self.patches = list(patches)
        self.interfaces = list(interfaces)
        self.name = name
        K = len(patches)
        for g in self.interfaces:
            if not (0 <= g.k < K and 0 <= g.l < K and g.k != g.l):
                raise ConfigError("interface references invalid patches (%d, %d)" % (g.k, g.l))
        self.vertices = []
        self._metrics = None

    @property
    def num_patches(self):
        return len(self.patches)

    @property
    def degree(self):
        return self.patches[0].space.degree

    def interfaces_of(self, k):
        """(interface index, oriented interface with patch `k` first) pairs."""
        out = []
        for idx, g in enumerate(self.interfaces):
            if g.k == k:
                out.append((idx, g))
            elif g.l == k:
                out.append((idx, g.flipped()))
        return out

    # -- validation ----------------------------------------------------

    def validate(self, n_samples=17, tol=1e-9):
        for i, p in enumerate(self.patches):
            try:
                p.geometry.check_bijective()
            except ConfigError as exc:
                raise ConfigError("patch %d: %s" % (i, exc)) from exc
        self._metrics = self._compute_metrics()
        for idx in range(len(self.interfaces)):
            report = validate_interface(self, idx, n_samples=n_samples, tol=tol)
            if report is not None:
                raise ConfigError("interface %d mismatch: %s" % (idx, report))
        self.vertices = classify_vertices(self)
        return self

    # -- metrics -------------------------------------------------------

    def _compute_metrics(self):
        H = np.empty(self.num_patches)
        hhat = np.empty(self.num_patches)
        hhat_min = np.empty(self.num_patches)
        s = np.linspace(0.0, 1.0, 33)
        for k, p in enumerate(self.patches):
            geo = p.geometry
            edges = [
                geo.eval_grid([0.0], s)[0],
                geo.eval_grid([1.0], s)[0],
                geo.eval_grid(s, [0.0])[:, 0],
                geo.eval_grid(s, [1.0])[:, 0],
            ]
            cloud = np.concatenate(edges, axis=0)
            diff = cloud[:, None, :] - cloud[None, :, :]
            H[k] = np.sqrt(np.max(np.sum(diff**2, axis=-1)))
            hhat[k] = max(p.space.kv_u.h_max, p.space.kv_v.h_max)
            hhat_min[k] = min(p.space.kv_u.h_min, p.space.kv_v.h_min)
        return {"H": H, "hhat": hhat, "hhat_min": hhat_min, "h": hhat * H}

    @property
    def metrics(self):
        if self._metrics is None:
            self._metrics = self._compute_metrics()
        return self._metrics

    @property
    def max_vertex_valence(self):
        """Largest number of patches meeting at any vertex (boundedness hook)."""
        if not self.vertices:
            return 0
        return max(len({p for p, _ in v.adjacency}) for v in self.vertices)

    def patch_metrics(self):
        """Per-patch (H_k, h_k, hhat_min_k) plus the quasi-uniformity ratio."""
        m = self.metrics
        return [
            {
                "H": float(m["H"][k]),
                "h": float(m["h"][k]),
                "hhat": float(m["hhat"][k]),
                "hhat_min": float(m["hhat_min"][k]),
                "quasi_uniformity": float(m["hhat"][k] / m["hhat_min"][k]),
            }
            for k in range(self.num_patches)
        ]


def validate_interface(domain, index, n_samples=17, tol=1e-9):
    """Sample the interface on both sides; return None if they coincide.

    On failure returns a dict describing the worst sample.
    """
    g = domain.interfaces[index]
    ts = np.linspace(g.range_k[0], g.range_k[1], n_samples)
    ss = g.map_param(ts)
    geo_k = domain.patches[g.k].geometry
    geo_l = domain.patches[g.l].geometry
    pk = np.array([geo_k(*side_point(g.side_k, t)) for t in ts])
    pl = np.array([geo_l(*side_point(g.side_l, s)) for s in ss])
    dist = np.linalg.norm(pk - pl, axis=1)
    worst = int(np.argmax(dist))
    H_k = domain.metrics["H"][g.k]
    if dist[worst] <= tol * H_k:
        return None
    return {
        "max_mismatch": float(dist[worst]),
        "tolerance": float(tol * H_k),
        "t": float(ts[worst]),
        "point_k": pk[worst].tolist(),
        "point_l": pl[worst].tolist(),
    }


def _param_location_kind(u, v):
    """Classify a parameter point: 'corner', 'edge' (interior of an edge) or 'inner'."""
    on_u = min(u, 1.0 - u) <= _CORNER_TOL
    on_v = min(v, 1.0 - v) <= _CORNER_TOL
    if on_u and on_v:
        return "corner"
    if on_u or on_v:
        return "edge"
    return "inner"


def classify_vertices(domain):
    """Cluster interface endpoints into vertices and detect T-junctions.

    A vertex is a T-junction iff it lies strictly inside an edge of at
    least one adjacent patch (the "long side"); it must be a corner of
    every other adjacent patch.
    """
    records = []  # (point, patch, (u, v))
    for g in domain.interfaces:
        for t_end in g.range_k:
            s_end = float(g.map_param(t_end))
            uk = side_point(g.side_k, t_end)
            ul = side_point(g.side_l, s_end)
            records.append((np.array(domain.patches[g.k].geometry(*uk)), g.k, uk))
            records.append((np.array(domain.patches[g.l].geometry(*ul)), g.l, ul))
    if not records:
        return []
    merge_tol = 1e-9 * float(np.max(domain.metrics["H"]))
    clusters = []
    for point, patch, loc in records:
        for cl in clusters:
            if np.linalg.norm(cl["point"] - point) <= merge_tol:
                cl["members"].append((patch, loc))
                break
        else:
            clusters.append({"point": point, "members": [(patch, loc)]})

    vertices = []
    for cl in clusters:
        by_patch = {}
        for patch, (u, v) in cl["members"]:
            key = None
            for (pp, (uu, vv)) in by_patch:
                if pp == patch and abs(uu - u) <= _CORNER_TOL and abs(vv - v) <= _CORNER_TOL:
                    key = (pp, (uu, vv))
                    break
            if key is None:
                by_patch[(patch, (u, v))] = _param_location_kind(u, v)
        long_patches = []
        adjacency = []
        seen_edge = {}
        for (patch, loc), kind in by_patch.items():
            if kind == "inner":
                raise ConfigError(
                    "vertex at %s lies in the interior of patch %d" % (cl["point"], patch)
                )
            adjacency.append((patch, loc))
            if kind == "edge":
                if patch in seen_edge:
                    raise ConfigError(
                        "vertex at %s is interior to two edges of patch %d"
                        % (cl["point"], patch)
                    )
                seen_edge[patch] = loc
                long_patches.append(patch)
        patches_here = {p for p, _ in adjacency}
        for patch in patches_here:
            locs = [loc for p, loc in adjacency if p == patch]
            kinds = {_param_location_kind(*loc) for loc in locs}
            if len(kinds) > 1:
                raise ConfigError(
                    "inconsistent adjacency of patch %d at vertex %s" % (patch, cl["point"])
                )
        kind = "tjunction" if long_patches else "regular"
        vertices.append(Vertex(cl["point"], sorted(adjacency), kind, tuple(sorted(long_patches))))
    vertices.sort(key=lambda v: (round(v.point[0], 9), round(v.point[1], 9)))
    return vertices


def eval_geometry(geometry_map, u, v):
    """Physical image of a parameter point."""
    return geometry_map(u, v)


def jacobian(geometry_map, u, v):
    """2x2 Jacobian at a parameter point; raises on singularity."""
    J = geometry_map.jacobian(u, v)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if abs(det) <= 1e-12 * max(np.abs(J).max() ** 2, 1e-300):
        raise NumericalError("singular Jacobian at parameter (%g, %g)" % (u, v))
    return J
