import numpy as np
import pytest

from ietidg.bspline import KnotVector, TensorSplineSpace, refine_uniform
from ietidg.geometry import GeometryMap, Interface, MultiPatchDomain, Patch


def unit_square_patch(x0, x1, y0, y1, p, r, dirichlet, alpha=1.0):
    kv = refine_uniform(KnotVector.bernstein(p), r)
    geo = GeometryMap.bilinear((x0, y0), (x1, y0), (x0, y1), (x1, y1))
    return Patch(geo, alpha, TensorSplineSpace(kv, kv, dirichlet))


def two_patch_domain(p=1, r=1, dirichlet=True, alphas=(1.0, 1.0)):
    """Two unit squares sharing the edge x = 1."""
    d0 = {"west", "south", "north"} if dirichlet else set()
    d1 = {"east", "south", "north"} if dirichlet else set()
    patches = [
        unit_square_patch(0, 1, 0, 1, p, r, d0, alphas[0]),
        unit_square_patch(1, 2, 0, 1, p, r, d1, alphas[1]),
    ]
    ifaces = [Interface(0, "east", (0.0, 1.0), 1, "west", (0.0, 1.0))]
    return MultiPatchDomain(patches, ifaces, name="two_patch").validate()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_knotvector(rng, p=None):
    p = p if p is not None else int(rng.integers(1, 5))
    n_interior = int(rng.integers(0, 6))
    interior = np.sort(rng.uniform(0.05, 0.95, n_interior))
    knots = np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])
    return KnotVector(p, knots)
