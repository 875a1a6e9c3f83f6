"""Shared numerical kernels: sparse symmetric storage, factorization, PCG.

Factorizations are LDL^T-style with pivot monitoring: small systems go
through a dense Bunch-Kaufman factorization (exact inertia), larger ones
through SuperLU in symmetric mode with a minimum-degree-type ordering,
reading the inertia off the signs of the U diagonal.  The eigensolver for
small dense matrices wraps LAPACK's tridiagonal-reduction + QR iteration.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import NumericalError, SingularMatrixError

_DENSE_CUTOFF = 2000
_PIVOT_RTOL = 1e-14


class SparseSym:
    """Compressed-row symmetric matrix built from triplets.

    Duplicate triplets are summed and explicit zeros dropped.  When
    ``symmetric=True`` the values are verified to be symmetric up to
    1e-12 relative in the max norm.
    """

    def __init__(self, matrix, symmetric=True):
        csr = scipy.sparse.csr_matrix(matrix)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        self.csr = csr
        self.n = csr.shape[0]
        self.symmetric = symmetric
        if symmetric and self.n:
            scale = max(abs(csr.max()), abs(csr.min()), 1e-300)
            asym = abs(csr - csr.T)
            worst = asym.max() if asym.nnz else 0.0
            if worst > 1e-12 * scale:
                raise NumericalError(
                    "matrix flagged symmetric has asymmetry %.3e (scale %.3e)" % (worst, scale)
                )

    @classmethod
    def from_triplets(cls, n, rows, cols, values, symmetric=True):
        coo = scipy.sparse.coo_matrix((values, (rows, cols)), shape=(n, n))
        return cls(coo, symmetric=symmetric)

    @property
    def shape(self):
        return self.csr.shape

    def toarray(self):
        return self.csr.toarray()


def write_triplets(path, matrix):
    """Dump a matrix as plain text, one ``row col value`` triplet per line."""
    coo = scipy.sparse.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write("%d %d %.17g\n" % (r, c, v))


class Factorization:
    """Symmetric factorization with ``solve`` and pivot inertia.

    ``inertia`` is the triple (positive, negative, zero) of pivot signs;
    an SPD matrix yields ``(n, 0, 0)``.  Solves accept vector or matrix
    right-hand sides and are safe to call concurrently.
    """

    def __init__(self, n, solver, inertia, name=""):
        self.n = n
        self._solver = solver
        self.inertia = inertia
        self.name = name

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError("rhs has leading dimension %d, expected %d" % (rhs.shape[0], self.n))
        return self._solver(rhs)

    def assert_spd(self):
        npos, nneg, nzero = self.inertia
        if nneg or nzero:
            raise NumericalError(
                "%s: expected SPD matrix but inertia is (%d, %d, %d)"
                % (self.name or "factorization", npos, nneg, nzero)
            )
        return self


def _dense_ldl(A, name):
    lu, d, perm = scipy.linalg.ldl(A, lower=True)
    n = A.shape[0]
    scale = max(np.abs(A).max(), 1e-300) if n else 1.0
    tol = _PIVOT_RTOL * scale

    # walk the 1x1 / 2x2 pivot blocks of d
    blocks = []
    npos = nneg = nzero = 0
    i = 0
    while i < n:
        if i + 1 < n and d[i, i + 1] != 0.0:
            a, b, c = d[i, i], d[i, i + 1], d[i + 1, i + 1]
            disc = np.hypot(a - c, 2.0 * b)
            lam1 = 0.5 * ((a + c) + disc)
            lam2 = 0.5 * ((a + c) - disc)
            for lam in (lam1, lam2):
                if abs(lam) <= tol:
                    raise SingularMatrixError(
                        "%s: zero pivot in 2x2 block at index %d" % (name or "ldl", i), index=i
                    )
                if lam > 0:
                    npos += 1
                else:
                    nneg += 1
            blocks.append((i, 2))
            i += 2
        else:
            piv = d[i, i]
            if abs(piv) <= tol:
                raise SingularMatrixError(
                    "%s: zero pivot at index %d" % (name or "ldl", i), index=i
                )
            if piv > 0:
                npos += 1
            else:
                nneg += 1
            blocks.append((i, 1))
            i += 1

    L = lu[perm, :]

    def solver(rhs):
        vec = rhs.ndim == 1
        b = rhs[:, None] if vec else rhs
        z = scipy.linalg.solve_triangular(L, b[perm], lower=True, unit_diagonal=True)
        w = np.empty_like(z)
        for start, size in blocks:
            if size == 1:
                w[start] = z[start] / d[start, start]
            else:
                blk = d[start : start + 2, start : start + 2]
                w[start : start + 2] = np.linalg.solve(blk, z[start : start + 2])
        y = scipy.linalg.solve_triangular(L.T, w, lower=False, unit_diagonal=True)
        x = np.empty_like(y)
        x[perm] = y
        return x[:, 0] if vec else x

    return Factorization(n, solver, (npos, nneg, nzero), name)


def _sparse_ldl(A, name):
    n = A.shape[0]
    csc = scipy.sparse.csc_matrix(A)
    try:
        lu = scipy.sparse.linalg.splu(
            csc,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:  # SuperLU reports exactly singular matrices this way
        raise SingularMatrixError("%s: %s" % (name or "splu", exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NumericalError(
            "%s: unsymmetric pivoting kicked in; matrix is not factorizable "
            "as symmetric quasi-definite" % (name or "splu")
        )
    diag = lu.U.diagonal()
    scale = max(np.abs(csc).max(), 1e-300)
    tol = _PIVOT_RTOL * scale
    small = np.abs(diag) <= tol
    if np.any(small):
        raise SingularMatrixError(
            "%s: zero pivot at index %d" % (name or "splu", int(np.argmax(small))),
            index=int(np.argmax(small)),
        )
    npos = int(np.sum(diag > 0))
    nneg = int(np.sum(diag < 0))
    return Factorization(n, lu.solve, (npos, nneg, 0), name)


def factorize(A, name=""):
    """Factorize a symmetric matrix for repeated solves.

    Dense Bunch-Kaufman below ``_DENSE_CUTOFF`` unknowns, SuperLU in
    symmetric mode above.  Raises :class:`SingularMatrixError` on zero
    pivots (tolerance ``1e-14 * max|A|``).
    """
    if isinstance(A, SparseSym):
        mat = A.csr
    else:
        mat = A
    n = mat.shape[0]
    if n == 0:
        return Factorization(0, lambda rhs: rhs, (0, 0, 0), name)
    if scipy.sparse.issparse(mat):
        if n <= _DENSE_CUTOFF:
            return _dense_ldl(mat.toarray(), name)
        return _sparse_ldl(mat, name)
    mat = np.asarray(mat, dtype=float)
    if n <= _DENSE_CUTOFF:
        return _dense_ldl(mat, name)
    return _sparse_ldl(scipy.sparse.csc_matrix(mat), name)


def solve(factorization, rhs):
    """Functional alias for ``factorization.solve(rhs)``."""
    return factorization.solve(rhs)


def symmetric_eigenvalues(M):
    """Sorted eigenvalues of a symmetric dense matrix (LAPACK reduction + QR)."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if M.shape[0] > 3000:
        raise ValueError("dense eigensolver limited to dimension 3000")
    try:
        return np.sort(scipy.linalg.eigvalsh(M))
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError("dense eigensolver failed to converge: %s" % exc) from exc


@dataclass
class PcgResult:
    """Outcome of a preconditioned conjugate gradient run."""

    x: np.ndarray
    iterations: int
    residuals: list
    converged: bool
    kappa: float
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)


def lanczos_condition(alphas, betas):
    """Condition estimate from the Lanczos tridiagonal built out of PCG coefficients."""
    m = len(alphas)
    if m == 0:
        return 1.0
    diag = np.empty(m)
    diag[0] = 1.0 / alphas[0]
    for i in range(1, m):
        diag[i] = 1.0 / alphas[i] + betas[i - 1] / alphas[i - 1]
    if m == 1:
        return 1.0
    off = np.array([np.sqrt(betas[i]) / alphas[i] for i in range(m - 1)])
    ev = scipy.linalg.eigvalsh_tridiagonal(diag, off)
    lo, hi = ev[0], ev[-1]
    if lo <= 0:
        raise NumericalError("Lanczos tridiagonal has non-positive eigenvalue %.3e" % lo)
    return float(hi / lo)


def pcg(apply_A, apply_M, b, tol=1e-6, max_iter=500):
    """Preconditioned CG from the zero initial vector.

    Stops once the l2-norm of the (unpreconditioned) residual has dropped
    below ``tol`` times the l2-norm of `b`.  Raises
    :class:`NumericalError` on a non-positive curvature direction, which
    signals an indefinite operator.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return PcgResult(x, 0, [0.0], True, 1.0)
    r = b.copy()
    z = apply_M(r)
    p = z.copy()
    rz = float(r @ z)
    if rz <= 0.0:
        raise NumericalError("preconditioner produced non-positive inner product")
    residuals = [nb]
    alphas, betas = [], []
    converged = False
    for _ in range(max_iter):
        q = apply_A(p)
        pq = float(p @ q)
        if pq <= 0.0:
            raise NumericalError("PCG hit non-positive curvature p^T F p = %.3e" % pq)
        alpha = rz / pq
        alphas.append(alpha)
        x += alpha * p
        r -= alpha * q
        rn = float(np.linalg.norm(r))
        residuals.append(rn)
        if rn <= tol * nb:
            converged = True
            break
        z = apply_M(r)
        rz_new = float(r @ z)
        if rz_new <= 0.0:
            raise NumericalError("preconditioner produced non-positive inner product")
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    kappa = lanczos_condition(alphas, betas)
    return PcgResult(x, len(alphas), residuals, converged, kappa, alphas, betas)
