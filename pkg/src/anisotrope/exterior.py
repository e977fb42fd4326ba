"""Exterior-algebra kernel on simple k-vectors.

Everything downstream evaluates volume densities on *simple* wedges
v1 ^ ... ^ vk, so a k-vector is stored as its spanning vectors plus a sign,
never as an expanded coordinate array in Lambda^k.  Grassmann (Pluecker)
coordinates -- the k x k minors of the spanning matrix -- are computed on
demand for equality tests and pushforwards.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "SimpleKVector",
    "VolumeForm",
    "wedge",
    "grassmann_coords",
    "push_forward",
    "iota_star",
    "iota_star_inverse",
    "complete_to_basis",
    "kvectors_close",
    "null_space",
    "cofactor_vectors",
]

# A k-vector counts as zero when its largest minor is below this times the
# product of the spanning-vector norms (scale invariant degeneracy test).
DEGENERACY_RTOL = 1e-10

# Relative tolerance for Grassmann-coordinate equality of two k-vectors.
GRASSMANN_RTOL = 1e-12

_RANK_RTOL = 1e-10


def null_space(M, rtol=1e-12):
    """Orthonormal basis (as columns) of the right null space of ``M``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    _, s, vt = np.linalg.svd(M)
    tol = rtol * s[0] if s.size else 0.0
    rank = int(np.sum(s > tol))
    return vt[rank:].T


class SimpleKVector:
    """A simple k-vector ``sign * (v1 ^ ... ^ vk)``.

    Parameters
    ----------
    spanning : array_like, shape (k, n)
        Spanning vectors as rows.  ``k = 0`` is allowed (the empty wedge,
        representing ``sign * 1`` in degree zero) but requires ``ambient_dim``.
    sign : {+1, -1}
        Orientation sign.  Scale is carried by the spanning vectors.
    """

    __slots__ = ("spanning", "sign")

    def __init__(self, spanning, sign=1, ambient_dim=None):
        if sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        arr = np.asarray(spanning, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.size == 0:
            if ambient_dim is None:
                raise ValueError("degree-0 k-vector needs ambient_dim")
            arr = arr.reshape(0, int(ambient_dim))
        if arr.ndim != 2:
            raise ValueError("spanning must be a (k, n) array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("spanning vectors must be finite")
        k, n = arr.shape
        if k > n:
            raise ValueError(f"degree {k} exceeds ambient dimension {n}")
        self.spanning = arr
        self.sign = int(sign)

    @property
    def degree(self):
        return self.spanning.shape[0]

    @property
    def ambient_dim(self):
        return self.spanning.shape[1]

    def grassmann_coords(self):
        """All k x k minors of the spanning matrix, times the sign.

        Returns a dict mapping sorted index tuples (0-based columns) to the
        corresponding minor.
        """
        k, n = self.spanning.shape
        if k == 0:
            return {(): float(self.sign)}
        coords = {}
        for cols in itertools.combinations(range(n), k):
            coords[cols] = self.sign * float(np.linalg.det(self.spanning[:, cols]))
        return coords

    def _scale_bound(self):
        k = self.degree
        if k == 0:
            return 1.0
        norms = np.linalg.norm(self.spanning, axis=1)
        return float(np.prod(norms))

    def is_zero(self, rtol=DEGENERACY_RTOL):
        """True when the spanning vectors are (numerically) dependent."""
        if self.degree == 0:
            return False
        bound = self._scale_bound()
        if bound == 0.0:
            return True
        largest = max(abs(v) for v in self.grassmann_coords().values())
        return largest <= rtol * bound

    def scaled(self, a):
        """The k-vector ``a * self`` (fold |a| into the first spanning row)."""
        a = float(a)
        if self.degree == 0:
            raise ValueError("cannot scale a degree-0 k-vector")
        rows = self.spanning.copy()
        sign = self.sign
        if a < 0:
            sign = -sign
            a = -a
        rows[0] *= a
        return SimpleKVector(rows, sign)

    def __neg__(self):
        return SimpleKVector(self.spanning, -self.sign)

    def __repr__(self):
        return (f"SimpleKVector(degree={self.degree}, "
                f"ambient={self.ambient_dim}, sign={self.sign:+d})")


def wedge(vectors, ambient_dim=None):
    """Wedge a list of vectors into a SimpleKVector with sign +1.

    Dependent input is allowed; the result then represents zero and is
    flagged by :meth:`SimpleKVector.is_zero`.
    """
    rows = [np.asarray(v, dtype=float) for v in vectors]
    if rows:
        n = rows[0].shape[-1] if rows[0].ndim else 1
        for v in rows:
            if v.ndim != 1 or v.shape[0] != rows[0].shape[0]:
                raise ValueError("all vectors must share the ambient dimension")
        return SimpleKVector(np.vstack(rows), 1)
    return SimpleKVector(np.empty((0, 0)), 1, ambient_dim=ambient_dim)


def grassmann_coords(xi):
    """Grassmann coordinates of a simple k-vector (see the method)."""
    return xi.grassmann_coords()


def kvectors_close(a, b, rtol=GRASSMANN_RTOL):
    """Equality of simple k-vectors through their Grassmann coordinates."""
    if a.degree != b.degree or a.ambient_dim != b.ambient_dim:
        return False
    ca, cb = a.grassmann_coords(), b.grassmann_coords()
    scale = max(max(abs(v) for v in ca.values()), max(abs(v) for v in cb.values()))
    if scale == 0.0:
        return True
    return all(abs(ca[k] - cb[k]) <= rtol * scale for k in ca)


def push_forward(A, xi):
    """The simple k-vector ``sign * (A v1 ^ ... ^ A vk)``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != xi.ambient_dim:
        raise ValueError("linear map does not match the ambient dimension")
    if xi.degree == 0:
        return SimpleKVector(np.empty((0, A.shape[0])), xi.sign,
                             ambient_dim=A.shape[0])
    return SimpleKVector(xi.spanning @ A.T, xi.sign)


class VolumeForm:
    """A top-degree form on R^dim: ``Omega(e1 ^ ... ^ en) = scale``."""

    __slots__ = ("scale", "dim")

    def __init__(self, scale, dim):
        scale = float(scale)
        if scale == 0.0 or not np.isfinite(scale):
            raise ValueError("scale must be nonzero and finite")
        self.scale = scale
        self.dim = int(dim)

    def __call__(self, xi):
        if xi.degree != self.dim or xi.ambient_dim != self.dim:
            raise ValueError("volume form needs a top-degree k-vector")
        return self.scale * xi.sign * float(np.linalg.det(xi.spanning))

    def __repr__(self):
        return f"VolumeForm(scale={self.scale}, dim={self.dim})"


def standard_volume_form(dim):
    return VolumeForm(1.0, dim)


def _check_nonzero(theta, name):
    if theta.is_zero():
        raise ValueError(f"{name} is degenerate (represents zero)")


def iota_star(omega, theta):
    """Contract a volume form with a simple k-vector.

    For ``theta`` of degree n in R^(n+m) the result is the simple m-covector
    ``eta -> Omega(eta ^ theta)``, returned as a SimpleKVector whose spanning
    rows are covector coordinates with respect to the standard dual basis.
    """
    n = theta.degree
    N = omega.dim
    m = N - n
    if theta.ambient_dim != N:
        raise ValueError("theta does not live in the space of the form")
    if m < 1:
        raise ValueError("theta must have degree below the top")
    _check_nonzero(theta, "theta")
    comp = null_space(theta.spanning)          # (N, m) orthonormal columns
    if comp.shape[1] != m:
        raise ValueError("theta is degenerate (rank deficient)")
    B = np.hstack([comp, theta.spanning.T])    # columns: v_1..v_m, w_1..w_n
    c = omega.scale * float(np.linalg.det(B)) * theta.sign
    dual_rows = np.linalg.inv(B)[:m, :]        # covectors dual to the v's
    return SimpleKVector(dual_rows, 1).scaled(c)


def iota_star_inverse(omega, kcov):
    """Invert :func:`iota_star` on a simple m-covector.

    Returns the simple (dim - m)-vector ``theta`` with
    ``iota_star(omega, theta) == kcov``.
    """
    m = kcov.degree
    N = omega.dim
    n = N - m
    if kcov.ambient_dim != N:
        raise ValueError("covector does not match the form's dimension")
    if n < 1:
        raise ValueError("covector degree must be below the top")
    _check_nonzero(kcov, "covector")
    F = kcov.spanning                           # (m, N)
    W = null_space(F)                           # (N, n): kernel of the covectors
    if W.shape[1] != n:
        raise ValueError("covectors are dependent")
    V = np.linalg.pinv(F)                       # columns v_j with f_i(v_j) = delta_ij
    B = np.hstack([V, W])
    d = omega.scale * float(np.linalg.det(B))
    return SimpleKVector(W.T, 1).scaled(kcov.sign / d)


def complete_to_basis(covectors, oriented=False, completion=None):
    """Complete independent covectors to a basis of the dual space.

    Parameters
    ----------
    covectors : array_like, shape (m, N)
        Independent covectors (rows).
    oriented : bool
        When set, the full primal dual basis ``v_1..v_m, w_1..w_n`` is made
        positively oriented by swapping the last two completed covectors
        (or negating the last one when only one exists).
    completion : array_like, shape (N - m, N), optional
        Use these covectors instead of the orthogonal-complement default;
        they must extend the input to a basis.

    Returns
    -------
    (W, P) : W the completed covectors as rows, P the primal dual basis as
        columns ordered ``v_1..v_m, w_1..w_n`` (pairings form the identity).
    """
    F = np.atleast_2d(np.asarray(covectors, dtype=float))
    m, N = F.shape
    s = np.linalg.svd(F, compute_uv=False)
    if m > N or s[-1] <= _RANK_RTOL * s[0]:
        raise ValueError("covectors are dependent")
    if completion is None:
        K = null_space(F).T
    else:
        K = np.atleast_2d(np.asarray(completion, dtype=float))
        if K.shape != (N - m, N):
            raise ValueError("completion has the wrong shape")
    n = K.shape[0]
    M = np.vstack([F, K]) if n else F
    det = float(np.linalg.det(M))
    if abs(det) <= 1e-13 * np.prod(np.linalg.norm(M, axis=1)):
        raise ValueError("completion does not form a basis")
    if oriented and det < 0 and n > 0:
        K = K.copy()
        if n >= 2:
            K[[-2, -1]] = K[[-1, -2]]
        else:
            K[-1] = -K[-1]
        M = np.vstack([F, K])
    P = np.linalg.inv(M)
    return K, P


def cofactor_vectors(frames):
    """Cofactor covectors of (n+1) x n frames, batched.

    ``frames`` has shape (M, n, n+1) with rows the spanning vectors; the
    result c satisfies ``Omega_std(eta ^ v1 ^ ... ^ vn) = eta . c`` for each
    frame.  Fast paths for ambient dimension 2 and 3.
    """
    frames = np.asarray(frames, dtype=float)
    M, k, N = frames.shape
    if N != k + 1:
        raise ValueError("frames must be one short of top degree")
    if N == 2:
        v = frames[:, 0, :]
        return np.stack([v[:, 1], -v[:, 0]], axis=1)
    if N == 3:
        return np.cross(frames[:, 0, :], frames[:, 1, :])
    out = np.empty((M, N))
    for i in range(N):
        sub = np.delete(frames, i, axis=2)
        out[:, i] = (-1.0) ** i * np.linalg.det(sub)
    # det expansion along the first column gives (-1)^(i+1+1) = (-1)^i signs
    return out
