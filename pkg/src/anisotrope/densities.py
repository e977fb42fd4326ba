"""Volume densities, codensities, jacobians and cojacobians.

A degree-k density is a positively 1-homogeneous nonnegative functional on
simple k-vectors, zero only on degenerate wedges.  Top-degree densities on a
fixed space are constant multiples of |det|, which is how the Busemann and
Holmes-Thompson constructions are realized: a single Monte Carlo ball volume
fixes the constant and its standard error rides along as metadata.

A codensity is the quotient of a complementary-degree density by a top
density; it lives on the dual space and feeds the cojacobian, which is the
correction factor of the coarea identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exterior import (SimpleKVector, VolumeForm, complete_to_basis,
                       iota_star_inverse, push_forward, wedge)
from .gauges import Gauge, sampled_dual_norm, sphere_sample
from .montecarlo import MCConfig, MCResult, mc_volume

__all__ = [
    "Density",
    "Codensity",
    "euclidean_density",
    "lebesgue_density",
    "busemann_density",
    "holmes_thompson_density",
    "minor_norm_density",
    "codensity",
    "codensity_via_hodge",
    "mu_star",
    "jacobian",
    "restricted_jacobian",
    "cojacobian",
    "cojacobian_basis_formula",
    "k_jacobian",
    "KJacobianResult",
    "unit_ball_volume",
    "norm_ball_box",
    "identity_checks",
    "verify_identities",
]

_RANK_RTOL = 1e-10


def unit_ball_volume(n):
    """Volume of the Euclidean unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


class Density:
    """A degree-k volume density on R^n.

    Parameters
    ----------
    degree, ambient_dim : int
    fn : callable
        Evaluator on a nondegenerate SimpleKVector; degenerate input is
        short-circuited to 0 before ``fn`` is reached.
    symmetric : bool
        Whether F(-xi) = F(xi).
    kind : str
        One of euclidean / busemann / holmes-thompson / wulff-integrand /
        scaled-lebesgue / codensity / custom.
    batch : callable, optional
        Vectorized evaluator on stacked spanning rows, signature
        ``batch(frames (M, k, n), signs (M,)) -> (M,)``; used by quadrature.
    mc : MCResult, optional
        Standard-error metadata when a Monte Carlo constant is baked in.
    """

    def __init__(self, degree, ambient_dim, fn, symmetric, kind="custom",
                 batch=None, mc=None):
        self.degree = int(degree)
        self.ambient_dim = int(ambient_dim)
        self.fn = fn
        self.symmetric = bool(symmetric)
        self.kind = kind
        self.batch = batch
        self.mc = mc
        if not 0 <= self.degree <= self.ambient_dim:
            raise ValueError("degree must lie between 0 and the ambient dimension")

    def __call__(self, xi):
        if xi.degree != self.degree or xi.ambient_dim != self.ambient_dim:
            raise ValueError(
                f"density of degree {self.degree} on R^{self.ambient_dim} "
                f"cannot eat a degree-{xi.degree} vector in R^{xi.ambient_dim}")
        if xi.degree and xi.is_zero():
            return 0.0
        return float(self.fn(xi))

    def __repr__(self):
        return (f"Density(kind={self.kind!r}, degree={self.degree}, "
                f"ambient={self.ambient_dim})")


def euclidean_density(k, n):
    """The mass of a simple k-vector: sqrt of the Gram determinant."""
    if not 1 <= k <= n:
        raise ValueError("need 1 <= k <= n")

    def fn(xi):
        g = xi.spanning @ xi.spanning.T
        return math.sqrt(max(float(np.linalg.det(g)), 0.0))

    def batch(frames, signs):
        gram = frames @ frames.transpose(0, 2, 1)
        return np.sqrt(np.clip(np.linalg.det(gram), 0.0, None))

    return Density(k, n, fn, True, kind="euclidean", batch=batch)


def _constant_top_density(constant, n, kind, mc=None):
    c = float(constant)

    def fn(xi):
        return c * abs(float(np.linalg.det(xi.spanning)))

    def batch(frames, signs):
        return c * np.abs(np.linalg.det(frames))

    d = Density(n, n, fn, True, kind=kind, batch=batch, mc=mc)
    d.constant = c
    return d


def lebesgue_density(n, scale=1.0):
    """scale * |det| on top-degree wedges."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    return _constant_top_density(scale, n, "scaled-lebesgue")


def norm_ball_box(norm, safety=1.05):
    """A box guaranteed (with a margin) to contain the norm's unit ball."""
    u = sphere_sample(norm.dim, 4096 if norm.dim <= 3 else 16384)
    alpha = float(np.min(norm(u)))
    if alpha <= 0:
        raise ValueError("norm vanishes on the sphere")
    r = safety / alpha
    return np.array([[-r, r]] * norm.dim)


def norm_ball_volume(norm, mc, key=0):
    box = norm_ball_box(norm)
    return mc_volume(lambda p: norm(p) <= 1.0, box, mc, key=key)


def busemann_density(norm, n, mc=None):
    """Top density normalizing the norm's unit ball to the Euclidean one.

    The value on v1 ^ ... ^ vn is eps_n over the volume of the unit ball in
    the coordinates that make the v's orthonormal, which works out to
    ``eps_n / vol(B) * |det|`` with vol(B) estimated once by rejection
    sampling; the estimate and its standard error are kept as metadata.
    """
    if norm.dim != n:
        raise ValueError("norm dimension mismatch")
    mc = mc or MCConfig()
    ball = norm_ball_volume(norm, mc, key=11)
    if ball.zero_hits:
        raise ValueError("ball volume estimate collapsed to zero")
    eps = unit_ball_volume(n)
    return _constant_top_density(eps / ball.estimate, n, "busemann", mc=ball)


def holmes_thompson_density(norm, n, mc=None, dual_samples=4096):
    """Top density proportional to the dual unit ball's volume.

    Dual ball membership is decided through the sampled dual norm
    ``sup f.v`` over a fixed fine sample of the norm's unit sphere.
    """
    if norm.dim != n:
        raise ValueError("norm dimension mismatch")
    mc = mc or MCConfig()
    dual = sampled_dual_norm(norm, samples=dual_samples)
    # The dual ball is polar to the primal one: |f| <= dual_norm_bound on it.
    u = sphere_sample(n, 4096 if n <= 3 else 16384)
    beta = float(np.min(dual(u)))
    r = 1.05 / beta
    box = np.array([[-r, r]] * n)
    dual_ball = mc_volume(lambda f: dual(f) <= 1.0, box, mc, key=12)
    if dual_ball.zero_hits:
        raise ValueError("dual ball volume estimate collapsed to zero")
    eps = unit_ball_volume(n)
    return _constant_top_density(dual_ball.estimate / eps, n,
                                 "holmes-thompson", mc=dual_ball)


def minor_norm_density(k, n, weights=None, p=2.0):
    """A symmetric density from a weighted p-norm of Grassmann coordinates.

    Handy as a supply of well-behaved 'custom' densities in any degree; with
    ``p=2`` and unit weights this is the Euclidean density again.
    """
    import itertools as it

    combos = list(it.combinations(range(n), k))
    if weights is None:
        w = np.ones(len(combos))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(combos),) or np.any(w <= 0):
            raise ValueError("need one positive weight per k-minor")

    def fn(xi):
        minors = np.array([np.linalg.det(xi.spanning[:, c]) for c in combos])
        return float(np.sum(w * np.abs(minors) ** p) ** (1.0 / p))

    def batch(frames, signs):
        minors = np.stack([np.linalg.det(frames[:, :, c]) for c in combos],
                          axis=1)
        return np.sum(w[None, :] * np.abs(minors) ** p, axis=1) ** (1.0 / p)

    return Density(k, n, fn, True, kind="custom", batch=batch)


# ---------------------------------------------------------------------------
# codensities


class Codensity(Density):
    """The degree-m density on the dual space built from F and a top density.

    Evaluated on a simple m-covector by completing it to a dual basis and
    forming F(w-part) / mu(full primal wedge); the value does not depend on
    the completion, which :meth:`value` lets tests verify directly.
    """

    def __init__(self, base, top, oriented=False):
        if top.degree != top.ambient_dim:
            raise ValueError("the quotient density must have top degree")
        if not top.symmetric:
            raise ValueError("the top density must be symmetric")
        N = top.ambient_dim
        n = 0 if base is None else base.degree
        if base is not None:
            if base.ambient_dim != N:
                raise ValueError("base and top densities live on different spaces")
            if not base.symmetric and not oriented:
                raise ValueError("asymmetric base density requires oriented mode")
        m = N - n
        if m < 1:
            raise ValueError("codensity degree would not be positive")
        self.base = base
        self.top = top
        self.oriented = bool(oriented)
        symmetric = base is None or base.symmetric
        super().__init__(m, N, self.value, symmetric, kind="codensity")

    def value(self, omega, completion=None):
        if omega.degree != self.degree or omega.ambient_dim != self.ambient_dim:
            raise ValueError("covector degree/dimension mismatch")
        rows = omega.spanning.copy()
        rows[0] *= omega.sign
        W, P = complete_to_basis(rows, oriented=self.oriented,
                                 completion=completion)
        denom = self.top(SimpleKVector(P.T))
        if self.base is None:
            return 1.0 / denom
        numer = self.base(SimpleKVector(P[:, self.degree:].T))
        return numer / denom


def codensity(base, top, oriented=False):
    """Quotient of a degree-n density by a top density (degree N - n on V*)."""
    return Codensity(base, top, oriented)


def mu_star(top):
    """Top-degree codensity: reciprocal of the density on the dual basis."""
    return Codensity(None, top)


def codensity_via_hodge(base, omega, oriented=False):
    """The same codensity through the volume-form contraction route.

    Composes the base density with the inverse of the contraction map; must
    agree with :func:`codensity` against |omega| on every input.
    """
    if omega.dim != base.ambient_dim:
        raise ValueError("volume form dimension mismatch")
    if not base.symmetric and not oriented:
        raise ValueError("asymmetric base density requires oriented mode")
    m = omega.dim - base.degree
    top = _constant_top_density(abs(omega.scale), omega.dim, "scaled-lebesgue")

    def fn(kcov):
        return base(iota_star_inverse(omega, kcov))

    d = Density(m, omega.dim, fn, base.symmetric, kind="codensity")
    d.base, d.top, d.oriented = base, top, oriented
    return d


# ---------------------------------------------------------------------------
# jacobians


def _rank_deficient(A):
    s = np.linalg.svd(A, compute_uv=False)
    return s[-1] <= _RANK_RTOL * s[0]


def _unit_kvector(F, rows):
    xi = SimpleKVector(rows)
    c = F(xi)
    if c > 0:
        return xi.scaled(1.0 / c)
    rng = np.random.default_rng(97531)
    for _ in range(8):
        q, _ = np.linalg.qr(rng.standard_normal((rows.shape[1], rows.shape[0])))
        probe = SimpleKVector(q.T)
        c = F(probe)
        if c > 0:
            return probe.scaled(1.0 / c)
    raise ValueError("density vanishes on every probe; cannot normalize")


def restricted_jacobian(A, basis_rows, F, G):
    """Jacobian of A restricted to span(basis rows) against F and G.

    The empty basis (null subspace) returns 1 by convention.
    """
    A = np.asarray(A, dtype=float)
    basis_rows = np.atleast_2d(np.asarray(basis_rows, dtype=float))
    if basis_rows.shape[0] == 0 or basis_rows.size == 0:
        return 1.0
    unit = _unit_kvector(F, basis_rows)
    return G(push_forward(A, unit))


def jacobian(A, F, G, oriented=False):
    """G evaluated on the pushforward of the F-unit top wedge of the domain.

    Returns 0 for a non-injective map or when the degree bookkeeping
    ``deg F = deg G = dim dom A`` fails (the off-dimension convention).
    The standard basis supplies the positively oriented normalization, so the
    oriented and unoriented paths coincide.
    """
    A = np.asarray(A, dtype=float)
    mo, n = A.shape
    if F.degree != n or G.degree != n:
        return 0.0
    if F.ambient_dim != n:
        raise ValueError("domain density has wrong ambient dimension")
    if G.ambient_dim != mo:
        raise ValueError("range density has wrong ambient dimension")
    if n > mo or _rank_deficient(A):
        return 0.0
    return restricted_jacobian(A, np.eye(n), F, G)


def cojacobian(A, nu, F, mu, oriented=False):
    """The coarea correction factor of a surjective map.

    ``A`` maps R^N onto R^mo; ``nu`` is a top density on the codomain, ``mu``
    a top density on the domain and ``F`` a density of degree N - mo there.
    Returns 0 when A is not surjective or when the degree convention
    ``deg nu = deg mu - deg F = dim codom`` fails.
    """
    A = np.asarray(A, dtype=float)
    mo, N = A.shape
    base_degree = 0 if F is None else F.degree
    if nu.degree != mo or nu.degree != mu.degree - base_degree:
        return 0.0
    if nu.ambient_dim != mo or mu.ambient_dim != N:
        raise ValueError("densities do not match the map's spaces")
    if mo > N or _rank_deficient(A):
        return 0.0
    c = nu(SimpleKVector(np.eye(mo)))
    if c <= 0:
        raise ValueError("codomain density vanishes on the standard wedge")
    rows = A.copy()
    rows[0] *= c
    fstar = Codensity(F, mu, oriented=oriented)
    return fstar(SimpleKVector(rows))


def cojacobian_basis_formula(A, nu, F, mu):
    """Cross-check route: explicit kernel/complement basis expression.

    For surjective A with kernel basis w's and lifts v's of a codomain basis,
    the cojacobian equals F(w-wedge) * nu(Av-wedge) / mu(full wedge).
    """
    from .exterior import null_space

    A = np.asarray(A, dtype=float)
    mo, N = A.shape
    if _rank_deficient(A) or mo > N:
        return 0.0
    W = null_space(A)                       # (N, N - mo)
    V = np.linalg.pinv(A)                   # columns map to the standard basis
    w_rows = W.T
    v_rows = V.T
    numer_F = 1.0 if F is None else F(SimpleKVector(w_rows))
    numer_nu = nu(SimpleKVector(v_rows @ A.T))
    denom = mu(SimpleKVector(np.vstack([v_rows, w_rows])))
    return numer_F * numer_nu / denom


# ---------------------------------------------------------------------------
# K-jacobian


@dataclass
class KJacobianResult:
    estimate: float
    stderr: float
    ball: MCResult | None
    body: MCResult | None


def k_jacobian(A, domain_norm, range_norm, mc=None, max_expand=8):
    """eps_n over the Hausdorff volume of the preimage of the range ball.

    The Hausdorff volume with respect to the domain norm is the Busemann
    measure, so the estimate reduces to vol(domain ball) / vol(preimage
    body), both by rejection sampling.  Non-injective maps give 0 (the body
    is an infinite cylinder).
    """
    A = np.asarray(A, dtype=float)
    mo, n = A.shape
    if domain_norm.dim != n or range_norm.dim != mo:
        raise ValueError("norm dimensions do not match the map")
    mc = mc or MCConfig()
    s = np.linalg.svd(A, compute_uv=False)
    if n > mo or s[-1] <= _RANK_RTOL * s[0]:
        return KJacobianResult(0.0, 0.0, None, None)
    ball = norm_ball_volume(domain_norm, mc, key=21)

    u = sphere_sample(mo, 4096 if mo <= 3 else 16384)
    alpha = 0.98 * float(np.min(range_norm(u)))
    r = 1.05 / (alpha * s[-1])
    member = lambda p: range_norm(p @ A.T) <= 1.0
    for _ in range(max_expand):
        box = np.array([[-r, r]] * n)
        probe = sphere_sample(n, 512) * r
        if not np.any(member(probe)):
            break
        r *= 1.5
    else:
        raise ValueError("preimage body does not fit any candidate box")
    body = mc_volume(member, box, mc, key=22)
    if body.zero_hits:
        raise ValueError("preimage body estimate collapsed to zero")
    est = ball.estimate / body.estimate
    rel = math.sqrt(ball.rel_stderr ** 2 + body.rel_stderr ** 2)
    return KJacobianResult(est, est * rel, ball, body)


# ---------------------------------------------------------------------------
# the five composition identities


def _image_basis(A):
    q, r = np.linalg.qr(np.asarray(A, dtype=float))
    diag = np.abs(np.diag(r))
    keep = diag > _RANK_RTOL * (diag.max() if diag.size else 1.0)
    return q[:, keep].T


def _rowspace_basis(A):
    return _image_basis(np.asarray(A, dtype=float).T)


def identity_checks(A, T, dens):
    """Evaluate both sides of the applicable composition identities.

    ``dens`` maps role names to densities: mu/nu on V/W (top), G_mid/H for
    the chain rule, lam on Z, F/G of complementary degree for the kernel
    split.  Identities whose dimensional hypotheses fail are skipped and
    reported as such rather than raised.

    Returns a list of (name, lhs, rhs, applicable) tuples.
    """
    from .exterior import null_space

    A = np.asarray(A, dtype=float)
    T = np.asarray(T, dtype=float)
    out = []

    def get(*names):
        return [dens.get(x) for x in names]

    # (a) square change of density: jacobian equals the dual-side cojacobian
    mu, nu = get("mu", "nu")
    if mu is not None and nu is not None and A.shape[0] == A.shape[1] == mu.degree:
        lhs = jacobian(A, mu, nu)
        rhs = jacobian(A.T, mu_star(nu), mu_star(mu))
        out.append(("jacobian-cojacobian-duality", lhs, rhs, True))

    # (b) chain rule through an intermediate density on the image
    mu, G, H = get("mu", "G_mid", "H")
    if mu is not None and G is not None and H is not None \
            and mu.degree == A.shape[1] <= A.shape[0] and T.shape[1] == A.shape[0]:
        lhs = jacobian(T @ A, mu, H)
        if _rank_deficient(A):
            rhs = 0.0
        else:
            rhs = jacobian(A, mu, G) * restricted_jacobian(T, _image_basis(A), G, H)
        out.append(("jacobian-chain-rule", lhs, rhs, True))

    # (c) cojacobian chain rule through the adjoint restricted to the corange
    F, mu, G, nu, lam = get("F", "mu", "G_mid", "nu", "lam")
    if all(x is not None for x in (F, mu, G, nu, lam)) \
            and T.shape[1] == A.shape[0]:
        lhs = cojacobian(T @ A, lam, F, mu)
        ctn = cojacobian(T, lam, G, nu)
        if ctn == 0.0:
            rhs = 0.0
        else:
            rows = _rowspace_basis(T)
            rhs = ctn * restricted_jacobian(
                A.T, rows, Codensity(G, nu), Codensity(F, mu))
        out.append(("cojacobian-chain-rule", lhs, rhs, True))

    # (d) cojacobian of a composition with a square second factor
    F, mu, nu, lam = get("F", "mu", "nu", "lam")
    if all(x is not None for x in (F, mu, nu, lam)) \
            and T.shape[0] == T.shape[1] == nu.degree and T.shape[1] == A.shape[0]:
        lhs = cojacobian(T @ A, lam, F, mu)
        rhs = jacobian(T, nu, lam) * cojacobian(A, nu, F, mu)
        out.append(("cojacobian-factorization", lhs, rhs, True))

    # (e) kernel/corange split of an isomorphism against a surjection
    F, G, mu, nu, lam = get("F", "G_comp", "mu", "nu", "lam")
    if all(x is not None for x in (F, G, mu, nu, lam)) \
            and A.shape[0] == A.shape[1] and T.shape[1] == A.shape[0] \
            and not _rank_deficient(A) and not _rank_deficient(T):
        ker = null_space(T @ A).T
        lhs = restricted_jacobian(A, ker, F, G) * cojacobian(T @ A, lam, F, mu)
        rhs = cojacobian(T, lam, G, nu) * jacobian(A, mu, nu)
        out.append(("kernel-restriction-identity", lhs, rhs, True))

    return out


def verify_identities(A, T, dens, tolerance=1e-9):
    """Residual report for :func:`identity_checks` (relative residuals)."""
    from .report import Check, relative_residual

    checks = []
    for name, lhs, rhs, _ in identity_checks(A, T, dens):
        res = relative_residual(lhs, rhs)
        checks.append(Check(name=name, tag=name, lhs=lhs, rhs=rhs,
                            residual=res, tolerance=tolerance,
                            passed=res <= tolerance))
    return checks
