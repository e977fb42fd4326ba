"""Gauges (positively 1-homogeneous convex functionals) and polar duality.

A gauge plays three roles here: as a norm (when symmetric), as the Minkowski
functional of a convex body, and as a support function.  Polar duality
``g°(f) = sup { f.v : g(v) <= 1 }`` is computed over a fixed deterministic
sample of the unit level set plus local refinement, so repeated runs agree
bit for bit; exact shortcuts kick in for gauges of the form |T v| and for
plain p-norms.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Gauge",
    "euclidean_gauge",
    "pnorm_gauge",
    "ellipse_gauge",
    "shifted_ball_support",
    "trig_support",
    "tabulated_support",
    "polar_gauge",
    "dual_functional",
    "legendre",
    "sphere_sample",
    "sampled_dual_norm",
]

DEFAULT_SAMPLES = 4096
DEFAULT_REFINE = 20
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class Gauge:
    """A positively 1-homogeneous, convex, positive-away-from-0 functional.

    Parameters
    ----------
    fn : callable
        Vectorized evaluator on arrays of shape (..., dim).
    dim : int
    symmetric : bool
        Whether g(-v) = g(v).
    grad : callable, optional
        Vectorized gradient, shape-preserving on (..., dim).
    linear_map : ndarray, optional
        When given, ``g(v) = |linear_map @ v|_2`` exactly; enables exact
        polars and distance fast paths.
    minkowski_p : float, optional
        When given, ``g`` is the plain p-norm.
    """

    def __init__(self, fn, dim, symmetric, grad=None, name="custom",
                 linear_map=None, minkowski_p=None):
        self.fn = fn
        self.dim = int(dim)
        self.symmetric = bool(symmetric)
        self.grad = grad
        self.name = name
        self.linear_map = None if linear_map is None else np.asarray(linear_map, float)
        self.minkowski_p = minkowski_p

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return self.fn(v)

    def gradient(self, v, step=1e-5):
        """Analytic gradient when available, else central differences."""
        v = np.asarray(v, dtype=float)
        if self.grad is not None:
            return self.grad(v)
        return _fd_gradient(self.fn, v, step)

    def gradient_consistent(self, v, tol=1e-6, step=1e-5):
        """Step-halving agreement test; False flags a non-smooth point."""
        g1 = _fd_gradient(self.fn, np.asarray(v, float), step)
        g2 = _fd_gradient(self.fn, np.asarray(v, float), step / 2.0)
        scale = max(float(np.max(np.abs(g1))), 1e-30)
        return float(np.max(np.abs(g1 - g2))) <= tol * scale

    def __repr__(self):
        return f"Gauge({self.name}, dim={self.dim})"


def _fd_gradient(fn, v, step):
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 1
    pts = np.atleast_2d(v)
    h = step * np.maximum(1.0, np.linalg.norm(pts, axis=-1, keepdims=True))
    out = np.empty_like(pts)
    for i in range(pts.shape[1]):
        e = np.zeros(pts.shape[1])
        e[i] = 1.0
        out[:, i] = (fn(pts + h * e) - fn(pts - h * e)) / (2.0 * h[:, 0])
    return out[0] if squeeze else out


def euclidean_gauge(dim):
    fn = lambda v: np.linalg.norm(v, axis=-1)
    grad = lambda v: v / np.linalg.norm(v, axis=-1, keepdims=True)
    return Gauge(fn, dim, True, grad=grad, name="euclidean",
                 linear_map=np.eye(dim), minkowski_p=2.0)


def pnorm_gauge(p, dim):
    p = float(p)
    if p < 1:
        raise ValueError("p must be >= 1")

    def fn(v):
        return np.sum(np.abs(v) ** p, axis=-1) ** (1.0 / p)

    def grad(v):
        g = fn(v)[..., None]
        return np.sign(v) * np.abs(v) ** (p - 1.0) / g ** (p - 1.0)

    return Gauge(fn, dim, True, grad=grad, name=f"pnorm{p:g}", minkowski_p=p)


def ellipse_gauge(axes):
    """Gauge of the ellipsoid with the given semi-axes: sqrt(sum v_i^2/a_i^2)."""
    axes = np.asarray(axes, dtype=float)
    T = np.diag(1.0 / axes)
    fn = lambda v: np.linalg.norm(v / axes, axis=-1)
    grad = lambda v: (v / axes ** 2) / np.linalg.norm(v / axes, axis=-1, keepdims=True)
    return Gauge(fn, axes.size, True, grad=grad,
                 name=f"ellipse{tuple(axes)}", linear_map=T)


def shifted_ball_support(center, radius=1.0):
    """Support function of a ball not centered at the origin (asymmetric)."""
    center = np.asarray(center, dtype=float)
    r = float(radius)
    fn = lambda v: v @ center + r * np.linalg.norm(v, axis=-1)
    grad = lambda v: center + r * v / np.linalg.norm(v, axis=-1, keepdims=True)
    return Gauge(fn, center.size, False, grad=grad, name="shifted-ball")


class trig_support(Gauge):
    """2-D support function h(r u(t)) = r * (c0 + sum a_k cos kt + b_k sin kt).

    Carries exact first and second angular derivatives; convex iff
    H + H'' > 0 on the circle.
    """

    def __init__(self, c0, a=(), b=()):
        self.c0 = float(c0)
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

        def fn(v):
            v = np.asarray(v, dtype=float)
            r = np.linalg.norm(v, axis=-1)
            t = np.arctan2(v[..., 1], v[..., 0])
            return r * self.angular(t)

        def grad(v):
            v = np.asarray(v, dtype=float)
            t = np.arctan2(v[..., 1], v[..., 0])
            H, dH = self.angular(t), self.angular_d1(t)
            u = np.stack([np.cos(t), np.sin(t)], axis=-1)
            up = np.stack([-np.sin(t), np.cos(t)], axis=-1)
            return H[..., None] * u + dH[..., None] * up

        # h(-u) = h(u) exactly when all odd harmonics vanish
        odd = np.any(self.a[0::2]) or np.any(self.b[0::2])
        super().__init__(fn, 2, not bool(odd), grad=grad, name="trig-support")

    def angular(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, self.c0)
        for k, ak in enumerate(self.a, start=1):
            out = out + ak * np.cos(k * t)
        for k, bk in enumerate(self.b, start=1):
            out = out + bk * np.sin(k * t)
        return out

    def angular_d1(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for k, ak in enumerate(self.a, start=1):
            out = out - k * ak * np.sin(k * t)
        for k, bk in enumerate(self.b, start=1):
            out = out + k * bk * np.cos(k * t)
        return out

    def angular_d2(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for k, ak in enumerate(self.a, start=1):
            out = out - k * k * ak * np.cos(k * t)
        for k, bk in enumerate(self.b, start=1):
            out = out - k * k * bk * np.sin(k * t)
        return out

    def min_curvature_radius(self, grid=2048):
        t = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
        return float(np.min(self.angular(t) + self.angular_d2(t)))


def tabulated_support(values, symmetric=None):
    """2-D support function from samples on a uniform angle grid.

    ``values[j] = h(cos, sin of 2 pi j / len)``; interpolated with a periodic
    cubic spline.  The grid must have at least 256 entries.
    """
    from scipy.interpolate import CubicSpline

    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 256:
        raise ValueError("need at least 256 tabulated support values")
    if np.any(values <= 0):
        raise ValueError("support values must be positive")
    n = values.size
    t = np.linspace(0.0, 2.0 * np.pi, n + 1)
    spline = CubicSpline(t, np.append(values, values[0]), bc_type="periodic")
    if symmetric is None:
        half = n // 2
        symmetric = n % 2 == 0 and np.allclose(values, np.roll(values, half),
                                               rtol=1e-9, atol=1e-12)

    def fn(v):
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v, axis=-1)
        ang = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2.0 * np.pi)
        return r * spline(ang)

    def grad(v):
        v = np.asarray(v, dtype=float)
        ang = np.mod(np.arctan2(v[..., 1], v[..., 0]), 2.0 * np.pi)
        H, dH = spline(ang), spline(ang, 1)
        u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        up = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
        return H[..., None] * u + dH[..., None] * up

    g = Gauge(fn, 2, bool(symmetric), grad=grad, name="tabulated-support")
    g.spline = spline
    return g


# ---------------------------------------------------------------------------
# deterministic unit-sphere samples


def sphere_sample(dim, count=DEFAULT_SAMPLES):
    """A fixed, deterministic sample of the Euclidean unit sphere."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        t = (np.arange(count) + 0.5) * (2.0 * np.pi / count)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        # Fibonacci lattice
        i = np.arange(count) + 0.5
        phi = np.pi * (1.0 + np.sqrt(5.0)) * i
        z = 1.0 - 2.0 * i / count
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(987654321, dim)))
    pts = rng.standard_normal((count, dim))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _tangent_frame(units):
    """Two orthonormal tangent directions at each unit vector (dim >= 3)."""
    d = units.shape[1]
    ref = np.zeros_like(units)
    smallest = np.argmin(np.abs(units), axis=1)
    ref[np.arange(units.shape[0]), smallest] = 1.0
    t1 = ref - (np.sum(ref * units, axis=1, keepdims=True)) * units
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    if d == 3:
        t2 = np.cross(units, t1)
    else:
        rng = np.random.default_rng(24680)
        aux = rng.standard_normal(d)
        t2 = aux - (units @ aux)[:, None] * units - (np.sum(t1 * aux[None, :] , axis=1,
                                                            keepdims=True)) * t1
        t2 /= np.linalg.norm(t2, axis=1, keepdims=True)
    return t1, t2


def _refine_angles(score, theta, half_width, iters=DEFAULT_REFINE):
    """Vectorized golden-section maximization of score(theta) per entry."""
    a = theta - half_width
    b = theta + half_width
    for _ in range(iters):
        x1 = b - _GOLDEN * (b - a)
        x2 = a + _GOLDEN * (b - a)
        keep_left = score(x1) >= score(x2)
        b = np.where(keep_left, x2, b)
        a = np.where(keep_left, a, x1)
    mid = 0.5 * (a + b)
    return mid, score(mid)


def _refine_directions(score_units, units, step, iters=DEFAULT_REFINE):
    """Local hill climb on the sphere for dim >= 3 (deterministic)."""
    best = units.copy()
    val = score_units(best)
    t1, t2 = _tangent_frame(best)
    s = step
    for it in range(iters):
        t = t1 if it % 2 == 0 else t2
        for sgn in (1.0, -1.0):
            cand = best + sgn * s * t
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            v = score_units(cand)
            better = v > val
            best[better] = cand[better]
            val = np.where(better, v, val)
        t1, t2 = _tangent_frame(best)
        s *= 0.7
    return best, val


# ---------------------------------------------------------------------------
# polar duality


def _check_subadditive(gauge, tol=1e-7, trials=256):
    rng = np.random.default_rng(13579)
    x = rng.standard_normal((trials, gauge.dim))
    y = rng.standard_normal((trials, gauge.dim))
    lhs = gauge(x + y)
    rhs = gauge(x) + gauge(y)
    scale = np.maximum(rhs, 1e-30)
    if np.any((lhs - rhs) / scale > tol):
        raise ValueError("gauge is not convex (sampled subadditivity fails)")


def _check_positive(gauge, tol=1e-12):
    u = sphere_sample(gauge.dim, 512 if gauge.dim > 2 else 1024)
    vals = gauge(u)
    if np.any(~np.isfinite(vals)) or np.any(vals <= tol):
        raise ValueError("gauge must be positive away from the origin")


class SampledPolarGauge(Gauge):
    """Polar dual computed as a max over a fixed sample of the unit level set.

    The sample is refined per query by golden-section search on the angle in
    2-D or by a deterministic tangent-plane hill climb in higher dimension.
    """

    def __init__(self, base, samples=DEFAULT_SAMPLES, refine=DEFAULT_REFINE):
        self.base = base
        self.refine = refine
        units = sphere_sample(base.dim, samples)
        self.level_points = units / np.asarray(base(units))[:, None]
        if base.dim == 2:
            self._angles = (np.arange(samples) + 0.5) * (2.0 * np.pi / samples)
            self._half_width = 2.0 * np.pi / samples
        else:
            self._step = 2.0 * np.sqrt(np.pi / samples)

        def fn(v):
            return self._evaluate(np.asarray(v, dtype=float))

        super().__init__(fn, base.dim, base.symmetric,
                         name=f"polar({base.name})")

    def _level_point(self, theta):
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return u / np.asarray(self.base(u))[..., None]

    def _evaluate(self, v):
        squeeze = v.ndim == 1
        pts = np.atleast_2d(v)
        out = np.empty(pts.shape[0])
        for start in range(0, pts.shape[0], 8192):
            chunk = pts[start:start + 8192]
            scores = chunk @ self.level_points.T
            idx = np.argmax(scores, axis=1)
            best = scores[np.arange(chunk.shape[0]), idx]
            if self.refine and self.base.dim == 2:
                theta0 = self._angles[idx]

                def score(theta, c=chunk):
                    p = self._level_point(theta)
                    return np.sum(p * c, axis=-1)

                _, best = _refine_angles(score, theta0, self._half_width,
                                         self.refine)
            elif self.refine and self.base.dim >= 3:
                units0 = sphere_sample(self.base.dim,
                                       self.level_points.shape[0])[idx]

                def score_units(u, c=chunk):
                    p = u / np.asarray(self.base(u))[:, None]
                    return np.sum(p * c, axis=-1)

                _, best = _refine_directions(score_units, units0, self._step,
                                             self.refine)
            out[start:start + 8192] = best
        return out[0] if squeeze else out

    def support_argmax(self, v):
        """The level-set point realizing the sup for a single covector v."""
        v = np.asarray(v, dtype=float)
        scores = self.level_points @ v
        idx = int(np.argmax(scores))
        if self.base.dim == 2:
            def score(theta):
                return np.sum(self._level_point(theta) * v, axis=-1)

            theta, val = _refine_angles(score, np.array([self._angles[idx]]),
                                        self._half_width, self.refine)
            return self._level_point(theta)[0], float(val[0]), scores
        units0 = sphere_sample(self.base.dim, self.level_points.shape[0])[idx:idx + 1]

        def score_units(u):
            p = u / np.asarray(self.base(u))[:, None]
            return p @ v

        u, val = _refine_directions(score_units, units0, self._step, self.refine)
        return u[0] / float(self.base(u[0])), float(val[0]), scores


def polar_gauge(gauge, samples=DEFAULT_SAMPLES, refine=DEFAULT_REFINE,
                exact=True, check=True):
    """The polar dual gauge ``g°(f) = sup { f.v : g(v) <= 1 }``.

    Exact closed forms are used for |T v| gauges and p-norms unless
    ``exact=False`` forces the sampled construction.
    """
    if check:
        _check_positive(gauge)
        _check_subadditive(gauge)
    if exact and gauge.linear_map is not None:
        Tinv = np.linalg.inv(gauge.linear_map)
        dual = Gauge(lambda f: np.linalg.norm(f @ Tinv, axis=-1), gauge.dim,
                     gauge.symmetric, name=f"polar({gauge.name})",
                     linear_map=Tinv.T)
        dual.grad = lambda f: (f @ Tinv @ Tinv.T) / dual.fn(f)[..., None]
        return dual
    if exact and gauge.minkowski_p is not None:
        p = gauge.minkowski_p
        q = np.inf if p == 1.0 else p / (p - 1.0)
        if q == np.inf:
            fn = lambda f: np.max(np.abs(f), axis=-1)
            return Gauge(fn, gauge.dim, gauge.symmetric,
                         name=f"polar({gauge.name})")
        return pnorm_gauge(q, gauge.dim)
    return SampledPolarGauge(gauge, samples, refine)


def dual_functional(gauge, samples=DEFAULT_SAMPLES, refine=DEFAULT_REFINE,
                    exact=False):
    """Polar duality in either direction (gauge of vectors <-> of covectors)."""
    return polar_gauge(gauge, samples=samples, refine=refine, exact=exact)


def legendre(f, gauge, samples=DEFAULT_SAMPLES, refine=DEFAULT_REFINE,
             uniqueness_rtol=1e-4):
    """The vector v_f with g(v_f) = g°(f) and f(v_f) = g°(f)^2-normalized sup.

    Maximizes f over the unit level set of ``gauge`` and rescales; requires a
    strictly convex gauge (a far-apart near-maximal pair raises ValueError).
    """
    f = np.asarray(f, dtype=float)
    if not np.any(f):
        raise ValueError("covector must be nonzero")
    sampled = SampledPolarGauge(gauge, samples, refine)
    w, val, scores = sampled.support_argmax(f)
    near = scores >= (1.0 - uniqueness_rtol) * np.max(scores)
    cluster = sampled.level_points[near]
    spread = np.max(np.linalg.norm(cluster - w[None, :], axis=1))
    diameter = 2.0 * np.max(np.linalg.norm(sampled.level_points, axis=1))
    if spread > 0.05 * diameter:
        raise ValueError("gauge is not strictly convex: maximizer not unique")
    return val * w


def sampled_dual_norm(norm, samples=DEFAULT_SAMPLES, refine=DEFAULT_REFINE):
    """Vectorized dual norm f -> sup_{norm(v)=1} f.v over a fixed sample."""
    return SampledPolarGauge(norm, samples, refine)
