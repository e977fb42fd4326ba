"""Wulff shapes: support functions, gauges, anisotropic normals.

A shape is always carried by its support function h; the gauge (Minkowski
functional) comes from polar duality, analytically for the named families
and through the sampled polar construction otherwise.  The boundary point
whose tangent plane has Euclidean normal nu is grad h(nu); that gradient is
the anisotropic normal and the workhorse of every curvature computation.
"""

from __future__ import annotations

import numpy as np

from .exterior import SimpleKVector, VolumeForm, cofactor_vectors
from .densities import Density
from .gauges import (Gauge, ellipse_gauge, euclidean_gauge, pnorm_gauge,
                     polar_gauge, shifted_ball_support, sphere_sample,
                     tabulated_support, trig_support)
from .montecarlo import MCConfig, mc_volume

__all__ = [
    "WulffShape",
    "wulff_from_support",
    "wulff_euclidean",
    "wulff_pnorm",
    "wulff_ellipse",
    "wulff_shifted_ball",
    "wulff_from_trig",
    "wulff_from_table",
    "wulff_integrand",
    "anisotropic_normal",
    "check_multiplication",
    "shape_from_spec",
]


def _check_homogeneous(h, dim, tol=1e-8):
    u = sphere_sample(dim, 128)
    for a in (0.5, 2.0, 7.0):
        if np.max(np.abs(h(a * u) - a * h(u))) > tol * a * np.max(np.abs(h(u))):
            raise ValueError("support function is not 1-homogeneous")


class WulffShape:
    """A convex body with the origin interior, described by its support side.

    Attributes
    ----------
    support : Gauge
        The support function h; equals the polar of the gauge.
    gauge : Gauge
        Minkowski functional of the body: membership is gauge <= 1.
    volume : MCResult
        Cached rejection-sampling volume with standard error.
    smooth : bool
        Whether h passed the step-halving gradient consistency probe.
    """

    def __init__(self, support, gauge=None, mc=None, volume=None,
                 dual_samples=4096, smooth=None):
        self.dim = support.dim
        self.support = support
        _check_homogeneous(support, self.dim)
        if gauge is None:
            gauge = polar_gauge(support, samples=dual_samples)
        self.gauge = gauge
        self.symmetric = support.symmetric
        self.smooth = self._probe_smoothness() if smooth is None else bool(smooth)
        self._consistency_probe()
        self.mc = mc or MCConfig()
        self.volume = volume if volume is not None else self._mc_volume()

    # -- construction helpers ------------------------------------------------

    def _probe_smoothness(self):
        if self.support.grad is not None:
            return True
        u = sphere_sample(self.dim, 64)
        return all(self.support.gradient_consistent(ui) for ui in u)

    def _consistency_probe(self, count=4096):
        """Sampled check that gauge and support are actually polar to each other."""
        tol = 5e-3 if self.dim == 2 else 5e-2
        u = sphere_sample(self.dim, count)
        gvals = np.asarray(self.gauge(u))
        if np.any(~np.isfinite(gvals)) or np.any(gvals <= 0):
            raise ValueError("gauge must be finite and positive on the sphere")
        pts = 0.999 * u / gvals[:, None]
        support_vals = np.asarray(self.support(u))
        realized = np.max(pts @ u.T, axis=0)
        if np.any(realized > support_vals * (1 + tol)) or \
                np.any(realized < support_vals * (1 - tol) - 1e-12):
            raise ValueError("gauge and support function are not a polar pair")

    def bounding_box(self, margin=0.0):
        """Exact support-based bounding box, optionally inflated."""
        ext = np.empty((self.dim, 2))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            ext[i] = (-float(self.support(-e)) - margin,
                      float(self.support(e)) + margin)
        return ext

    def _mc_volume(self):
        box = self.bounding_box(margin=1e-9)
        return mc_volume(lambda p: self.gauge(p) <= 1.0, box, self.mc, key=31)

    # -- queries ---------------------------------------------------------------

    def contains(self, points):
        return np.asarray(self.gauge(points)) <= 1.0

    def support_grad(self, u):
        """The boundary point supported by the hyperplane with normal u."""
        return self.support.gradient(u)

    def normal(self, nu, check=True, tol=1e-6):
        """Anisotropic normal for a Euclidean unit normal nu: grad h(nu).

        Postconditions: the point lies on the boundary (gauge = 1) and its
        tangent plane supports the body (h(nu) is realized at the point).
        """
        nu = np.asarray(nu, dtype=float)
        n = self.support_grad(nu)
        if check:
            g = float(self.gauge(n))
            if abs(g - 1.0) > tol:
                raise ValueError(f"normal left the boundary: gauge = {g}")
            pairing = float(n @ nu)
            h = float(self.support(nu))
            if abs(pairing - h) > 1e-6 * max(abs(h), 1.0):
                raise ValueError("tangent plane does not support the body")
        return n

    def __repr__(self):
        return (f"WulffShape(dim={self.dim}, support={self.support.name}, "
                f"vol={self.volume.estimate:.6g})")


def wulff_from_support(h, dim=None, mc=None, dual_samples=4096):
    """Build a shape from a bare support function (gauge via sampled polarity)."""
    if not isinstance(h, Gauge):
        if dim is None:
            raise ValueError("dim is required for a bare callable")
        h = Gauge(h, dim, symmetric=False, name="support")
    return WulffShape(h, mc=mc, dual_samples=dual_samples)


def wulff_euclidean(dim, radius=1.0, mc=None):
    h = euclidean_gauge(dim)
    if radius != 1.0:
        base = h
        h = Gauge(lambda v: radius * base.fn(v), dim, True,
                  grad=lambda v: radius * base.grad(v), name=f"euclidean*{radius}",
                  linear_map=np.eye(dim) * radius)
    gauge = polar_gauge(h)
    return WulffShape(h, gauge=gauge, mc=mc)


def wulff_pnorm(p, dim, mc=None):
    """The unit ball of the p-norm; its support function is the q-norm.

    ``p = inf`` gives the exact cube (max-norm gauge, 1-norm support); it is
    flagged non-smooth and admissible for duality and volume work only.
    """
    p = float(p)
    if np.isinf(p):
        gauge = Gauge(lambda v: np.max(np.abs(v), axis=-1), dim, True,
                      name="pnorm-inf")
        return WulffShape(pnorm_gauge(1.0, dim), gauge=gauge, mc=mc,
                          smooth=False)
    if p <= 1:
        raise ValueError("need p > 1 for a usable gauge")
    q = p / (p - 1.0)
    smooth = None if p < 64 else False
    return WulffShape(pnorm_gauge(q, dim), gauge=pnorm_gauge(p, dim), mc=mc,
                      smooth=smooth)


def wulff_ellipse(axes, mc=None):
    axes = np.asarray(axes, dtype=float)
    h = ellipse_gauge(1.0 / axes)      # support of the (a, b) ellipse
    gauge = ellipse_gauge(axes)
    return WulffShape(h, gauge=gauge, mc=mc)


def wulff_shifted_ball(center, radius=1.0, mc=None):
    """Euclidean ball with the origin off-center: the simplest asymmetric shape."""
    center = np.asarray(center, dtype=float)
    if np.linalg.norm(center) >= radius:
        raise ValueError("origin must be interior")
    h = shifted_ball_support(center, radius)

    def gauge_fn(v):
        # solve gauge(v) = t with v/t on the sphere around `center`
        v = np.asarray(v, dtype=float)
        b = np.sum(v * center, axis=-1)
        a = radius ** 2 - center @ center
        return (np.sqrt(b * b + a * np.sum(v * v, axis=-1)) - b) / a

    gauge = Gauge(gauge_fn, center.size, False, name="shifted-ball-gauge")
    return WulffShape(h, gauge=gauge, mc=mc)


def wulff_from_trig(c0, a=(), b=(), mc=None, min_margin=0.05):
    """2-D shape with trigonometric-polynomial support function.

    Rejects support functions whose curvature bound min(h + h'') falls under
    ``min_margin * c0`` (the sampled convexity guarantee).
    """
    h = trig_support(c0, a, b)
    if h.min_curvature_radius() <= min_margin * c0:
        raise ValueError("support function fails the convexity margin")
    return WulffShape(h, mc=mc)


def wulff_from_table(values, mc=None):
    return WulffShape(tabulated_support(values), mc=mc)


# ---------------------------------------------------------------------------
# the boundary integrand and the multiplication property


def wulff_integrand(shape, omega=None):
    """Codimension-one density F with F(v-wedge) = h(contraction of v-wedge).

    For the standard volume form in R^(n+1) the contraction of a tangent
    frame is its cofactor covector, so this is h of the (unnormalized)
    oriented normal; asymmetric whenever h is.
    """
    dim = shape.dim
    omega = omega or VolumeForm(1.0, dim)
    if omega.dim != dim:
        raise ValueError("volume form dimension mismatch")
    if omega.scale <= 0:
        raise ValueError("the volume form must be positively oriented")
    h = shape.support

    def fn(xi):
        cov = omega.scale * cofactor_vectors(xi.spanning[None, :, :])[0]
        return float(h(xi.sign * cov))

    def batch(frames, signs):
        cov = omega.scale * cofactor_vectors(frames)
        return np.asarray(h(signs[:, None] * cov))

    d = Density(dim - 1, dim, fn, shape.symmetric, kind="wulff-integrand",
                batch=batch)
    d.shape = shape
    return d


def anisotropic_normal(shape, tangents, omega=None, check=True):
    """Anisotropic normal of the oriented hyperplane spanned by the tangents.

    The Euclidean unit normal nu is chosen so nu ^ v1 ^ ... ^ vn is
    positively oriented, then mapped through grad h.
    """
    tangents = np.atleast_2d(np.asarray(tangents, dtype=float))
    omega = omega or VolumeForm(1.0, shape.dim)
    cov = omega.scale * cofactor_vectors(tangents[None, :, :])[0]
    norm = np.linalg.norm(cov)
    if norm <= 1e-12 * np.prod(np.linalg.norm(tangents, axis=1)):
        raise ValueError("tangent vectors are dependent")
    nu = cov / norm
    return shape.normal(nu, check=check)


def check_multiplication(shape, w, tangents, omega=None):
    """Relative residual of |Omega|(w ^ v-wedge) = gauge(w) * F(v-wedge)."""
    tangents = np.atleast_2d(np.asarray(tangents, dtype=float))
    omega = omega or VolumeForm(1.0, shape.dim)
    F = wulff_integrand(shape, omega)
    lhs = abs(omega(SimpleKVector(np.vstack([np.asarray(w, float)[None, :],
                                             tangents]))))
    rhs = float(shape.gauge(w)) * F(SimpleKVector(tangents))
    return abs(lhs - rhs) / abs(rhs)


# ---------------------------------------------------------------------------
# CLI shape grammar


def shape_from_spec(spec, mc=None):
    """Build a shape from the config grammar.

    Families: ``euclidean``, ``pnorm{p}``, ``ellipse{a,b[,c]}``,
    ``custom-support`` (tabulated h on an angle grid, >= 256 entries),
    plus ``shifted-ball{center,radius}`` and ``trig{c0,a,b}``.
    """
    if not isinstance(spec, dict) or "family" not in spec:
        raise KeyError("shape spec needs a 'family' key")
    family = spec["family"]
    dim = int(spec.get("dim", 2))
    if family == "euclidean":
        return wulff_euclidean(dim, radius=float(spec.get("radius", 1.0)), mc=mc)
    if family == "pnorm":
        if "p" not in spec:
            raise KeyError("pnorm shape needs 'p'")
        return wulff_pnorm(float(spec["p"]), dim, mc=mc)
    if family == "ellipse":
        axes = [float(spec[k]) for k in ("a", "b", "c") if k in spec]
        if len(axes) < 2:
            raise KeyError("ellipse shape needs 'a' and 'b'")
        return wulff_ellipse(axes, mc=mc)
    if family == "custom-support":
        if "values" not in spec:
            raise KeyError("custom-support shape needs 'values'")
        return wulff_from_table(spec["values"], mc=mc)
    if family == "shifted-ball":
        return wulff_shifted_ball(spec.get("center", [0.2, 0.0]),
                                  float(spec.get("radius", 1.0)), mc=mc)
    if family == "trig":
        return wulff_from_trig(float(spec.get("c0", 1.0)),
                               spec.get("a", ()), spec.get("b", ()), mc=mc)
    raise KeyError(f"unknown shape family: {family!r}")
