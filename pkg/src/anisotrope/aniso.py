"""Anisotropic geometry of hypersurfaces against a Wulff shape.

Everything here reduces to two primitives: the anisotropic Gauss map
``b -> grad h(nu(b))`` and the boundary integrand ``h(nu) dH^n``.  On top of
those sit the shape operator (and its symmetric polynomials), the one-sided
and full tube formulas checked against rejection sampling, the Minkowski
content / boundary-area identity, the isoperimetric and Sobolev
inequalities, and the first variation of the anisotropic area through the
oblique-projection divergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import WulffShape, wulff_integrand
from .densities import euclidean_density
from .exterior import SimpleKVector, cofactor_vectors
from .gauges import sphere_sample
from .integrate import (Patch, ScalarField, VectorField, gauss_legendre_points,
                        integrate_density, integrate_patch)
from .montecarlo import MCConfig, MCResult, mc_volume
from .report import Report

__all__ = [
    "Hypersurface",
    "circle_surface",
    "ellipse_surface",
    "wulff_boundary",
    "trig_body_boundary",
    "ConvexBody",
    "SublevelBody",
    "convex_body_from_support",
    "disk_body",
    "ellipse_body",
    "wulff_body",
    "anisotropic_area",
    "surface_normals",
    "gauss_map",
    "ShapeOperatorSample",
    "shape_operator",
    "shape_operator_batch",
    "tube_volume",
    "TubeResult",
    "minkowski_content",
    "isoperimetric_check",
    "sobolev_check",
    "anisotropic_divergence",
    "first_variation_check",
    "projection_trace_consistency",
    "flow_patch",
]


# ---------------------------------------------------------------------------
# hypersurfaces


class Hypersurface:
    """A codimension-one surface as a list of oriented patches.

    Patch frames must be ordered so the cofactor covector points outward
    (counterclockwise parameterization in the plane).
    """

    def __init__(self, patches, closed=False, name=""):
        if not patches:
            raise ValueError("need at least one patch")
        dims = {p.box.shape[0] for p in patches}
        if len(dims) != 1:
            raise ValueError("patches have mixed dimensions")
        self.patches = list(patches)
        self.closed = bool(closed)
        self.name = name

    @property
    def chart_dim(self):
        return self.patches[0].box.shape[0]

    @property
    def ambient_dim(self):
        return self.chart_dim + 1

    def boundary_sample(self, per_axis=1024):
        """Uniform parameter-grid sample: points and outward unit normals."""
        pts, nus = [], []
        for p in self.patches:
            axes = [np.linspace(lo, hi, per_axis, endpoint=False) +
                    0.5 * (hi - lo) / per_axis for lo, hi in p.box]
            grid = np.meshgrid(*axes, indexing="ij")
            u = np.stack([g.ravel() for g in grid], axis=1)
            pts.append(p.points(u))
            nus.append(surface_normals(p, u))
        return np.concatenate(pts), np.concatenate(nus)

    def bounding_box(self, lo_pad=0.0, hi_pad=0.0, per_axis=512):
        pts, _ = self.boundary_sample(per_axis)
        lo = pts.min(axis=0) - np.asarray(lo_pad)
        hi = pts.max(axis=0) + np.asarray(hi_pad)
        return np.stack([lo, hi], axis=1)


def circle_surface(radius=1.0, center=(0.0, 0.0), arcs=1, nodes=None):
    """Counterclockwise circle, optionally split into arcs at the axes
    (useful for integrands with corners in fixed directions)."""
    center = np.asarray(center, dtype=float)

    def make(a0, a1):
        return Patch(
            [[a0, a1]],
            lambda u: center + radius * np.stack(
                [np.cos(u[:, 0]), np.sin(u[:, 0])], axis=1),
            jac=lambda u: radius * np.stack(
                [-np.sin(u[:, 0]), np.cos(u[:, 0])], axis=1)[:, :, None],
            nodes=nodes)

    edges = np.linspace(0.0, 2.0 * np.pi, arcs + 1)
    return Hypersurface([make(a, b) for a, b in zip(edges, edges[1:])],
                        closed=True, name=f"circle(r={radius})")


def ellipse_surface(a, b, nodes=None):
    return Hypersurface([Patch(
        [[0.0, 2.0 * np.pi]],
        lambda u: np.stack([a * np.cos(u[:, 0]), b * np.sin(u[:, 0])], axis=1),
        jac=lambda u: np.stack([-a * np.sin(u[:, 0]), b * np.cos(u[:, 0])],
                               axis=1)[:, :, None],
        nodes=nodes)], closed=True, name=f"ellipse({a},{b})")


def wulff_boundary(shape, nodes=None, arcs=1):
    """The boundary of a 2-D Wulff shape as a counterclockwise curve."""
    if shape.dim != 2:
        raise ValueError("only the planar boundary is parameterized")
    T = shape.gauge.linear_map

    def make(a0, a1):
        if T is not None:
            Tinv = np.linalg.inv(T)

            def fmap(u, lo=a0):
                c = np.stack([np.cos(u[:, 0]), np.sin(u[:, 0])], axis=1)
                return c @ Tinv.T

            def jac(u, lo=a0):
                c = np.stack([-np.sin(u[:, 0]), np.cos(u[:, 0])], axis=1)
                return (c @ Tinv.T)[:, :, None]

            return Patch([[a0, a1]], fmap, jac=jac, nodes=nodes)

        def fmap(u):
            c = np.stack([np.cos(u[:, 0]), np.sin(u[:, 0])], axis=1)
            return c / np.asarray(shape.gauge(c))[:, None]

        return Patch([[a0, a1]], fmap, nodes=nodes)

    edges = np.linspace(0.0, 2.0 * np.pi, arcs + 1)
    return Hypersurface([make(p, q) for p, q in zip(edges, edges[1:])],
                        closed=True, name=f"boundary({shape.support.name})")


def trig_body_boundary(h, nodes=None):
    """Boundary of the convex body whose support function is a trig_support:
    the support-parameterized curve H u + H' u_perp (counterclockwise)."""

    def fmap(u):
        t = u[:, 0]
        H, dH = h.angular(t), h.angular_d1(t)
        c, s = np.cos(t), np.sin(t)
        return np.stack([H * c - dH * s, H * s + dH * c], axis=1)

    def jac(u):
        t = u[:, 0]
        rad = h.angular(t) + h.angular_d2(t)
        return (rad[:, None] * np.stack([-np.sin(t), np.cos(t)], axis=1))[:, :, None]

    return Hypersurface([Patch([[0.0, 2.0 * np.pi]], fmap, jac=jac,
                               nodes=nodes)], closed=True, name="trig-body")


# ---------------------------------------------------------------------------
# normals, gauss maps, curvature


def surface_normals(patch, u):
    """Outward Euclidean unit normals at chart points (vectorized)."""
    rows = patch.tangent_rows(u)
    cov = cofactor_vectors(rows) * patch.orientation
    return cov / np.linalg.norm(cov, axis=1, keepdims=True)


def gauss_map(patch, shape, u, negative=False):
    """Anisotropic Gauss map at chart points: grad h at (+/-) the normal.

    Both branches land on the shape's boundary; the negative branch is the
    support point for the reversed co-orientation.
    """
    nu = surface_normals(patch, np.atleast_2d(np.asarray(u, float)))
    n = shape.support_grad(-nu if negative else nu)
    g = np.asarray(shape.gauge(n))
    if np.any(np.abs(g - 1.0) > 1e-5):
        raise ValueError("gauss map left the shape boundary "
                         "(non-smooth support function?)")
    return n


@dataclass
class ShapeOperatorSample:
    point: np.ndarray
    chart_u: np.ndarray
    matrix: np.ndarray          # in the chart tangent basis, (k, k)
    c: np.ndarray               # elementary symmetric values, c[0] = 1
    step_consistent: bool = True

    @property
    def trace(self):
        return float(np.trace(self.matrix))


def _sym_polys(S):
    """c_0..c_k of a (k, k) matrix from its characteristic polynomial."""
    k = S.shape[0]
    if k == 1:
        return np.array([1.0, S[0, 0]])
    if k == 2:
        return np.array([1.0, float(np.trace(S)), float(np.linalg.det(S))])
    coeffs = np.poly(S)
    return np.array([((-1.0) ** i) * coeffs[i] for i in range(k + 1)])


def shape_operator_batch(patch, shape, u, step=1e-4, negative=False):
    """Anisotropic shape operators at many chart points.

    Differentiates the Gauss map by central differences along the chart
    coordinates (step scaled by the chart box) and projects onto the tangent
    space along the Gauss direction.

    Returns (S, c) with S of shape (M, k, k) and c of shape (M, k + 1).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    M, k = u.shape
    widths = patch.box[:, 1] - patch.box[:, 0]
    rows = patch.tangent_rows(u)                   # (M, k, N)
    n = gauss_map(patch, shape, u, negative)       # (M, N)
    N = n.shape[1]
    B = np.concatenate([rows.transpose(0, 2, 1), n[:, :, None]], axis=2)
    dn = np.empty((M, N, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        h = step * widths[i]
        np_plus = gauss_map(patch, shape, u + h * e, negative)
        np_minus = gauss_map(patch, shape, u - h * e, negative)
        dn[:, :, i] = (np_plus - np_minus) / (2.0 * h)
    coeff = np.linalg.solve(B, dn)                 # (M, k+1, k)
    S = coeff[:, :k, :]
    c = np.stack([_sym_polys(S[i]) for i in range(M)])
    return S, c


def shape_operator(patch, shape, u, step=1e-4, negative=False,
                   validate=True, tol=1e-5):
    """Shape operator at a single chart point, with step-halving validation."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    S, c = shape_operator_batch(patch, shape, u[None, :], step, negative)
    consistent = True
    if validate:
        S2, _ = shape_operator_batch(patch, shape, u[None, :], step / 2.0,
                                     negative)
        scale = max(float(np.max(np.abs(S))), 1.0)
        consistent = float(np.max(np.abs(S - S2))) <= tol * scale
        if not consistent:
            raise ValueError("shape operator failed step-halving validation "
                             "(non-smooth data?)")
    return ShapeOperatorSample(point=patch.points(u[None, :])[0], chart_u=u,
                               matrix=S[0], c=c[0], step_consistent=consistent)


# ---------------------------------------------------------------------------
# anisotropic area


def anisotropic_area(sigma, shape, nodes=None, method="support"):
    """Integral of the boundary integrand over the surface.

    ``method='support'`` integrates h(nu) against Euclidean surface measure;
    ``method='density'`` routes through the Wulff integrand density.  The two
    agree to quadrature accuracy and serve as mutual cross-checks.
    """
    if method == "density":
        F = wulff_integrand(shape)
        return sum(integrate_density(p, F, nodes=nodes) for p in sigma.patches)
    h = shape.support
    total = 0.0
    for p in sigma.patches:
        def integrand(u, w, p=p):
            rows = p.tangent_rows(u)
            cov = cofactor_vectors(rows) * p.orientation
            area = np.linalg.norm(cov, axis=1)
            vals = np.asarray(h(cov / area[:, None])) * area
            return float(np.sum(w * vals))

        total += integrate_patch(p, integrand, nodes=nodes)
    return total


# ---------------------------------------------------------------------------
# gauge distance to a sampled boundary


class BoundaryDistance:
    """min over a boundary sample b of gauge(p - b), plus an outside test.

    Exact fast paths: gauges |T v| (KD-tree in transformed coordinates) and
    plain p-norms (Minkowski KD-tree).  Other gauges use Euclidean pruning
    with exact evaluation on the ambiguous band.
    """

    def __init__(self, points, normals, gauge):
        from scipy.spatial import cKDTree

        self.points = np.asarray(points, dtype=float)
        self.normals = np.asarray(normals, dtype=float)
        self.gauge = gauge
        self.mode = "generic"
        if gauge.linear_map is not None:
            self.T = gauge.linear_map
            self.tree = cKDTree(self.points @ self.T.T)
            self.mode = "linear"
        elif gauge.minkowski_p is not None and gauge.minkowski_p >= 1:
            self.tree = cKDTree(self.points)
            self.minkp = gauge.minkowski_p
            self.mode = "minkowski"
        else:
            self.tree = cKDTree(self.points)
            u = sphere_sample(self.points.shape[1], 2048)
            vals = np.asarray(gauge(u))
            self.alpha = float(np.min(vals))
            self.beta = float(np.max(vals))

    def within(self, P, eps):
        """(distance <= eps, outside-the-enclosed-region) per query point.

        The outside test uses the outward normal at the nearest boundary
        sample; it is decisive only for near points, which is all the tube
        membership consumes.
        """
        P = np.asarray(P, dtype=float)
        if self.mode == "linear":
            d, idx = self.tree.query(P @ self.T.T,
                                     distance_upper_bound=eps * (1 + 1e-12))
            near = np.isfinite(d) & (d <= eps)
        elif self.mode == "minkowski":
            d, idx = self.tree.query(P, p=self.minkp,
                                     distance_upper_bound=eps * (1 + 1e-12))
            near = np.isfinite(d) & (d <= eps)
        else:
            d2, idx = self.tree.query(P)
            near = self.beta * d2 <= eps
            band = (~near) & (self.alpha * d2 <= eps)
            if np.any(band):
                sub = P[band]
                hit = np.zeros(sub.shape[0], dtype=bool)
                for s in range(0, sub.shape[0], 2048):
                    block = sub[s:s + 2048]
                    g = self.gauge(block[:, None, :] - self.points[None, :, :])
                    hit[s:s + 2048] = np.min(g, axis=1) <= eps
                near = near.copy()
                near[band] = hit
        outside = np.zeros(P.shape[0], dtype=bool)
        if np.any(near):
            sel = np.nonzero(near)[0]
            nidx = idx[sel]
            delta = P[sel] - self.points[nidx]
            outside[sel] = np.sum(delta * self.normals[nidx], axis=1) > 0.0
        return near, outside


# ---------------------------------------------------------------------------
# tube formula


@dataclass
class TubeResult:
    eps: float
    formula: float
    mc: MCResult
    sigma_residual: float
    eps_max: float
    bias: float
    side: str
    curvature_integrals: np.ndarray = field(default=None)

    @property
    def within(self):
        return abs(self.formula - self.mc.estimate) <= \
            3.0 * self.mc.stderr + self.bias + 1e-12


def _curvature_integrals(sigma, shape, nodes=64, negative=False):
    """Integrals of the symmetric curvature polynomials against the
    boundary integrand, plus the largest spectral radius encountered."""
    F = wulff_integrand(shape)
    k = sigma.chart_dim
    totals = np.zeros(k + 1)
    spectral = 0.0
    for p in sigma.patches:
        u, w = gauss_legendre_points(p.box, nodes)
        S, c = shape_operator_batch(p, shape, u, negative=negative)
        rows = p.tangent_rows(u)
        signs = np.full(u.shape[0], float(p.orientation))
        fvals = np.asarray(F.batch(rows, signs))
        for j in range(k + 1):
            totals[j] += float(np.sum(w * c[:, j] * fvals))
        eigs = np.linalg.eigvals(S)
        spectral = max(spectral, float(np.max(np.abs(eigs))))
    return totals, spectral


def tube_volume(sigma, shape, eps, mc=None, side="outer", nodes=64,
                boundary_per_axis=4096):
    """One-sided or full tube volume: curvature formula against rejection MC.

    The polynomial side is sum_k eps^(k+1)/(k+1) * integral of c_k (plus the
    reversed-orientation c_k for the full tube).  The MC side samples the
    bounding box and tests gauge-distance to a dense boundary sample (bias
    from the sampling estimated by grid halving and added to the budget).
    """
    if not sigma.closed:
        raise ValueError("tube volumes need a closed hypersurface")
    mc = mc or MCConfig()
    eps = float(eps)
    totals, spectral = _curvature_integrals(sigma, shape, nodes=nodes)
    eps_max = 0.2 / max(spectral, 1e-12)
    if eps > eps_max:
        raise ValueError(f"eps={eps} exceeds the curvature bound {eps_max:.4g}")
    k = sigma.chart_dim
    powers = np.array([eps ** (j + 1) / (j + 1) for j in range(k + 1)])
    if side == "outer":
        formula = float(np.sum(powers * totals))
        curvature = totals
    elif side == "full":
        totals_neg, _ = _curvature_integrals(sigma, shape, nodes=nodes,
                                             negative=True)
        curvature = totals + totals_neg
        formula = float(np.sum(powers * curvature))
    else:
        raise ValueError("side must be 'outer' or 'full'")

    lo_pad = np.array([eps * float(shape.support(-e)) + 1e-9
                       for e in np.eye(sigma.ambient_dim)])
    hi_pad = np.array([eps * float(shape.support(e)) + 1e-9
                       for e in np.eye(sigma.ambient_dim)])
    box = sigma.bounding_box(lo_pad=lo_pad, hi_pad=hi_pad)

    def estimate(per_axis):
        pts, nus = sigma.boundary_sample(per_axis)
        dist = BoundaryDistance(pts, nus, shape.gauge)

        def member(P):
            near, outside = dist.within(P, eps)
            return near if side == "full" else near & outside

        return mc_volume(member, box, mc, key=41)

    fine = estimate(boundary_per_axis)
    coarse = estimate(boundary_per_axis // 2)
    bias = abs(fine.estimate - coarse.estimate)
    sig = abs(formula - fine.estimate) / fine.stderr if fine.stderr else np.inf
    return TubeResult(eps=eps, formula=formula, mc=fine, sigma_residual=sig,
                      eps_max=eps_max, bias=bias, side=side,
                      curvature_integrals=curvature)


# ---------------------------------------------------------------------------
# bodies, Minkowski content, isoperimetry


class ConvexBody:
    """A convex body carried by its support function plus a boundary curve."""

    def __init__(self, support, boundary, name="body"):
        self.support = support
        self.boundary = boundary
        self.dim = support.dim
        self.name = name

    def volume_quadrature(self, nodes=None):
        """Enclosed volume from the boundary parameterization (divergence
        theorem, exact up to quadrature)."""
        if self.dim != 2:
            raise NotImplementedError("quadrature volume only in the plane")
        total = 0.0
        for p in self.boundary.patches:
            def integrand(u, w, p=p):
                pts = p.points(u)
                vel = p.frames(u)[:, :, 0]
                cross = pts[:, 0] * vel[:, 1] - pts[:, 1] * vel[:, 0]
                return float(np.sum(w * 0.5 * cross * p.orientation))

            total += integrate_patch(p, integrand)
        return total

    def sum_membership(self, shape, t, directions=4096):
        """Membership test for B + t W via support functions (exact for
        convex bodies: h_{B + tW} = h_B + t h_W)."""
        u = sphere_sample(self.dim, directions)
        bound = np.asarray(self.support(u)) + t * np.asarray(shape.support(u))

        def member(P):
            out = np.ones(P.shape[0], dtype=bool)
            for s in range(0, u.shape[0], 512):
                blk = u[s:s + 512]
                out &= np.all(P @ blk.T <= bound[s:s + 512][None, :], axis=1)
            return out

        return member

    def sum_box(self, shape, t):
        ext = np.empty((self.dim, 2))
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = 1.0
            ext[i] = (-float(self.support(-e)) - t * float(shape.support(-e)) - 1e-9,
                      float(self.support(e)) + t * float(shape.support(e)) + 1e-9)
        return ext


def convex_body_from_support(h, nodes=None):
    """Body + boundary from a smooth 2-D support function with angular data."""
    from .gauges import trig_support

    if isinstance(h, trig_support):
        return ConvexBody(h, trig_body_boundary(h, nodes=nodes), name="trig-body")
    raise TypeError("need a support function with angular derivatives")


def disk_body(radius=1.0, nodes=None):
    from .gauges import euclidean_gauge, Gauge

    h = euclidean_gauge(2)
    if radius != 1.0:
        base = h
        h = Gauge(lambda v: radius * base.fn(v), 2, True,
                  grad=lambda v: radius * base.grad(v), name="disk-support")
    return ConvexBody(h, circle_surface(radius, nodes=nodes),
                      name=f"disk({radius})")


def ellipse_body(a, b, nodes=None):
    from .gauges import ellipse_gauge

    h = ellipse_gauge([1.0 / a, 1.0 / b])      # support of the (a, b) ellipse
    return ConvexBody(h, ellipse_surface(a, b, nodes=nodes),
                      name=f"ellipse-body({a},{b})")


def wulff_body(shape, nodes=None, arcs=1):
    """The shape itself as a body (for the equality cases)."""
    return ConvexBody(shape.support, wulff_boundary(shape, nodes=nodes,
                                                    arcs=arcs),
                      name=f"body({shape.support.name})")


class SublevelBody:
    """A (possibly nonconvex) region f <= level with a parameterized boundary."""

    def __init__(self, field, level, boundary, box, name="sublevel"):
        self.field = field
        self.level = float(level)
        self.boundary = boundary
        self.box = np.asarray(box, dtype=float)
        self.dim = self.box.shape[0]
        self.name = name

    def sum_membership(self, shape, t, boundary_per_axis=4096):
        pts, nus = self.boundary.boundary_sample(boundary_per_axis)
        dist = BoundaryDistance(pts, nus, shape.gauge)

        def member(P):
            inside = np.asarray(self.field(P)) <= self.level
            if t <= 0:
                return inside
            near, _ = dist.within(P, t)
            return inside | near

        return member

    def sum_box(self, shape, t):
        lo_pad = np.array([t * float(shape.support(-e)) + 1e-9
                           for e in np.eye(self.dim)])
        hi_pad = np.array([t * float(shape.support(e)) + 1e-9
                           for e in np.eye(self.dim)])
        box = self.box.copy()
        box[:, 0] -= lo_pad
        box[:, 1] += hi_pad
        return box


def minkowski_content(body, shape, t0=0.04, mc=None, name="minkowski"):
    """Slope at zero of t -> vol(body + t shape), Richardson extrapolated.

    Volumes at t0, t0/2, t0/4 and 0 share one sample stream (common random
    numbers), so the slopes are far less noisy than the raw volumes.  The
    extrapolated slope is compared against the anisotropic boundary area.
    """
    mc = mc or MCConfig()
    ts = np.array([t0, t0 / 2.0, t0 / 4.0])
    box = body.sum_box(shape, t0)
    vols = []
    base = mc_volume(body.sum_membership(shape, 0.0), box, mc, key=51)
    for t in ts:
        vols.append(mc_volume(body.sum_membership(shape, float(t)), box, mc,
                              key=51))
    slopes = np.array([(v.estimate - base.estimate) / t
                       for v, t in zip(vols, ts)])
    if not (slopes[0] >= slopes[1] - 3 * vols[0].stderr / ts[1] and
            slopes[1] >= slopes[2] - 3 * vols[1].stderr / ts[2]):
        raise ValueError("slope extrapolation is not monotone; shrink t0")
    content = slopes[0] / 3.0 - 2.0 * slopes[1] + 8.0 * slopes[2] / 3.0
    area = anisotropic_area(body.boundary, shape)
    rep = Report(scenario=name, kind="minkowski", checks=[])
    rep.add("content-equals-boundary-area", "minkowski-content", content, area,
            tolerance=1e-2)
    rep.meta.update({
        "t_values": [float(t) for t in ts],
        "volumes": [v.estimate for v in vols],
        "volume_stderr": [v.stderr for v in vols],
        "base_volume": base.estimate,
        "slopes": [float(s) for s in slopes],
        "extrapolated": float(content),
    })
    return rep


def isoperimetric_check(body, shape, name="isoperimetric"):
    """Boundary area against the sharp volume bound for the shape.

    Passes when area >= bound * (1 - 3 sigma_rel), sigma_rel from the shape's
    cached Monte Carlo volume.
    """
    n1 = shape.dim
    area = anisotropic_area(body.boundary, shape)
    vol_b = body.volume_quadrature()
    vol_w = shape.volume.estimate
    bound = n1 * vol_w ** (1.0 / n1) * vol_b ** (1.0 - 1.0 / n1)
    ratio = area / bound
    sigma_rel = shape.volume.rel_stderr / n1
    rep = Report(scenario=name, kind="isoperimetric", checks=[])
    rep.add("area-at-least-volume-bound", "isoperimetric",
            lhs=ratio, rhs=1.0, tolerance=3.0 * sigma_rel + 1e-9,
            residual=max(0.0, 1.0 - ratio))
    rep.meta.update({"area": area, "volume": vol_b, "shape_volume": vol_w,
                     "ratio": ratio})
    return rep


# ---------------------------------------------------------------------------
# Sobolev / Gagliardo-Nirenberg


def _integrate_grad_term(f, shape, box, power=1.0, cells=24, gl=6,
                         depth=6, cell_tol=1e-8):
    """Integral of h(-grad|f|)^power over the box.

    Cells whose nodes change sign are subdivided until their contribution
    falls under the tolerance, since grad|f| only exists away from f = 0.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    dim = box.shape[0]
    x, w = np.polynomial.legendre.leggauss(gl)

    def cell_nodes(lo, hi):
        axes = [0.5 * (hi[i] - lo[i]) * x + 0.5 * (hi[i] + lo[i])
                for i in range(dim)]
        wts = [0.5 * (hi[i] - lo[i]) * w for i in range(dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        weight = wts[0]
        for wi in wts[1:]:
            weight = np.multiply.outer(weight, wi)
        return pts, weight.ravel()

    def cell_value(pts, wts):
        vals = np.asarray(f(pts))
        grad = f.gradient(pts)
        sgn = np.sign(vals)[:, None]
        integ = np.asarray(shape.support(-sgn * grad)) ** power
        integ = np.where(np.abs(vals) > 0, integ, 0.0)
        return float(np.sum(wts * integ)), vals

    def recurse(lo, hi, level):
        pts, wts = cell_nodes(lo, hi)
        val, fvals = cell_value(pts, wts)
        mixed = np.any(fvals > 0) and np.any(fvals < 0)
        if mixed and level < depth and abs(val) > cell_tol:
            mid = 0.5 * (lo + hi)
            total = 0.0
            for corner in range(1 << dim):
                clo, chi = lo.copy(), hi.copy()
                for d in range(dim):
                    if corner >> d & 1:
                        clo[d] = mid[d]
                    else:
                        chi[d] = mid[d]
                total += recurse(clo, chi, level + 1)
            return total
        return val

    total = 0.0
    edges = [np.linspace(lo, hi, cells + 1) for lo, hi in box]
    for idx in np.ndindex(*([cells] * dim)):
        lo = np.array([edges[d][idx[d]] for d in range(dim)])
        hi = np.array([edges[d][idx[d] + 1] for d in range(dim)])
        total += recurse(lo, hi, 0)
    return total


def _lp_norm(f, box, p, nodes=96):
    pts, wts = gauss_legendre_points(box, nodes)
    vals = np.abs(np.asarray(f(pts))) ** p
    return float(np.sum(wts * vals)) ** (1.0 / p)


def sobolev_check(f, shape, box, p=1.0, cells=24, name="sobolev"):
    """Anisotropic Sobolev (p = 1) or Gagliardo-Nirenberg (1 < p < dim) check.

    Returns a Report whose single check passes when the inequality holds with
    relative slack 1e-3.
    """
    n1 = shape.dim          # ambient dimension (n + 1 in the surface picture)
    p = float(p)
    rep = Report(scenario=name, kind="sobolev", checks=[])
    vol_w = shape.volume.estimate
    if p == 1.0:
        lhs = _integrate_grad_term(f, shape, box, power=1.0, cells=cells)
        q = n1 / (n1 - 1.0)
        rhs = n1 * vol_w ** (1.0 / n1) * _lp_norm(f, box, q)
        tag = "sobolev"
    else:
        if p >= n1:
            raise ValueError("the Gagliardo-Nirenberg form needs p < dim")
        pstar = 1.0 / (1.0 / p - 1.0 / n1)
        C = p * (n1 - 1.0) / ((n1 - p) * n1) * vol_w ** (-1.0 / n1)
        grad_term = _integrate_grad_term(f, shape, box, power=p,
                                         cells=cells) ** (1.0 / p)
        lhs = C * grad_term
        rhs = _lp_norm(f, box, pstar)
        tag = "gagliardo-nirenberg"
    ratio = lhs / rhs
    rep.add("gradient-side-dominates", tag, lhs=ratio, rhs=1.0,
            tolerance=1e-3, residual=max(0.0, 1.0 - ratio))
    rep.meta.update({"lhs": lhs, "rhs": rhs, "ratio": ratio, "p": p})
    return rep


# ---------------------------------------------------------------------------
# divergence, first variation, trace consistency


def _frame_and_gauss(patch, shape, u):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rows = patch.tangent_rows(u)
    n = gauss_map(patch, shape, u)
    B = np.concatenate([rows.transpose(0, 2, 1), n[:, :, None]], axis=2)
    return rows, n, B


def anisotropic_divergence(patch, shape, X, u):
    """Trace of the tangential part (along the Gauss direction) of dX."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rows, n, B = _frame_and_gauss(patch, shape, u)
    pts = patch.points(u)
    dX = X.differential(pts)                       # (M, N, N)
    k = rows.shape[1]
    dXt = dX @ rows.transpose(0, 2, 1)             # (M, N, k)
    coeff = np.linalg.solve(B, dXt)                # (M, k+1, k)
    div = np.einsum("mii->m", coeff[:, :k, :])
    return div if div.size > 1 else float(div[0])


def flow_patch(patch, X, t, steps=8):
    """Patch carried along the flow of X for time t (classical RK4)."""

    def flowed(u):
        p = patch.points(u)
        h = t / steps
        for _ in range(steps):
            k1 = X(p)
            k2 = X(p + 0.5 * h * k1)
            k3 = X(p + 0.5 * h * k2)
            k4 = X(p + h * k3)
            p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return p

    return Patch(patch.box, flowed, orientation=patch.orientation,
                 nodes=patch.nodes, name=f"{patch.name}+flow")


def first_variation_check(sigma, shape, X, dt=1e-3, nodes=96,
                          name="first-variation"):
    """Flow derivative of the anisotropic area against the divergence integral.

    Also splits X into its Gauss-direction and tangential components and
    checks the mean-curvature form of the variation (closed surfaces only).
    """
    if not sigma.closed:
        raise ValueError("the mean-curvature form needs a closed surface")
    F = wulff_integrand(shape)

    def area_at(t):
        moved = Hypersurface([flow_patch(p, X, t) for p in sigma.patches],
                             closed=True)
        return anisotropic_area(moved, shape, nodes=nodes)

    fd = (area_at(dt) - area_at(-dt)) / (2.0 * dt)

    div_total = 0.0
    psi_total = 0.0
    scale = anisotropic_area(sigma, shape, nodes=nodes)
    for p in sigma.patches:
        u, w = gauss_legendre_points(p.box, nodes)
        rows, n, B = _frame_and_gauss(p, shape, u)
        pts = p.points(u)
        signs = np.full(u.shape[0], float(p.orientation))
        fvals = np.asarray(F.batch(rows, signs))
        div = anisotropic_divergence(p, shape, X, u)
        div_total += float(np.sum(w * div * fvals))
        k = rows.shape[1]
        coeff = np.linalg.solve(B, X(pts)[:, :, None])[:, :, 0]
        psi = coeff[:, k]
        _, c = shape_operator_batch(p, shape, u)
        psi_total += float(np.sum(w * psi * c[:, 1] * fvals))

    rep = Report(scenario=name, kind="first-variation", checks=[])
    # residuals measured against the area scale so vanishing variations
    # (purely tangential fields) stay meaningful
    denom = max(abs(fd), abs(div_total), scale)
    rep.add("flow-derivative-vs-divergence", "first-variation", fd, div_total,
            tolerance=1e-4, residual=abs(fd - div_total) / denom)
    denom2 = max(abs(fd), abs(psi_total), scale)
    rep.add("flow-derivative-vs-mean-curvature", "first-variation-normal-part",
            fd, psi_total, tolerance=1e-4,
            residual=abs(fd - psi_total) / denom2)
    rep.meta.update({"area": scale, "dt": dt})
    return rep


def projection_trace_consistency(patch, shape, u):
    """|trace of dn projected orthogonally - trace projected along n|.

    The two projections (along the Euclidean normal and along the Gauss
    direction) must give the same trace pointwise.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rows, n, B = _frame_and_gauss(patch, shape, u)
    nu = surface_normals(patch, u)
    k = rows.shape[1]
    widths = patch.box[:, 1] - patch.box[:, 0]
    M = u.shape[0]
    N = n.shape[1]
    dn = np.empty((M, N, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        h = 1e-4 * widths[i]
        dn[:, :, i] = (gauss_map(patch, shape, u + h * e) -
                       gauss_map(patch, shape, u - h * e)) / (2.0 * h)
    B_orth = np.concatenate([rows.transpose(0, 2, 1), nu[:, :, None]], axis=2)
    tr_obl = np.einsum("mii->m", np.linalg.solve(B, dn)[:, :k, :])
    tr_orth = np.einsum("mii->m", np.linalg.solve(B_orth, dn)[:, :k, :])
    out = np.abs(tr_obl - tr_orth)
    return out if out.size > 1 else float(out[0])
