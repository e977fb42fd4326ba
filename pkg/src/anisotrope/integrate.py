"""Integration of densities over parameterized patches.

Gauss-Legendre tensor quadrature with a fixed doubling schedule, plus the
numerical verifications built on top of it: change of variables, fiber
integration (the pushforward of a top density under a submersion), and the
generalized area and coarea identities on smooth instances.
"""

from __future__ import annotations

import numpy as np

from .densities import Density, cojacobian, jacobian
from .exterior import SimpleKVector
from .montecarlo import MCConfig, mc_volume  # re-exported surface
from .report import Check, Report, relative_residual

__all__ = [
    "Patch",
    "ScalarField",
    "VectorField",
    "as_density_field",
    "gauss_legendre_points",
    "integrate_patch",
    "integrate_density",
    "change_of_variables_check",
    "fiber_integral",
    "fubini_check",
    "coarea_check",
    "area_check",
    "mc_volume",
    "MCConfig",
]

DEFAULT_NODES = 64
MAX_NODES = 512
QUAD_RTOL = 1e-9
CRITICAL_SV = 1e-8
FD_STEP = 1e-6


# ---------------------------------------------------------------------------
# patches and fields


def _fd_jacobian(fmap, u, step=FD_STEP):
    u = np.atleast_2d(np.asarray(u, dtype=float))
    probes = []
    k = u.shape[1]
    h = step * np.maximum(1.0, np.abs(u))
    cols = []
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        hi = h[:, i:i + 1]
        cols.append((np.asarray(fmap(u + hi * e)) -
                     np.asarray(fmap(u - hi * e))) / (2.0 * hi))
    return np.stack(cols, axis=2)       # (M, n, k)


class Patch:
    """A chart: axis-aligned box domain, vectorized map, differential access.

    Parameters
    ----------
    box : array_like (k, 2)
    fmap : callable mapping (M, k) parameter points to (M, n) ambient points
    jac : callable (M, k) -> (M, n, k), optional; central differences with
        step ``1e-6 * max(1, |u|)`` otherwise
    orientation : {+1, -1}
        Sign of the tangent wedge d1 ^ ... ^ dk relative to the intended
        orientation of the image.
    nodes : int, optional
        Per-axis quadrature nodes; None leaves the adaptive default.
    """

    def __init__(self, box, fmap, jac=None, orientation=1, nodes=None, name=""):
        self.box = np.atleast_2d(np.asarray(box, dtype=float))
        if self.box.shape[1] != 2 or np.any(self.box[:, 1] <= self.box[:, 0]):
            raise ValueError("box must be (k, 2) with positive widths")
        self.fmap = fmap
        self.jac = jac
        if orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        self.orientation = int(orientation)
        self.nodes = nodes
        self.name = name

    @property
    def dim(self):
        return self.box.shape[0]

    def points(self, u):
        return np.asarray(self.fmap(np.atleast_2d(np.asarray(u, float))), float)

    def frames(self, u):
        """Differential as stacked (M, n, k) matrices (columns = d_i map)."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.jac is not None:
            return np.asarray(self.jac(u), dtype=float)
        return _fd_jacobian(self.fmap, u)

    def tangent_rows(self, u):
        """Tangent frames with spanning vectors as rows: (M, k, n)."""
        return self.frames(u).transpose(0, 2, 1)


class ScalarField:
    """A scalar function with vectorized evaluation and a gradient."""

    def __init__(self, fn, dim, grad=None, name="field", validate=True):
        self.fn = fn
        self.dim = int(dim)
        self.grad = grad
        self.name = name
        if validate and grad is not None:
            self._validate()

    def _validate(self, probes=16, tol=1e-5):
        rng = np.random.default_rng(1122)
        pts = rng.uniform(-0.7, 0.7, size=(probes, self.dim))
        fd = _fd_jacobian(lambda p: np.asarray(self.fn(p))[:, None], pts)[:, 0, :]
        an = np.asarray(self.grad(pts))
        scale = max(float(np.max(np.abs(an))), 1.0)
        if np.max(np.abs(fd - an)) > tol * scale:
            raise ValueError("analytic gradient disagrees with finite differences")

    def __call__(self, p):
        return np.asarray(self.fn(np.asarray(p, dtype=float)))

    def gradient(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.grad is not None:
            return np.asarray(self.grad(p))
        return _fd_jacobian(lambda q: np.asarray(self.fn(q))[:, None], p)[:, 0, :]


class VectorField:
    """A vector field with vectorized evaluation and a differential."""

    def __init__(self, fn, dim, jac=None, name="field", validate=True):
        self.fn = fn
        self.dim = int(dim)
        self.jac = jac
        self.name = name
        if validate and jac is not None:
            self._validate()

    def _validate(self, probes=16, tol=1e-5):
        rng = np.random.default_rng(3344)
        pts = rng.uniform(-0.7, 0.7, size=(probes, self.dim))
        fd = _fd_jacobian(self.fn, pts)
        an = np.asarray(self.jac(pts))
        scale = max(float(np.max(np.abs(an))), 1.0)
        if np.max(np.abs(fd - an)) > tol * scale:
            raise ValueError("analytic differential disagrees with finite differences")

    def __call__(self, p):
        return np.asarray(self.fn(np.asarray(p, dtype=float)))

    def differential(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if self.jac is not None:
            return np.asarray(self.jac(p))
        return _fd_jacobian(self.fn, p)


# ---------------------------------------------------------------------------
# density fields (constant or position dependent)


class _DensityField:
    def __init__(self, obj):
        if isinstance(obj, Density):
            self.constant, self.factory = obj, None
        elif callable(obj):
            self.constant, self.factory = None, obj
        else:
            raise TypeError("expected a Density or a point -> Density callable")

    def at(self, point):
        return self.constant if self.constant is not None else self.factory(
            np.asarray(point, dtype=float))

    def eval(self, points, frames_rows, sign):
        """Values of the density on sign * (row wedge) at each point."""
        M = frames_rows.shape[0]
        if self.constant is not None and self.constant.batch is not None:
            signs = np.full(M, float(sign))
            return np.asarray(self.constant.batch(frames_rows, signs), float)
        out = np.empty(M)
        for i in range(M):
            den = self.at(points[i])
            out[i] = den(SimpleKVector(frames_rows[i], sign))
        return out


def as_density_field(obj):
    return obj if isinstance(obj, _DensityField) else _DensityField(obj)


# ---------------------------------------------------------------------------
# quadrature


def gauss_legendre_points(box, nodes):
    """Tensor Gauss-Legendre nodes and weights over a box."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    axes, wts = [], []
    for lo, hi in box:
        x, w = np.polynomial.legendre.leggauss(int(nodes))
        axes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wts.append(0.5 * (hi - lo) * w)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    weight = wts[0]
    for w in wts[1:]:
        weight = np.multiply.outer(weight, w)
    return pts, weight.ravel()


def integrate_patch(patch, integrand, nodes=None, rtol=QUAD_RTOL):
    """Integrate ``integrand(u_points, weights) -> value`` with node doubling.

    A fixed node count (argument or patch attribute) skips the doubling.
    """
    fixed = nodes if nodes is not None else patch.nodes
    if fixed is not None:
        u, w = gauss_legendre_points(patch.box, fixed)
        return float(integrand(u, w))
    level = DEFAULT_NODES
    u, w = gauss_legendre_points(patch.box, level)
    prev = float(integrand(u, w))
    while level < MAX_NODES:
        level *= 2
        u, w = gauss_legendre_points(patch.box, level)
        cur = float(integrand(u, w))
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-12):
            return cur
        prev = cur
    return prev


def integrate_density(patch, density, weight=None, nodes=None,
                      check_rank=True):
    """Quadrature of a density over a patch: sum_w F(tangent wedge) * weight.

    The tangent wedge is oriented by the patch's orientation sign, which is
    what an asymmetric density consumes.  A rank-deficient differential at a
    node raises.
    """
    field = as_density_field(density)

    def integrand(u, w):
        rows = patch.tangent_rows(u)
        if check_rank:
            sv = np.linalg.svd(rows, compute_uv=False)
            scale = sv[:, 0]
            if np.any(sv[:, -1] <= CRITICAL_SV * np.maximum(scale, 1e-30)):
                raise ValueError("rank-deficient differential at a quadrature node")
        pts = patch.points(u)
        vals = field.eval(pts, rows, patch.orientation)
        if weight is not None:
            vals = vals * np.asarray(weight(pts), dtype=float)
        return float(np.sum(w * vals))

    return integrate_patch(patch, integrand, nodes=nodes)


# ---------------------------------------------------------------------------
# change of variables


def _jacobian_batch(frames, F, G):
    """J(dphi; F, G) at stacked square frames (vectorized when possible)."""
    M = frames.shape[0]
    n = frames.shape[2]
    eye = np.broadcast_to(np.eye(n), (M, n, n))
    ones = np.ones(M)
    if F.batch is not None and G.batch is not None:
        denom = np.asarray(F.batch(np.ascontiguousarray(eye), ones))
        numer = np.asarray(G.batch(frames.transpose(0, 2, 1), ones))
        return numer / denom
    out = np.empty(M)
    for i in range(M):
        out[i] = jacobian(frames[i], F, G)
    return out


def change_of_variables_check(phi, B, F, G, f=None, nodes=None, name="cov"):
    """Both sides of the density change-of-variables identity on a patch.

    ``phi`` is a VectorField-like map (callable + differential) embedding the
    image of ``B``; orientation reversal (negative determinant) raises.
    Returns a Report with one check.
    """
    phi = phi if isinstance(phi, VectorField) else VectorField(phi, B.dim)

    def image_map(u):
        return phi(B.points(u))

    def image_jac(u):
        base = B.frames(u)
        dphi = phi.differential(B.points(u))
        return dphi @ base

    image = Patch(B.box, image_map, jac=image_jac,
                  orientation=B.orientation, nodes=B.nodes, name=f"{name}-image")
    lhs = integrate_density(image, G, weight=f, nodes=nodes)

    fF = as_density_field(F)
    fG = as_density_field(G)

    def integrand(u, w):
        pts = B.points(u)
        rows = B.tangent_rows(u)
        dphi = phi.differential(pts)
        dets = np.linalg.det(dphi)
        if np.any(dets <= 0):
            raise ValueError("orientation-reversing map in change of variables")
        if fF.constant is not None and fG.constant is not None:
            J = _jacobian_batch(dphi, fF.constant, fG.constant)
        else:
            J = np.array([jacobian(dphi[i], fF.at(pts[i]),
                                   fG.at(phi(pts[i:i + 1])[0]))
                          for i in range(pts.shape[0])])
        vals = fF.eval(pts, rows, B.orientation) * J
        if f is not None:
            vals = vals * np.asarray(f(phi(pts)), dtype=float)
        return float(np.sum(w * vals))

    rhs = integrate_patch(B, integrand, nodes=nodes)
    rep = Report(scenario=name, kind="cov", checks=[])
    rep.add("change-of-variables", "change-of-variables", lhs, rhs,
            tolerance=1e-8)
    return rep


# ---------------------------------------------------------------------------
# fiber integration


def fiber_integral(pi, mu, b, fiber_patch, nodes=None, lift_offset=None,
                   consistency_tol=1e-8):
    """Value at ``b`` of the pushforward of a top density under a submersion.

    The value is reported against the standard basis wedge of the base.
    Lifts solve d pi (lift) = e_j with the minimal-norm (pseudoinverse)
    solution; ``lift_offset`` adds a kernel-valued correction, which must not
    change the result (tested property).
    """
    pi = pi if isinstance(pi, VectorField) else VectorField(pi, fiber_patch.dim)
    mu_field = as_density_field(mu)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    m = b.shape[0]

    def integrand(u, w):
        pts = fiber_patch.points(u)
        proj = np.atleast_2d(pi(pts))
        if np.max(np.abs(proj - b[None, :])) > consistency_tol:
            raise ValueError("fiber parameterization is inconsistent with the map")
        rows = fiber_patch.tangent_rows(u)          # (M, n_fib, N)
        dpi = pi.differential(pts)                   # (M, m, N)
        lifts = np.linalg.pinv(dpi)                  # (M, N, m)
        if lift_offset is not None:
            lifts = lifts + lift_offset(pts)
        vals = np.empty(pts.shape[0])
        for i in range(pts.shape[0]):
            span = np.vstack([rows[i], lifts[i].T])
            vals[i] = mu_field.at(pts[i])(SimpleKVector(span))
        return float(np.sum(w * vals))

    return integrate_patch(fiber_patch, integrand, nodes=nodes)


def fubini_check(pi, mu, total_patch, base_box, fiber_for, nodes=None,
                 base_nodes=24, name="fubini"):
    """Total integral of a top density against the base integral of its
    pushforward (the fiber-integration identity)."""
    lhs = integrate_density(total_patch, mu, nodes=nodes)
    base_box = np.atleast_2d(np.asarray(base_box, dtype=float))
    pts, wts = gauss_legendre_points(base_box, base_nodes)
    vals = np.array([fiber_integral(pi, mu, p, fiber_for(p), nodes=nodes)
                     for p in pts])
    rhs = float(np.sum(wts * vals))
    rep = Report(scenario=name, kind="coarea", checks=[])
    rep.add("fiber-pushforward-total", "fiber-fubini", lhs, rhs, tolerance=1e-6)
    return rep


# ---------------------------------------------------------------------------
# coarea


def _fiber_orientation_signs(dpi, rows):
    """Fiber-last orientation: sign of det[lift columns, fiber columns]."""
    lifts = np.linalg.pinv(dpi)                      # (M, N, m)
    full = np.concatenate([lifts, rows.transpose(0, 2, 1)], axis=2)
    return np.sign(np.linalg.det(full))


def coarea_check(pi, region, F, mu, lam, level_patch_for, level_box,
                 g=None, nodes=None, level_nodes=24, oriented=None,
                 name="coarea"):
    """Both sides of the coarea identity for a map to R^n on a region.

    region : Patch of full dimension parameterizing the integration domain.
    level_patch_for : y -> Patch of the fiber over y (scenario supplied).
    level_box : (n, 2) box of base values covering the image of the region.
    g : optional scalar weight.

    Cells where the differential loses rank are excluded and their measure is
    reported (both sides of the identity vanish there).
    """
    pi = pi if isinstance(pi, VectorField) else VectorField(pi, region.dim)
    fF = as_density_field(F)
    fMu = as_density_field(mu)
    fLam = as_density_field(lam)
    if oriented is None:
        oriented = fF.constant is not None and not fF.constant.symmetric
    excluded = {"measure": 0.0}

    def lhs_integrand(u, w):
        pts = region.points(u)
        rows = region.tangent_rows(u)
        dpi = pi.differential(pts)
        sv = np.linalg.svd(dpi, compute_uv=False)
        ok = sv[:, -1] > CRITICAL_SV * np.maximum(sv[:, 0], 1e-30)
        mu_vals = fMu.eval(pts, rows, region.orientation)
        vals = np.zeros(pts.shape[0])
        for i in np.nonzero(ok)[0]:
            lam_i = fLam.at(pi(pts[i:i + 1])[0])
            vals[i] = cojacobian(dpi[i], lam_i, fF.at(pts[i]), fMu.at(pts[i]),
                                 oriented=oriented)
        vals = vals * mu_vals
        if g is not None:
            vals = vals * np.asarray(g(pts), dtype=float)
        excluded["measure"] += float(np.sum(w[~ok] * mu_vals[~ok]))
        return float(np.sum(w * vals))

    lhs = integrate_patch(region, lhs_integrand, nodes=nodes)

    level_box = np.atleast_2d(np.asarray(level_box, dtype=float))
    ypts, ywts = gauss_legendre_points(level_box, level_nodes)

    def fiber_value(y):
        patch = level_patch_for(y)

        def integrand(u, w):
            pts = patch.points(u)
            proj = np.atleast_2d(pi(pts))
            if np.max(np.abs(proj - y[None, :])) > 1e-8:
                raise ValueError("fiber parameterization inconsistent with the map")
            rows = patch.tangent_rows(u)
            if oriented:
                dpi = pi.differential(pts)
                signs = _fiber_orientation_signs(dpi, rows)
            else:
                signs = np.ones(pts.shape[0])
            vals = np.empty(pts.shape[0])
            for i in range(pts.shape[0]):
                den = fF.at(pts[i])
                vals[i] = den(SimpleKVector(rows[i], 1 if signs[i] >= 0 else -1))
            if g is not None:
                vals = vals * np.asarray(g(pts), dtype=float)
            return float(np.sum(w * vals))

        return integrate_patch(patch, integrand, nodes=nodes)

    m = level_box.shape[0]
    lam_unit = np.eye(m)
    rhs = 0.0
    for y, wy in zip(ypts, ywts):
        lam_y = fLam.at(y)
        rhs += wy * fiber_value(y) * lam_y(SimpleKVector(lam_unit))
    rep = Report(scenario=name, kind="coarea", checks=[])
    rep.add("coarea", "coarea", lhs, rhs, tolerance=1e-6,
            excluded_measure=excluded["measure"])
    return rep


# ---------------------------------------------------------------------------
# area formula


def area_check(fmap, domain, F, G, image_pieces, nodes=None, name="area"):
    """Both sides of the generalized area identity.

    image_pieces : list of (Patch, multiplicity) covering the image, with
    scenario-declared multiplicities.
    """
    fmap = fmap if isinstance(fmap, VectorField) else VectorField(fmap, domain.dim)
    fF = as_density_field(F)
    fG = as_density_field(G)
    excluded = {"measure": 0.0}

    def lhs_integrand(u, w):
        pts = domain.points(u)
        rows = domain.tangent_rows(u)
        df = fmap.differential(pts)
        sv = np.linalg.svd(df, compute_uv=False)
        ok = sv[:, -1] > CRITICAL_SV * np.maximum(sv[:, 0], 1e-30)
        f_vals = fF.eval(pts, rows, domain.orientation)
        vals = np.zeros(pts.shape[0])
        for i in np.nonzero(ok)[0]:
            vals[i] = jacobian(df[i], fF.at(pts[i]), fG.at(fmap(pts[i:i + 1])[0]))
        excluded["measure"] += float(np.sum(w[~ok] * f_vals[~ok]))
        return float(np.sum(w * vals * f_vals))

    lhs = integrate_patch(domain, lhs_integrand, nodes=nodes)
    rhs = 0.0
    for piece, mult in image_pieces:
        rhs += float(mult) * integrate_density(piece, G, nodes=nodes)
    rep = Report(scenario=name, kind="area", checks=[])
    rep.add("area-formula", "area-formula", lhs, rhs, tolerance=1e-6,
            excluded_measure=excluded["measure"])
    return rep
