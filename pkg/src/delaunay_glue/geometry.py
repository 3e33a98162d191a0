"""Parametrized surface patches, fundamental forms and mean curvature.

Every patch returns a :class:`Jet` holding the immersion and its first and
second parameter derivatives.  The unit normal is
``orientation * (x_u x x_v) / |x_u x x_v|`` and the mean curvature is the sum
of the principal curvatures,

    H = (L G - 2 M F + N E) / (E G - F^2),

so the unit cylinder and the sphere of radius 2 have H = 1 with the inward
normal, and Delaunay patches have H = 1 with
``nu = (-tau cosh sigma cos theta, -tau cosh sigma sin theta, sigma_s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .delaunay import DelaunayProfile
from .errors import DegenerateImmersionError, DomainError, RangeError

REGULARITY_TOL = 1e-14


@dataclass(frozen=True)
class Jet:
    """Second-order jet of an immersion; each field has shape (..., 3)."""

    x: np.ndarray
    xu: np.ndarray
    xv: np.ndarray
    xuu: np.ndarray
    xuv: np.ndarray
    xvv: np.ndarray

    def transformed(self, R: np.ndarray, b: np.ndarray | None = None, scale: float = 1.0) -> "Jet":
        def lin(v):
            return scale * (v @ R.T)

        x = lin(self.x) if b is None else lin(self.x) + b
        return Jet(x, lin(self.xu), lin(self.xv), lin(self.xuu), lin(self.xuv), lin(self.xvv))


@dataclass(frozen=True)
class FundamentalForms:
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray
    L: np.ndarray
    M: np.ndarray
    N: np.ndarray
    normal: np.ndarray

    @property
    def det_g(self) -> np.ndarray:
        return self.E * self.G - self.F**2

    @property
    def mean_curvature(self) -> np.ndarray:
        return (self.L * self.G - 2.0 * self.M * self.F + self.N * self.E) / self.det_g

    @property
    def gauss_curvature(self) -> np.ndarray:
        return (self.L * self.N - self.M**2) / self.det_g

    def as_tuple(self):
        return self.E, self.F, self.G, self.L, self.M, self.N


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def forms_from_jet(jet: Jet, orientation: int = 1) -> FundamentalForms:
    E = _dot(jet.xu, jet.xu)
    F = _dot(jet.xu, jet.xv)
    G = _dot(jet.xv, jet.xv)
    det = E * G - F**2
    scale = np.maximum(E * G, 1e-300)
    if np.any(~np.isfinite(det)) or np.any(det <= REGULARITY_TOL * scale):
        raise DegenerateImmersionError("EG - F^2 <= 0: the immersion is singular")
    n = np.cross(jet.xu, jet.xv)
    n = orientation * n / np.linalg.norm(n, axis=-1, keepdims=True)
    return FundamentalForms(E, F, G, _dot(jet.xuu, n), _dot(jet.xuv, n), _dot(jet.xvv, n), n)


def mean_curvature_change(base: Jet, delta: Jet, orientation: int = 1) -> np.ndarray:
    """H(base + delta) - H(base) without cancellation between O(1) quantities.

    Every difference of fundamental-form coefficients is expanded so that it
    is computed from ``delta`` directly; the result has rounding error
    relative to the size of ``delta`` rather than to the curvature itself.
    """
    xu, xv = base.xu, base.xv
    du, dv = delta.xu, delta.xv
    E = _dot(xu, xu)
    F = _dot(xu, xv)
    G = _dot(xv, xv)
    dE = 2 * _dot(xu, du) + _dot(du, du)
    dF = _dot(xu, dv) + _dot(du, xv) + _dot(du, dv)
    dG = 2 * _dot(xv, dv) + _dot(dv, dv)
    c = np.cross(xu, xv)
    dc = np.cross(xu, dv) + np.cross(du, xv) + np.cross(du, dv)
    nc = np.linalg.norm(c, axis=-1)
    cw = c + dc
    ncw = np.linalg.norm(cw, axis=-1)
    if np.any(ncw <= REGULARITY_TOL * np.maximum(nc, 1e-300)):
        raise DegenerateImmersionError("EG - F^2 <= 0 on the graph")
    dnc = (2 * _dot(c, dc) + _dot(dc, dc)) / (ncw + nc)
    n = orientation * c / nc[..., None]
    dn = orientation * (dc - (n * orientation) * dnc[..., None]) / ncw[..., None]
    nw = n + dn
    L = _dot(base.xuu, n)
    M = _dot(base.xuv, n)
    N = _dot(base.xvv, n)
    dL = _dot(delta.xuu, nw) + _dot(base.xuu, dn)
    dM = _dot(delta.xuv, nw) + _dot(base.xuv, dn)
    dN = _dot(delta.xvv, nw) + _dot(base.xvv, dn)
    Ew, Fw, Gw = E + dE, F + dF, G + dG
    Lw, Mw = L + dL, M + dM
    num = L * G - 2 * M * F + N * E
    den = E * G - F * F
    dnum = (dL * Gw + L * dG) - 2 * (dM * Fw + M * dF) + (dN * Ew + N * dE)
    dden = dE * Gw + E * dG - dF * (F + Fw)
    del Lw, Mw
    return (dnum * den - num * dden) / (den * (den + dden))


# ---------------------------------------------------------------------------
# patches

class ParamPatch:
    """Base class: subclasses implement :meth:`jet` on broadcastable arrays."""

    #: parameter rectangle ((u_lo, u_hi), (v_lo, v_hi))
    domain: tuple[tuple[float, float], tuple[float, float]] = ((-np.inf, np.inf), (0.0, 2 * np.pi))
    orientation: int = 1
    periodic_v: bool = True
    analytic: bool = True

    def jet(self, u, v) -> Jet:
        raise NotImplementedError

    def position(self, u, v) -> np.ndarray:
        return self.jet(u, v).x

    def _check_domain(self, u, v) -> None:
        (a, b), (c, d) = self.domain
        u = np.asarray(u)
        v = np.asarray(v)
        tol = 1e-9
        if np.any(u < a - tol) or np.any(u > b + tol):
            raise RangeError("u outside the patch parameter rectangle")
        if not self.periodic_v and (np.any(v < c - tol) or np.any(v > d + tol)):
            raise RangeError("v outside the patch parameter rectangle")

    def normal(self, u, v) -> np.ndarray:
        return forms_from_jet(self.jet(u, v), self.orientation).normal

    def flipped(self) -> "ParamPatch":
        return OrientedPatch(self, -self.orientation)


def fundamental_forms(patch: ParamPatch, u, v) -> FundamentalForms:
    patch._check_domain(u, v)
    return forms_from_jet(patch.jet(u, v), patch.orientation)


def mean_curvature(patch: ParamPatch, u, v) -> np.ndarray:
    return fundamental_forms(patch, u, v).mean_curvature


class OrientedPatch(ParamPatch):
    def __init__(self, base: ParamPatch, orientation: int):
        self.base = base
        self.orientation = orientation
        self.domain = base.domain
        self.periodic_v = base.periodic_v
        self.analytic = base.analytic

    def jet(self, u, v) -> Jet:
        return self.base.jet(u, v)


class RigidPatch(ParamPatch):
    """``scale * R x + b`` applied to a base patch."""

    def __init__(self, base: ParamPatch, R=None, b=None, scale: float = 1.0):
        self.base = base
        self.R = np.eye(3) if R is None else np.asarray(R, dtype=float)
        self.b = np.zeros(3) if b is None else np.asarray(b, dtype=float)
        if scale <= 0:
            raise DomainError("dilation factor must be positive")
        self.scale = float(scale)
        self.orientation = base.orientation * int(np.sign(np.linalg.det(self.R)))
        self.domain = base.domain
        self.periodic_v = base.periodic_v
        self.analytic = base.analytic

    def jet(self, u, v) -> Jet:
        return self.base.jet(u, v).transformed(self.R, self.b, self.scale)


def _stack(*comps):
    b = np.broadcast_arrays(*comps)
    return np.stack(b, axis=-1)


class SpherePatch(ParamPatch):
    """Sphere of radius ``r`` centred at (0, 0, r), u = polar angle from the south pole."""

    def __init__(self, radius: float = 2.0):
        self.r = float(radius)
        self.domain = ((0.0, np.pi), (0.0, 2 * np.pi))
        # x_u x x_v already points into the ball, giving H = +2/r
        self.orientation = 1

    def jet(self, u, v) -> Jet:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        r = self.r
        su, cu, sv, cv = np.sin(u), np.cos(u), np.sin(v), np.cos(v)
        z = np.zeros_like(u)
        x = _stack(r * su * cv, r * su * sv, r - r * cu)
        xu = _stack(r * cu * cv, r * cu * sv, r * su)
        xv = _stack(-r * su * sv, r * su * cv, z)
        xuu = _stack(-r * su * cv, -r * su * sv, r * cu)
        xuv = _stack(-r * cu * sv, r * cu * cv, z)
        xvv = _stack(-r * su * cv, -r * su * sv, z)
        return Jet(x, xu, xv, xuu, xuv, xvv)


class CylinderPatch(ParamPatch):
    """Cylinder of radius ``r`` about the z-axis, (t, theta) -> (r cos, r sin, t)."""

    def __init__(self, radius: float = 1.0):
        self.r = float(radius)

    def jet(self, u, v) -> Jet:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        r = self.r
        sv, cv = np.sin(v), np.cos(v)
        z = np.zeros_like(u)
        o = np.ones_like(u)
        return Jet(
            _stack(r * cv, r * sv, u), _stack(z, z, o), _stack(-r * sv, r * cv, z),
            _stack(z, z, z), _stack(z, z, z), _stack(-r * cv, -r * sv, z),
        )


class CatenoidPatch(ParamPatch):
    """a (cosh s cos theta, cosh s sin theta, s)."""

    def __init__(self, a: float = 1.0):
        if a <= 0:
            raise DomainError("catenoid scale must be positive")
        self.a = float(a)

    def jet(self, u, v) -> Jet:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        a = self.a
        ch, sh, sv, cv = np.cosh(u), np.sinh(u), np.sin(v), np.cos(v)
        z = np.zeros_like(u)
        return Jet(
            _stack(a * ch * cv, a * ch * sv, a * u),
            _stack(a * sh * cv, a * sh * sv, a * np.ones_like(u)),
            _stack(-a * ch * sv, a * ch * cv, z),
            _stack(a * ch * cv, a * ch * sv, z),
            _stack(-a * sh * sv, a * sh * cv, z),
            _stack(-a * ch * cv, -a * ch * sv, z),
        )


def delaunay_jet(tau: float, sig, sig_s, k, v) -> Jet:
    """Analytic jet of the isothermal Delaunay immersion from (sigma, sigma_s, k) samples."""
    sig, sig_s, k, v = np.broadcast_arrays(*(np.asarray(a, float) for a in (sig, sig_s, k, v)))
    t2 = tau * tau
    sig_ss = -0.5 * t2 * np.sinh(2.0 * sig)
    rho = tau * np.exp(sig)
    k_s = 0.5 * t2 * (1.0 + np.exp(2.0 * sig))
    k_ss = t2 * np.exp(2.0 * sig) * sig_s
    rho_s = rho * sig_s
    rho_ss = rho * (sig_ss + sig_s**2)
    c, s = np.cos(v), np.sin(v)
    z = np.zeros_like(sig)
    return Jet(
        _stack(rho * c, rho * s, k),
        _stack(rho_s * c, rho_s * s, k_s),
        _stack(-rho * s, rho * c, z),
        _stack(rho_ss * c, rho_ss * s, k_ss),
        _stack(-rho_s * s, rho_s * c, z),
        _stack(-rho * c, -rho * s, z),
    )


class DelaunayPatch(ParamPatch):
    """Delaunay surface in isothermal coordinates (s, theta)."""

    def __init__(self, profile: DelaunayProfile):
        self.profile = profile
        self.domain = ((profile.s_min, profile.s_max), (0.0, 2 * np.pi))

    def jet(self, u, v) -> Jet:
        u = np.asarray(u, float)
        ev = self.profile.evaluate(u)
        return delaunay_jet(self.profile.tau, ev["sigma"], ev["sigma_s"], ev["k"], v)

    def normal(self, u, v) -> np.ndarray:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        ev = self.profile.evaluate(u)
        xi = self.profile.tau * np.cosh(ev["sigma"])
        return _stack(-xi * np.cos(v), -xi * np.sin(v), ev["sigma_s"])


class CylindricalDelaunayPatch(ParamPatch):
    """Delaunay surface as a surface of revolution (t, theta) -> (rho cos, rho sin, t)."""

    def __init__(self, profile: DelaunayProfile):
        self.profile = profile
        self.domain = ((float(profile.k[0]), float(profile.k[-1])), (0.0, 2 * np.pi))
        # x_t x x_theta points inward like the isothermal normal
        self.orientation = 1

    def s_of_t(self, t) -> np.ndarray:
        t = np.asarray(t, float)
        p = self.profile
        s = np.interp(t, p.k, p.grid)
        for _ in range(30):
            ev = p.evaluate(np.clip(s, p.s_min, p.s_max))
            ds = (ev["k"] - t) / ev["k_s"]
            s = np.clip(s - ds, p.s_min, p.s_max)
            if np.max(np.abs(ds), initial=0.0) < 1e-14:
                break
        return s

    def radius(self, t):
        s = self.s_of_t(t)
        ev = self.profile.evaluate(s)
        ss = ev["sigma_s"]
        rho = self.profile.tau * np.exp(ev["sigma"])
        q = np.sqrt(1.0 - ss**2)
        rho_t = ss / q
        # d rho_t / dt = (d rho_t / ds) / k_s
        rho_tt = ev["sigma_ss"] / q**3 / ev["k_s"]
        return rho, rho_t, rho_tt

    def jet(self, u, v) -> Jet:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        rho, rt, rtt = self.radius(u)
        c, s = np.cos(v), np.sin(v)
        z = np.zeros_like(u)
        o = np.ones_like(u)
        return Jet(
            _stack(rho * c, rho * s, u), _stack(rt * c, rt * s, o), _stack(-rho * s, rho * c, z),
            _stack(rtt * c, rtt * s, z), _stack(-rt * s, rt * c, z), _stack(-rho * c, -rho * s, z),
        )


# ---------------------------------------------------------------------------
# finite-difference patches

def _fd_jet(X: Callable, u, v, hu: float, hv: float) -> Jet:
    """Fourth-order central differences of a map X(u, v) -> (..., 3)."""
    u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
    c1 = (1.0 / 12, -8.0 / 12, 0.0, 8.0 / 12, -1.0 / 12)
    c2 = (-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12)
    offs = (-2, -1, 0, 1, 2)
    x0 = X(u, v)
    xu_rows = [X(u + o * hu, v) if o else x0 for o in offs]
    xv_rows = [X(u, v + o * hv) if o else x0 for o in offs]
    xu = sum(c * r for c, r in zip(c1, xu_rows)) / hu
    xv = sum(c * r for c, r in zip(c1, xv_rows)) / hv
    xuu = sum(c * r for c, r in zip(c2, xu_rows)) / hu**2
    xvv = sum(c * r for c, r in zip(c2, xv_rows)) / hv**2
    xuv = 0.0
    for a, ca in zip(offs, c1):
        if not ca:
            continue
        for b, cb in zip(offs, c1):
            if cb:
                xuv = xuv + ca * cb * X(u + a * hu, v + b * hv)
    xuv = xuv / (hu * hv)
    return Jet(x0, xu, xv, xuu, xuv, xvv)


class FunctionPatch(ParamPatch):
    """A patch given only by its immersion map; derivatives by central differences."""

    analytic = False

    def __init__(self, X: Callable, domain=((-np.inf, np.inf), (0.0, 2 * np.pi)),
                 orientation: int = 1, step: float = 1e-4, scale: float = 1.0,
                 periodic_v: bool = True):
        self.X = X
        self.domain = domain
        self.orientation = orientation
        self.h = step * scale
        self.periodic_v = periodic_v

    def jet(self, u, v) -> Jet:
        return _fd_jet(self.X, u, v, self.h, self.h)


class NormalGraphPatch(ParamPatch):
    """x + w V over a base patch, V the unit normal or another vector field.

    The base jet is used as is and only the displacement ``w V`` is
    differentiated numerically, so ``w = 0`` reproduces the base exactly.
    """

    analytic = False

    def __init__(self, base: ParamPatch, w: Callable, vector_field: Callable | None = None,
                 step: float = 1e-4):
        self.base = base
        self.w = w
        self.field = base.normal if vector_field is None else vector_field
        self.h = step
        self.domain = base.domain
        self.orientation = base.orientation
        self.periodic_v = base.periodic_v

    def displacement(self, u, v) -> np.ndarray:
        u, v = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float))
        return np.asarray(self.w(u, v), float)[..., None] * self.field(u, v)

    def jet(self, u, v) -> Jet:
        b = self.base.jet(u, v)
        d = _fd_jet(self.displacement, u, v, self.h, self.h)
        return Jet(b.x + d.x, b.xu + d.xu, b.xv + d.xv, b.xuu + d.xuu, b.xuv + d.xuv,
                   b.xvv + d.xvv)


def normal_graph_patch(base: ParamPatch, w: Callable, vector_field: Callable | None = None,
                       step: float = 1e-4) -> NormalGraphPatch:
    """The patch x + w nu over ``base``; ``vector_field`` defaults to the unit normal."""
    return NormalGraphPatch(base, w, vector_field, step)


def gauss_equation_residual(profile: DelaunayProfile) -> float:
    """sup |sigma_ss + (tau^2/2) sinh 2 sigma| with sigma_ss by five-point differences."""
    if profile.params.is_cylinder:
        return 0.0
    sig = profile.sigma
    h = profile.step
    if len(sig) < 5:
        raise RangeError("need at least five grid points")
    d2 = (-sig[:-4] + 16 * sig[1:-3] - 30 * sig[2:-2] + 16 * sig[3:-1] - sig[4:]) / (12 * h * h)
    res = d2 + 0.5 * profile.tau**2 * np.sinh(2.0 * sig[2:-2])
    return float(np.abs(res).max())


# ---------------------------------------------------------------------------
# meshes

@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray
    mean_curvature: np.ndarray
    shape: tuple[int, int]

    @property
    def radii(self) -> np.ndarray:
        return np.hypot(self.vertices[:, 0], self.vertices[:, 1])


def sample_mesh(patch: ParamPatch, resolution: tuple[int, int] | int,
                u_range: tuple[float, float] | None = None,
                v_range: tuple[float, float] | None = None) -> SurfaceMesh:
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    nu_, nv = resolution
    if nu_ < 4 or nv < 4:
        raise DomainError("mesh resolution must be at least 4 in each direction")
    (ua, ub), (va, vb) = patch.domain
    if u_range is not None:
        ua, ub = u_range
    if v_range is not None:
        va, vb = v_range
    if not (np.isfinite(ua) and np.isfinite(ub)):
        raise RangeError("an explicit finite u_range is needed for this patch")
    us = np.linspace(ua, ub, nu_)
    wrap = patch.periodic_v and v_range is None
    vs = np.linspace(va, vb, nv, endpoint=not wrap)
    U, V = np.meshgrid(us, vs, indexing="ij")
    ff = fundamental_forms(patch, U, V)
    verts = patch.position(U, V).reshape(-1, 3)
    idx = np.arange(nu_ * nv).reshape(nu_, nv)
    faces = []
    ncol = nv if wrap else nv - 1
    for i in range(nu_ - 1):
        for j in range(ncol):
            jn = (j + 1) % nv
            faces.append((idx[i, j], idx[i + 1, j], idx[i + 1, jn], idx[i, jn]))
    faces = np.asarray(faces, dtype=np.int64)
    q = verts[faces]
    area = 0.5 * np.linalg.norm(np.cross(q[:, 2] - q[:, 0], q[:, 3] - q[:, 1]), axis=1)
    if np.any(area <= 0.0):
        raise DegenerateImmersionError("mesh has a face of zero area")
    return SurfaceMesh(verts, faces, ff.normal.reshape(-1, 3),
                       ff.mean_curvature.reshape(-1), (nu_, nv))


def _f9(x: float) -> str:
    return format(float(x), ".9g")


def export_mesh(mesh: SurfaceMesh, path: str | Path, fmt: str | None = None,
                name: str | None = None) -> None:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "obj").lower()
    if fmt == "obj":
        lines = []
        if name:
            lines.append(f"o {name}")
        lines += ["v " + " ".join(_f9(c) for c in v) for v in mesh.vertices]
        lines += ["vn " + " ".join(_f9(c) for c in n) for n in mesh.normals]
        lines += ["f " + " ".join(f"{i + 1}//{i + 1}" for i in f) for f in mesh.faces]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "ply":
        head = [
            "ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}",
            "property float x", "property float y", "property float z",
            "property float nx", "property float ny", "property float nz",
            "property float mean_curvature", f"element face {len(mesh.faces)}",
            "property list uchar int vertex_indices", "end_header",
        ]
        body = [
            " ".join(_f9(c) for c in (*v, *n, h))
            for v, n, h in zip(mesh.vertices, mesh.normals, mesh.mean_curvature)
        ]
        body += [f"{len(f)} " + " ".join(str(i) for i in f) for f in mesh.faces]
        path.write_text("\n".join(head + body) + "\n")
    else:
        raise DomainError(f"unsupported mesh format {fmt!r}")


def export_meshes_obj(meshes: dict[str, SurfaceMesh], path: str | Path) -> None:
    """Several meshes as separate objects in one OBJ file (indices offset per piece)."""
    lines = []
    off = 0
    for name, mesh in meshes.items():
        lines.append(f"o {name}")
        lines += ["v " + " ".join(_f9(c) for c in v) for v in mesh.vertices]
        lines += ["f " + " ".join(str(i + 1 + off) for i in f) for f in mesh.faces]
        off += len(mesh.vertices)
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj_vertices(path: str | Path) -> np.ndarray:
    verts = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(t) for t in line.split()[1:4]])
    return np.asarray(verts)


def write_curvature_csv(patch: ParamPatch, us, vs, path: str | Path) -> None:
    U, V = np.meshgrid(np.asarray(us, float), np.asarray(vs, float), indexing="ij")
    H = mean_curvature(patch, U, V)
    rows = ["u1,u2,H"]
    rows += [f"{_f9(a)},{_f9(b)},{_f9(h)}" for a, b, h in zip(U.ravel(), V.ravel(), H.ravel())]
    Path(path).write_text("\n".join(rows) + "\n")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


__all__ = [
    "Jet", "FundamentalForms", "ParamPatch", "SpherePatch", "CylinderPatch", "CatenoidPatch",
    "DelaunayPatch", "CylindricalDelaunayPatch", "FunctionPatch", "RigidPatch", "OrientedPatch",
    "SurfaceMesh", "fundamental_forms", "mean_curvature", "forms_from_jet", "delaunay_jet",
    "normal_graph_patch", "NormalGraphPatch", "mean_curvature_change", "gauss_equation_residual", "sample_mesh", "export_mesh",
    "export_meshes_obj", "read_obj_vertices", "write_curvature_csv", "random_rotation",
]
