"""Ends, deformation parameters and Cauchy-data matching.

Each end is a half-Delaunay surface attached at the interface ``s = s_b``,
where ``s_b = S_{eps_l}/8`` and ``eps_l = a_l * eps``.  An end is moved by the
six parameters ``(t1, t2, r1, r2, d, delta)``:

    D_P = R_omega(D_{eps_l - delta}) + (-t1, -t2, -d),    omega = (r2, -r1, 0),

in the end's frame (axis along e_z).  Over ``D_P`` the undeformed interior is
then, to leading order, the normal graph

    w0 = -(t1 cos + t2 sin)/cosh s - (r1 cos + r2 sin) eps_l cosh s + d + delta s.

Matching equates the per-mode Cauchy data (value, slope in the end's s) of
the interior and of the end at ``s_b``: high modes by a fixed point on the
Dirichlet data, low modes by a Newton solve for the parameters.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .delaunay import neck_params, period_S, solve_profile
from .errors import (ConfigurationError, ConsistencyError, DivergenceError, DomainError,
                     RangeError)
from .geometry import Jet, SurfaceMesh, delaunay_jet, forms_from_jet
from .graph_cmc import (CauchyData, displacement_jet, delaunay_normal_jet,
                        graph_mean_curvature, solve_graph, theta_derivative_matrix)
from .halfcyl import (THETA_POINTS, BoundaryData, chi_matrix, fd_derivative, half_cylinder,
                      project_modes, theta_grid)

log = logging.getLogger("delaunay_glue")

PARAM_NAMES = ("t1", "t2", "r1", "r2", "d", "delta")
SQ2PI = math.sqrt(2.0 * math.pi)
SQPI = math.sqrt(math.pi)
KAPPA_DEFAULT = 1.25
MU_DEFAULT = 1.5


# ---------------------------------------------------------------------------
# configuration

def frame_from_axis(axis) -> np.ndarray:
    """Rotation taking e_z to ``axis``; the antipodal axis uses the half-turn about e_1."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise DomainError("end axis must be nonzero")
    a = a / n
    ez = np.array([0.0, 0.0, 1.0])
    c = float(a @ ez)
    if c > 1.0 - 1e-14:
        return np.eye(3)
    if c < -1.0 + 1e-14:
        return np.diag([1.0, -1.0, -1.0])
    v = np.cross(ez, a)
    return Rotation.from_rotvec(v / np.linalg.norm(v) * math.acos(c)).as_matrix()


@dataclass(frozen=True)
class EndConfig:
    index: int
    a: float
    axis: tuple[float, float, float]
    epsilon: float
    cut: float | None = None
    offset_values: dict[int, float] = field(default_factory=dict)
    offset_slopes: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.a <= 0:
            raise DomainError("end weight a must be positive")
        if not (0.0 < self.eps_l < 1.0):
            raise DomainError(f"scaled necksize a*eps = {self.eps_l} must lie in (0, 1)")

    @property
    def eps_l(self) -> float:
        return self.a * self.epsilon

    @property
    def frame(self) -> np.ndarray:
        return frame_from_axis(self.axis)

    @property
    def period(self) -> float:
        return period_S(neck_params(self.eps_l))

    @property
    def s_boundary(self) -> float:
        return self.period / 8.0

    @property
    def collar_scale(self) -> float:
        return min(1.0, 0.5 * self.s_boundary)

    @property
    def inner_cut(self) -> float:
        return self.cut if self.cut is not None else self.s_boundary - 1.5 * self.collar_scale

    @property
    def collar_fits(self) -> bool:
        """The truncation S/8 > s_l + 2 leaves room for a unit-scale collar."""
        return self.s_boundary > self.inner_cut + 2.0

    def offsets(self, J: int) -> tuple[BoundaryData, BoundaryData]:
        return (BoundaryData.from_dict(self.offset_values, J),
                BoundaryData.from_dict(self.offset_slopes, J))


@dataclass(frozen=True)
class GlueConfig:
    epsilon: float
    ends: tuple[EndConfig, ...]
    kappa: float = KAPPA_DEFAULT
    mu: float = MU_DEFAULT
    J: int = 12
    interior: str = "catenoid"
    end_model: str = "delaunay"
    tol: float = 1e-10
    max_iter: int = 30

    def __post_init__(self):
        if not (1.0 < self.kappa < 1.5):
            raise DomainError("kappa must lie in (1, 3/2)")
        if not (1.0 < self.mu < 2.0):
            raise DomainError("mu must lie in (1, 2)")
        if self.interior not in ("catenoid", "flat"):
            raise ConfigurationError(f"unknown interior model {self.interior!r}")
        if self.end_model not in ("delaunay", "flat"):
            raise ConfigurationError(f"unknown end model {self.end_model!r}")
        if len(self.ends) < 2:
            raise ConfigurationError("at least two ends are needed")

    @property
    def k(self) -> int:
        return len(self.ends)

    def with_epsilon(self, epsilon: float) -> "GlueConfig":
        ends = tuple(EndConfig(e.index, e.a, e.axis, epsilon, e.cut, dict(e.offset_values),
                               dict(e.offset_slopes)) for e in self.ends)
        return GlueConfig(epsilon, ends, self.kappa, self.mu, self.J, self.interior,
                          self.end_model, self.tol, self.max_iter)

    def end_signs(self) -> list[int]:
        """Orientation of each end's angle relative to the global angle about e_z."""
        out = []
        for e in self.ends:
            a = np.asarray(e.axis, float) / np.linalg.norm(e.axis)
            if abs(abs(a[2]) - 1.0) > 1e-12:
                raise ConfigurationError("rotations about e_z need end axes along +-e_z")
            out.append(1 if a[2] > 0 else -1)
        return out

    def rotated(self, theta0: float) -> "GlueConfig":
        """The configuration turned by theta0 about e_z (synthetic offsets follow)."""
        J = self.J
        ends = []
        for e, sg in zip(self.ends, self.end_signs()):
            ov = BoundaryData.from_dict(e.offset_values, J).rotated(sg * theta0)
            osl = BoundaryData.from_dict(e.offset_slopes, J).rotated(sg * theta0)
            ends.append(EndConfig(
                e.index, e.a, e.axis, e.epsilon, e.cut,
                {j: float(ov.coeffs[j + J]) for j in range(-J, J + 1) if ov.coeffs[j + J]},
                {j: float(osl.coeffs[j + J]) for j in range(-J, J + 1) if osl.coeffs[j + J]},
            ))
        return GlueConfig(self.epsilon, tuple(ends), self.kappa, self.mu, self.J,
                          self.interior, self.end_model, self.tol, self.max_iter)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon, "kappa": self.kappa, "mu": self.mu, "J": self.J,
            "interior": self.interior, "end_model": self.end_model, "tol": self.tol,
            "ends": [{"a": e.a, "axis": list(e.axis), "cut": e.cut,
                      "offset_values": {str(k): v for k, v in e.offset_values.items()},
                      "offset_slopes": {str(k): v for k, v in e.offset_slopes.items()}}
                     for e in self.ends],
        }


def config_from_dict(d: dict) -> GlueConfig:
    try:
        eps = float(d["epsilon"])
        raw = d["ends"]
    except KeyError as exc:
        raise ConfigurationError(f"gluing config lacks {exc}") from None
    ends = []
    for i, e in enumerate(raw):
        ends.append(EndConfig(
            i, float(e.get("a", 1.0)), tuple(float(x) for x in e.get("axis", (0, 0, 1))), eps,
            None if e.get("cut") is None else float(e["cut"]),
            {int(k): float(v) for k, v in e.get("offset_values", {}).items()},
            {int(k): float(v) for k, v in e.get("offset_slopes", {}).items()},
        ))
    return GlueConfig(eps, tuple(ends), float(d.get("kappa", KAPPA_DEFAULT)),
                      float(d.get("mu", MU_DEFAULT)), int(d.get("J", 12)),
                      d.get("interior", "catenoid"), d.get("end_model", "delaunay"),
                      float(d.get("tol", 1e-10)), int(d.get("max_iter", 30)))


def load_config(path: str | Path) -> GlueConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def two_ended(epsilon: float, **kw) -> GlueConfig:
    """The k = 2 catenoid configuration with axes +e_z and -e_z."""
    ends = (EndConfig(0, 1.0, (0.0, 0.0, 1.0), epsilon), EndConfig(1, 1.0, (0.0, 0.0, -1.0), epsilon))
    return GlueConfig(epsilon, ends, **kw)


# ---------------------------------------------------------------------------
# deformation parameters

@dataclass(frozen=True)
class DeformationSet:
    params: np.ndarray   # shape (k, 6): t1, t2, r1, r2, d, delta

    @classmethod
    def zeros(cls, k: int) -> "DeformationSet":
        return cls(np.zeros((k, 6)))

    def end(self, i: int) -> np.ndarray:
        return self.params[i]

    def weighted_size(self, epsilon: float) -> float:
        p = self.params
        t = np.hypot(p[:, 0], p[:, 1]).max(initial=0.0)
        r = np.hypot(p[:, 2], p[:, 3]).max(initial=0.0)
        d = np.abs(p[:, 4]).max(initial=0.0)
        dl = np.abs(p[:, 5]).max(initial=0.0)
        return float(epsilon**0.25 * t + epsilon**0.75 * r + d + math.log(1.0 / epsilon) * dl)

    def rotated(self, theta0: float, signs=None) -> "DeformationSet":
        """Parameters after turning by theta0; signs give each end's angular orientation."""
        signs = np.ones(len(self.params)) if signs is None else np.asarray(signs, float)
        c, s = np.cos(signs * theta0), np.sin(signs * theta0)
        p = self.params.copy()
        for a, b in ((0, 1), (2, 3)):
            x, y = p[:, a].copy(), p[:, b].copy()
            p[:, a] = c * x - s * y
            p[:, b] = s * x + c * y
        return DeformationSet(p)

    def to_dict(self) -> list[dict]:
        return [dict(zip(PARAM_NAMES, map(float, row))) for row in self.params]


def deformation_graph(end: EndConfig, P: np.ndarray, s, theta, check_collar: bool = True):
    """The leading-order graph w0 of the undeformed interior over D_P."""
    s = np.asarray(s, dtype=float)
    sb = end.s_boundary
    if check_collar and (np.any(s < sb - 2.0 - 1e-12) or np.any(s > sb + 1e-12)):
        raise RangeError(f"s outside the collar [{sb - 2.0:.6g}, {sb:.6g}]")
    t1, t2, r1, r2, d, dl = np.asarray(P, dtype=float)
    c, sn = np.cos(theta), np.sin(theta)
    return (-(t1 * c + t2 * sn) / np.cosh(s) - (r1 * c + r2 * sn) * end.eps_l * np.cosh(s)
            + d + dl * s)


def w0_low_cauchy(eps_l: float, P: np.ndarray, s: float) -> tuple[np.ndarray, np.ndarray]:
    """chi-coefficients (modes -1, 0, 1) of w0 and of its s-derivative at s."""
    t1, t2, r1, r2, d, dl = P
    ch, sh = math.cosh(s), math.sinh(s)
    val = np.array([
        -(t2 / ch + r2 * eps_l * ch) * SQPI,
        (d + dl * s) * SQ2PI,
        -(t1 / ch + r1 * eps_l * ch) * SQPI,
    ])
    slope = np.array([
        -(-t2 * sh / ch**2 + r2 * eps_l * sh) * SQPI,
        dl * SQ2PI,
        -(-t1 * sh / ch**2 + r1 * eps_l * sh) * SQPI,
    ])
    return val, slope


def low_mode_matrix(eps_l: float, s: float) -> np.ndarray:
    """6 x 6 derivative of (values, slopes) of w0's low modes with respect to P."""
    M = np.zeros((6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = 1.0
        v, sl = w0_low_cauchy(eps_l, e, s)
        M[:3, k] = v
        M[3:, k] = sl
    return M


def weighted_condition_number(eps_l: float, s: float, epsilon: float) -> float:
    """Condition number of the low-mode matrix in the weighted parameter scale."""
    w = np.array([epsilon**0.25, epsilon**0.25, epsilon**0.75, epsilon**0.75, 1.0,
                  math.log(1.0 / epsilon)])
    return float(np.linalg.cond(low_mode_matrix(eps_l, s) / w[None, :]))


def solve_low_mode_system(eps_l: float, s: float, values: np.ndarray,
                          slopes: np.ndarray) -> np.ndarray:
    """Parameters whose w0 has the given low-mode (value, slope) data at s."""
    rhs = np.concatenate([values, slopes])
    return np.linalg.solve(low_mode_matrix(eps_l, s), rhs)


# ---------------------------------------------------------------------------
# end geometry

def _rot_omega(P: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec([P[3], -P[2], 0.0]).as_matrix()


def deformed_end_map(end: EndConfig, P: np.ndarray):
    """(R, b, necksize) with D_P = F (R D_{eps_l - delta} + b) in global coordinates."""
    F = end.frame
    R = F @ _rot_omega(P)
    b = F @ np.array([-P[0], -P[1], -P[4]])
    return R, b, end.eps_l - P[5]


def _end_coords_sign(i: int) -> int:
    """+1 when the end's s agrees with the interior's s, -1 for the second end."""
    return 1 if i == 0 else -1


def to_global_modes(c: np.ndarray, sign: int) -> np.ndarray:
    """Mode coefficients in end coordinates (theta_l = sign theta) to interior ones."""
    if sign == 1:
        return c.copy()
    J = (len(c) - 1) // 2
    out = c.copy()
    out[:J] = -out[:J]
    return out


to_end_modes = to_global_modes


# ---------------------------------------------------------------------------
# interior

BLEND_ORDER = 6


def _smoothstep() -> tuple[np.polynomial.Polynomial, ...]:
    """Step rising from 0 to 1 on [0, 1] with BLEND_ORDER vanishing derivatives at both ends."""
    x = np.polynomial.Polynomial([0.0, 1.0])
    p = (x * (1 - x)) ** BLEND_ORDER
    P = p.integ()
    P = P / P(1.0)
    return P, P.deriv(), P.deriv(2)


_STEP = _smoothstep()


def _blend(s: np.ndarray, start: float, width: float):
    """eta = 1 on |s| <= start, 0 on |s| >= start + width, with its first two s-derivatives."""
    x = (np.abs(s) - start) / width
    inside = (x > 0) & (x < 1)
    xc = np.clip(x, 0.0, 1.0)
    P, P1, P2 = _STEP
    e0 = 1.0 - P(xc)
    e1 = np.where(inside, -P1(xc) * np.sign(s) / width, 0.0)
    e2 = np.where(inside, -P2(xc) / width**2, 0.0)
    return e0, e1, e2


@dataclass(eq=False)
class InteriorGeometry:
    """The blended interior surface on [-s_b, s_b] x S^1 with its jets and vector field."""

    grid: np.ndarray
    theta: np.ndarray
    base: Jet
    nu: Jet
    lam: np.ndarray       # conformal weight, (n_s, n_theta)
    V_avg: np.ndarray     # theta-averaged lam |A|^2
    H0: np.ndarray        # mean curvature of the base
    eta: np.ndarray
    s_b: float


def _spectral_theta(a: np.ndarray, order: int) -> np.ndarray:
    """theta-derivative along axis 1 by FFT."""
    n = a.shape[1]
    F = np.fft.rfft(a, axis=1)
    k = np.arange(F.shape[1])
    if order % 2 and n % 2 == 0:
        k = k.copy()
        k[-1] = 0
    mult = (1j * k) ** order
    shape = [1] * a.ndim
    shape[1] = -1
    return np.fft.irfft(F * mult.reshape(shape), n=n, axis=1)


def _jet_from_samples(X: np.ndarray, h: float, g: int) -> Jet:
    """Jet of sampled map X (n_ext, n_theta, 3) on rows g..n_ext-g-1."""
    xs = (X[:-4] - 8 * X[1:-3] + 8 * X[3:-1] - X[4:]) / (12 * h)
    xss = (-X[:-4] + 16 * X[1:-3] - 30 * X[2:-2] + 16 * X[3:-1] - X[4:]) / (12 * h * h)
    core = slice(g - 2, X.shape[0] - g - 2)
    xs = xs[core]
    xss = xss[core]
    x = X[g: X.shape[0] - g]
    return Jet(x, xs, _spectral_theta(x, 1), xss, _spectral_theta(xs, 1), _spectral_theta(x, 2))


def _catenoid_jet(a: float, s, t) -> Jet:
    ch, sh, c, sn = np.cosh(s), np.sinh(s), np.cos(t), np.sin(t)
    z = np.zeros_like(s)

    def v(x, y, w):
        return a * np.stack([x, y, w], axis=-1)

    return Jet(v(ch * c, ch * sn, s), v(sh * c, sh * sn, z + 1.0), v(-ch * sn, ch * c, z),
               v(ch * c, ch * sn, z), v(-sh * sn, sh * c, z), v(-ch * c, -ch * sn, z))


def _w0_jet(eps_l: float, P: np.ndarray, s, t):
    """(w, w_s, w_t, w_ss, w_st, w_tt) of the deformation graph w0."""
    t1, t2, r1, r2, d, dl = P
    c, sn = np.cos(t), np.sin(t)
    A, At = t1 * c + t2 * sn, -t1 * sn + t2 * c
    B, Bt = eps_l * (r1 * c + r2 * sn), eps_l * (-r1 * sn + r2 * c)
    sech, th, ch, sh = 1.0 / np.cosh(s), np.tanh(s), np.cosh(s), np.sinh(s)
    return (-A * sech - B * ch + d + dl * s,
            A * sech * th - B * sh + dl,
            -At * sech - Bt * ch,
            A * sech * (2 * sech**2 - 1) - B * ch,
            At * sech * th - Bt * sh,
            A * sech + B * ch)


def build_interior(config: GlueConfig, P: DeformationSet, step: float = 0.005,
                   n_theta: int = THETA_POINTS, ghost: int = 3) -> InteriorGeometry:
    if config.k != 2:
        raise ConfigurationError("the nonlinear interior is implemented for k = 2 only")
    e1, e2 = config.ends
    if abs(e1.a - e2.a) > 1e-14:
        raise ConfigurationError("a catenoid interior needs equal end weights")
    if np.linalg.norm(np.asarray(e1.axis) / np.linalg.norm(e1.axis) - (0, 0, 1)) > 1e-12 or \
            np.linalg.norm(np.asarray(e2.axis) / np.linalg.norm(e2.axis) - (0, 0, -1)) > 1e-12:
        raise ConfigurationError("the catenoid interior needs axes +e_z and -e_z")
    a_eps = e1.eps_l
    sb = e1.s_boundary
    n = max(8, math.ceil(sb / step))
    h = sb / n
    s_ext = h * np.arange(-n - ghost, n + ghost + 1)
    th = theta_grid(n_theta)
    S, T = np.meshgrid(s_ext, th, indexing="ij")
    c = e1.collar_scale
    eta, eta_s, eta_ss = _blend(s_ext, sb - 1.5 * c, 0.5 * c)

    # catenoid core
    cat = _catenoid_jet(a_eps, S, T)
    Ncat = np.stack([-np.cos(T) / np.cosh(S), -np.sin(T) / np.cosh(S), np.tanh(S)], axis=-1)

    # collars over D_P for each end in its own coordinates
    parts = {f: np.empty_like(cat.x) for f in ("x", "xu", "xv", "xuu", "xuv", "xvv")}
    Ncol = np.empty_like(cat.x)
    for i, end in enumerate((e1, e2)):
        sg = _end_coords_sign(i)
        rows = s_ext >= 0 if i == 0 else s_ext < 0
        sl, tl = sg * S[rows], sg * T[rows]
        Pl = P.end(i)
        R, b, nk = deformed_end_map(end, Pl)
        prof = solve_profile(neck_params(nk), sb + (ghost + 2) * h, min(h, 0.005))
        ev = prof.evaluate(sl)
        xD = delaunay_jet(prof.tau, ev["sigma"], ev["sigma_s"], ev["k"], tl)
        nD = delaunay_normal_jet(prof.tau, ev["sigma"], ev["sigma_s"], tl)
        w0 = _w0_jet(end.eps_l, Pl, sl, tl)
        d = displacement_jet(nD, *w0)
        jl = Jet(xD.x + d.x, sg * (xD.xu + d.xu), sg * (xD.xv + d.xv), xD.xuu + d.xuu,
                 xD.xuv + d.xuv, xD.xvv + d.xvv).transformed(R, b)
        for f in parts:
            parts[f][rows] = getattr(jl, f)
        Ncol[rows] = nD.x @ R.T
    col = Jet(**parts)
    e0, e1_, e2_ = (a[:, None, None] for a in (eta, eta_s, eta_ss))
    dx, dxu, dxv = cat.x - col.x, cat.xu - col.xu, cat.xv - col.xv
    full = Jet(
        col.x + e0 * dx,
        col.xu + e0 * dxu + e1_ * dx,
        col.xv + e0 * dxv,
        col.xuu + e0 * (cat.xuu - col.xuu) + 2 * e1_ * dxu + e2_ * dx,
        col.xuv + e0 * (cat.xuv - col.xuv) + e1_ * dxv,
        col.xvv + e0 * (cat.xvv - col.xvv),
    )
    Nt = e0 * Ncat + (1.0 - e0) * Ncol
    Nt /= np.linalg.norm(Nt, axis=-1, keepdims=True)

    core = slice(ghost, len(s_ext) - ghost)
    base = Jet(*(getattr(full, f)[core] for f in ("x", "xu", "xv", "xuu", "xuv", "xvv")))
    nu = _jet_from_samples(Nt, h, ghost)
    ff = forms_from_jet(base)
    lam = 0.5 * (ff.E + ff.G)
    A2 = ff.mean_curvature**2 - 2.0 * ff.gauss_curvature
    return InteriorGeometry(s_ext[ghost: len(s_ext) - ghost], th, base, nu, lam,
                            (lam * A2).mean(axis=1), ff.mean_curvature,
                            eta[ghost: len(s_ext) - ghost], sb)


def _solve_interior_mode(q: np.ndarray, f: np.ndarray, h: float, left, right) -> np.ndarray:
    """w'' - q w = f with ('dirichlet', a) or ('neumann', 0) at each end, fourth order."""
    n = len(q) - 1
    A = np.zeros((9, n + 1))   # banded, l = u = 4

    def put(r, c, v):
        A[4 + r - c, c] += v

    rhs = f.copy()
    hh = 12.0 * h * h
    c5 = (-1.0, 16.0, -30.0, 16.0, -1.0)
    c6 = (10.0, -15.0, -4.0, 14.0, -6.0, 1.0)
    for i in range(2, n - 1):
        for k, cf in zip(range(-2, 3), c5):
            put(i, i + k, cf / hh)
        put(i, i, -q[i])
    for k, cf in enumerate(c6):
        put(1, k, cf / hh)
        put(n - 1, n - k, cf / hh)
    put(1, 1, -q[1])
    put(n - 1, n - 1, -q[n - 1])
    d1 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12.0 * h)
    for row, side, sgn in ((0, left, 1), (n, right, -1)):
        kind, val = side
        if kind == "dirichlet":
            put(row, row, 1.0)
            rhs[row] = val
        else:
            for k, cf in enumerate(d1):
                put(row, row + sgn * k, sgn * cf)
            rhs[row] = val
    return solve_banded((4, 4), A, rhs)


@dataclass
class InteriorResult:
    cauchy: list[CauchyData]          # per end, end coordinates, includes w0
    w: np.ndarray | None = None       # mode coefficients on the interior grid
    geometry: InteriorGeometry | None = None
    iterations: int = 0
    updates: list[float] = field(default_factory=list)
    h_residual: float = 0.0
    aliasing: float = 0.0
    J: int = 12

    def norm(self) -> float:
        """sup over the grid of |w| + |w_s| + |w_ss| summed over modes."""
        if self.w is None:
            return 0.0
        h = self.geometry.grid[1] - self.geometry.grid[0]
        tot = (np.abs(self.w) + np.abs(fd_derivative(self.w, h, 1))
               + np.abs(fd_derivative(self.w, h, 2))).sum(axis=0)
        return float(tot.max())


def interior_solve(config: GlueConfig, P: DeformationSet, phis: list[BoundaryData],
                   tol: float = 1e-13, max_iter: int = 80, step: float = 0.005,
                   n_theta: int = THETA_POINTS, model: str | None = None) -> InteriorResult:
    """Interior Cauchy data at every interface for high-mode Dirichlet data phis."""
    model = model or config.interior
    J = config.J
    if len(phis) != config.k:
        raise ConfigurationError("one boundary datum per end is required")
    if model == "flat":
        out = []
        js = np.abs(np.arange(-J, J + 1))
        for end, phi, Pl in zip(config.ends, phis, P.params):
            hv = phi.high_part().coeffs
            ov, osl = end.offsets(J)
            vals = hv + ov.coeffs
            slopes = js * hv + osl.coeffs
            v0, s0 = w0_low_cauchy(end.eps_l, Pl, end.s_boundary)
            vals[J - 1: J + 2] += v0
            slopes[J - 1: J + 2] += s0
            out.append(CauchyData(BoundaryData(vals, J), BoundaryData(slopes, J)))
        return InteriorResult(out, J=J)

    geo = build_interior(config, P, step, n_theta)
    h = geo.grid[1] - geo.grid[0]
    X = chi_matrix(J, geo.theta)
    D = theta_derivative_matrix(J)
    js = np.arange(-J, J + 1)
    left = to_global_modes(phis[1].high_part().coeffs, -1)
    right = phis[0].high_part().coeffs
    w = np.zeros((2 * J + 1, len(geo.grid)))
    updates: list[float] = []
    alias = 0.0
    grows = 0
    it = 0
    for it in range(1, max_iter + 1):
        ws = fd_derivative(w, h, 1)
        wss = fd_derivative(w, h, 2)
        W, Ws, Wss = w.T @ X, ws.T @ X, wss.T @ X
        Wt, Wtt, Wst = (D @ w).T @ X, (D @ D @ w).T @ X, (D @ ws).T @ X
        disp = displacement_jet(geo.nu, W, Ws, Wt, Wss, Wst, Wtt)
        jet = Jet(geo.base.x + disp.x, geo.base.xu + disp.xu, geo.base.xv + disp.xv,
                  geo.base.xuu + disp.xuu, geo.base.xuv + disp.xuv, geo.base.xvv + disp.xvv)
        H = forms_from_jet(jet).mean_curvature
        Fg = Wss + Wtt + geo.V_avg[:, None] * W - geo.lam * (H - 1.0)
        Fc, lost = project_modes(Fg, J, axis=-1)
        alias = max(alias, lost)
        w_new = np.empty_like(w)
        for j in js:
            q = j * j - geo.V_avg
            if abs(j) >= 2:
                bc_l, bc_r = ("dirichlet", left[j + J]), ("dirichlet", right[j + J])
            else:
                bc_l, bc_r = ("neumann", 0.0), ("neumann", 0.0)
            w_new[j + J] = _solve_interior_mode(q, Fc[j + J], h, bc_l, bc_r)
        upd = float(np.abs(w_new - w).max())
        updates.append(upd)
        w = w_new
        if len(updates) >= 2 and updates[-1] > updates[-2]:
            grows += 1
            if grows >= 2:
                raise DivergenceError(f"interior iteration not contracting: {updates}")
        else:
            grows = 0
        if upd <= tol:
            break
    else:
        raise DivergenceError(f"interior iteration did not reach {tol:g}")

    # final residual with the converged w
    ws = fd_derivative(w, h, 1)
    wss = fd_derivative(w, h, 2)
    disp = displacement_jet(geo.nu, w.T @ X, ws.T @ X, (D @ w).T @ X, wss.T @ X,
                            (D @ ws).T @ X, (D @ D @ w).T @ X)
    jet = Jet(geo.base.x + disp.x, geo.base.xu + disp.xu, geo.base.xv + disp.xv,
              geo.base.xuu + disp.xuu, geo.base.xuv + disp.xuv, geo.base.xvv + disp.xvv)
    h_res = float(np.abs(forms_from_jet(jet).mean_curvature - 1.0).max())

    cauchy = []
    for i, end in enumerate(config.ends):
        sg = _end_coords_sign(i)
        col = -1 if i == 0 else 0
        vals = to_end_modes(w[:, col].copy(), sg)
        slopes = to_end_modes(sg * ws[:, col], sg)
        v0, s0 = w0_low_cauchy(end.eps_l, P.end(i), end.s_boundary)
        vals[J - 1: J + 2] += v0
        slopes[J - 1: J + 2] += s0
        cauchy.append(CauchyData(BoundaryData(vals, J), BoundaryData(slopes, J)))
    return InteriorResult(cauchy, w, geo, it, updates, h_res, alias, J)


# ---------------------------------------------------------------------------
# ends

@dataclass
class EndResult:
    cauchy: CauchyData
    solution: object | None = None
    necksize: float = 0.0


def end_solve(end: EndConfig, Pl: np.ndarray, phi: BoundaryData, mu: float, J: int,
              model: str = "delaunay") -> EndResult:
    if model == "flat":
        js = np.abs(np.arange(-J, J + 1))
        hv = phi.high_part().coeffs
        return EndResult(CauchyData(BoundaryData(hv.copy(), J), BoundaryData(-js * hv, J)),
                         None, end.eps_l - Pl[5])
    nk = end.eps_l - Pl[5]
    hc = half_cylinder(nk, s0=end.s_boundary, J=J)
    sol = solve_graph(hc, phi.high_part(), mu, check_smallness=False)
    vals = sol.w.trace().coeffs
    slopes = sol.w.slope().coeffs
    return EndResult(CauchyData(BoundaryData(vals, J), BoundaryData(slopes, J)), sol, nk)


def dtn_maps(epsilon: float, config: GlueConfig, P: DeformationSet | None = None,
             mu: float | None = None, interior: str | None = None,
             end: str | None = None) -> tuple[Callable, Callable]:
    """(S, T): per-end high-mode Dirichlet data -> per-end high-mode slopes."""
    cfg = config if abs(config.epsilon - epsilon) < 1e-15 else config.with_epsilon(epsilon)
    P = P if P is not None else DeformationSet.zeros(cfg.k)
    mu = cfg.mu if mu is None else mu
    end_model = end or cfg.end_model
    int_model = interior or cfg.interior

    def S_map(phis):
        return [end_solve(e, P.end(i), phis[i], mu, cfg.J, end_model).cauchy.slopes.high_part()
                for i, e in enumerate(cfg.ends)]

    def T_map(phis):
        res = interior_solve(cfg, P, phis, model=int_model)
        return [c.slopes.high_part() for c in res.cauchy]

    return S_map, T_map


# ---------------------------------------------------------------------------
# matching

@dataclass
class MatchState:
    phis: list[BoundaryData]
    P: DeformationSet
    interior: InteriorResult
    ends: list[EndResult]
    high_updates: list[float]
    low_residuals: list[float]
    iterations: int

    def mismatch(self) -> dict:
        val = max(float(np.abs(i.values.coeffs - e.cauchy.values.coeffs).max())
                  for i, e in zip(self.interior.cauchy, self.ends))
        slo = max(float(np.abs(i.slopes.coeffs - e.cauchy.slopes.coeffs).max())
                  for i, e in zip(self.interior.cauchy, self.ends))
        return {"value": val, "slope": slo}


def _high_step(phis, int_c, end_c, J):
    js = np.abs(np.arange(-J, J + 1)).astype(float)
    js[J - 1: J + 2] = np.inf
    new = []
    size = 0.0
    for phi, ic, ec in zip(phis, int_c, end_c):
        diff = ec.cauchy.slopes.coeffs - ic.slopes.coeffs
        upd = diff / (2.0 * js)
        size = max(size, float(np.abs(upd).max()))
        new.append(BoundaryData(phi.coeffs + upd, J))
    return new, size


def _low_residual(int_c, end_c, J):
    r = []
    for ic, ec in zip(int_c, end_c):
        iv, isl = ic.low()
        ev, esl = ec.cauchy.low()
        r.append(np.concatenate([iv - ev, isl - esl]))
    return r


def _end_solves(config: GlueConfig, P: DeformationSet, phis, threads: int | None):
    jobs = [(e, P.end(i), phis[i], config.mu, config.J, config.end_model)
            for i, e in enumerate(config.ends)]
    if threads is not None and threads <= 1:
        return [end_solve(*a) for a in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda a: end_solve(*a), jobs))


def match(config: GlueConfig, phis: list[BoundaryData] | None = None,
          P: DeformationSet | None = None, damping: float = 1.0,
          fix_high: bool = False, fix_low: bool = False,
          threads: int | None = None) -> MatchState:
    """Alternate the high-mode fixed point and the low-mode Newton step.

    The per-end solves of each sweep run on a thread pool capped at ``threads``.
    """
    J = config.J
    phis = phis or [BoundaryData.zeros(J) for _ in config.ends]
    P = P or DeformationSet.zeros(config.k)
    high_updates: list[float] = []
    low_res: list[float] = []
    grows = 0
    for it in range(1, config.max_iter + 1):
        ires = interior_solve(config, P, phis)
        eres = _end_solves(config, P, phis, threads)
        new_phis, hsize = _high_step(phis, ires.cauchy, eres, J)
        r = _low_residual(ires.cauchy, eres, J)
        rnorm = max(float(np.abs(x).max()) for x in r)
        high_updates.append(hsize)
        low_res.append(rnorm)
        log.debug("match %d: high update %.3e low residual %.3e", it, hsize, rnorm)
        done = (fix_high or hsize <= config.tol) and (fix_low or rnorm <= config.tol)
        if done:
            return MatchState(phis, P, ires, eres, high_updates, low_res, it)
        if it >= 3 and max(hsize, rnorm) > max(high_updates[-2], low_res[-2]):
            grows += 1
            if grows >= 2:
                raise DivergenceError("matching iteration diverges")
        else:
            grows = 0
        if not fix_high:
            phis = new_phis
        if not fix_low:
            p = P.params.copy()
            for i, end in enumerate(config.ends):
                M = low_mode_matrix(end.eps_l, end.s_boundary)
                p[i] -= damping * np.linalg.solve(M, r[i])
            P = DeformationSet(p)
    raise DivergenceError(f"matching did not converge in {config.max_iter} iterations")


def match_high_modes(epsilon: float, config: GlueConfig, P: DeformationSet | None = None,
                     mu: float | None = None) -> tuple[list[BoundaryData], dict]:
    cfg = config.with_epsilon(epsilon)
    if mu is not None:
        cfg = GlueConfig(cfg.epsilon, cfg.ends, cfg.kappa, mu, cfg.J, cfg.interior,
                         cfg.end_model, cfg.tol, cfg.max_iter)
    P = P if P is not None else DeformationSet.zeros(cfg.k)
    if P.weighted_size(epsilon) > epsilon**cfg.kappa * (1 + 1e-12):
        raise ConsistencyError("|P| exceeds eps^kappa")
    st = match(cfg, P=P, fix_low=True)
    size = max(float(np.linalg.norm(p.coeffs)) for p in st.phis)
    bound = size / (epsilon ** (2 * cfg.kappa - 1) + epsilon**1.5)
    return st.phis, {"iterations": st.iterations, "updates": st.high_updates,
                     "size": size, "bound_ratio": bound}


def match_low_modes(epsilon: float, config: GlueConfig,
                    phis: list[BoundaryData] | None = None) -> DeformationSet:
    cfg = config.with_epsilon(epsilon)
    st = match(cfg, phis=phis, fix_high=True)
    if st.P.weighted_size(epsilon) > epsilon**cfg.kappa:
        raise ConsistencyError(
            f"|P| = {st.P.weighted_size(epsilon):.3e} exceeds eps^kappa = {epsilon**cfg.kappa:.3e}")
    return st.P


# ---------------------------------------------------------------------------
# assembly

@dataclass
class GluedSurface:
    config: GlueConfig
    state: MatchState
    pieces: dict[str, SurfaceMesh]
    report: dict


def _grid_mesh(P3: np.ndarray, H: np.ndarray) -> SurfaceMesh:
    ns, nt = P3.shape[:2]
    verts = P3.reshape(-1, 3)
    idx = np.arange(ns * nt).reshape(ns, nt)
    faces = np.array([(idx[i, j], idx[i + 1, j], idx[i + 1, (j + 1) % nt], idx[i, (j + 1) % nt])
                      for i in range(ns - 1) for j in range(nt)], dtype=np.int64)
    return SurfaceMesh(verts, faces, np.zeros_like(verts), H.reshape(-1), (ns, nt))


def _end_piece(end: EndConfig, Pl, er: EndResult, n_periods: float = 2.0,
               stride: int = 20):
    sol = er.solution
    if sol is None:
        return None, 0.0
    hc = sol.hc
    lo, hi = hc.s0, min(hc.s_far, hc.s0 + n_periods * hc.period_S)
    rows = np.nonzero((hc.grid >= lo - 1e-12) & (hc.grid <= hi + 1e-12))[0]
    Hm1 = graph_mean_curvature(hc, sol.w, window=(lo, hi))
    th = theta_grid(THETA_POINTS)
    sub = rows[::stride]
    ev_sig = hc.sigma[sub, None]
    ev_ss = hc.sigma_s[sub, None]
    xD = delaunay_jet(hc.tau, ev_sig, ev_ss, hc.k[sub, None], th[None, :]).x
    nD = delaunay_normal_jet(hc.tau, ev_sig, ev_ss, th[None, :]).x
    wv = sol.w.coeffs[:, sub].T @ chi_matrix(sol.w.J, th)
    R, b, _ = deformed_end_map(end, Pl)
    pts = (xD + wv[..., None] * nD) @ R.T + b
    return _grid_mesh(pts, Hm1[::stride]), float(np.abs(Hm1).max())


def assemble_glued(epsilon: float, config: GlueConfig, collar: float = 1.0,
                   threads: int | None = None) -> GluedSurface:
    cfg = config.with_epsilon(epsilon)
    if cfg.interior != "catenoid" or cfg.k != 2:
        raise ConfigurationError("end-to-end assembly supports the k = 2 catenoid interior")
    st = match(cfg, threads=threads)
    ires = st.interior
    geo = ires.geometry
    J = cfg.J
    X = chi_matrix(J, geo.theta)
    D = theta_derivative_matrix(J)
    h = geo.grid[1] - geo.grid[0]
    w = ires.w
    ws, wss = fd_derivative(w, h, 1), fd_derivative(w, h, 2)
    disp = displacement_jet(geo.nu, w.T @ X, ws.T @ X, (D @ w).T @ X, wss.T @ X,
                            (D @ ws).T @ X, (D @ D @ w).T @ X)
    jet = Jet(geo.base.x + disp.x, geo.base.xu + disp.xu, geo.base.xv + disp.xv,
              geo.base.xuu + disp.xuu, geo.base.xuv + disp.xuv, geo.base.xvv + disp.xvv)
    H_int = forms_from_jet(jet).mean_curvature - 1.0
    pieces = {"interior": _grid_mesh(jet.x, H_int)}
    sup_int = float(np.abs(H_int).max())
    away = np.abs(geo.grid) <= geo.s_b - collar
    sup_int_away = float(np.abs(H_int[away]).max()) if away.any() else 0.0
    sup_end = 0.0
    for i, (end, er) in enumerate(zip(cfg.ends, st.ends)):
        mesh, sup = _end_piece(end, st.P.end(i), er)
        if mesh is not None:
            pieces[f"end{i}"] = mesh
        sup_end = max(sup_end, sup)
    pts = np.concatenate([m.vertices for m in pieces.values()])
    dist = best_fit_delaunay_distance(pts, cfg.ends[0].eps_l)
    mm = st.mismatch()
    report = {
        "epsilon": epsilon,
        "iterations": st.iterations,
        "high_updates": st.high_updates,
        "low_residuals": st.low_residuals,
        "interface_value_mismatch": mm["value"],
        "interface_slope_mismatch": mm["slope"],
        "sup_H_minus_1": max(sup_int, sup_end),
        "sup_H_minus_1_interior": sup_int,
        "sup_H_minus_1_away_from_collar": max(sup_int_away, sup_end),
        "sup_H_minus_1_ends": sup_end,
        "interior_iterations": ires.iterations,
        "P": st.P.to_dict(),
        "P_weighted_size": st.P.weighted_size(epsilon),
        "phi_sizes": [float(np.linalg.norm(p.coeffs)) for p in st.phis],
        "collar_fits": [e.collar_fits for e in cfg.ends],
        "delaunay_distance": dist["distance"],
        "delaunay_fit": dist,
    }
    return GluedSurface(cfg, st, pieces, report)


# ---------------------------------------------------------------------------
# comparison with exact Delaunay surfaces

def _meridian_distance(r: np.ndarray, z: np.ndarray, eps: float) -> np.ndarray:
    """Signed distance from (r, z) to the meridian curve (rho(s), k(s)) of D_eps."""
    params = neck_params(eps)
    S = period_S(params)
    zmax = float(np.abs(z).max())
    smax = S * (1.0 + math.ceil(zmax / max(1e-9, period_T_estimate(eps))))
    prof = solve_profile(params, smax)
    ks = prof.k
    rho = prof.rho
    # nearest sample then Newton on the Hermite curve
    idx = np.clip(np.searchsorted(ks, z), 1, len(ks) - 1)
    cand = np.stack([idx - 1, idx], axis=1)
    s = prof.grid[cand[np.arange(len(z)), np.argmin(
        (rho[cand] - r[:, None]) ** 2 + (ks[cand] - z[:, None]) ** 2, axis=1)]]
    # search a neighbourhood along the curve, then refine
    window = np.linspace(-1.0, 1.0, 81)
    trial = np.clip(s[:, None] + window[None, :], prof.s_min, prof.s_max)
    ev = prof.evaluate(trial)
    dd = (prof.tau * np.exp(ev["sigma"]) - r[:, None]) ** 2 + (ev["k"] - z[:, None]) ** 2
    s = trial[np.arange(len(z)), np.argmin(dd, axis=1)]
    for _ in range(8):
        ev = prof.evaluate(s)
        rr = prof.tau * np.exp(ev["sigma"])
        rs = rr * ev["sigma_s"]
        rss = rr * (ev["sigma_ss"] + ev["sigma_s"] ** 2)
        kk, kss = ev["k"], prof.tau**2 * np.exp(2 * ev["sigma"]) * ev["sigma_s"]
        ksp = ev["k_s"]
        g = (rr - r) * rs + (kk - z) * ksp
        gp = rs**2 + (rr - r) * rss + ksp**2 + (kk - z) * kss
        s = np.clip(s - g / gp, prof.s_min, prof.s_max)
    ev = prof.evaluate(s)
    rr = prof.tau * np.exp(ev["sigma"])
    nrm = np.hypot(rr * ev["sigma_s"], ev["k_s"])
    # outward normal of the meridian curve (k_s, -rho_s) / |.|
    return ((r - rr) * ev["k_s"] - (z - ev["k"]) * rr * ev["sigma_s"]) / nrm


def period_T_estimate(eps: float) -> float:
    return 4.0 + 2.0 * eps * math.log(1.0 / eps) if eps < 1 else 2 * math.pi


def best_fit_delaunay_distance(points: np.ndarray, eps_guess: float,
                               max_points: int = 4000) -> dict:
    """Fit necksize and axis (direction and position) of an exact Delaunay surface."""
    pts = np.asarray(points, float)
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).astype(int)]

    def residual(x):
        eps, al, be, x0, y0, z0 = x
        if not (0.0 < eps < 1.0):
            return np.full(len(pts), 1e3)
        R = Rotation.from_euler("xy", [al, be]).as_matrix()
        q = (pts - np.array([x0, y0, z0])) @ R
        return _meridian_distance(np.hypot(q[:, 0], q[:, 1]), q[:, 2], eps)

    x0 = np.array([eps_guess, 0.0, 0.0, 0.0, 0.0, 0.0])
    fit = least_squares(residual, x0, x_scale=[eps_guess, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2],
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=200)
    res = residual(fit.x)
    return {"distance": float(np.abs(res).max()), "rms": float(np.sqrt(np.mean(res**2))),
            "epsilon": float(fit.x[0]), "axis_angles": [float(fit.x[1]), float(fit.x[2])],
            "center": [float(v) for v in fit.x[3:]], "unfitted_distance":
            float(np.abs(residual(x0)).max())}


__all__ = [
    "PARAM_NAMES", "EndConfig", "GlueConfig", "DeformationSet", "InteriorGeometry",
    "InteriorResult", "EndResult", "MatchState", "GluedSurface", "frame_from_axis",
    "config_from_dict", "load_config", "two_ended", "deformation_graph", "w0_low_cauchy",
    "low_mode_matrix", "weighted_condition_number", "solve_low_mode_system",
    "deformed_end_map", "build_interior", "interior_solve", "end_solve", "dtn_maps", "match",
    "match_high_modes", "match_low_modes", "assemble_glued", "best_fit_delaunay_distance",
]
