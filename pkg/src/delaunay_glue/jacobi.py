"""Jacobi operator on Delaunay surfaces: modes, explicit fields, Floquet exponents.

In isothermal coordinates the scaled Jacobi operator is

    L = d^2/ds^2 + d^2/dtheta^2 + tau^2 cosh(2 sigma),

and on the angular mode ``chi_j`` it reduces to the Hill operator
``w'' + (tau^2 cosh 2 sigma - j^2) w = w'' - Q_j w``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .delaunay import (DRIFTS6, KICKS6, DelaunayProfile, NeckParams, neck_params,
                       period_S, solve_profile)
from .errors import ConfigurationError, DomainError, EllipticRegimeError, RangeError

log = logging.getLogger("delaunay_glue")


def chi(j: int, theta) -> np.ndarray:
    """L^2-normalized angular eigenfunction: cos for j > 0, sin for j < 0."""
    theta = np.asarray(theta, dtype=float)
    if j > 0:
        return np.cos(j * theta) / math.sqrt(math.pi)
    if j < 0:
        return np.sin(-j * theta) / math.sqrt(math.pi)
    return np.full_like(theta, 1.0 / math.sqrt(2.0 * math.pi))


@dataclass(frozen=True, eq=False)
class ModeFunction:
    j: int
    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray | None = None

    def __post_init__(self):
        if self.grid.shape != self.values.shape:
            raise RangeError("mode function values must match the grid")


@dataclass(frozen=True, eq=False)
class JacobiField:
    j: int
    sign: str
    field: ModeFunction

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def mode_potential(profile: DelaunayProfile, j: int) -> ModeFunction:
    """Q_j = j^2 - tau^2 cosh 2 sigma, so the mode operator is -w'' + Q_j w."""
    return ModeFunction(int(j), profile.grid, j * j - profile.potential)


def _fd_tau_derivatives(profile: DelaunayProfile, rel_step: float):
    """Central differences in tau of (sigma, k) on the profile's grid."""
    tau = profile.tau
    smax = max(abs(profile.s_min), profile.s_max)
    out = []
    for sgn in (+1, -1):
        tp = tau * (1.0 + sgn * rel_step)
        if tp >= 1.0:
            raise DomainError("tau too close to 1 for a centred tau-difference")
        eps = tp**2 / (1.0 + math.sqrt(1.0 - tp**2))
        pr = solve_profile(NeckParams(eps, tp), smax, profile.step)
        ev = pr.evaluate(profile.grid)
        out.append((ev["sigma"], ev["k"]))
    dt = 2.0 * tau * rel_step
    return (out[0][0] - out[1][0]) / dt, (out[0][1] - out[1][1]) / dt


def tau_derivatives(profile: DelaunayProfile, method: str = "variational",
                    rel_step: float = 1e-5) -> tuple[np.ndarray, np.ndarray, dict]:
    """(d sigma / d tau, d k / d tau) on the grid.

    ``variational`` uses the tangent map carried by the integrator; ``fd``
    differences two neighbouring profiles and reports a Richardson estimate.
    """
    if method == "variational":
        if profile.dsigma_dtau is None or profile.dk_dtau is None:
            raise ConfigurationError("profile carries no tau-derivatives")
        return profile.dsigma_dtau, profile.dk_dtau, {"method": "variational"}
    if method == "fd":
        a1, b1 = _fd_tau_derivatives(profile, rel_step)
        a2, b2 = _fd_tau_derivatives(profile, 0.5 * rel_step)
        # second-order differences: Richardson combination (4 D(h/2) - D(h)) / 3
        a = (4 * a2 - a1) / 3
        b = (4 * b2 - b1) / 3
        info = {"method": "fd", "richardson_sigma": float(np.abs(a2 - a1).max()),
                "richardson_k": float(np.abs(b2 - b1).max())}
        return a, b, info
    raise ConfigurationError(f"unknown tau-derivative method {method!r}")


def explicit_jacobi(profile: DelaunayProfile, j: int, sign: str,
                    method: str = "variational") -> JacobiField:
    """Closed-form Jacobi fields for j in {-1, 0, 1} sampled on the profile grid.

    The fields come from the axial translation (0,+), necksize change (0,-),
    transverse translations (1,+) and rotations (1,-) of the surface.
    """
    if j not in (-1, 0, 1) or sign not in ("+", "-"):
        raise DomainError("explicit Jacobi fields exist for j in {-1, 0, 1}, sign in {+, -}")
    tau = profile.tau
    sig, ss, k = profile.sigma, profile.sigma_s, profile.k
    if j == 0 and sign == "+":
        w = ss.copy()
    elif j == 0:
        if profile.params.is_cylinder:
            raise ConfigurationError("the necksize field needs tau < 1")
        dsig, dk, _ = tau_derivatives(profile, method)
        q = math.sqrt(1.0 - tau * tau)
        w = (q / tau) * ss * dk - q * np.exp(sig) * np.cosh(sig) * (1.0 + tau * dsig)
    elif sign == "+":
        w = -tau * np.cosh(sig)
    else:
        w = -tau * (k * np.cosh(sig) + ss * np.exp(sig))
    return JacobiField(j, sign, ModeFunction(j, profile.grid, w))


def fd_second_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Five-point second difference on the interior points values[2:-2]."""
    w = values
    return (-w[:-4] + 16 * w[1:-3] - 30 * w[2:-2] + 16 * w[3:-1] - w[4:]) / (12 * h * h)


def jacobi_residual(field: JacobiField, profile: DelaunayProfile) -> float:
    """sup |w'' + (tau^2 cosh 2 sigma - j^2) w| over the grid interior."""
    w = field.values
    if w.shape != profile.grid.shape:
        raise RangeError("field and profile must share the grid")
    j = field.j
    res = fd_second_derivative(w, profile.step) + (profile.potential[2:-2] - j * j) * w[2:-2]
    return float(np.abs(res).max())


def jacobi_limit(j: int, sign: str, s) -> np.ndarray:
    """The epsilon -> 0 limit profile (scaled by 1/epsilon for the rotation field)."""
    s = np.asarray(s, dtype=float)
    if j == 0 and sign == "+":
        return np.tanh(s)
    if j == 0:
        return -(1.0 - s * np.tanh(s))
    if sign == "+":
        return -1.0 / np.cosh(s)
    return -(s / np.cosh(s) + np.sinh(s))


@dataclass
class LimitReport:
    j: int
    sign: str
    epsilons: list[float]
    deviations: list[float]

    @property
    def monotone(self) -> bool:
        d = self.deviations
        return all(b < a for a, b in zip(d[:-1], d[1:]))

    def to_dict(self) -> dict:
        return {"j": self.j, "sign": self.sign, "epsilons": self.epsilons,
                "deviations": self.deviations, "monotone": self.monotone}


def jacobi_limits_report(epsilons, j: int, sign: str, s_window: float = 3.0) -> LimitReport:
    eps_list = sorted((float(e) for e in epsilons), reverse=True)
    if any(e > 0.01 for e in eps_list):
        raise DomainError("limit reports need epsilon <= 0.01")
    devs = []
    for eps in eps_list:
        pr = solve_profile(neck_params(eps), s_window)
        f = explicit_jacobi(pr, j, sign).values
        if j != 0 and sign == "-":
            f = f / eps
        devs.append(float(np.abs(f - jacobi_limit(j, sign, pr.grid)).max()))
    return LimitReport(int(j), sign, eps_list, devs)


def wronskian(f: np.ndarray, g: np.ndarray, h: float) -> np.ndarray:
    """f g' - f' g with fourth-order central derivatives (interior points)."""
    def d1(w):
        return (w[:-4] - 8 * w[1:-3] + 8 * w[3:-1] - w[4:]) / (12 * h)

    return f[2:-2] * d1(g) - d1(f) * g[2:-2]


# ---------------------------------------------------------------------------
# Floquet exponents

@njit(cache=True)
def _segment_monodromies(tau, sig0, j2, n_seg, steps_per_seg, h, kicks,
                         drifts):  # pragma: no cover - compiled
    t2 = tau * tau
    sig = sig0
    p = 0.0
    out = np.empty((n_seg, 2, 2))
    m = len(drifts)
    for seg in range(n_seg):
        # columns: fundamental solutions with (w, w') = (1, 0) and (0, 1)
        w1, v1, w2, v2 = 1.0, 0.0, 0.0, 1.0
        for _ in range(steps_per_seg):
            for j in range(m + 1):
                c = kicks[j] * h
                q = j2 - t2 * math.cosh(2.0 * sig)
                p -= c * 0.5 * t2 * math.sinh(2.0 * sig)
                v1 += c * q * w1
                v2 += c * q * w2
                if j < m:
                    d = drifts[j] * h
                    sig += d * p
                    w1 += d * v1
                    w2 += d * v2
        out[seg, 0, 0] = w1
        out[seg, 0, 1] = w2
        out[seg, 1, 0] = v1
        out[seg, 1, 1] = v2
    return out


@dataclass(frozen=True)
class FloquetResult:
    j: int
    gamma: float
    trace: float
    det: float
    period: float
    monodromy: np.ndarray


def monodromy(params: NeckParams, j: int, n_steps: int | None = None,
              n_segments: int = 16) -> tuple[np.ndarray, float, float]:
    """Monodromy of w'' = Q_j w over the potential's period P = S/2 (P = pi at epsilon = 1).

    The period is split into segments whose transfer matrices stay moderate;
    the determinant is the product of the segment determinants, which avoids
    the cancellation in det M once its entries grow like e^{gamma P}.
    Returns (M, P, det M).
    """
    if params.is_cylinder:
        P = math.pi
    else:
        P = 0.5 * period_S(params)
    if n_steps is None:
        n_steps = max(400, math.ceil(P / 0.005))
    per = max(1, math.ceil(n_steps / n_segments))
    sig0 = 0.0 if params.is_cylinder else math.log(params.epsilon / params.tau)
    segs = _segment_monodromies(params.tau, sig0, float(j * j), n_segments, per,
                                P / (per * n_segments), np.asarray(KICKS6), np.asarray(DRIFTS6))
    M = np.eye(2)
    det = 1.0
    for A in segs:
        M = A @ M
        det *= A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    return M, P, det


def floquet_exponent(profile: DelaunayProfile | NeckParams, j: int,
                     n_steps: int | None = None) -> FloquetResult:
    """gamma_j = acosh(|tr M| / 2) / P for |j| >= 2."""
    if abs(j) <= 1:
        raise DomainError("Floquet exponents are defined here for |j| >= 2 (zero for |j| <= 1)")
    params = profile.params if isinstance(profile, DelaunayProfile) else profile
    M, P, det = monodromy(params, j, n_steps)
    tr = float(np.trace(M))
    if abs(tr) <= 2.0:
        raise EllipticRegimeError(f"|trace| = {abs(tr):.6g} <= 2 for j = {j}")
    if tr < 0:
        log.warning("negative monodromy trace %.6g for j = %d", tr, j)
    gamma = math.acosh(abs(tr) / 2.0) / P
    return FloquetResult(int(j), gamma, tr, float(det), P, M)
