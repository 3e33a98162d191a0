"""Linear boundary-value problems for the Jacobi operator on half-Delaunay cylinders.

Fields on ``[s0, s_far] x S^1`` are stored by angular mode, ``w = sum_j w_j(s) chi_j``
for ``|j| <= J``.  Each mode solves

    w_j'' + (tau^2 cosh 2 sigma - j^2) w_j = f_j

by Numerov's method.  High modes (|j| >= 2) take Dirichlet data at ``s0`` and
a Robin closure ``w' + gamma_j w = 0`` at ``s_far``.  Low modes are integrated
backwards from ``w(s_far) = w'(s_far) = 0`` with no condition at ``s0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import solve_banded

from .delaunay import CYLINDER_PERIOD, NeckParams, neck_params, period_S, solve_profile
from .errors import DomainError, NumericalError, RangeError
from .jacobi import chi, floquet_exponent

log = logging.getLogger("delaunay_glue")

J_MAX = 12
THETA_POINTS = 64


def mode_index(j: int, J: int) -> int:
    return j + J


def theta_grid(n: int = THETA_POINTS) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n) / n


def chi_matrix(J: int, theta: np.ndarray) -> np.ndarray:
    """Rows chi_j(theta) for j = -J..J."""
    return np.stack([chi(j, theta) for j in range(-J, J + 1)])


def project_modes(values: np.ndarray, J: int, axis: int = -1) -> tuple[np.ndarray, float]:
    """Coefficients on chi_j, |j| <= J, of samples on the uniform theta grid.

    Returns (coefficients with the mode axis first, discarded energy fraction).
    """
    v = np.moveaxis(np.asarray(values, float), axis, -1)
    n = v.shape[-1]
    if n < 2 * J + 2:
        raise DomainError(f"{n} angular samples cannot resolve |j| <= {J}")
    F = np.fft.rfft(v, axis=-1)
    coeffs = np.empty((2 * J + 1,) + v.shape[:-1])
    dth = 2.0 * np.pi / n
    sp = math.sqrt(math.pi)
    coeffs[J] = F[..., 0].real * dth / math.sqrt(2.0 * math.pi)
    for j in range(1, J + 1):
        # sum f cos(j t) dt / sqrt(pi) = Re F_j dt / sqrt(pi);  sin: -Im F_j
        coeffs[J + j] = F[..., j].real * dth / sp
        coeffs[J - j] = -F[..., j].imag * dth / sp
    total = np.sum(np.abs(F) ** 2, axis=-1)
    kept = np.sum(np.abs(F[..., : J + 1]) ** 2, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        lost = np.where(total > 0, 1.0 - kept / np.where(total > 0, total, 1.0), 0.0)
    return coeffs, float(np.max(np.abs(lost), initial=0.0))


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Coefficients phi_j of a function on the circle, j = -J..J."""

    coeffs: np.ndarray
    J: int = J_MAX

    def __post_init__(self):
        if self.coeffs.shape != (2 * self.J + 1,):
            raise DomainError("boundary data needs 2J + 1 coefficients")

    @classmethod
    def zeros(cls, J: int = J_MAX) -> "BoundaryData":
        return cls(np.zeros(2 * J + 1), J)

    @classmethod
    def mode(cls, j: int, amplitude: float = 1.0, J: int = J_MAX) -> "BoundaryData":
        c = np.zeros(2 * J + 1)
        c[j + J] = amplitude
        return cls(c, J)

    @classmethod
    def from_dict(cls, d: dict[int, float], J: int = J_MAX) -> "BoundaryData":
        c = np.zeros(2 * J + 1)
        for j, a in d.items():
            c[int(j) + J] += a
        return cls(c, J)

    def __getitem__(self, j: int) -> float:
        return float(self.coeffs[j + self.J])

    def __add__(self, other: "BoundaryData") -> "BoundaryData":
        return BoundaryData(self.coeffs + other.coeffs, self.J)

    def __sub__(self, other: "BoundaryData") -> "BoundaryData":
        return BoundaryData(self.coeffs - other.coeffs, self.J)

    def scaled(self, a: float) -> "BoundaryData":
        return BoundaryData(a * self.coeffs, self.J)

    @property
    def has_low_modes(self) -> bool:
        return bool(np.any(self.coeffs[self.J - 1: self.J + 2] != 0.0))

    def high_part(self) -> "BoundaryData":
        c = self.coeffs.copy()
        c[self.J - 1: self.J + 2] = 0.0
        return BoundaryData(c, self.J)

    def low_part(self) -> "BoundaryData":
        c = np.zeros_like(self.coeffs)
        c[self.J - 1: self.J + 2] = self.coeffs[self.J - 1: self.J + 2]
        return BoundaryData(c, self.J)

    def evaluate(self, theta) -> np.ndarray:
        return self.coeffs @ chi_matrix(self.J, np.asarray(theta, float))

    def c2_norm(self, n: int = THETA_POINTS) -> float:
        """sup over the circle of |phi| + |phi_theta| + |phi_theta theta|."""
        th = theta_grid(n)
        js = np.arange(-self.J, self.J + 1)
        X = chi_matrix(self.J, th)
        # d/dtheta maps cos(j t) -> -j sin(j t) = -j chi_{-j}, sin(j t) -> j chi_j
        d1 = np.zeros_like(self.coeffs)
        for j in js[js != 0]:
            if j > 0:
                d1[-j + self.J] += -j * self.coeffs[j + self.J]
            else:
                d1[-j + self.J] += (-j) * self.coeffs[j + self.J]
        d2 = -(js**2) * self.coeffs
        return float(np.max(np.abs(self.coeffs @ X) + np.abs(d1 @ X) + np.abs(d2 @ X)))

    def rotated(self, theta0: float) -> "BoundaryData":
        """Coefficients of phi(theta - theta0)."""
        return BoundaryData(rotate_coeffs(self.coeffs, theta0, self.J), self.J)


def rotate_coeffs(c: np.ndarray, theta0: float, J: int) -> np.ndarray:
    """Mode coefficients (mode axis first) of f(theta - theta0)."""
    out = np.array(c, dtype=float, copy=True)
    for j in range(1, J + 1):
        a, b = c[J + j], c[J - j]
        cs, sn = math.cos(j * theta0), math.sin(j * theta0)
        # cos(j(t - t0)) = cos jt cos jt0 + sin jt sin jt0
        out[J + j] = cs * a - sn * b
        out[J - j] = sn * a + cs * b
    return out


@dataclass(frozen=True, eq=False)
class ModeField:
    """w(s, theta) = sum_j coeffs[j + J](s) chi_j(theta) on a uniform s-grid."""

    grid: np.ndarray
    coeffs: np.ndarray
    J: int = J_MAX

    def __post_init__(self):
        if self.coeffs.shape != (2 * self.J + 1, len(self.grid)):
            raise DomainError("mode field coefficients must have shape (2J+1, len(grid))")

    @classmethod
    def zeros(cls, grid: np.ndarray, J: int = J_MAX) -> "ModeField":
        return cls(grid, np.zeros((2 * J + 1, len(grid))), J)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def mode(self, j: int) -> np.ndarray:
        return self.coeffs[j + self.J]

    def __add__(self, other: "ModeField") -> "ModeField":
        return ModeField(self.grid, self.coeffs + other.coeffs, self.J)

    def __sub__(self, other: "ModeField") -> "ModeField":
        return ModeField(self.grid, self.coeffs - other.coeffs, self.J)

    def scaled(self, a: float) -> "ModeField":
        return ModeField(self.grid, a * self.coeffs, self.J)

    def derivative(self, order: int = 1) -> "ModeField":
        return ModeField(self.grid, fd_derivative(self.coeffs, self.step, order), self.J)

    def values(self, theta) -> np.ndarray:
        """Samples w(s_i, theta_k), shape (len(grid), len(theta))."""
        return self.coeffs.T @ chi_matrix(self.J, np.asarray(theta, float))

    def trace(self) -> BoundaryData:
        return BoundaryData(self.coeffs[:, 0].copy(), self.J)

    def slope(self) -> BoundaryData:
        return BoundaryData(fd_derivative(self.coeffs[:, :7], self.step, 1)[:, 0], self.J)

    def restrict(self, lo: float, hi: float) -> "ModeField":
        m = (self.grid >= lo - 1e-12) & (self.grid <= hi + 1e-12)
        return ModeField(self.grid[m], self.coeffs[:, m], self.J)

    def rotated(self, theta0: float) -> "ModeField":
        return ModeField(self.grid, rotate_coeffs(self.coeffs, theta0, self.J), self.J)


def fd_derivative(w: np.ndarray, h: float, order: int = 1) -> np.ndarray:
    """Fourth-order finite differences along the last axis (one-sided near the ends)."""
    w = np.asarray(w, float)
    n = w.shape[-1]
    if n < 7:
        raise RangeError("need at least seven samples for fourth-order differences")
    out = np.empty_like(w)
    if order == 1:
        out[..., 2:-2] = (w[..., :-4] - 8 * w[..., 1:-3] + 8 * w[..., 3:-1] - w[..., 4:]) / (12 * h)
        c0 = np.array([-25, 48, -36, 16, -3]) / (12 * h)
        c1 = np.array([-3, -10, 18, -6, 1]) / (12 * h)
        out[..., 0] = w[..., :5] @ c0
        out[..., 1] = w[..., :5] @ c1
        out[..., -1] = -(w[..., -5:][..., ::-1] @ c0)
        out[..., -2] = -(w[..., -5:][..., ::-1] @ c1)
    elif order == 2:
        out[..., 2:-2] = (-w[..., :-4] + 16 * w[..., 1:-3] - 30 * w[..., 2:-2]
                          + 16 * w[..., 3:-1] - w[..., 4:]) / (12 * h * h)
        c0 = np.array([45, -154, 214, -156, 61, -10]) / (12 * h * h)
        c1 = np.array([10, -15, -4, 14, -6, 1]) / (12 * h * h)
        out[..., 0] = w[..., :6] @ c0
        out[..., 1] = w[..., :6] @ c1
        out[..., -1] = w[..., -6:][..., ::-1] @ c0
        out[..., -2] = w[..., -6:][..., ::-1] @ c1
    else:
        raise DomainError("derivative order must be 1 or 2")
    return out


# ---------------------------------------------------------------------------
# half cylinders

@dataclass(eq=False)
class HalfCylinder:
    """A Delaunay end [s0, s_far] x S^1 with the profile jets sampled on a uniform grid."""

    params: NeckParams
    s0: float
    s_far: float
    grid: np.ndarray
    sigma: np.ndarray
    sigma_s: np.ndarray
    k: np.ndarray
    period_S: float
    J: int = J_MAX
    _gammas: dict = field(default_factory=dict, repr=False)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def tau(self) -> float:
        return self.params.tau

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def potential(self) -> np.ndarray:
        return self.tau**2 * np.cosh(2.0 * self.sigma)

    @property
    def conformal_factor(self) -> np.ndarray:
        return self.tau**2 * np.exp(2.0 * self.sigma)

    def gamma(self, j: int) -> float:
        j = abs(int(j))
        if j not in self._gammas:
            self._gammas[j] = floquet_exponent(self.params, j).gamma
        return self._gammas[j]


def default_s_far(params: NeckParams, s0: float) -> float:
    S = CYLINDER_PERIOD if params.is_cylinder else period_S(params)
    return s0 + max(4.0 * S, 40.0)


def half_cylinder(params: NeckParams | float, s0: float | None = None,
                  s_far: float | None = None, step: float | None = None,
                  J: int = J_MAX) -> HalfCylinder:
    if not isinstance(params, NeckParams):
        params = neck_params(params)
    S = CYLINDER_PERIOD if params.is_cylinder else period_S(params)
    if s0 is None:
        s0 = 0.0 if params.is_cylinder else S / 8.0
    if s_far is None:
        s_far = default_s_far(params, s0)
    if s_far <= s0:
        raise DomainError("s_far must exceed s0")
    if step is None:
        step = min(0.01, S / 4000.0)
    # fixed step (s_far rounded up) so that grids for different s_far nest
    n = math.ceil((s_far - s0) / step - 1e-9)
    h = float(step)
    grid = s0 + h * np.arange(n + 1)
    s_far = float(grid[-1])
    smax = max(abs(s0), abs(s_far)) + h
    prof = solve_profile(params, smax, h)
    ev = prof.evaluate(grid)
    return HalfCylinder(params, float(s0), float(s_far), grid, ev["sigma"], ev["sigma_s"],
                        ev["k"], S, J)


# ---------------------------------------------------------------------------
# mode solvers

@njit(cache=True)
def _numerov_backward(g, f, h):  # pragma: no cover - compiled
    n = len(g)
    w = np.zeros(n)
    c = h * h / 12.0
    # w(s_far) = w'(s_far) = 0, so w'' = f there: Taylor start
    w[n - 2] = 0.5 * h * h * f[n - 1]
    for i in range(n - 2, 0, -1):
        rhs = c * (f[i + 1] + 10.0 * f[i] + f[i - 1])
        w[i - 1] = (rhs + 2.0 * (1.0 + 5.0 * c * g[i]) * w[i]
                    - (1.0 - c * g[i + 1]) * w[i + 1]) / (1.0 - c * g[i - 1])
    return w


def _numerov_dirichlet_robin(g: np.ndarray, f: np.ndarray, h: float, w0: float,
                             gamma: float) -> np.ndarray:
    """w'' = g w + f, w(s_0) = w0, (3w_N - 4w_{N-1} + w_{N-2})/(2h) + gamma w_N = 0."""
    n = len(g) - 1
    c = h * h / 12.0
    A = 1.0 - c * g
    B = -2.0 * (1.0 + 5.0 * c * g)
    rhs = np.empty(n)
    rhs[: n - 1] = c * (f[:-2] + 10.0 * f[1:-1] + f[2:])
    rhs[0] -= A[0] * w0
    rhs[n - 1] = 0.0
    # unknowns w_1..w_N; banded storage with l = 2, u = 1
    ab = np.zeros((4, n))
    ab[1, :] = np.concatenate([B[1:n], [3.0 / (2 * h) + gamma]])   # diagonal
    ab[0, 1:] = A[2: n + 1]                                           # super
    ab[2, : n - 1] = np.concatenate([A[1: n - 1], [-4.0 / (2 * h)]])  # sub
    ab[3, n - 2] = 1.0 / (2 * h)                                      # second sub, last row
    w = solve_banded((2, 1), ab, rhs)
    out = np.empty(n + 1)
    out[0] = w0
    out[1:] = w
    if not np.all(np.isfinite(out)):
        raise NumericalError("mode boundary-value solve produced non-finite values")
    return out


def _check_mu(mu: float) -> None:
    if not (1.0 < mu < 2.0):
        raise DomainError(f"weight mu must lie in (1, 2), got {mu}")


def solve_mode(hc: HalfCylinder, j: int, f: np.ndarray | None, w0: float = 0.0) -> np.ndarray:
    """One angular mode: high modes with w(s0) = w0 and Robin decay, low modes backwards."""
    g = j * j - hc.potential
    if f is None:
        f = np.zeros_like(g)
    if abs(j) <= 1:
        if w0 != 0.0:
            raise DomainError("low modes take no boundary value at s0")
        return _numerov_backward(g, np.ascontiguousarray(f, dtype=float), hc.step)
    return _numerov_dirichlet_robin(g, f, hc.step, w0, hc.gamma(j))


@dataclass(frozen=True, eq=False)
class LinearSolution:
    field: ModeField
    operator_bound: float | None = None


def green_apply(hc: HalfCylinder, f: ModeField, mu: float = 1.5) -> LinearSolution:
    """Solve L w = f with w(s0) = 0 on high modes and decay on low modes."""
    _check_mu(mu)
    if f.grid.shape != hc.grid.shape:
        raise RangeError("forcing must live on the half-cylinder grid")
    J = f.J
    out = np.zeros_like(f.coeffs)
    for j in range(-J, J + 1):
        fj = f.coeffs[j + J]
        if not np.any(fj):
            continue
        out[j + J] = solve_mode(hc, j, fj)
    w = ModeField(hc.grid, out, J)
    fn = weighted_norm(f, mu, hc.s0, order=0)
    bound = weighted_norm(w, mu, hc.s0) / fn if fn > 0 else 0.0
    return LinearSolution(w, bound)


def poisson_apply(hc: HalfCylinder, phi: BoundaryData, mu: float = 1.5) -> LinearSolution:
    """Homogeneous solution with trace phi (high modes only) decaying at infinity."""
    _check_mu(mu)
    if phi.has_low_modes:
        raise DomainError("Poisson data must be high-mode only")
    J = phi.J
    out = np.zeros((2 * J + 1, len(hc.grid)))
    for j in range(-J, J + 1):
        if abs(j) >= 2 and phi.coeffs[j + J] != 0.0:
            out[j + J] = solve_mode(hc, j, None, float(phi.coeffs[j + J]))
    w = ModeField(hc.grid, out, J)
    pn = phi.c2_norm()
    amp = weighted_norm(w, mu, hc.s0) / pn if pn > 0 else 0.0
    return LinearSolution(w, amp)


def flat_poisson(grid: np.ndarray, s0: float, phi: BoundaryData) -> ModeField:
    """Harmonic extension phi_j e^{-|j|(s - s0)} on the flat half-cylinder."""
    if phi.has_low_modes:
        raise DomainError("flat Poisson data must be high-mode only")
    J = phi.J
    js = np.abs(np.arange(-J, J + 1))[:, None]
    return ModeField(grid, phi.coeffs[:, None] * np.exp(-js * (grid[None, :] - s0)), J)


def weighted_norm(w: ModeField, mu: float, s0: float, order: int = 2,
                  n_theta: int = THETA_POINTS, window: float | None = None) -> float:
    """sup_s e^{mu (s - s0)} sup_theta (|w| + |w_s| + |w_ss|) up to ``order`` derivatives."""
    field = w if window is None else w.restrict(s0, s0 + window)
    th = theta_grid(n_theta)
    X = chi_matrix(field.J, th)
    total = np.abs(field.coeffs.T @ X)
    if order >= 1:
        total = total + np.abs(fd_derivative(field.coeffs, field.step, 1).T @ X)
    if order >= 2:
        total = total + np.abs(fd_derivative(field.coeffs, field.step, 2).T @ X)
    wt = np.exp(mu * (field.grid - s0))
    return float(np.max(wt[:, None] * total))


def mode_residual(hc: HalfCylinder, w: ModeField, f: ModeField | None = None) -> np.ndarray:
    """Per-mode sup |w_j'' + (V - j^2) w_j - f_j| on interior grid points."""
    J = w.J
    d2 = fd_derivative(w.coeffs, hc.step, 2)
    js = np.arange(-J, J + 1)[:, None]
    r = d2 + (hc.potential[None, :] - js**2) * w.coeffs
    if f is not None:
        r = r - f.coeffs
    return np.abs(r[:, 2:-2]).max(axis=1)


def poisson_deviation(epsilon: float, mu: float, phi: BoundaryData,
                      s0: float | None = None) -> float:
    """Weighted C^2 distance between P_eps phi and the flat extension, per unit |phi|."""
    _check_mu(mu)
    if epsilon > 0.1:
        raise DomainError("poisson_deviation is meant for epsilon <= 0.1")
    pn = phi.c2_norm()
    if pn == 0.0:
        return 0.0
    hc = half_cylinder(epsilon, s0, J=phi.J)
    w = poisson_apply(hc, phi, mu).field
    w0 = flat_poisson(hc.grid, hc.s0, phi)
    return weighted_norm(w - w0, mu, hc.s0) / pn


def deviation_rate(epsilon: float, mu: float) -> float:
    """epsilon^{-mu/4} (epsilon^{1/2} + epsilon^{(6 - 3 mu)/4})."""
    return epsilon ** (-mu / 4) * (math.sqrt(epsilon) + epsilon ** ((6 - 3 * mu) / 4))
