"""CMC-1 normal graphs over half-Delaunay surfaces.

For a graph ``x_w = x + w nu`` over the Delaunay end, ``H(x_w) = 1`` is
rewritten as ``L w = Q(w)`` with the quadratic remainder

    Q(w) = L w - tau^2 e^{2 sigma} (H(x_w) - 1),

where ``L = d_s^2 + d_theta^2 + tau^2 cosh 2 sigma``.  Q is evaluated from
the exact mean curvature of the graph: the Delaunay jet is analytic, w is
differentiated by finite differences in s and spectrally in theta.  The
solution is ``w = P phi + v`` with ``v`` the fixed point of ``v -> G Q(P phi + v)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DivergenceError, DomainError
from .geometry import Jet, delaunay_jet, forms_from_jet, mean_curvature_change
from .halfcyl import (THETA_POINTS, BoundaryData, HalfCylinder, ModeField, chi_matrix,
                      fd_derivative, green_apply, poisson_apply, project_modes,
                      theta_grid, weighted_norm)

log = logging.getLogger("delaunay_glue")

C0_DEFAULT = 0.3
TOL_DEFAULT = 1e-10
MAX_ITER = 50
# rows whose |w| + |w_s| + |w_ss| falls below this fraction of the maximum are
# treated as linear (Q = 0 there); the neglected Q is below 1e-18 relative
ACTIVE_FRACTION = 1e-9
CHUNK_ROWS = 2048


def theta_derivative_matrix(J: int) -> np.ndarray:
    """D with (D c)_j the chi_j-coefficient of d/dtheta sum_k c_k chi_k."""
    D = np.zeros((2 * J + 1, 2 * J + 1))
    for j in range(1, J + 1):
        # cos(j t)' = -j sin(j t),  sin(j t)' = j cos(j t)
        D[J - j, J + j] = -j
        D[J + j, J - j] = j
    return D


def delaunay_normal_jet(tau: float, sig, sig_s, theta):
    """nu and its first and second derivatives in (s, theta)."""
    sig_ss = -0.5 * tau * tau * np.sinh(2.0 * sig)
    sig_sss = -tau * tau * np.cosh(2.0 * sig) * sig_s
    xi = tau * np.cosh(sig)
    xi_s = tau * np.sinh(sig) * sig_s
    xi_ss = tau * (np.cosh(sig) * sig_s**2 + np.sinh(sig) * sig_ss)
    c, s = np.cos(theta), np.sin(theta)
    z = np.zeros(np.broadcast(sig, theta).shape)

    def v3(a, b, d):
        return np.stack(np.broadcast_arrays(a, b, d + z), axis=-1)

    return Jet(
        v3(-xi * c, -xi * s, sig_s),
        v3(-xi_s * c, -xi_s * s, sig_ss),
        v3(xi * s, -xi * c, z),
        v3(-xi_ss * c, -xi_ss * s, sig_sss),
        v3(xi_s * s, -xi_s * c, z),
        v3(xi * c, xi * s, z),
    )


def displacement_jet(nu: Jet, w, ws, wt, wss, wst, wtt) -> Jet:
    """Jet of w nu from the jets of nu and w."""
    e = lambda a: a[..., None]  # noqa: E731
    return Jet(
        e(w) * nu.x,
        e(ws) * nu.x + e(w) * nu.xu,
        e(wt) * nu.x + e(w) * nu.xv,
        e(wss) * nu.x + 2 * e(ws) * nu.xu + e(w) * nu.xuu,
        e(wst) * nu.x + e(ws) * nu.xv + e(wt) * nu.xu + e(w) * nu.xuv,
        e(wtt) * nu.x + 2 * e(wt) * nu.xv + e(w) * nu.xvv,
    )


def graph_jet(base: Jet, nu: Jet, w, ws, wt, wss, wst, wtt) -> Jet:
    """Jet of x + w nu from the jets of x, nu and w."""
    d = displacement_jet(nu, w, ws, wt, wss, wst, wtt)
    return Jet(base.x + d.x, base.xu + d.xu, base.xv + d.xv, base.xuu + d.xuu,
               base.xuv + d.xuv, base.xvv + d.xvv)


@dataclass
class DefectEvaluation:
    Q: ModeField
    aliasing: float
    active_rows: int
    H_minus_1: np.ndarray | None = None   # (active_rows, n_theta)


def _active_rows(w: ModeField, ws: np.ndarray, wss: np.ndarray) -> int:
    size = np.abs(w.coeffs).sum(0) + np.abs(ws).sum(0) + np.abs(wss).sum(0)
    top = size.max(initial=0.0)
    if top == 0.0:
        return 0
    idx = np.nonzero(size > ACTIVE_FRACTION * top)[0]
    return int(min(len(size), idx[-1] + 3))


def nonlinear_defect(hc: HalfCylinder, w: ModeField, n_theta: int = THETA_POINTS,
                     keep_H: bool = False) -> DefectEvaluation:
    """Q(w) = L w - tau^2 e^{2 sigma} (H(x_w) - 1), projected onto |j| <= J."""
    J = w.J
    th = theta_grid(n_theta)
    X = chi_matrix(J, th)
    D = theta_derivative_matrix(J)
    ws_all = fd_derivative(w.coeffs, hc.step, 1)
    wss_all = fd_derivative(w.coeffs, hc.step, 2)
    m = _active_rows(w, ws_all, wss_all)
    out = np.zeros_like(w.coeffs)
    alias = 0.0
    Hm1 = np.zeros((m, n_theta)) if keep_H else None
    tau = hc.tau
    for a in range(0, m, CHUNK_ROWS):
        b = min(m, a + CHUNK_ROWS)
        C = w.coeffs[:, a:b]
        Cs = ws_all[:, a:b]
        Css = wss_all[:, a:b]
        W = C.T @ X
        Ws = Cs.T @ X
        Wss = Css.T @ X
        Wt = (D @ C).T @ X
        Wtt = (D @ D @ C).T @ X
        Wst = (D @ Cs).T @ X
        sig = hc.sigma[a:b, None]
        sig_s = hc.sigma_s[a:b, None]
        base = delaunay_jet(tau, sig, sig_s, hc.k[a:b, None], th[None, :])
        nu = delaunay_normal_jet(tau, sig, sig_s, th[None, :])
        # the Delaunay base has H = 1 identically, so H(x_w) - 1 = dH
        dH = mean_curvature_change(base, displacement_jet(nu, W, Ws, Wt, Wss, Wst, Wtt))
        lam = tau * tau * np.exp(2.0 * sig)
        V = tau * tau * np.cosh(2.0 * sig)
        Qg = Wss + Wtt + V * W - lam * dH
        coeffs, lost = project_modes(Qg, J, axis=-1)
        out[:, a:b] = coeffs
        alias = max(alias, lost)
        if keep_H:
            Hm1[a:b] = dH
    if alias > 1e-12:
        log.debug("nonlinear defect: discarded angular energy fraction %.3e", alias)
    return DefectEvaluation(ModeField(w.grid, out, J), alias, m, Hm1)


def graph_mean_curvature(hc: HalfCylinder, w: ModeField, n_theta: int = THETA_POINTS,
                         window: tuple[float, float] | None = None) -> np.ndarray:
    """H(x_w) - 1 on (grid rows in window) x (theta grid)."""
    J = w.J
    lo, hi = window if window is not None else (hc.grid[0], hc.grid[-1])
    rows = np.nonzero((hc.grid >= lo - 1e-12) & (hc.grid <= hi + 1e-12))[0]
    th = theta_grid(n_theta)
    X = chi_matrix(J, th)
    D = theta_derivative_matrix(J)
    ws_all = fd_derivative(w.coeffs, hc.step, 1)
    wss_all = fd_derivative(w.coeffs, hc.step, 2)
    res = []
    for a in range(0, len(rows), CHUNK_ROWS):
        r = rows[a: a + CHUNK_ROWS]
        C, Cs, Css = w.coeffs[:, r], ws_all[:, r], wss_all[:, r]
        sig = hc.sigma[r, None]
        sig_s = hc.sigma_s[r, None]
        base = delaunay_jet(hc.tau, sig, sig_s, hc.k[r, None], th[None, :])
        nu = delaunay_normal_jet(hc.tau, sig, sig_s, th[None, :])
        jet = graph_jet(base, nu, C.T @ X, Cs.T @ X, (D @ C).T @ X, Css.T @ X,
                        (D @ Cs).T @ X, (D @ D @ C).T @ X)
        res.append(forms_from_jet(jet).mean_curvature - 1.0)
    return np.concatenate(res, axis=0) if res else np.zeros((0, n_theta))


# ---------------------------------------------------------------------------
# solver

@dataclass(frozen=True)
class CauchyData:
    values: BoundaryData
    slopes: BoundaryData

    def low(self) -> tuple[np.ndarray, np.ndarray]:
        J = self.values.J
        sl = slice(J - 1, J + 2)
        return self.values.coeffs[sl].copy(), self.slopes.coeffs[sl].copy()

    def high(self) -> tuple[BoundaryData, BoundaryData]:
        return self.values.high_part(), self.slopes.high_part()

    def low_norm(self) -> float:
        v, s = self.low()
        return float(np.abs(v).sum() + np.abs(s).sum())

    def to_dict(self) -> dict:
        J = self.values.J
        return {str(j): [float(self.values[j]), float(self.slopes[j])] for j in range(-J, J + 1)}


@dataclass
class GraphSolution:
    hc: HalfCylinder
    s0: float
    w: ModeField
    boundary_data: BoundaryData
    mu: float
    iterations: int
    updates: list[float] = field(default_factory=list)
    aliasing: float = 0.0
    h_residual: float = 0.0
    residual_window: tuple[float, float] = (0.0, 0.0)

    @property
    def final_update(self) -> float:
        return self.updates[-1] if self.updates else 0.0

    @property
    def ratios(self) -> list[float]:
        u = self.updates
        return [b / a for a, b in zip(u[:-1], u[1:]) if a > 0]

    def norm(self) -> float:
        return weighted_norm(self.w, self.mu, self.s0)

    def report(self) -> dict:
        return {
            "epsilon": self.hc.epsilon, "s0": self.s0, "mu": self.mu,
            "iterations": self.iterations, "updates": self.updates, "ratios": self.ratios,
            "aliasing": self.aliasing, "h_residual": self.h_residual,
            "residual_window": list(self.residual_window), "weighted_norm": self.norm(),
        }


def boundary_size(phi: BoundaryData) -> float:
    """L^2(S^1) norm of the boundary data (the l^2 norm of its chi-coefficients)."""
    return float(np.linalg.norm(phi.coeffs))


def solve_graph(hc: HalfCylinder, phi_high: BoundaryData, mu: float = 1.5,
                tol: float = TOL_DEFAULT, max_iter: int = MAX_ITER, c0: float = C0_DEFAULT,
                n_theta: int = THETA_POINTS, residual_window: float | None = None,
                check_smallness: bool = True) -> GraphSolution:
    """CMC-1 graph over the end with high-mode trace phi_high at s0."""
    if phi_high.has_low_modes:
        raise DomainError("graph boundary data must be high-mode only")
    eps = hc.epsilon
    size = boundary_size(phi_high)
    if check_smallness and size > c0 * eps**0.75 * (1.0 + 1e-12):
        raise ConsistencyError(
            f"|phi''| = {size:.3e} exceeds c0 eps^(3/4) = {c0 * eps**0.75:.3e}")
    win = 2.0 * hc.period_S if residual_window is None else residual_window
    window = (hc.s0, min(hc.s_far, hc.s0 + win))
    if size == 0.0:
        w = ModeField.zeros(hc.grid, phi_high.J)
        return GraphSolution(hc, hc.s0, w, phi_high, mu, 0, [], 0.0, 0.0, window)

    w_eps = poisson_apply(hc, phi_high, mu).field
    v = ModeField.zeros(hc.grid, phi_high.J)
    updates: list[float] = []
    grows = 0
    alias = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        ev = nonlinear_defect(hc, w_eps + v, n_theta)
        alias = max(alias, ev.aliasing)
        v_new = green_apply(hc, ev.Q, mu).field
        upd = weighted_norm(v_new - v, mu, hc.s0)
        updates.append(upd)
        v = v_new
        log.debug("graph iteration %d: update %.3e", it, upd)
        if len(updates) >= 2 and updates[-1] > updates[-2]:
            grows += 1
            if grows >= 2:
                raise DivergenceError(f"graph iteration not contracting: updates {updates}")
        else:
            grows = 0
        if upd <= tol:
            break
    else:
        raise DivergenceError(f"graph iteration did not reach {tol:g} in {max_iter} steps")
    w = w_eps + v
    Hm1 = graph_mean_curvature(hc, w, n_theta, window)
    return GraphSolution(hc, hc.s0, w, phi_high, mu, it, updates, alias,
                         float(np.abs(Hm1).max()), window)


def cauchy_data(solution: GraphSolution) -> CauchyData:
    """Per-mode (value, slope) at s0."""
    return CauchyData(solution.w.trace(), solution.w.slope())


def mode_phi(epsilon: float, j: int = 2, factor: float = 0.3, J: int = 12) -> BoundaryData:
    """factor * eps^{3/4} chi_j."""
    return BoundaryData.mode(j, factor * epsilon**0.75, J)


__all__ = [
    "CauchyData", "GraphSolution", "DefectEvaluation", "nonlinear_defect", "solve_graph",
    "cauchy_data", "graph_mean_curvature", "theta_derivative_matrix", "delaunay_normal_jet",
    "graph_jet", "displacement_jet", "boundary_size", "mode_phi",
]
