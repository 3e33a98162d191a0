"""Independent reference computations used by the tests.

None of these share code with the package: periods come from complete
elliptic integrals, profiles and monodromies from a general-purpose
adaptive Runge-Kutta integrator.
"""

import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import ellipk


def tau_of(eps):
    return math.sqrt(eps * (2.0 - eps))


def period_S(eps):
    """S = 4 K(1 - tau^2) with K the complete elliptic integral of the first kind."""
    return 4.0 * float(ellipk(1.0 - tau_of(eps) ** 2))


def _rhs(tau):
    t2 = tau * tau

    def f(s, y):
        sig, p, k = y
        return [p, -0.5 * t2 * math.sinh(2 * sig), 0.5 * t2 * (1 + math.exp(2 * sig))]

    return f


def profile(eps, s_eval):
    """(sigma, sigma_s, k) at the points s_eval >= 0 by DOP853."""
    tau = tau_of(eps)
    y0 = [math.log(eps / tau), 0.0, 0.0]
    s_eval = np.asarray(s_eval, float)
    sol = solve_ivp(_rhs(tau), (0.0, float(s_eval.max())), y0, method="DOP853",
                    t_eval=s_eval, rtol=1e-13, atol=1e-14)
    return sol.y


def axial_period(eps):
    """T = k(S) by DOP853 over one period."""
    S = period_S(eps)
    return float(profile(eps, [0.0, S])[2, -1])


def monodromy_trace(eps, j):
    """trace of the mode-j monodromy over P = S/2 by DOP853."""
    tau = tau_of(eps)
    t2 = tau * tau
    P = 0.5 * period_S(eps) if eps < 1 else math.pi
    sig0 = math.log(eps / tau) if eps < 1 else 0.0

    def f(s, y):
        sig, p, w1, v1, w2, v2 = y
        q = j * j - t2 * math.cosh(2 * sig)
        return [p, -0.5 * t2 * math.sinh(2 * sig), v1, q * w1, v2, q * w2]

    sol = solve_ivp(f, (0.0, P), [sig0, 0.0, 1.0, 0.0, 0.0, 1.0], method="DOP853",
                    rtol=1e-13, atol=1e-14)
    y = sol.y[:, -1]
    return y[2] + y[5], P


def floquet_gamma(eps, j):
    tr, P = monodromy_trace(eps, j)
    return math.acosh(abs(tr) / 2.0) / P
