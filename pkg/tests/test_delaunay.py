import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from delaunay_glue.delaunay import (CYLINDER_PERIOD, FITTED_CONSTANTS, check_profile_estimates,
                                    neck_params, neck_params_from_tau, period_S, period_T,
                                    solve_profile, to_cylindrical, write_profile_csv,
                                    write_report_json)
from delaunay_glue.errors import DomainError, RangeError

# DOP853 / complete-elliptic-integral values, frozen
FROZEN_S = {0.5: 6.743001419250384, 0.1: 9.122196553691081, 0.01: 13.426402093444766}
FROZEN_T = {0.5: 5.869848837357712, 0.1: 4.686788211126272, 0.01: 4.113903236115091}


def test_neck_params_relation():
    p = neck_params(0.3)
    assert p.tau == pytest.approx(math.sqrt(0.3 * 1.7), rel=1e-15)
    q = neck_params_from_tau(p.tau)
    assert q.epsilon == pytest.approx(0.3, rel=1e-14)
    assert neck_params(1.0).is_cylinder


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5, float("nan")])
def test_neck_params_domain(bad):
    with pytest.raises(DomainError):
        neck_params(bad)


@pytest.mark.parametrize("eps", sorted(FROZEN_S))
def test_period_S_frozen_and_oracle(eps):
    S = period_S(neck_params(eps))
    assert S == pytest.approx(FROZEN_S[eps], abs=1e-12)
    assert S == pytest.approx(oracles.period_S(eps), abs=1e-12)


def test_cylinder_period():
    # sigma is constant on the cylinder; the conventional period is 2 pi
    assert CYLINDER_PERIOD == pytest.approx(2 * math.pi)
    assert solve_profile(neck_params(1.0), 1.0).period_S == CYLINDER_PERIOD
    with pytest.raises(DomainError):
        period_S(neck_params(1.0))


@pytest.mark.parametrize("eps", sorted(FROZEN_T))
def test_period_T_frozen(eps, profile_of):
    assert period_T(profile_of(eps)) == pytest.approx(FROZEN_T[eps], abs=1e-10)


@pytest.mark.parametrize("eps", [0.7, 0.2, 0.01])
def test_profile_matches_ivp(eps, profile_of):
    prof = profile_of(eps)
    s = np.linspace(0.0, prof.period_S, 37)
    sig, ss, k = oracles.profile(eps, s)
    ev = prof.evaluate(s)
    assert np.abs(ev["sigma"] - sig).max() < 1e-10
    assert np.abs(ev["sigma_s"] - ss).max() < 1e-10
    assert np.abs(ev["k"] - k).max() < 1e-10


def test_symmetries(profile_of):
    prof = profile_of(0.2)
    S = prof.period_S
    s = np.linspace(-1.0, 1.0, 11)
    a, b = prof.evaluate(s), prof.evaluate(-s)
    assert np.allclose(a["sigma"], b["sigma"], atol=1e-13)
    assert np.allclose(a["k"], -b["k"], atol=1e-13)
    ref = prof.evaluate(S / 2 - s)["sigma"]
    assert np.allclose(ref, -a["sigma"], atol=1e-10)
    quarter = prof.evaluate(np.array([S / 4, S / 2]))["sigma"]
    assert abs(quarter[0]) < 1e-10
    assert quarter[1] == pytest.approx(-prof.sigma[prof.index_of(0.0)], abs=1e-10)


def test_cylinder_profile():
    prof = solve_profile(neck_params(1.0), 3.0)
    assert np.all(prof.sigma == 0.0)
    assert np.allclose(prof.k, prof.grid)
    assert np.allclose(prof.rho, 1.0)


@given(st.floats(0.01, 0.95))
def test_invariant_and_monotone_height(eps):
    params = neck_params(eps)
    prof = solve_profile(params, period_S(params))
    assert np.abs(prof.invariant_drift).max() < 1e-11
    assert np.all(prof.k_s > 0)
    assert np.all(prof.sigma_s**2 <= 1.0 + 1e-12)
    # the potential never exceeds 2 - tau^2
    assert prof.potential.max() <= 2.0 - prof.tau**2 + 1e-12


@given(st.floats(0.05, 0.9), st.floats(0.01, 5.0) | st.floats(-5.0, -0.01))
def test_off_grid_evaluation_matches_oracle(eps, s):
    params = neck_params(eps)
    prof = solve_profile(params, 6.0)
    sig, ss, k = oracles.profile(eps, [0.0, abs(s)])
    ev = prof.evaluate(np.array([s]))
    assert ev["sigma"][0] == pytest.approx(sig[-1], abs=1e-10)
    assert ev["sigma_s"][0] == pytest.approx(math.copysign(1, s) * ss[-1], abs=1e-10)


def test_evaluate_outside_grid_raises():
    prof = solve_profile(neck_params(0.5), 2.0)
    with pytest.raises(RangeError):
        prof.evaluate(np.array([2.5]))


def test_step_order_convergence():
    # sixth-order composition: halving the step shrinks the error by ~64
    params = neck_params(0.3)
    S = period_S(params)
    ref = oracles.profile(0.3, [0.0, S])[2, -1]
    e1 = abs(solve_profile(params, S, step=0.2).evaluate(np.array([S]))["k"][0] - ref)
    e2 = abs(solve_profile(params, S, step=0.1).evaluate(np.array([S]))["k"][0] - ref)
    assert e2 < e1 / 20


def test_cylindrical_hamiltonian(profile_of):
    eps = 0.3
    cyl = to_cylindrical(profile_of(eps))
    assert np.allclose(cyl.hamiltonian, eps * (eps - 2.0), atol=1e-9)


@pytest.mark.parametrize("eps", [1e-2, 1e-4])
def test_estimates_pass_in_regime(eps):
    params = neck_params(eps)
    rep = check_profile_estimates(solve_profile(params, 0.6 * period_S(params)))
    assert rep.in_regime
    failing = [c.name for c in rep.checks if not c.passed]
    # the literal e^{2s} expansion holds with its constant only for eps >= 1e-3
    expected = [] if eps >= 1e-3 else ["k_expansion"]
    assert failing == expected
    assert rep.check("k_expansion_sinh").passed


def test_estimates_out_of_regime():
    rep = check_profile_estimates(solve_profile(neck_params(0.5), 4.0))
    assert not rep.in_regime and rep.flag == "out of asymptotic regime"


def test_estimates_need_coverage():
    with pytest.raises(RangeError):
        check_profile_estimates(solve_profile(neck_params(0.01), 1.0))


def test_fitted_constants_frozen():
    assert FITTED_CONSTANTS == {
        "rho_refined": 0.1, "rho_t_refined": 0.3, "k_expansion": 1.0,
        "k_expansion_sinh": 0.3, "neck_lower": 0.5, "potential_mid": 6.0,
        "potential_far": 0.25, "xi_limit": 0.5,
    }


def test_csv_and_json_writers(tmp_path):
    prof = solve_profile(neck_params(0.5), 1.0)
    p = tmp_path / "p.csv"
    write_profile_csv(prof, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "s,sigma,sigma_s,k,rho,invariant_drift"
    assert len(lines) == len(prof.grid) + 1
    params = neck_params(0.01)
    rep = check_profile_estimates(solve_profile(params, 0.6 * period_S(params)))
    q = tmp_path / "r.json"
    write_report_json(rep, q)
    assert '"in_regime": true' in q.read_text()
