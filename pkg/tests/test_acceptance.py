"""Acceptance criteria 1-9.

Each test evaluates every clause of its criterion, prints one PASS/FAIL line
(collected again in the terminal summary) and then asserts the clauses.
Clauses that cannot hold at the stated tolerances are asserted as stated and
fail; the measured values are part of the printed line.
"""

import filecmp
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from delaunay_glue.delaunay import neck_params, period_S, period_T, solve_profile
from delaunay_glue.geometry import (CatenoidPatch, CylinderPatch, DelaunayPatch, SpherePatch,
                                    mean_curvature)
from delaunay_glue.graph_cmc import boundary_size, cauchy_data, mode_phi, solve_graph
from delaunay_glue.halfcyl import (BoundaryData, ModeField, deviation_rate, green_apply,
                                   half_cylinder, mode_residual, poisson_apply,
                                   poisson_deviation)
from delaunay_glue.jacobi import (explicit_jacobi, floquet_exponent, jacobi_limits_report,
                                  jacobi_residual)
from delaunay_glue.matching import assemble_glued, two_ended

RESULTS: dict[int, str] = {}

# measured sup of the scaled quantities over the scans, frozen with headroom
T_REMAINDER_CONSTANT = 3.0        # sup |T - 4 - 2 eps log(1/eps)| / eps = 2.18
DEVIATION_CONSTANT = 1.0          # sup poisson_deviation / rate = 0.058
LOW_MODE_CONSTANT = 2.0           # sup low-mode Cauchy / (eps^{-3/4} |phi|^2) = 1.21


def _report(n: int, clauses: dict[str, tuple[bool, str]]) -> None:
    ok = all(v for v, _ in clauses.values())
    detail = "; ".join(f"{k} {'ok' if v else 'FAILED'} ({m})" for k, (v, m) in clauses.items())
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[n] = line
    print(line)
    failed = [k for k, (v, _) in clauses.items() if not v]
    assert not failed, f"criterion {n} clauses failed: {failed}"


def _grid(a, b, nu=200, nv=64):
    return np.meshgrid(np.linspace(a, b, nu), np.linspace(0, 2 * np.pi, nv, endpoint=False),
                       indexing="ij")


def test_criterion_1_delaunay_invariant():
    solve_profile(neck_params(0.7), 1.0)   # compile once outside the timed region
    clauses = {}
    for eps in (0.9, 0.5, 0.1, 0.01):
        t0 = time.perf_counter()
        params = neck_params(eps)
        prof = solve_profile(params, 2 * period_S(params))
        inv = prof.sigma_s**2 + params.tau**2 * np.cosh(prof.sigma) ** 2 - 1.0
        drift = float(np.abs(inv).max())
        dt = time.perf_counter() - t0
        clauses[f"eps={eps:g}"] = (drift <= 1e-9 and dt < 1.0,
                                   f"drift {drift:.1e}, {dt:.2f} s")
    _report(1, clauses)


def test_criterion_2_cmc_verification():
    t0 = time.perf_counter()
    clauses = {}
    for eps in (0.9, 0.5, 0.1):
        params = neck_params(eps)
        S = period_S(params)
        U, V = _grid(-S, S)
        err = float(np.abs(mean_curvature(DelaunayPatch(solve_profile(params, S)), U, V) - 1).max())
        clauses[f"delaunay eps={eps:g}"] = (err <= 1e-6, f"{err:.1e}")
    U, V = _grid(0.05, math.pi - 0.05)
    err = float(np.abs(mean_curvature(SpherePatch(2.0), U, V) - 1).max())
    clauses["sphere r=2"] = (err <= 1e-10, f"{err:.1e}")
    U, V = _grid(-2, 2)
    err = float(np.abs(mean_curvature(CylinderPatch(1.0), U, V) - 1).max())
    clauses["cylinder"] = (err <= 1e-10, f"{err:.1e}")
    err = float(np.abs(mean_curvature(CatenoidPatch(1.0), U, V)).max())
    clauses["catenoid"] = (err <= 1e-10, f"{err:.1e}")
    dt = time.perf_counter() - t0
    clauses["runtime"] = (dt < 5.0, f"{dt:.2f} s")
    _report(2, clauses)


def test_criterion_3_period_asymptotics():
    t0 = time.perf_counter()
    shifted, remainders = [], []
    for eps in (1e-2, 1e-3, 1e-4):
        params = neck_params(eps)
        S = period_S(params)
        T = period_T(solve_profile(params, 1.05 * S))
        shifted.append(S + 4 * math.log(params.tau))
        remainders.append(abs(T - 4 - 2 * eps * math.log(1 / eps)) / eps)
    steps = np.abs(np.diff(shifted))
    dt = time.perf_counter() - t0
    _report(3, {
        "S + 4 log tau steps < 0.1": (bool(np.all(steps < 0.1)),
                                      ", ".join(f"{s:.1e}" for s in steps)),
        f"T remainder <= {T_REMAINDER_CONSTANT}": (max(remainders) <= T_REMAINDER_CONSTANT,
                                                    ", ".join(f"{r:.3f}" for r in remainders)),
        "runtime": (dt < 5.0, f"{dt:.2f} s"),
    })


def test_criterion_4_jacobi_fields():
    t0 = time.perf_counter()
    worst, worst_minus0 = 0.0, 0.0
    for eps in (0.5, 0.1):
        params = neck_params(eps)
        prof = solve_profile(params, period_S(params))
        for j in (-1, 0, 1):
            for sg in ("+", "-"):
                r = jacobi_residual(explicit_jacobi(prof, j, sg), prof)
                if (j, sg) == (0, "-"):
                    worst_minus0 = max(worst_minus0, r)
                else:
                    worst = max(worst, r)
    mono = []
    for j in (-1, 0, 1):
        for sg in ("+", "-"):
            rep = jacobi_limits_report([1e-2, 1e-3, 1e-4], j, sg)
            mono.append((f"{j}{sg}", rep.monotone, rep.deviations))
    dt = time.perf_counter() - t0
    _report(4, {
        "residual <= 1e-6": (worst <= 1e-6, f"{worst:.1e}"),
        "Phi0- residual <= 1e-4": (worst_minus0 <= 1e-4, f"{worst_minus0:.1e}"),
        "limits monotone": (all(m for _, m, _ in mono),
                            ", ".join(f"{n}:{d[0]:.1e}>{d[-1]:.1e}" for n, _, d in mono)),
        "runtime": (dt < 10.0, f"{dt:.2f} s"),
    })


def test_criterion_5_floquet():
    t0 = time.perf_counter()
    g2 = floquet_exponent(neck_params(1.0), 2)
    g3 = floquet_exponent(neck_params(1.0), 3)
    scan = [floquet_exponent(neck_params(e), 2) for e in (1e-2, 1e-3, 1e-4)]
    gam = [r.gamma for r in scan]
    dets = [g2.det, g3.det] + [r.det for r in scan]
    dt = time.perf_counter() - t0
    _report(5, {
        "gamma2(1) = sqrt3": (abs(g2.gamma - math.sqrt(3)) <= 1e-7,
                              f"{abs(g2.gamma - math.sqrt(3)):.1e}"),
        "gamma3(1) = sqrt8": (abs(g3.gamma - math.sqrt(8)) <= 1e-7,
                              f"{abs(g3.gamma - math.sqrt(8)):.1e}"),
        "gamma2 >= 1.9 for eps <= 1e-2": (min(gam) >= 1.9,
                                          ", ".join(f"{g:.4f}" for g in gam)),
        "increasing toward 2": (gam[0] < gam[1] < gam[2] < 2.0, "monotone scan"),
        "det = 1": (max(abs(d - 1) for d in dets) <= 1e-9,
                    f"{max(abs(d - 1) for d in dets):.1e}"),
        "runtime": (dt < 10.0, f"{dt:.2f} s"),
    })


def test_criterion_6_linear_bvp():
    t0 = time.perf_counter()
    res_p = res_g = 0.0
    for eps in (0.3, 0.1):
        hc = half_cylinder(eps)
        phi = BoundaryData.from_dict({2: 1.0, -3: 0.5, 4: 0.25, -6: 0.1}, hc.J)
        w = poisson_apply(hc, phi).field
        res_p = max(res_p, float(mode_residual(hc, w).max()))
        f = ModeField.zeros(hc.grid, hc.J)
        decay = np.exp(-1.8 * (hc.grid - hc.s0))
        for j in range(-hc.J, hc.J + 1):
            f.coeffs[j + hc.J] = decay / (1 + j * j)
        g = green_apply(hc, f).field
        res_g = max(res_g, float(mode_residual(hc, g, f).max()))

    phi = BoundaryData.mode(2, 1.0)
    short = half_cylinder(0.1)
    long = half_cylinder(0.1, s_far=2 * short.s_far - short.s0)
    a = poisson_apply(short, phi).field.coeffs
    b = poisson_apply(long, phi).field.coeffs[:, : a.shape[1]]
    doubling = float(np.abs(a - b).max())

    cyl = half_cylinder(1.0, s_far=30.0, step=0.005)
    w = poisson_apply(cyl, phi).field.mode(2)
    closed = float(np.abs(w - np.exp(-math.sqrt(3) * cyl.grid)).max())

    ratios = [poisson_deviation(e, 1.5, phi) / deviation_rate(e, 1.5) for e in (1e-2, 1e-3, 1e-4)]
    dt = time.perf_counter() - t0
    _report(6, {
        "poisson residual <= 1e-7": (res_p <= 1e-7, f"{res_p:.1e}"),
        "green residual <= 1e-7": (res_g <= 1e-7, f"{res_g:.1e}"),
        "s_far doubling <= 1e-6": (doubling <= 1e-6, f"{doubling:.1e}"),
        "cylinder e^(-sqrt3 s) to 1e-8": (closed <= 1e-8, f"{closed:.1e}"),
        f"scaled deviation <= {DEVIATION_CONSTANT}": (max(ratios) <= DEVIATION_CONSTANT,
                                                      ", ".join(f"{r:.3f}" for r in ratios)),
        "runtime": (dt < 30.0, f"{dt:.2f} s"),
    })


def test_criterion_7_graph_solver():
    t0 = time.perf_counter()
    scaled = []
    main = None
    for eps in (0.1, 0.05, 0.02):
        phi = mode_phi(eps, 2, 0.3, J=16)
        sol = solve_graph(half_cylinder(eps, J=16), phi)
        if eps == 0.1:
            main = sol
        scaled.append(cauchy_data(sol).low_norm() / (eps**-0.75 * boundary_size(phi) ** 2))
    dt = time.perf_counter() - t0
    _report(7, {
        "iterations <= 15": (main.iterations <= 15, f"{main.iterations}"),
        "ratio <= 0.5": (max(main.ratios) <= 0.5, f"{max(main.ratios):.3f}"),
        "sup|H-1| <= 1e-5": (main.h_residual <= 1e-5, f"{main.h_residual:.1e}"),
        f"scaled low modes <= {LOW_MODE_CONSTANT}": (max(scaled) <= LOW_MODE_CONSTANT,
                                                     ", ".join(f"{s:.3f}" for s in scaled)),
        "runtime": (dt < 120.0, f"{dt:.1f} s"),
    })


def test_criterion_8_gluing():
    t0 = time.perf_counter()
    reps = []
    for eps in (0.2, 0.1, 0.05):
        reps.append(assemble_glued(eps, two_ended(eps)).report)
    dt = time.perf_counter() - t0
    mism = [r["interface_value_mismatch"] for r in reps]
    H = [r["sup_H_minus_1"] for r in reps]
    dist = [r["delaunay_distance"] for r in reps]
    fmt = lambda v: ", ".join(f"{x:.1e}" for x in v)  # noqa: E731
    _report(8, {
        "converged": (all(r["iterations"] >= 1 for r in reps),
                      "iterations " + ", ".join(str(r["iterations"]) for r in reps)),
        "value mismatch <= 1e-6": (max(mism) <= 1e-6, fmt(mism)),
        "sup|H-1| decreasing": (H[0] > H[1] > H[2], fmt(H)),
        "Delaunay distance decreasing": (dist[0] > dist[1] > dist[2], fmt(dist)),
        "runtime": (dt < 300.0, f"{dt:.0f} s"),
    })


# command lines that regenerate the outputs of criteria 1-8
DETERMINISM_RUNS = [
    ["profile", "--epsilon", "0.9", "0.5", "0.1", "0.01"],
    ["mesh", "--epsilon", "0.5", "--kind", "delaunay"],
    ["mesh", "--kind", "sphere"],
    ["periods", "--epsilon", "1e-2", "1e-3", "1e-4"],
    ["jacobi", "--epsilon", "0.5", "0.1", "1e-2", "1e-3", "1e-4"],
    ["floquet", "--epsilon", "1.0", "1e-2", "1e-3", "1e-4"],
    ["bvp", "--epsilon", "1.0", "0.3", "0.1"],
    ["graph", "--epsilon", "0.1", "0.05", "0.02"],
    ["glue", "--epsilon", "0.2", "0.1", "0.05"],
]


def _run_all(root: Path) -> None:
    for argv in DETERMINISM_RUNS:
        out = root / argv[0] / ("_".join(a for a in argv[1:] if not a.startswith("-")) or "run")
        proc = subprocess.run([sys.executable, "-m", "delaunay_glue", *argv, "--out-dir", str(out)],
                              capture_output=True, text=True, timeout=900)
        assert proc.returncode == 0, proc.stderr


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    _run_all(tmp_path / "a")
    _run_all(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and not p.name.endswith(".summary.json"))
    differ = [str(f) for f in files if not filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f,
                                                        shallow=False)]
    dt = time.perf_counter() - t0
    _report(9, {
        "byte-identical outputs": (len(files) > 0 and not differ,
                                   f"{len(files)} files, {len(differ)} differ {differ[:3]}"),
        "wall time": (True, f"{dt:.0f} s"),
    })
