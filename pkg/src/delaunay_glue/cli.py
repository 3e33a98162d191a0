"""Command-line entry point: one subcommand per experiment.

Every run writes a summary JSON (version, effective config, wall time,
status); data outputs (CSV, JSON, OBJ) are deterministic for a fixed config.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, PreconditionError

log = logging.getLogger("delaunay_glue")

SUBCOMMANDS = ("profile", "periods", "estimates", "jacobi", "floquet", "bvp", "graph", "glue",
               "mesh")
EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 1, 2, 3


def version_string() -> str:
    """Package version with the git short hash appended when available."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def round9(obj):
    """Recursively convert numpy values and round floats to 9 significant digits."""
    if isinstance(obj, dict):
        return {str(k): round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round9(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return round9(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return str(x)
        return float(format(x, ".9g"))
    return obj


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(round9(obj), indent=2, sort_keys=True) + "\n")


def _configure_logging() -> None:
    level = os.environ.get("DELAUNAY_GLUE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(levels[level])


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epsilon", type=float, nargs="+")
    common.add_argument("--mu", type=float)
    common.add_argument("--kappa", type=float)
    common.add_argument("--j", type=int)
    common.add_argument("--config", type=Path)
    common.add_argument("--out", type=Path)
    common.add_argument("--out-dir", type=Path)
    common.add_argument("--summary", type=Path, help="summary JSON path")
    common.add_argument("--threads", type=int)
    common.add_argument("--tolerance", type=float)

    p = argparse.ArgumentParser(prog="delaunay-glue", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command")
    sp = sub.add_parser("profile", parents=[common], help="Delaunay profile CSV")
    sp.add_argument("--periods", type=float, default=2.0, help="half-width in periods S")
    sub.add_parser("periods", parents=[common], help="periods S and T")
    sub.add_parser("estimates", parents=[common], help="asymptotic estimate checks")
    sp = sub.add_parser("jacobi", parents=[common], help="explicit Jacobi field residuals")
    sp.add_argument("--sign", choices=["+", "-"])
    sub.add_parser("floquet", parents=[common], help="Floquet exponent of mode j")
    sp = sub.add_parser("bvp", parents=[common], help="linear half-cylinder solves")
    sp.add_argument("--amplitude", type=float)
    sp = sub.add_parser("graph", parents=[common], help="nonlinear CMC graph over an end")
    sp.add_argument("--amplitude", type=float, help="factor c in c eps^(3/4) chi_j")
    sp.add_argument("--modes", type=int, help="angular truncation J")
    sub.add_parser("glue", parents=[common], help="k = 2 end-to-end gluing")
    sp = sub.add_parser("mesh", parents=[common], help="mesh export with mean curvature")
    sp.add_argument("--kind", choices=["delaunay", "sphere", "cylinder", "catenoid"])
    sp.add_argument("--resolution", type=int, nargs=2)
    return p


DEFAULTS = {
    "profile": {"epsilon": [0.5], "periods": 2.0},
    "periods": {"epsilon": [1e-2, 1e-3, 1e-4]},
    "estimates": {"epsilon": [0.01]},
    "jacobi": {"epsilon": [0.5], "j": None, "sign": None},
    "floquet": {"epsilon": [1.0], "j": 2},
    "bvp": {"epsilon": [0.3], "j": 2, "mu": 1.5, "amplitude": 1.0},
    "graph": {"epsilon": [0.1], "j": 2, "mu": 1.5, "amplitude": 0.3, "tolerance": 1e-10,
              "modes": 16},
    "glue": {},
    "mesh": {"epsilon": [0.5], "kind": "delaunay", "resolution": [200, 64]},
}


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit command-line flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            cfg.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            from .errors import ConfigurationError
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from None
    skip = {"command", "config", "summary"}
    for k, v in vars(args).items():
        if k in skip or v is None:
            continue
        cfg[k] = str(v) if isinstance(v, Path) else v
    if "epsilon" in cfg and not isinstance(cfg["epsilon"], list):
        cfg["epsilon"] = [cfg["epsilon"]]
    return cfg


def _eps_list(cfg: dict) -> list[float]:
    from .errors import ConfigurationError
    eps = cfg.get("epsilon")
    if not eps:
        raise ConfigurationError("--epsilon is required")
    out = [float(e) for e in eps]
    for e in out:
        if not (0.0 < e <= 1.0):
            from .errors import DomainError
            raise DomainError(f"epsilon = {e} outside (0, 1]")
    return out


def _out_path(cfg: dict, default: str) -> Path | None:
    if cfg.get("out"):
        return Path(cfg["out"])
    if cfg.get("out_dir"):
        d = Path(cfg["out_dir"])
        d.mkdir(parents=True, exist_ok=True)
        return d / default
    return None


# ---------------------------------------------------------------------------
# subcommands

def cmd_profile(cfg: dict) -> dict:
    from .delaunay import neck_params, period_S, solve_profile, write_profile_csv
    results = []
    eps_list = _eps_list(cfg)
    for i, eps in enumerate(eps_list):
        params = neck_params(eps)
        S = period_S(params)
        prof = solve_profile(params, float(cfg["periods"]) * S)
        out = _out_path(cfg, f"profile_{eps:g}.csv")
        if out is not None and len(eps_list) > 1:
            out = out.with_name(f"{out.stem}_{i}{out.suffix}")
        if out is not None:
            write_profile_csv(prof, out)
        results.append({"epsilon": eps, "tau": params.tau, "period_S": S,
                        "invariant_drift": float(np.abs(prof.invariant_drift).max()),
                        "points": len(prof.grid), "csv": str(out) if out else None})
        print(f"epsilon={eps:.9g} S={S:.9g} drift={results[-1]['invariant_drift']:.3e}")
    return {"profiles": results}


def cmd_periods(cfg: dict) -> dict:
    from .delaunay import neck_params, period_S, period_T, solve_profile
    rows = []
    for eps in _eps_list(cfg):
        params = neck_params(eps)
        S = period_S(params)
        prof = solve_profile(params, 1.05 * S)
        T = period_T(prof)
        row = {"epsilon": eps, "tau": params.tau, "S": S, "T": T,
               "S_plus_4_log_tau": S + 4 * math.log(params.tau) if eps < 1 else None,
               "T_scaled": (T - 4 - 2 * eps * math.log(1 / eps)) / eps if eps < 1 else None}
        rows.append(row)
        print(" ".join(f"{k}={v:.9g}" for k, v in row.items() if v is not None))
    out = _out_path(cfg, "periods.csv")
    if out is not None:
        keys = list(rows[0])
        lines = [",".join(keys)]
        lines += [",".join("" if r[k] is None else format(r[k], ".9g") for k in keys)
                  for r in rows]
        out.write_text("\n".join(lines) + "\n")
    return {"periods": rows}


def cmd_estimates(cfg: dict) -> dict:
    from .delaunay import check_profile_estimates, neck_params, period_S, solve_profile
    reports = []
    for eps in _eps_list(cfg):
        params = neck_params(eps)
        S = period_S(params)
        rep = check_profile_estimates(solve_profile(params, 0.6 * S))
        d = rep.to_dict()
        reports.append({"epsilon": eps, **d})
        print(f"epsilon={eps:.9g} all_passed={rep.all_passed}")
        for c in rep.checks:
            print(f"  {c.name}: {'pass' if c.passed else 'FAIL'} measured={c.measured:.3e}"
                  f" bound={c.bound:.3e}")
    out = _out_path(cfg, "estimates.json")
    if out is not None:
        dump_json(reports, out)
    return {"reports": reports}


def cmd_jacobi(cfg: dict) -> dict:
    from .delaunay import neck_params, period_S, solve_profile
    from .jacobi import explicit_jacobi, jacobi_limits_report, jacobi_residual
    js = [cfg["j"]] if cfg.get("j") is not None else [-1, 0, 1]
    signs = [cfg["sign"]] if cfg.get("sign") else ["+", "-"]
    rows = []
    for eps in _eps_list(cfg):
        params = neck_params(eps)
        if params.is_cylinder:
            from .errors import DomainError
            raise DomainError("Jacobi fields are tabulated for epsilon < 1")
        prof = solve_profile(params, period_S(params))
        for j in js:
            for sg in signs:
                r = jacobi_residual(explicit_jacobi(prof, j, sg), prof)
                rows.append({"epsilon": eps, "j": j, "sign": sg, "residual": r})
                print(f"epsilon={eps:.9g} j={j} sign={sg} residual={r:.3e}")
    limits = []
    small = [e for e in _eps_list(cfg) if e <= 0.01]
    if len(small) >= 2:
        for j in js:
            for sg in signs:
                limits.append(jacobi_limits_report(small, j, sg).to_dict())
    out = _out_path(cfg, "jacobi.json")
    if out is not None:
        dump_json({"residuals": rows, "limits": limits}, out)
    return {"residuals": rows, "limits": limits}


def cmd_floquet(cfg: dict) -> dict:
    from .delaunay import neck_params
    from .jacobi import floquet_exponent
    j = int(cfg.get("j") or 2)
    rows = []
    for eps in _eps_list(cfg):
        res = floquet_exponent(neck_params(eps), j)
        rows.append({"epsilon": eps, "j": j, "gamma": res.gamma, "trace": res.trace,
                     "det": res.det, "period": res.period})
        print(f"gamma = {res.gamma:.9g}  (epsilon={eps:.9g}, j={j}, det={res.det:.12g})")
    out = _out_path(cfg, "floquet.json")
    if out is not None:
        dump_json(rows, out)
    return {"floquet": rows}


def cmd_bvp(cfg: dict) -> dict:
    from .halfcyl import (BoundaryData, green_apply, half_cylinder, mode_residual,
                          poisson_apply)
    j = int(cfg.get("j") or 2)
    mu = float(cfg["mu"])
    rows = []
    for eps in _eps_list(cfg):
        hc = half_cylinder(eps)
        phi = BoundaryData.mode(j, float(cfg["amplitude"]), hc.J)
        sol = poisson_apply(hc, phi, mu)
        res_p = float(mode_residual(hc, sol.field).max())
        f = sol.field.scaled(0.0)
        f.coeffs[j + hc.J] = np.exp(-2.0 * (hc.grid - hc.s0))
        g = green_apply(hc, f, mu)
        res_g = float(mode_residual(hc, g.field, f).max())
        rows.append({"epsilon": eps, "j": j, "mu": mu, "s0": hc.s0, "s_far": hc.s_far,
                     "poisson_residual": res_p, "poisson_amplitude": sol.operator_bound,
                     "green_residual": res_g, "green_bound": g.operator_bound,
                     "trace": float(sol.field.trace()[j]), "slope": float(sol.field.slope()[j])})
        print(" ".join(f"{k}={v:.9g}" if isinstance(v, float) else f"{k}={v}"
                       for k, v in rows[-1].items()))
    out = _out_path(cfg, "bvp.json")
    if out is not None:
        dump_json(rows, out)
    return {"bvp": rows}


def cmd_graph(cfg: dict) -> dict:
    from .graph_cmc import cauchy_data, mode_phi, solve_graph
    from .halfcyl import half_cylinder
    j = int(cfg.get("j") or 2)
    J = int(cfg["modes"])
    rows = []
    for eps in _eps_list(cfg):
        hc = half_cylinder(eps, J=J)
        phi = mode_phi(eps, j, float(cfg["amplitude"]), J)
        sol = solve_graph(hc, phi, float(cfg["mu"]), tol=float(cfg["tolerance"]))
        rep = sol.report()
        rep["cauchy"] = cauchy_data(sol).to_dict()
        rows.append(rep)
        print(f"epsilon={eps:.9g} iterations={sol.iterations} h_residual={sol.h_residual:.3e}"
              f" max_ratio={max(sol.ratios, default=0.0):.3f}")
    out = _out_path(cfg, "graph.json")
    if out is not None:
        dump_json(rows, out)
    return {"graph": rows}


def cmd_glue(cfg: dict) -> dict:
    from .errors import ConfigurationError
    from .geometry import export_meshes_obj
    from .matching import assemble_glued, config_from_dict, two_ended
    keys = ("epsilon", "kappa", "mu", "ends", "J", "interior", "end_model", "tol",
            "max_iter")
    raw = {k: cfg[k] for k in keys if k in cfg}
    if "tolerance" in cfg:
        raw["tol"] = cfg["tolerance"]
    eps_list = _eps_list(cfg) if "epsilon" in cfg else []
    if not eps_list:
        raise ConfigurationError("glue needs epsilon (config or --epsilon)")
    if "ends" not in raw:
        raw["ends"] = [{"a": 1.0, "axis": [0, 0, 1]}, {"a": 1.0, "axis": [0, 0, -1]}]
    out_dir = Path(cfg.get("out_dir") or cfg.get("out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for eps in eps_list:
        raw["epsilon"] = eps
        gc = config_from_dict(raw)
        g = assemble_glued(eps, gc, threads=cfg.get("threads"))
        tag = f"eps_{eps:g}"
        export_meshes_obj(g.pieces, out_dir / f"glued_{tag}.obj")
        rep = dict(g.report)
        rep["config"] = gc.to_dict()
        dump_json(rep, out_dir / f"residuals_{tag}.json")
        reports.append(rep)
        print(f"epsilon={eps:.9g} iterations={rep['iterations']}"
              f" value_mismatch={rep['interface_value_mismatch']:.3e}"
              f" sup|H-1|={rep['sup_H_minus_1']:.3e}"
              f" delaunay_distance={rep['delaunay_distance']:.3e}")
    return {"glue": reports, "out_dir": str(out_dir)}


def cmd_mesh(cfg: dict) -> dict:
    from .delaunay import neck_params, period_S, solve_profile
    from .geometry import (CatenoidPatch, CylinderPatch, DelaunayPatch, SpherePatch,
                           export_mesh, sample_mesh)
    kind = cfg["kind"]
    res = tuple(int(r) for r in cfg["resolution"])
    eps = _eps_list(cfg)[0]
    if kind == "delaunay":
        params = neck_params(eps)
        S = period_S(params)
        patch = DelaunayPatch(solve_profile(params, S))
        mesh = sample_mesh(patch, res, (-S, S))
    elif kind == "sphere":
        mesh = sample_mesh(SpherePatch(2.0), res, (0.05, math.pi - 0.05))
    elif kind == "cylinder":
        mesh = sample_mesh(CylinderPatch(1.0), res, (-2.0, 2.0))
    else:
        mesh = sample_mesh(CatenoidPatch(1.0), res, (-2.0, 2.0))
    target = 0.0 if kind == "catenoid" else 1.0
    err = float(np.abs(mesh.mean_curvature - target).max())
    out = _out_path(cfg, f"{kind}.obj")
    if out is not None:
        export_mesh(mesh, out, name=kind)
        np.savetxt(out.with_suffix(".H.csv"), mesh.mean_curvature, fmt="%.9g",
                   header="H", comments="")
    print(f"kind={kind} vertices={len(mesh.vertices)} sup|H-{target:g}|={err:.3e}")
    return {"kind": kind, "vertices": len(mesh.vertices), "faces": len(mesh.faces),
            "sup_H_error": err, "mesh": str(out) if out else None}


COMMANDS = {
    "profile": cmd_profile, "periods": cmd_periods, "estimates": cmd_estimates,
    "jacobi": cmd_jacobi, "floquet": cmd_floquet, "bvp": cmd_bvp, "graph": cmd_graph,
    "glue": cmd_glue, "mesh": cmd_mesh,
}


def _summary_path(args, cfg: dict) -> Path:
    if args.summary is not None:
        return args.summary
    if cfg.get("out_dir"):
        return Path(cfg["out_dir"]) / f"{args.command}.summary.json"
    if cfg.get("out"):
        return Path(str(cfg["out"]) + ".summary.json")
    return Path(f"{args.command}.summary.json")


def run(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or (argv[0] not in SUBCOMMANDS and not argv[0].startswith("-")):
        parser.print_usage(sys.stderr)
        print(f"delaunay-glue: choose a subcommand from {', '.join(SUBCOMMANDS)}",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    t0 = time.perf_counter()
    status, code, result, error = "ok", EXIT_OK, None, None
    cfg: dict = {}
    try:
        cfg = effective_config(args)
        if cfg.get("threads") is not None and int(cfg["threads"]) < 1:
            from .errors import DomainError
            raise DomainError("--threads must be positive")
        result = COMMANDS[args.command](cfg)
    except PreconditionError as exc:
        status, code, error = "precondition_error", EXIT_PRECONDITION, str(exc)
    except NumericalError as exc:
        status, code, error = "numerical_error", EXIT_NUMERICAL, str(exc)
    if error is not None:
        print(f"delaunay-glue {args.command}: {error}", file=sys.stderr)
    summary = {
        "version": version_string(),
        "command": args.command,
        "config": cfg,
        "status": status,
        "exit_code": code,
        "error": error,
        "wall_time_s": time.perf_counter() - t0,
        "result": result,
    }
    path = _summary_path(args, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(summary, path)
    return code


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
