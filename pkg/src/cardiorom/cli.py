"""Command-line front end.

Subcommands: ``assemble``, ``fom``, ``greedy``, ``rom-eval`` and
``validate``.  Every command prints a machine-readable ``key=value``
summary on stdout and writes its files, together with the effective
config, to the output directory.

Exit codes: 0 success (including a greedy run that did not converge),
2 missing input file or bad usage, 3 validation failure (bad config, mesh
mismatch), 1 any other library error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .assembly import mesh_hash, save_operators
from .config import SHIPPED_CONFIGS, RunConfig, load_config, shipped_config
from .errors import CardioRomError, ValidationError
from .estimation import EstimatorState, build_dual, build_residual_operator, compute_beta, error_estimate, relative_error
from .fom import solve_fom, sustained_activity, write_trajectory_csv
from .greedy import resolve_residual_mode, run_apodg_ei, run_apodg_ei_adapt, write_history_csv
from .reduction import load_rom, save_rom, solve_rom

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_INVALID = 0, 1, 2, 3


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def emit(summary: dict, stream=None):
    stream = stream or sys.stdout
    for k, v in summary.items():
        print(f"{k}={_fmt(v)}", file=stream)


def _load(args) -> RunConfig:
    path = Path(args.config)
    if not path.exists() and args.config in SHIPPED_CONFIGS:
        path = shipped_config(args.config)
    cfg = load_config(path)
    return cfg.with_overrides(seed=args.seed, out=args.out, threads=args.threads)


def _prepare_out(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(cfg.dump(), encoding="utf-8")
    return out


def _parameter(cfg: RunConfig, values):
    base = cfg.model_parameters()
    if values is None:
        return base
    if len(values) != len(cfg.parameters.names):
        raise ValidationError(f"--param needs {len(cfg.parameters.names)} value(s) ({', '.join(cfg.parameters.names)})")
    return base.with_parameter(values)


def _free(params, names):
    return [float(getattr(params, n)) for n in names]


def cmd_assemble(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    ops = cfg.operators()
    paths = save_operators(ops, out / "operators")
    emit({
        "command": "assemble", "N": ops.dimension, "nnz_mass": ops.mass.nnz, "nnz_stiffness": ops.stiffness.nnz,
        "mesh_hash": mesh_hash(ops), "node_sets": sorted(ops.node_sets), "operators": paths["mass"].parent,
        "effective_config": out / "effective_config.yaml",
    })
    return EXIT_OK


def cmd_fom(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    fom = cfg.system()
    params = _parameter(cfg, args.param)
    traj = solve_fom(fom, params, store_states=True, store_nonlinear=False)
    write_trajectory_csv(out / "fom_flux.csv", traj)
    summary = {
        "command": "fom", "N": fom.N, "n_steps": fom.n_steps, "parameter": _free(params, cfg.parameters.names),
        "wall_time": traj.wall_time, "y_min": float(traj.outputs.min()), "y_max": float(traj.outputs.max()),
        "sustained_activity": sustained_activity(traj.states[: fom.N], traj.times),
        "flux_csv": out / "fom_flux.csv",
    }
    if args.states:
        np.save(out / "fom_states.npy", traj.states)
        summary["states"] = out / "fom_states.npy"
    summary["effective_config"] = out / "effective_config.yaml"
    emit(summary)
    return EXIT_OK


def cmd_greedy(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    ops = cfg.operators()
    fom = cfg.system(ops)
    sets = cfg.training_sets()
    run = run_apodg_ei if args.algorithm == "alg1" else run_apodg_ei_adapt
    res = run(fom, sets, cfg.greedy_config())
    hist = res.history
    last = hist[-1]
    meta = {
        "mesh_hash": mesh_hash(ops), "beta": res.estimator.beta, "rho_bar": res.estimator.rho_bar,
        "n_du": cfg.greedy.n_du, "algorithm": args.algorithm, "converged": res.converged,
        "iterations": len(hist), "seed": cfg.seed, "parameter_names": list(cfg.parameters.names),
    }
    save_rom(res.rom, out / "rom.npz", meta)
    write_history_csv(out / "history.csv", hist)
    emit({
        "command": "greedy", "algorithm": args.algorithm, "converged": res.converged, "iterations": len(hist),
        "eps": last.eps, "tol": cfg.greedy.tol, "n": last.n, "n_phi": last.n_phi, "n_r": last.n_r,
        "n_ei": last.n_ei, "n_ei_phi": last.n_ei_phi, "n_ei_r": last.n_ei_r,
        "n_coarse": [r.n_evaluated for r in hist], "total_seconds": res.total_seconds,
        "rom": out / "rom.npz", "history_csv": out / "history.csv",
        "effective_config": out / "effective_config.yaml",
    })
    return EXIT_OK


def _load_matching_rom(cfg, ops, path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"ROM archive not found: {path}")
    rom = load_rom(path)
    expected = rom.meta.get("mesh_hash")
    actual = mesh_hash(ops)
    if expected != actual:
        raise ValidationError(f"ROM archive was built on mesh {expected}, config gives mesh {actual}")
    return rom


def cmd_rom_eval(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    ops = cfg.operators()
    rom = _load_matching_rom(cfg, ops, args.rom)
    params = _parameter(cfg, args.param)
    traj = solve_rom(rom, params)
    write_trajectory_csv(out / "rom_flux.csv", traj)
    Phi = rom.basis.V_phi @ traj.states[: rom.basis.n_phi]
    emit({
        "command": "rom-eval", "n": rom.n, "n_ei": rom.n_ei, "parameter": _free(params, cfg.parameters.names),
        "wall_time": traj.wall_time, "y_min": float(traj.outputs.min()), "y_max": float(traj.outputs.max()),
        "sustained_activity": sustained_activity(Phi, traj.times), "flux_csv": out / "rom_flux.csv",
        "effective_config": out / "effective_config.yaml",
    })
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg)
    ops = cfg.operators()
    rom = _load_matching_rom(cfg, ops, args.rom)
    fom = cfg.system(ops)
    if args.param:
        plist = [list(p) for p in args.param]
    else:
        plist = cfg.training_sets().test.tolist()
    if not plist:
        raise ValidationError("no test parameters: the config's test split is empty and no --param was given")

    beta = float(rom.meta["beta"]) if "beta" in rom.meta else compute_beta(fom.EE, fom.lu)
    dual = build_dual(fom, int(rom.meta.get("n_du", cfg.greedy.n_du)))
    mode = resolve_residual_mode(cfg.greedy, fom, rom)
    state = EstimatorState(beta=beta, dual=dual, rho_bar=float(rom.meta.get("rho_bar", 1.0)), mode=mode)
    if mode == "online":
        state.operator = build_residual_operator(fom, rom)

    rows = []
    for p in plist:
        params = _parameter(cfg, p)
        ft = solve_fom(fom, params, store_states=False, store_nonlinear=False)
        t0 = time.perf_counter()
        rt = solve_rom(rom, params)
        t_rom = time.perf_counter() - t0
        est = error_estimate(rom, params, state, fom=fom)
        rows.append(dict(
            parameter=_free(params, cfg.parameters.names), eps_rel=relative_error(ft.outputs, rt.outputs),
            delta=est.delta, fom_seconds=ft.wall_time, rom_seconds=t_rom,
            speedup=ft.wall_time / t_rom if t_rom > 0 else float("inf"),
        ))

    with open(out / "validate.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*cfg.parameters.names, "eps_rel", "delta", "fom_seconds", "rom_seconds", "speedup"])
        for r in rows:
            w.writerow([*(repr(float(v)) for v in r["parameter"]), repr(float(r["eps_rel"])), repr(float(r["delta"])),
                        f"{r['fom_seconds']:.6f}", f"{r['rom_seconds']:.6f}", f"{r['speedup']:.3f}"])
    eps = np.array([r["eps_rel"] for r in rows])
    fom_t = np.mean([r["fom_seconds"] for r in rows])
    rom_t = np.mean([r["rom_seconds"] for r in rows])
    emit({
        "command": "validate", "n_test": len(rows), "eps_rel_max": float(eps.max()),
        "eps_rel_mean": float(eps.mean()), "delta_max": float(max(r["delta"] for r in rows)),
        "fom_seconds_mean": float(fom_t), "rom_seconds_mean": float(rom_t),
        "speedup": float(fom_t / rom_t) if rom_t > 0 else float("inf"),
        "report_csv": out / "validate.csv", "effective_config": out / "effective_config.yaml",
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cardiorom", description="Adaptive reduced models of cardiac electrophysiology.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help=f"YAML config file, or one of the shipped names {', '.join(SHIPPED_CONFIGS)}")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads for the estimator sweep")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", parents=[common], help="assemble and export the FE operators")
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("fom", parents=[common], help="solve the full model at one parameter")
    p.add_argument("--param", type=float, nargs="+", default=None, help="gamma [t_s]; config default if omitted")
    p.add_argument("--states", action="store_true", help="also write the state history as .npy")
    p.set_defaults(func=cmd_fom)

    p = sub.add_parser("greedy", parents=[common], help="build a ROM with the adaptive greedy loop")
    p.add_argument("--algorithm", choices=("alg1", "alg2"), default="alg1",
                   help="alg1: full training set, alg2: adaptive coarse/fine training set")
    p.set_defaults(func=cmd_greedy)

    p = sub.add_parser("rom-eval", parents=[common], help="solve a stored ROM at one parameter")
    p.add_argument("--rom", required=True, help="ROM archive written by the greedy command")
    p.add_argument("--param", type=float, nargs="+", default=None, help="gamma [t_s]; config default if omitted")
    p.set_defaults(func=cmd_rom_eval)

    p = sub.add_parser("validate", parents=[common], help="compare a stored ROM with the full model")
    p.add_argument("--rom", required=True, help="ROM archive written by the greedy command")
    p.add_argument("--param", type=float, nargs="+", action="append", default=None,
                   help="test parameter (repeatable); the config's test split if omitted")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ValidationError as exc:
        print(f"validation-error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CardioRomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
