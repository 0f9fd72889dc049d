"""Command-line entry point.

Single binary with subcommands::

    m1lab distance A.csv B.csv [--tol 1e-4] [--testset H.csv]
    m1lab modulus path.csv --delta 0.1
    m1lab modbound --n 0 --p 1 --eps 0.1 --paths dir/ --delta 0.05
    m1lab simulate --config cfg.toml --replicates R --out dir/
    m1lab tightness --config cfg.toml --replicates 1000 --phis phis/ --out report/
    m1lab spde --config cfg.toml --wseed 7 --out sol.csv
    m1lab converge --config cfg.toml --out dir/
    m1lab config --defaults

Exit codes: 0 when the run completes and every verdict passes, 2 for config
or input-schema violations (message names the offending field), 3 for
runtime numeric failures or failed verdicts (message gives context).

Every run that writes artifacts first writes ``manifest.json``; output CSVs
carry the manifest hash in a leading comment. Seeds resolve as: ``--seed``
flag, then the config value, then ``M1LAB_SEED``, then 0. Replicate work is
keyed by (seed, replicate), so ``--jobs`` parallelism cannot change any
output byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import (DEFAULT_TOML, build_model_config, build_projections,
                     build_test_function, load_config, manifest_for,
                     merged_section, version_string)
from .errors import ConfigError, M1LabError
from .hermite import TestFunction, verify_modulus_bound
from .metric import m1_distance_refined
from .particles import ModelConfig, project, save_ensemble, simulate
from .pathio import (read_coeffs_csv, read_path_csv, read_testset_csv,
                     write_path_csv)
from .paths import CadlagPath, VectorPath, m1_modulus
from .rng import stream
from .spde import convergence_study, solve
from .tightness import (decomposition_check, endpoint_condition_check,
                        fourth_moment_scaling, sample_triples,
                        tail_exponent_fit)

__all__ = ["main"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _resolve_seed(flag_seed, cfg: dict) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    model = cfg.get("model", {}) if isinstance(cfg, dict) else {}
    if isinstance(model, dict) and "seed" in model:
        try:
            return int(model["seed"])
        except (TypeError, ValueError):
            raise ConfigError(f"model.seed: not an integer: {model['seed']!r}")
    env = os.environ.get("M1LAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"M1LAB_SEED: not an integer: {env!r}")
    return 0


def _load(args) -> dict:
    return load_config(args.config) if args.config else {}


def _prepare_outdir(args, kind: str, seed: int, replicates: int):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    man = manifest_for(kind, args.config, seed, replicates, outdir)
    man.write(outdir / "manifest.json")
    return outdir, man


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def _write_summary(outdir: Path, man, verdicts: dict, details: dict) -> bool:
    ok = all(bool(v) for v in verdicts.values())
    summary = {"manifest": man.hash, "verdicts": {k: bool(v) for k, v in
                                                  verdicts.items()},
               "passed": ok, "details": _jsonable(details)}
    (outdir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ok


def _sim_one(task):
    config, r = task
    return simulate(config, r)


def _run_replicates(config: ModelConfig, replicates: int, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sim_one,
                                 [(config, r) for r in range(replicates)]))
    return [simulate(config, r) for r in range(replicates)]


def _as_vector(path):
    if isinstance(path, VectorPath):
        return path
    return VectorPath(path.times, path.values[:, None], np.ones(1),
                      path.horizon)


# ---------------------------------------------------------------- commands

def cmd_distance(args) -> int:
    x = _read_input_path(args.a)
    y = _read_input_path(args.b)
    if args.testset:
        if not isinstance(x, VectorPath) or not isinstance(y, VectorPath):
            raise ConfigError(f"{args.testset}: projections need vector paths")
        coeffs = read_testset_csv(args.testset)
        print("index,distance,K,converged")
        for i, c in enumerate(coeffs):
            c = np.asarray(c, dtype=float)
            for side, p in (("first", x), ("second", y)):
                if c.shape != (p.dimension,):
                    raise ConfigError(
                        f"{args.testset}: column {i + 1} has {c.size} "
                        f"coefficients but the {side} path has dimension "
                        f"{p.dimension}")
            px = CadlagPath(x.times, x.values @ c, x.horizon)
            py = CadlagPath(y.times, y.values @ c, y.horizon)
            res = m1_distance_refined(px, py, tol=args.tol)
            print(f"{i},{_fmt(res.distance)},{res.grid_size},"
                  f"{int(res.converged)}")
        return 0
    res = m1_distance_refined(x, y, tol=args.tol)
    print("distance,K,converged")
    print(f"{_fmt(res.distance)},{res.grid_size},{int(res.converged)}")
    return 0


def _read_input_path(name):
    try:
        return read_path_csv(name)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}")


def cmd_modulus(args) -> int:
    path = _read_input_path(args.path)
    print(_fmt(m1_modulus(path, args.delta)))
    return 0


def cmd_modbound(args) -> int:
    folder = Path(args.paths)
    files = sorted(folder.glob("*.csv"))
    if not files:
        raise ConfigError(f"{args.paths}: no path CSVs found")
    paths = [_as_vector(_read_input_path(f)) for f in files]
    report = verify_modulus_bound(paths, n=args.n, p=args.p,
                                  epsilon=args.eps, delta=args.delta,
                                  anchor=args.anchor)
    print("field,value")
    for key, value in asdict(report).items():
        if value is None:
            continue
        print(f"{key},{_fmt(value)}")
    ok = report.holds and (report.holds_increment is None
                           or report.holds_increment)
    if not ok:
        print(f"m1lab: modulus bound violated (margin {report.margin:.3g})",
              file=sys.stderr)
    return 0 if ok else 3


def cmd_simulate(args) -> int:
    cfg = _load(args)
    seed = _resolve_seed(args.seed, cfg)
    model = build_model_config(cfg, seed=seed)
    phis = build_projections(cfg)
    if args.replicates < 1:
        raise ConfigError(f"--replicates: must be >= 1, got {args.replicates}")
    outdir, man = _prepare_outdir(args, "simulate", seed, args.replicates)
    note = f"manifest {man.hash}"

    ensembles = _run_replicates(model, args.replicates, args.jobs)
    for r, ens in enumerate(ensembles):
        save_ensemble(ens, str(outdir / f"ensemble_{r:04d}.bin"))
    times = ensembles[0].times
    loss = np.column_stack([ens.loss_values() for ens in ensembles])
    write_path_csv(VectorPath(times, loss, np.ones(loss.shape[1]), model.T),
                   outdir / "loss.csv", comment=note)
    for name, phi in phis.items():
        vals = np.column_stack([project(ens, phi).values
                                for ens in ensembles])
        write_path_csv(VectorPath(times, vals, np.ones(vals.shape[1]),
                                  model.T),
                       outdir / f"proj_{name}.csv", comment=note)
    verdicts = {"loss_nondecreasing": all(
        np.all(np.diff(ens.loss_values()) >= 0) for ens in ensembles)}
    details = {"N": model.N, "steps": model.steps,
               "final_loss_mean": float(loss[-1].mean())}
    ok = _write_summary(outdir, man, verdicts, details)
    return 0 if ok else 3


def _read_phi_dir(folder) -> dict:
    files = sorted(Path(folder).glob("*.csv"))
    if not files:
        raise ConfigError(f"{folder}: no coefficient CSVs found")
    out = {}
    for f in files:
        try:
            out[f.stem] = TestFunction(read_coeffs_csv(f))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{f}: {exc}")
    return out


def cmd_tightness(args) -> int:
    cfg = _load(args)
    seed = _resolve_seed(args.seed, cfg)
    model = build_model_config(cfg, seed=seed)
    knobs = merged_section(cfg, "tightness")
    phis = (_read_phi_dir(args.phis) if args.phis
            else build_projections(cfg))
    if args.replicates < 1:
        raise ConfigError(f"--replicates: must be >= 1, got {args.replicates}")
    outdir, man = _prepare_outdir(args, "tightness", seed, args.replicates)
    note = f"# manifest {man.hash}"

    ensembles = _run_replicates(model, args.replicates, args.jobs)
    times = ensembles[0].times
    wide = sample_triples(times, num_random=int(knobs["num_random_triples"]),
                          seed=int(knobs["triple_seed"]))
    tail_triples = sample_triples(times, max_lag=float(knobs["max_lag"]))
    lags = np.asarray(knobs["lags"], dtype=float)
    etas = np.asarray(knobs["eta"], dtype=float)
    deltas = np.asarray(knobs["deltas"], dtype=float)
    ladder = [replace(model, N=int(n)) for n in knobs["endpoint_N"]]

    verdicts, details = {}, {}
    dec_rows, fm_rows, tail_rows, end_rows = [], [], [], []
    for name, phi in phis.items():
        worst = max(decomposition_check(ens, phi, wide) for ens in ensembles)
        dec_rows.append((name, worst, worst <= 1e-10))

        fm = fourth_moment_scaling(model, phi, lags, args.replicates)
        fm_rows.extend((name, u, mom) for u, mom in zip(fm.lags, fm.moments))
        details[f"fourth_moment_{name}"] = {
            "slope": fm.slope, "lipschitz": fm.lipschitz,
            "domination_violation": fm.domination_violation,
            "low_replicates": fm.low_replicates}

        tf = tail_exponent_fit(ensembles, phi, etas, tail_triples)
        for j in range(tf.probs.shape[1]):
            t1, t2, t3 = tail_triples[j]
            for e in range(tf.probs.shape[0]):
                tail_rows.append((name, tf.etas[e], t1, t2, t3,
                                  tf.gaps[j], tf.probs[e, j]))
        details[f"tail_{name}"] = {
            "a": tf.a, "b": tf.b, "log_c": tf.log_c, "a_se": tf.a_se,
            "b_se": tf.b_se, "violations": tf.violations,
            "vacuous": tf.vacuous, "fitted": tf.fitted}

        er = endpoint_condition_check(
            ladder, phi, deltas, eta=float(knobs["endpoint_eta"]),
            replicates=int(knobs["endpoint_replicates"]))
        for i, n in enumerate(er.N_values):
            for j, d in enumerate(er.deltas):
                end_rows.append((name, n, d, er.exceedance[i, j],
                                 er.nu_bar_part[i, j], er.loss_part[i, j]))

        verdicts[f"decomposition_{name}"] = worst <= 1e-10
        verdicts[f"fourth_moment_{name}"] = fm.passed
        verdicts[f"tail_{name}"] = tf.passed
        verdicts[f"endpoint_{name}"] = er.passed

    def table(fname, header, rows):
        lines = [note, header]
        lines += [",".join(_fmt(v) if not isinstance(v, str) else v
                           for v in row) for row in rows]
        (outdir / fname).write_text("\n".join(lines) + "\n")

    table("decomposition.csv", "phi,max_violation,passed", dec_rows)
    table("fourth_moment.csv", "phi,lag,moment", fm_rows)
    table("tail.csv", "phi,eta,t1,t2,t3,gap,prob", tail_rows)
    table("endpoint.csv", "phi,N,delta,exceedance,nu_bar_part,loss_part",
          end_rows)
    ok = _write_summary(outdir, man, verdicts, details)
    if not ok:
        bad = sorted(k for k, v in verdicts.items() if not v)
        print(f"m1lab: failed verdicts: {', '.join(bad)}", file=sys.stderr)
    return 0 if ok else 3


def cmd_spde(args) -> int:
    cfg = _load(args)
    model = build_model_config(cfg, seed=_resolve_seed(args.seed, cfg))
    knobs = merged_section(cfg, "spde")
    wseed = int(args.wseed)
    dw = stream(wseed, 0, 0).standard_normal(model.steps) * math.sqrt(model.dt)
    sol = solve(dw, model.rho, model.initial, model.T,
                x_max=float(knobs["x_max"]), dx=float(knobs["dx"]),
                r_target=float(knobs["r_target"]))
    snaps = np.asarray(knobs["snapshots"], dtype=float)
    idx = np.clip(np.searchsorted(sol.times, snaps), 0, len(sol.times) - 1)
    left = np.clip(idx - 1, 0, len(sol.times) - 1)
    idx = np.where(np.abs(sol.times[left] - snaps)
                   < np.abs(sol.times[idx] - snaps), left, idx)

    out = Path(args.out)
    file_mode = out.suffix.lower() == ".csv"
    if file_mode:
        out.parent.mkdir(parents=True, exist_ok=True)
        man = manifest_for("spde", args.config, wseed, 1, out.parent)
        man.write(Path(str(out) + ".manifest.json"))
        target = out
    else:
        out.mkdir(parents=True, exist_ok=True)
        man = manifest_for("spde", args.config, wseed, 1, out)
        man.write(out / "manifest.json")
        target = out / "sol.csv"

    lines = [f"# manifest {man.hash}", "t,x,v"]
    for g in idx:
        t = sol.times[g]
        lines += [f"{_fmt(t)},{_fmt(xx)},{_fmt(vv)}"
                  for xx, vv in zip(sol.x, sol.v[g])]
    target.write_text("\n".join(lines) + "\n")

    balance = float(np.max(np.abs(sol.mass() + sol.loss - 1.0)))
    verdicts = {"mass_balance_1e-6": balance <= 1e-6}
    details = {"mass_defect": sol.mass_defect(), "balance": balance,
               "loss_T": float(sol.loss[-1]), "leaked_T": float(sol.leaked[-1]),
               "clipped": float(sol.clipped[-1])}
    if not file_mode:
        write_path_csv(
            VectorPath(sol.times, np.column_stack([sol.loss, sol.leaked]),
                       np.ones(2), model.T),
            out / "loss_leak.csv", comment=f"manifest {man.hash}")
        ok = _write_summary(out, man, verdicts, details)
    else:
        ok = all(verdicts.values())
    print(f"balance={balance:.3g} loss_T={sol.loss[-1]:.6g} "
          f"leaked={sol.leaked[-1]:.3g}")
    if not ok:
        print(f"m1lab: mass balance {balance:.3g} exceeds 1e-6 "
              f"(enlarge x_max or refine dx)", file=sys.stderr)
    return 0 if ok else 3


def cmd_converge(args) -> int:
    cfg = _load(args)
    seed = _resolve_seed(args.seed, cfg)
    model = build_model_config(cfg, seed=seed)
    knobs = merged_section(cfg, "converge")
    grid = merged_section(cfg, "spde")
    phi = build_test_function(knobs["coeffs"], where="converge.coeffs")
    ladder = knobs["N"]
    if (not isinstance(ladder, list) or len(ladder) < 2
            or any(int(n) != n for n in ladder)):
        raise ConfigError("converge.N: need a list of >= 2 integers")
    seeds_spec = knobs["seeds"]
    seeds = (list(range(int(seeds_spec))) if not isinstance(seeds_spec, list)
             else [int(s) for s in seeds_spec])
    configs = [replace(model, N=int(n)) for n in ladder]
    outdir, man = _prepare_outdir(args, "converge", seed, len(seeds))

    report = convergence_study(configs, phi, x_max=float(grid["x_max"]),
                               dx=float(grid["dx"]), seeds=seeds,
                               K=int(knobs["K"]),
                               r_target=float(grid["r_target"]))
    lines = [f"# manifest {man.hash}", "seed,N,distance"]
    for i, s in enumerate(seeds):
        for j, n in enumerate(report.N_values):
            lines.append(f"{s},{n},{_fmt(report.distances[i][j])}")
    (outdir / "distances.csv").write_text("\n".join(lines) + "\n")
    med = report.medians()
    verdicts = {"medians_decreasing": bool(np.all(np.diff(med) < 0))}
    details = {"N": list(report.N_values),
               "medians": [float(v) for v in med], "K": int(knobs["K"])}
    ok = _write_summary(outdir, man, verdicts, details)
    if not ok:
        print(f"m1lab: medians not strictly decreasing: {med}",
              file=sys.stderr)
    return 0 if ok else 3


def cmd_config(args) -> int:
    if not args.defaults:
        print("m1lab: nothing to do; use `m1lab config --defaults`",
              file=sys.stderr)
        return 2
    print(DEFAULT_TOML, end="")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="m1lab",
        description="M1 path distances, Hermite norm ladders, absorbed "
                    "particle simulation, tightness diagnostics, and the "
                    "limiting density solver.")
    parser.add_argument("--version", action="version",
                        version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distance", help="M1 distance between two path CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--testset", default=None,
                   help="coefficient CSV; reports projected distances")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("modulus", help="M1 oscillation modulus of a path CSV")
    p.add_argument("path")
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_modulus)

    p = sub.add_parser("modbound",
                       help="verify the seminorm-modulus bound on a "
                            "directory of coefficient paths")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--paths", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--anchor", type=float, default=None)
    p.set_defaults(func=cmd_modbound)

    p = sub.add_parser("simulate", help="simulate particle replicates")
    p.add_argument("--config", default=None)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tightness", help="run the tightness diagnostics")
    p.add_argument("--config", default=None)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--phis", default=None,
                   help="directory of coefficient CSVs (default: config "
                        "projections)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_tightness)

    p = sub.add_parser("spde", help="solve the limiting density equation "
                                    "along one noise path")
    p.add_argument("--config", default=None)
    p.add_argument("--wseed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_spde)

    p = sub.add_parser("converge",
                       help="empirical-vs-limit M1 distances over an N ladder")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("config", help="configuration helpers")
    p.add_argument("--defaults", action="store_true",
                   help="print the default TOML config")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"m1lab: config error: {exc}", file=sys.stderr)
        return 2
    except M1LabError as exc:
        print(f"m1lab: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError, OSError, np.linalg.LinAlgError) as exc:
        print(f"m1lab: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
