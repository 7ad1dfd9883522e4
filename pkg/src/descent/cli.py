"""Command-line surface: theory curves, sweeps, densities, simulation, pencils.

Every run echoes its resolved configuration: JSON outputs embed it under
"config"; CSV outputs get a sidecar ``<name>.meta.json`` so the exact command
can be reproduced.  Exit code 1 flags validation errors, 2 numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, pencil as pencil_mod, simulate as sim
from .contour import CurveResult, evolution_curves
from .selfconsistent import infinite_time_errors, solve_zeta, spectral_density_log
from .spectra import model_from_dict, provider_for


def _parse_grid(text: str, log: bool) -> np.ndarray:
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as exc:
        raise ValueError(f"grid {text!r} must look like start:stop:count") from exc
    if count < 1:
        raise ValueError("grid count must be >= 1")
    if log:
        return np.geomspace(lo, hi, count)
    return np.linspace(lo, hi, count)


def _load_model(text: str):
    if text.strip().startswith("{"):
        return model_from_dict(json.loads(text))
    with open(text, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def _with_phi(params, phi: float):
    """Rebuild a parameter record at a different sample ratio."""
    names = {f.name for f in dataclasses.fields(params)}
    if "phi" in names:
        return dataclasses.replace(params, phi=phi)
    return dataclasses.replace(params, phi0=phi / params.psi)  # random features


def _write_with_echo(result, out: Path, fmt: str, config: dict) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        doc = result.to_json_dict()
        doc["config"] = config
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
    else:
        dataio.write_curves(result, out, fmt)
        with open(out.with_suffix(out.suffix + ".meta.json"), "w", encoding="utf-8") as fh:
            json.dump({"config": config}, fh, indent=1)


def _echo(args, **extra) -> dict:
    doc = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    doc.update(extra)
    return doc


def cmd_theory(args) -> int:
    params = _load_model(args.model)
    provider = provider_for(params)
    times = _parse_grid(args.times, log=True) if args.times else None
    result = evolution_curves(provider, args.lam, args.r0, times=times,
                              nodes_per_side=args.nodes)
    _write_with_echo(result, Path(args.out), args.format, _echo(args))
    print(f"wrote {args.out} ({result.times.size} time points)")
    return 0


def _sweep_point(payload):
    doc, phi, lam, r0, times, nodes = payload
    params = _with_phi(model_from_dict(doc), phi)
    provider = provider_for(params)
    res = evolution_curves(provider, lam, r0, times=times, nodes_per_side=nodes)
    return phi, res.times, res.gen, res.train


def cmd_sweep(args) -> int:
    params = _load_model(args.model)
    phis = _parse_grid(args.phi, log=False)
    times = _parse_grid(args.times, log=True) if args.times else np.logspace(-2, 6, 60)
    workers = int(os.environ.get("DESCENT_THREADS", os.cpu_count() or 1))
    payloads = [(params.to_dict(), float(phi), args.lam, args.r0, times, args.nodes)
                for phi in phis]
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("phi,t,gen_error,train_error\n")
        for phi, tgrid, gen, train in rows:
            for t, g, tr in zip(tgrid, gen, train):
                fh.write(f"{phi!r},{t!r},{g!r},{tr!r}\n")
    with open(out.with_suffix(out.suffix + ".meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"config": _echo(args, workers=workers)}, fh, indent=1)
    print(f"wrote {out} ({len(rows)} phi points x {times.size} times)")
    return 0


def cmd_eigdist(args) -> int:
    params = _load_model(args.model)
    provider = provider_for(params)
    xs = _parse_grid(args.x, log=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    warm = None
    rows = []
    for x in xs[::-1]:  # sweep downward with warm starts, emit ascending
        sol = solve_zeta(provider, complex(x, args.epsilon), warm_start=warm)
        warm = sol.zeta
        rows.append((float(x), max(0.0, -sol.eta.imag / math.pi)))
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("x,rho_log\n")
        for x, rho in rows[::-1]:
            fh.write(f"{x!r},{rho!r}\n")
    with open(out.with_suffix(out.suffix + ".meta.json"), "w", encoding="utf-8") as fh:
        json.dump({"config": _echo(args)}, fh, indent=1)
    print(f"wrote {out} ({xs.size} points)")
    return 0


def cmd_simulate(args) -> int:
    params = _load_model(args.model)
    times = (_parse_grid(args.times, log=True) if args.times
             else np.logspace(-1, 4, 30))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    gens, trains = [], []
    for seed in range(args.seeds):
        inst = sim.sample_instance(params, args.d, seed, args.lam)
        if args.gd:
            steps = int(times[-1] / args.dt)
            traj = sim.gradient_descent_errors(inst, args.dt, steps, args.r0,
                                               seed_beta0=10_000 + seed)
        else:
            traj = sim.exact_flow_errors(inst, times, args.r0, seed_beta0=10_000 + seed)
        traj.to_csv(outdir / f"trajectory_seed{seed}.csv")
        gens.append(traj.gen_errors)
        trains.append(traj.train_errors)
        tgrid = traj.times
    aggregate = {
        "config": _echo(args),
        "times": list(map(float, tgrid)),
        "gen_mean": np.mean(gens, axis=0).tolist(),
        "gen_std": np.std(gens, axis=0).tolist(),
        "train_mean": np.mean(trains, axis=0).tolist(),
        "train_std": np.std(trains, axis=0).tolist(),
    }
    with open(outdir / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=1)
    print(f"wrote {args.seeds} trajectories + aggregate to {outdir}")
    return 0


def cmd_dataset(args) -> int:
    data_dir = os.environ.get("DESCENT_DATA_DIR", "")
    images = args.images or os.path.join(data_dir, "train-images-idx3-ubyte")
    labels = args.labels or os.path.join(data_dir, "train-labels-idx1-ubyte")
    raw = dataio.load_idx_dataset(images, labels)
    x = dataio.preprocess(raw)
    y = dataio.parity_labels(raw.labels)
    dual = dataio.estimate_dual(x, y, args.n)
    provider = dataio.dual_provider(dual)
    times = (_parse_grid(args.times, log=True) if args.times
             else np.logspace(-2, 4, 50))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    theory = evolution_curves(provider, args.lam, args.r0, times=times,
                              nodes_per_side=args.nodes)
    _write_with_echo(theory, outdir / "theory.json", "json", _echo(args))
    summary = {"config": _echo(args), "theory": "theory.json"}
    if args.runs:
        rng = np.random.default_rng(args.seed)
        steps = int(times[-1] / args.dt)
        gens, trains = [], []
        tgrid = None
        for run in range(args.runs):
            rows = rng.choice(x.shape[0], size=args.n, replace=False)
            mask = np.zeros(x.shape[0], dtype=bool)
            mask[rows] = True
            tgrid, train_err, test_err = dataio.dataset_descent_run(
                x[mask], y[mask], x[~mask], y[~mask], args.lam, args.dt,
                steps, args.r0, seed=500 + run)
            gens.append(test_err)
            trains.append(train_err)
        summary["empirical"] = {
            "times": tgrid.tolist(),
            "gen_mean": np.mean(gens, axis=0).tolist(),
            "gen_std": np.std(gens, axis=0).tolist(),
            "train_mean": np.mean(trains, axis=0).tolist(),
            "train_std": np.std(trains, axis=0).tolist(),
        }
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    print(f"wrote dataset outputs to {outdir}")
    return 0


def cmd_pencil(args) -> int:
    spec = pencil_mod.PencilSpec.from_json(args.spec)
    if args.sample is not None:
        sol = pencil_mod.sample_finite_pencil(spec, args.sample)
    else:
        sol = pencil_mod.solve_pencil(spec, damping=args.damping, tol=args.tol)
    doc = {
        "config": _echo(args),
        "g_real": sol.g.real.tolist(),
        "g_imag": sol.g.imag.tolist(),
        "residual": sol.residual,
        "iterations": sol.iterations,
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descent",
        description="Gradient-flow learning curves for Gaussian covariate models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("--model", required=True,
                           help="model spec: JSON file path or inline JSON")
        p.add_argument("--lambda", dest="lam", type=float, default=1e-3,
                       help="ridge coefficient (> 0)")
        p.add_argument("--r0", type=float, default=1.0,
                       help="initialization scale of beta_0")
        p.add_argument("--times", default=None,
                       help="log time grid start:stop:count (default 1e-2:1e6:60)")
        p.add_argument("--nodes", type=int, default=400,
                       help="contour nodes per side")

    p = sub.add_parser("theory", help="full evolution curve for one model")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("sweep", help="(phi, t) grid of curves, long CSV")
    common(p)
    p.add_argument("--phi", required=True, help="linear phi grid start:stop:count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eigdist", help="log-eigenvalue density of the student data")
    p.add_argument("--model", required=True)
    p.add_argument("--x", required=True, help="log x grid start:stop:count")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eigdist)

    p = sub.add_parser("simulate", help="finite-d exact-flow / descent runs")
    common(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--gd", action="store_true", help="discrete descent instead of exact flow")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="empirical-dual theory for an IDX dataset")
    p.add_argument("--images", default=None, help="IDX images (or $DESCENT_DATA_DIR)")
    p.add_argument("--labels", default=None, help="IDX labels (or $DESCENT_DATA_DIR)")
    p.add_argument("--n", type=int, required=True, help="training sample count")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    p.add_argument("--r0", type=float, default=1.0)
    p.add_argument("--times", default=None)
    p.add_argument("--nodes", type=int, default=400)
    p.add_argument("--runs", type=int, default=0, help="optional GD comparison runs")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("pencil", help="solve or sample a linear-pencil spec")
    p.add_argument("--spec", required=True, help="PencilSpec JSON path")
    p.add_argument("--sample", type=int, default=None,
                   help="finite-size oracle with this seed instead of the fixed point")
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pencil)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
