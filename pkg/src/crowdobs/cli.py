"""Command-line entry point: ``crowdobs {simulate,sweep,classify,report}``.

Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
runtime faults (integration failures, faulted sweeps, geometry errors).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from crowdobs import __version__, _backend
from crowdobs.dynamics import read_trajectory, run_simulation, write_trajectory
from crowdobs.errors import ConfigurationError, CrowdObsError
from crowdobs.harness import load_config, load_manifest, read_results, run_sweep, write_results
from crowdobs.metrics import GROUPS, mixture_velocity
from crowdobs.observers import ObserverConfig, fit_linear_classifier, observe, write_classification
from crowdobs.svgplot import Axes, Series, emit_plot_svg

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("crowdobs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crowdobs", description="Bidirectional crowd simulator and observers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one simulation and write its trajectory")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("sweep", help="run a seeded parameter sweep")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--runs", type=int, help="override runs_per_point")
    s.add_argument("--parallel", type=int, help="worker processes")

    s = sub.add_parser("classify", help="classify agents of a recorded trajectory")
    s.add_argument("--trajectory", required=True, type=Path)
    s.add_argument("--observer", required=True, choices=("agent", "neighborhood", "fitted"))
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--window", type=int, default=50)
    s.add_argument("--epsilon", type=float, default=3.0)

    s = sub.add_parser("report", help="plot sweep results as SVG")
    s.add_argument("--results", required=True, type=Path)
    s.add_argument("--figure", required=True, choices=("nm-vs-nr", "nm-vs-s0", "drift", "compare"))
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--rho", type=float, help="select a density")
    s.add_argument("--s0", type=float, help="select an intrinsic speed")
    s.add_argument("--nr", type=float, help="select a number ratio")
    return p


def cmd_simulate(args) -> int:
    params, _ = load_config(args.config)
    traj = run_simulation(params)
    path = write_trajectory(traj, args.out / "trajectory.csv")
    print(f"wrote {path} ({traj.n_frames} frames, {traj.n_agents} agents)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigurationError("--runs must be >= 1")
        manifest.runs_per_point = args.runs
    args.out.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        log.info("point %d/%d", done, total)

    records = run_sweep(manifest, parallel=args.parallel, cache_dir=args.out / "cache",
                        progress=progress)
    path = write_results(records, args.out / "results.csv", manifest)
    (args.out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    print(f"wrote {path} ({len(records)} grid points)")
    return EXIT_OK


def cmd_classify(args) -> int:
    try:
        traj = read_trajectory(args.trajectory)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.trajectory}: {exc}") from exc
    config = ObserverConfig(window=args.window, epsilon=args.epsilon)
    if traj.n_frames < config.window:
        raise ConfigurationError("trajectory is shorter than the window")
    feats = observe(traj, config)
    if args.observer == "agent":
        mu = 0.0
    elif args.observer == "neighborhood":
        mu = config.resolve_mu(traj.params.density, traj.params.number_ratio)
    else:
        mu = fit_linear_classifier(*feats.pooled()).mu
    write_classification(feats, mu, args.out)
    print(f"wrote {args.out} (mu={mu:.6g})")
    return EXIT_OK


def _select(records, args, free):
    """Keep records matching the CLI filters; the fixed axes must be unique."""
    sel = [
        r for r in records
        if (args.rho is None or abs(r.density - args.rho) < 1e-6)
        and (args.s0 is None or abs(r.intrinsic_speed - args.s0) < 1e-6)
        and (args.nr is None or abs(r.number_ratio - args.nr) < 1e-6)
    ]
    if not sel:
        raise ConfigurationError("no results match the selection")
    for attr, flag in (("density", "--rho"), ("intrinsic_speed", "--s0"), ("number_ratio", "--nr")):
        if attr != free and len({getattr(r, attr) for r in sel}) > 1:
            raise ConfigurationError(f"results span several values of {attr}; pick one with {flag}")
    return sorted(sel, key=lambda r: getattr(r, free))


def _curve(records, free, label, name, observer=None, group=None, style="line"):
    xs, ys, es = [], [], []
    for r in records:
        m, se = r.mean_se(name, observer, group)
        xs.append(getattr(r, free))
        ys.append(m)
        es.append(0.0 if np.isnan(se) else se)
    return Series(label, xs, ys, es, style)


def cmd_report(args) -> int:
    try:
        records = read_results(args.results)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {args.results}: {exc}") from exc
    names = {1: "group 1", 2: "group 2"}
    if args.figure == "nm-vs-s0":
        recs = _select(records, args, "intrinsic_speed")
        series = [_curve(recs, "intrinsic_speed", f"{names[g]} (agent-only)", "n_m", "agent_only", g)
                  for g in GROUPS]
        axes = Axes("Misclassifications vs intrinsic speed", "s0", "n_m")
    elif args.figure == "nm-vs-nr":
        recs = _select(records, args, "number_ratio")
        series = [_curve(recs, "number_ratio", f"{names[g]} (agent-only)", "n_m", "agent_only", g)
                  for g in GROUPS]
        axes = Axes("Misclassifications vs number ratio", "Nr", "n_m")
    elif args.figure == "drift":
        recs = _select(records, args, "number_ratio")
        series = [_curve(recs, "number_ratio", "drift speed", "drift_speed")]
        series.append(Series("s0 (1 - 2 Nr)", [r.number_ratio for r in recs],
                             [mixture_velocity(r.intrinsic_speed, r.number_ratio) for r in recs],
                             style="dashed"))
        axes = Axes("Drift speed vs number ratio", "Nr", "s_d")
    else:
        recs = _select(records, args, "number_ratio")
        present = [o for o in ("agent_only", "neighborhood", "fitted")
                   if all(o in r.observers for r in recs)]
        series = [_curve(recs, "number_ratio", o.replace("_", "-"), "total", o) for o in present]
        axes = Axes("Observer comparison", "Nr", "total n_m")
    path = emit_plot_svg(series, axes, args.out)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "classify": cmd_classify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("backend %s", _backend.NAME)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"crowdobs: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CrowdObsError, OSError) as exc:
        print(f"crowdobs: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
