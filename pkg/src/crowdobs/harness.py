"""Seeded parameter sweeps, result files and configuration loading."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np

from crowdobs import __version__, _backend
from crowdobs.dynamics import SimParams, run_simulation
from crowdobs.errors import ConfigurationError, CrowdObsError, FitError, IntegrationError
from crowdobs.geometry import cluster_count, voronoi_adjacency
from crowdobs.metrics import (
    GROUPS,
    OBSERVERS,
    RunResult,
    SweepRecord,
    drift_speed,
    histogram_edges,
    misclassification_series,
    velocity_histogram,
)
from crowdobs.observers import ObserverConfig, fit_linear_classifier, observe

log = logging.getLogger(__name__)

DEFAULT_GRID = {
    "number_ratios": (1 / 42, 1 / 21, 2 / 21, 1 / 6, 3 / 14, 2 / 7, 1 / 3, 8 / 21, 19 / 42, 1 / 2),
    "intrinsic_speeds": (3.0, 2.0, 1.5, 1.0, 0.75, 0.5, 0.25, 0.1),
    "densities": (0.57706, 0.45792, 0.3722, 0.30847, 0.25981, 0.22182),
}

#: sweeps fail when more than this fraction of runs fault
MAX_FAULT_FRACTION = 0.05

PARALLEL_ENV = "CROWDOBS_PARALLEL"

RESULTS_HEADER = [
    "rho", "Nr", "s0", "run_seed", "observer", "group",
    "n_m_mean", "c_in_initial", "c_in_final", "drift_speed",
]

_GRID_KEYS = ("number_ratio", "intrinsic_speed", "density", "seed")


class SweepError(CrowdObsError):
    """Too many runs of a sweep faulted."""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


@dataclass
class RunManifest:
    """What to sweep, how often, and from which base seed.

    ``base_params`` holds :class:`SimParams` fields other than the grid axes
    and the seed (e.g. ``n_samples`` for shorter test sweeps).
    """

    number_ratios: tuple = DEFAULT_GRID["number_ratios"]
    intrinsic_speeds: tuple = DEFAULT_GRID["intrinsic_speeds"]
    densities: tuple = DEFAULT_GRID["densities"]
    runs_per_point: int = 20
    base_seed: int = 0
    base_params: dict = field(default_factory=dict)
    observer: dict = field(default_factory=dict)
    fit: bool = False
    tool_version: str = __version__
    timestamp: str = field(default_factory=_now)

    def __post_init__(self):
        self.number_ratios = tuple(float(x) for x in self.number_ratios)
        self.intrinsic_speeds = tuple(float(x) for x in self.intrinsic_speeds)
        self.densities = tuple(float(x) for x in self.densities)
        self.validate()

    def validate(self):
        for name in ("number_ratios", "intrinsic_speeds", "densities"):
            if not getattr(self, name):
                raise ConfigurationError(f"grid axis {name} is empty")
        if self.runs_per_point < 1:
            raise ConfigurationError("runs_per_point must be >= 1")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigurationError("base_seed must be a 64-bit unsigned integer")
        bad = set(self.base_params) & set(_GRID_KEYS)
        if bad:
            raise ConfigurationError(f"base_params may not set {sorted(bad)}")
        known = {f.name for f in fields(SimParams)}
        unknown = set(self.base_params) - known
        if unknown:
            raise ConfigurationError(f"unknown SimParams fields {sorted(unknown)}")
        for rho, nr, s0 in self.points():
            self.params_for(rho, nr, s0, 0)
        self.observer_config()

    def points(self) -> list[tuple]:
        """Grid points ``(rho, Nr, s0)`` in ascending lexicographic order."""
        return sorted(set(product(self.densities, self.number_ratios, self.intrinsic_speeds)))

    @property
    def n_points(self) -> int:
        return len(self.points())

    def params_for(self, rho, nr, s0, run_index) -> SimParams:
        seed = run_seed(self.base_seed, rho, nr, s0, run_index)
        try:
            return SimParams(**self.base_params, density=rho, number_ratio=nr,
                             intrinsic_speed=s0, seed=seed)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def observer_config(self) -> ObserverConfig:
        return ObserverConfig.from_dict(self.observer)

    def to_dict(self) -> dict:
        return {
            "grid": {
                "number_ratios": list(self.number_ratios),
                "intrinsic_speeds": list(self.intrinsic_speeds),
                "densities": list(self.densities),
            },
            "runs_per_point": self.runs_per_point,
            "base_seed": self.base_seed,
            "base_params": dict(self.base_params),
            "observer": dict(self.observer),
            "fit": self.fit,
            "tool_version": self.tool_version,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        data = dict(data)
        grid = data.pop("grid", {})
        unknown = set(data) - {f.name for f in fields(cls)}
        unknown |= set(grid) - set(DEFAULT_GRID)
        if unknown:
            raise ConfigurationError(f"unknown manifest keys {sorted(unknown)}")
        try:
            return cls(**{**DEFAULT_GRID, **grid}, **data)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid manifest: {exc}") from exc


def load_manifest(path) -> RunManifest:
    return RunManifest.from_dict(_load_json(path))


def _load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return data


def load_config(path) -> tuple[SimParams, ObserverConfig]:
    """Read a flat JSON object of SimParams and ObserverConfig fields."""
    data = _load_json(path)
    sim_keys = {f.name for f in fields(SimParams)}
    obs_keys = {f.name for f in fields(ObserverConfig)}
    unknown = set(data) - sim_keys - obs_keys
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    try:
        params = SimParams.from_dict({k: v for k, v in data.items() if k in sim_keys})
        config = ObserverConfig.from_dict({k: v for k, v in data.items() if k in obs_keys})
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    return params, config


def run_seed(base_seed: int, rho: float, nr: float, s0: float, run_index: int) -> int:
    """Stable 64-bit seed of one run, independent of every other grid point."""
    key = f"{int(base_seed)}|{float(rho)!r}|{float(nr)!r}|{float(s0)!r}|{int(run_index)}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "big")


# -- execution ------------------------------------------------------------------


def _run_one(task):
    """Simulate and score one run; returns a picklable summary."""
    params, run_index, config, mu, keep_features, backend_name = task
    backend = _backend.get(backend_name)
    try:
        traj = run_simulation(params, backend)
    except IntegrationError as exc:
        return {"fault": str(exc), "run_index": run_index}
    feats = observe(traj, config, backend)
    labels = traj.labels
    n_m = {}
    for name, pred in (("agent_only", feats.predict_agent_only()),
                       ("neighborhood", feats.predict(mu))):
        counts = misclassification_series(pred, labels).mean(axis=0)
        n_m.update({(name, g): float(c) for g, c in zip(GROUPS, counts)})
    c_init, c_final = {}, {}
    for frame, out in ((0, c_init), (traj.n_frames - 1, c_final)):
        adj = voronoi_adjacency(traj.positions[frame], traj.domain_edge, backend)
        for g in GROUPS:
            out[g] = float(cluster_count(adj, labels, g))
    edges = histogram_edges(params.intrinsic_speed)
    hists = {g: velocity_histogram(traj, g, edges)[0] for g in GROUPS if (labels == g).any()}
    result = RunResult(run_index, params.seed, n_m, c_init, c_final,
                       drift_speed(traj), feats.n_windows)
    out = {"result": result, "histograms": hists, "edges": edges,
           "rejected": traj.rejected_steps}
    if keep_features:
        out["features"] = (feats.v_w, feats.phi_w, labels)
    return out


def resolve_parallel(parallel: int | None) -> int:
    """Worker count: argument, then ``CROWDOBS_PARALLEL``, then 1."""
    if parallel is None:
        env = os.environ.get(PARALLEL_ENV)
        if env:
            try:
                parallel = int(env)
            except ValueError as exc:
                raise ConfigurationError(f"{PARALLEL_ENV}={env!r} is not an integer") from exc
    parallel = 1 if parallel is None else int(parallel)
    if parallel < 1:
        raise ConfigurationError("parallel must be >= 1")
    return parallel


def _point_file(cache_dir: Path, manifest: RunManifest, point) -> Path:
    ident = json.dumps({
        "point": [repr(x) for x in point],
        "runs": manifest.runs_per_point,
        "seed": manifest.base_seed,
        "params": manifest.base_params,
        "observer": manifest.observer,
        "fit": manifest.fit,
    }, sort_keys=True)
    return cache_dir / f"point-{hashlib.blake2b(ident.encode(), digest_size=10).hexdigest()}.json"


def _fit_point(features, seed):
    v = np.concatenate([f[0].ravel() for f in features])
    phi = np.concatenate([f[1].ravel() for f in features])
    lab = np.concatenate([np.tile(f[2], f[0].shape[0]) for f in features])
    return fit_linear_classifier(v, phi, lab, seed=seed)


def _assemble(manifest, point, config, mu, outputs) -> SweepRecord:
    rho, nr, s0 = point
    ok = [o for o in outputs if "fault" not in o]
    faults = [o for o in outputs if "fault" in o]
    for o in faults:
        log.warning("run %d at rho=%g Nr=%g s0=%g faulted: %s",
                    o["run_index"], rho, nr, s0, o["fault"])
    runs = [o["result"] for o in ok]
    mu_fit = None
    if manifest.fit and ok:
        try:
            fit = _fit_point([o["features"] for o in ok], seed=runs[0].run_seed)
        except FitError as exc:
            log.warning("fit skipped at rho=%g Nr=%g s0=%g: %s", rho, nr, s0, exc)
        else:
            mu_fit = fit.mu
            for o in ok:
                v_w, phi_w, labels = o["features"]
                counts = misclassification_series(fit.predict(v_w, phi_w), labels).mean(axis=0)
                o["result"].n_m.update({("fitted", g): float(c) for g, c in zip(GROUPS, counts)})
    hists = {}
    for g in GROUPS:
        hs = [o["histograms"][g] for o in ok if g in o["histograms"]]
        if hs:
            hists[g] = np.mean(hs, axis=0)
    params = manifest.params_for(rho, nr, s0, 0).to_dict()
    params.pop("seed")
    return SweepRecord(rho, nr, s0, params, runs, mu, mu_fit, len(faults),
                       histogram_edges(s0), hists)


def run_sweep(manifest: RunManifest, config: ObserverConfig | None = None,
              parallel: int | None = None, cache_dir=None, backend: str | None = None,
              progress=None) -> list[SweepRecord]:
    """Run every grid point of ``manifest`` and aggregate per point.

    Parameters
    ----------
    config : ObserverConfig, optional
        Defaults to the manifest's observer settings.
    parallel : int, optional
        Worker processes; ``CROWDOBS_PARALLEL`` applies when omitted.
    cache_dir : path, optional
        Finished points are stored here and reused on the next call, which
        makes interrupted sweeps resumable.
    backend : str, optional
        ``"compiled"`` or ``"python"``; defaults to the import-time choice.
    progress : callable, optional
        Called as ``progress(done, total)`` after each point.

    Raises
    ------
    SweepError
        When more than 5% of all runs fault.
    """
    config = config or manifest.observer_config()
    backend_name = backend or _backend.NAME
    _backend.get(backend_name)
    workers = resolve_parallel(parallel)
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)

    points = manifest.points()
    records = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for done, point in enumerate(points, 1):
            cached = _point_file(cache, manifest, point) if cache is not None else None
            if cached is not None and cached.exists():
                records.append(SweepRecord.from_dict(json.loads(cached.read_text())))
            else:
                rho, nr, s0 = point
                mu = config.resolve_mu(rho, nr)
                tasks = [(manifest.params_for(rho, nr, s0, k), k, config, mu,
                          manifest.fit, backend_name)
                         for k in range(manifest.runs_per_point)]
                outputs = list(pool.map(_run_one, tasks)) if pool else [_run_one(t) for t in tasks]
                record = _assemble(manifest, point, config, mu, outputs)
                if cached is not None:
                    cached.write_text(json.dumps(record.to_dict(), sort_keys=True))
                records.append(record)
            if progress is not None:
                progress(done, len(points))
    finally:
        if pool is not None:
            pool.shutdown()

    total = len(points) * manifest.runs_per_point
    faults = sum(r.n_faults for r in records)
    if faults:
        log.warning("%d of %d runs faulted and were excluded", faults, total)
    if faults > MAX_FAULT_FRACTION * total:
        raise SweepError(f"{faults} of {total} runs faulted (limit {MAX_FAULT_FRACTION:.0%})")
    return records


# -- result files -------------------------------------------------------------------


def _fmt(x) -> str:
    return "%.17g" % x


def results_sidecar(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_results(records, path, manifest: RunManifest | None = None) -> Path:
    """Write one row per (run, observer, group) plus a JSON sidecar.

    Rows are ordered by ``(rho, Nr, s0)`` ascending, then run, observer and
    group. The sidecar carries the manifest, per-point parameters, μ values,
    fault counts and histograms.
    """
    records = sorted(records, key=lambda r: r.key)
    if not records:
        raise ValueError("no records to write")
    path = Path(path)
    lines = [",".join(RESULTS_HEADER) + "\n"]
    points = []
    for rec in records:
        for run in rec.runs:
            for obs in OBSERVERS:
                for g in GROUPS:
                    if (obs, g) not in run.n_m:
                        continue
                    lines.append(",".join([
                        _fmt(rec.density), _fmt(rec.number_ratio), _fmt(rec.intrinsic_speed),
                        str(run.run_seed), obs, str(g), _fmt(run.n_m[(obs, g)]),
                        _fmt(run.c_in_initial[g]), _fmt(run.c_in_final[g]),
                        _fmt(run.drift_speed),
                    ]) + "\n")
        meta = rec.to_dict()
        meta["runs"] = [{"run_index": r.run_index, "run_seed": r.run_seed,
                         "n_windows": r.n_windows} for r in rec.runs]
        points.append(meta)
    sidecar = {
        "manifest": manifest.to_dict() if manifest is not None else None,
        "tool_version": __version__,
        "points": points,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.writelines(lines)
        results_sidecar(path).write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path) -> list[SweepRecord]:
    """Inverse of :func:`write_results`."""
    path = Path(path)
    side = _load_json(results_sidecar(path))
    rows: dict[tuple, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise ConfigurationError(f"{path}: unexpected header {header}")
        for row in reader:
            key = (float(row[0]), float(row[1]), float(row[2]))
            seed = int(row[3])
            run = rows.setdefault(key, {}).setdefault(seed, {
                "n_m": {}, "c_in_initial": {}, "c_in_final": {}, "drift_speed": float(row[9])})
            g = int(row[5])
            run["n_m"][f"{row[4]}:{g}"] = float(row[6])
            run["c_in_initial"][str(g)] = float(row[7])
            run["c_in_final"][str(g)] = float(row[8])
    records = []
    for meta in side["points"]:
        key = (float(meta["rho"]), float(meta["Nr"]), float(meta["s0"]))
        by_seed = rows.get(key, {})
        runs = []
        for r in meta["runs"]:
            if r["run_seed"] not in by_seed:
                raise ConfigurationError(f"{path}: run {r['run_seed']} missing from CSV")
            runs.append({**r, **by_seed[r["run_seed"]]})
        records.append(SweepRecord.from_dict({**meta, "runs": runs}))
    return records


def find_record(records, density=None, number_ratio=None, intrinsic_speed=None) -> SweepRecord:
    """The unique record matching the given coordinates (to 1e-9)."""
    hits = [
        r for r in records
        if (density is None or abs(r.density - density) < 1e-9)
        and (number_ratio is None or abs(r.number_ratio - number_ratio) < 1e-9)
        and (intrinsic_speed is None or abs(r.intrinsic_speed - intrinsic_speed) < 1e-9)
    ]
    if len(hits) != 1:
        raise KeyError(f"{len(hits)} records match")
    return hits[0]
