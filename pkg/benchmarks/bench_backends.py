"""Compare the compiled kernels with the pure-Python fallback.

Run with ``python3 benchmarks/bench_backends.py [--repeat N]``. Each kernel is
timed on identical inputs under both backends and the outputs are checked
for agreement before timings are reported.
"""

import argparse
import sys
import timeit

import numpy as np

from crowdobs import _backend
from crowdobs.dynamics import SimParams, desired_vx, init_configuration


def _setup(params):
    L, pos, vel, labels = init_configuration(params, _backend.get("python"))
    return L, pos, vel, labels


def _advance_fn(core, params, L, pos, vel, labels, n_steps):
    v0x = desired_vx(labels, params.intrinsic_speed)

    def run():
        p, v = pos.copy(), vel.copy()
        core.advance(p, v, v0x, n_steps, params.dt, params.relax_time, params.mass,
                     params.force_strength, params.radius, params.cutoff, L,
                     params.guard * params.radius, params.max_halvings, 0)
        return p, v

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=100, help="integrator steps per call")
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    params = SimParams(number_ratio=1 / 3, density=0.57706, intrinsic_speed=0.75, seed=7)
    L, pos, vel, labels = _setup(params)
    rng = np.random.default_rng(1)
    vel = rng.normal(scale=0.3, size=vel.shape)

    kernels = {
        "net_forces": lambda core: (lambda: core.net_forces(
            pos, L, params.force_strength, params.radius, params.cutoff)),
        f"advance x{args.steps}": lambda core: _advance_fn(core, params, L, pos, vel, labels,
                                                           args.steps),
        "voronoi_edges": lambda core: (lambda: core.voronoi_edges(pos, L)),
        "phi_bar_series x50": lambda core: (lambda: core.phi_bar_series(
            np.repeat(pos[None], 50, axis=0), np.repeat(vel[None], 50, axis=0), L, 3.0)),
    }

    print(f"N={len(pos)}  L={L:.4f}  repeat={args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for name, make in kernels.items():
        outputs, times = {}, {}
        for b in backends:
            fn = make(_backend.get(b))
            outputs[b] = fn()
            times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        if len(backends) == 2:
            a, c = (outputs[b] for b in backends)
            flat_a = np.concatenate([np.ravel(x) for x in (a if isinstance(a, tuple) else (a,))])
            flat_c = np.concatenate([np.ravel(x) for x in (c if isinstance(c, tuple) else (c,))])
            if flat_a.shape != flat_c.shape or not np.allclose(flat_a, flat_c, rtol=1e-9, atol=1e-9):
                print(f"{name}: backends disagree", file=sys.stderr)
                return 1
        speed = times["python"] / times["compiled"] if len(backends) == 2 else float("nan")
        print(f"{name:<22}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends)
              + f"{speed:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
