"""Compare the compiled kernels with the pure-Python fallback.

Run with ``python benchmarks/bench_backends.py``. Each kernel is timed on
the same inputs for every available backend and the outputs are checked
for agreement.
"""
import argparse
import time

import numpy as np

from fbtur import _backend
from fbtur.dynamics import IntegratorConfig, propagate, steady_state
from fbtur.models import build_clock
from fbtur.trajectories import run_ensemble


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1000, help="RK4 steps over tau = 1")
    ap.add_argument("--traj", type=int, default=256, help="trajectories for the jump kernel")
    ap.add_argument("--jump-steps", type=int, default=10_000, help="Euler steps per trajectory")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    spec = build_clock()
    spec = spec.with_initial_state(steady_state(spec))
    cfg = IntegratorConfig(h=1.0 / args.steps)
    dt = 1.0 / args.jump_steps
    backends = _backend.available()
    rows = {}
    for name in backends:
        # the fallback is slow on trajectories; scale its workload down and report per-step cost
        n_traj = args.traj if name != "python" else max(2, args.traj // 32)
        t_rk4, st = best_of(lambda: propagate(spec, 1.0, cfg, backend=name), args.repeat)
        t_jump, ens = best_of(
            lambda: run_ensemble(spec, 1.0, dt=dt, n_traj=n_traj, base_seed=1, backend=name), args.repeat
        )
        rows[name] = (t_rk4, t_jump / (n_traj * args.jump_steps), st, ens)

    print(f"{'backend':<10} {'rk4 total [s]':>14} {'rk4 per step [us]':>18} {'jump per step [ns]':>19}")
    for name, (t_rk4, t_step, _, _) in rows.items():
        print(f"{name:<10} {t_rk4:>14.4f} {1e6 * t_rk4 / args.steps:>18.2f} {1e9 * t_step:>19.1f}")
    if len(rows) == 2:
        (_, a), (_, b) = sorted(rows.items())
        print(f"speedup compiled/python: rk4 x{b[0] / a[0]:.1f}, jumps x{b[1] / a[1]:.1f}")
        drift = max(abs(a[2].accumulators()[k] - b[2].accumulators()[k]) for k in a[2].accumulators())
        n = len(b[3].currents)
        same = np.array_equal(a[3].currents[:n], b[3].currents)
        print(f"max accumulator difference {drift:.2e}; first {n} trajectory currents identical: {same}")
    else:
        print("compiled kernels unavailable; only the fallback was timed")


if __name__ == "__main__":
    main()
