"""Compare the compiled and pure-Python integration kernels.

Runs the same seeded two-ion cooling trajectories through both kernels,
checks that every sampled quantity agrees bitwise, and reports wall
times. The kernels implement the identical algorithm; the compiled one
exists purely for speed, so any numerical difference is a bug.

Usage: python benchmarks/benchmark_backends.py [--trials N] [--t-max P]
"""

import argparse
import time

import numpy as np

from sympcool import backend, dynamics, ensemble


def run_trials(n_trials, t_max, sample_interval, e0_over_ed):
    hot = dynamics.ion_spec("Al+")
    cold = dynamics.ion_spec("Ca+")
    trap = dynamics.TrapConfig.default()
    specs = [hot, cold]
    scales = dynamics.derive_scales(hot.mass_u, trap.omega_hot)
    controls = dynamics.IntegrationControls(
        t_max=t_max, sample_interval=sample_interval
    )
    records = []
    start = time.perf_counter()
    for trial in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=777, spawn_key=(trial,)))
        state = ensemble.sample_initial(specs, trap, rng, e0=e0_over_ed * scales.e_d)
        records.append(
            dynamics.integrate(state, specs, trap, controls, rng_seed=trial)
        )
    elapsed = time.perf_counter() - start
    return records, elapsed


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=4)
    parser.add_argument("--t-max", type=float, default=400.0)
    parser.add_argument("--sample-interval", type=float, default=0.5)
    parser.add_argument("--e0", type=float, default=20.0)
    args = parser.parse_args()

    try:
        from sympcool import _kernel
    except ImportError:
        raise SystemExit(
            "compiled kernel not built; build the extension before benchmarking"
        )
    from sympcool import _kernel_py

    results = {}
    for name, kernel in (("compiled", _kernel), ("python", _kernel_py)):
        backend.integrate_scaled = kernel.integrate_scaled
        records, elapsed = run_trials(
            args.trials, args.t_max, args.sample_interval, args.e0
        )
        results[name] = records
        steps = sum(r.stats["n_accepted"] for r in records)
        print(
            f"{name:9s} {elapsed:8.3f} s  "
            f"{steps} accepted steps  {steps / elapsed:10.0f} steps/s"
        )

    mismatches = 0
    for rc, rp in zip(results["compiled"], results["python"]):
        for field in ("times", "e_total", "e_hot", "e_cold", "r_min"):
            if not np.array_equal(getattr(rc, field), getattr(rp, field)):
                mismatches += 1
        if rc.verdict.kind != rp.verdict.kind or rc.verdict.t_periods != rp.verdict.t_periods:
            mismatches += 1
    if mismatches:
        raise SystemExit(f"BACKEND MISMATCH in {mismatches} field(s)")
    print("outputs bitwise identical across backends")


if __name__ == "__main__":
    main()
