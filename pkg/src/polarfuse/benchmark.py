"""Benchmark the compiled kernels against the NumPy fallback.

Run with `python -m polarfuse.benchmark`. Covers the two hot paths
(preintegration of a long IMU stream, batched factor linearization) and an
end-to-end estimator run on a short scenario.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np


def _available_backends():
    from .backend import get_backend

    out = {"python": get_backend("python")}
    try:
        out["compiled"] = get_backend("compiled")
    except ImportError:
        pass
    return out


def _time(fn, repeats: int) -> float:
    fn()  # warm-up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_preintegrate(backends, n_samples: int, repeats: int):
    rng = np.random.default_rng(0)
    t = np.arange(n_samples) * 0.005
    gyro = np.ascontiguousarray(rng.normal(0.0, 0.3, (n_samples, 3)))
    accel = np.ascontiguousarray(rng.normal(0.0, 1.0, (n_samples, 3)) + [0, 0, 9.81])
    zeros = np.zeros(3)
    res = {}
    for name, mod in backends.items():
        res[name] = _time(
            lambda m=mod: m.preintegrate(t, gyro, accel, zeros, zeros, 1e-3, 1e-2),
            repeats)
    return res


def bench_imu_linearize(backends, batch: int, repeats: int):
    rng = np.random.default_rng(1)

    def quats(k):
        q = rng.normal(0, 1, (k, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        return np.ascontiguousarray(np.where(q[:, :1] < 0, -q, q))

    c = np.ascontiguousarray
    args = (quats(batch), c(rng.normal(0, 5, (batch, 3))),
            c(rng.normal(0, 2, (batch, 3))), c(rng.normal(0, 0.05, (batch, 3))),
            c(rng.normal(0, 0.01, (batch, 3))), quats(batch),
            c(rng.normal(0, 5, (batch, 3))), c(rng.normal(0, 2, (batch, 3))),
            c(rng.normal(0, 0.05, (batch, 3))), c(rng.normal(0, 0.01, (batch, 3))),
            quats(batch), c(rng.normal(0, 1, (batch, 3))),
            c(rng.normal(0, 1, (batch, 3))), c(rng.uniform(0.3, 0.7, batch)),
            c(rng.normal(0, 0.05, (batch, 3))), c(rng.normal(0, 0.01, (batch, 3))),
            c(rng.normal(0, 0.3, (batch, 3, 3))), c(rng.normal(0, 0.3, (batch, 3, 3))),
            c(rng.normal(0, 0.3, (batch, 3, 3))), c(rng.normal(0, 0.3, (batch, 3, 3))),
            c(rng.normal(0, 0.3, (batch, 3, 3))), np.array([0.0, 0.0, -9.81]))
    res = {}
    for name, mod in backends.items():
        res[name] = _time(lambda m=mod: m.imu_linearize(*args, True), repeats)
    return res


def bench_estimator(backends, repeats: int):
    import os

    from .estimator import resolve_fusion_config, run_estimator
    from .scenario import PathSpec, Scenario
    from .sensors import simulate

    scenario = Scenario(
        seed=5,
        path=PathSpec(kind="zigzag", legs=3, leg_length=20.0, speed=2.0),
        vio=type(Scenario().vio)(enabled=False),
    )
    log = simulate(scenario)
    res = {}
    saved = os.environ.get("POLARFUSE_BACKEND")
    from . import backend as backend_mod
    for name, mod in backends.items():
        backend_mod.preintegrate = mod.preintegrate
        backend_mod.imu_linearize = mod.imu_linearize
        backend_mod.relpose_linearize = mod.relpose_linearize

        def run():
            cfg = resolve_fusion_config(scenario)
            cfg.use_vio = False
            run_estimator(log, cfg)

        res[name] = _time(run, repeats)
    # Restore the import-time selection.
    active = backends.get("compiled") or backends["python"]
    if saved == "python":
        active = backends["python"]
    backend_mod.preintegrate = active.preintegrate
    backend_mod.imu_linearize = active.imu_linearize
    backend_mod.relpose_linearize = active.relpose_linearize
    return res


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m polarfuse.benchmark",
        description="Compare the compiled kernel backend to the NumPy fallback.")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--samples", type=int, default=20000,
                        help="IMU samples for the preintegration benchmark")
    parser.add_argument("--batch", type=int, default=64,
                        help="factor count for the linearization benchmark")
    parser.add_argument("--json", dest="json_out", default=None,
                        help="also write results to this JSON file")
    args = parser.parse_args(argv)

    backends = _available_backends()
    if "compiled" not in backends:
        print("note: compiled backend not built; benchmarking fallback only",
              file=sys.stderr)

    results = {
        f"preintegrate_{args.samples}_samples":
            bench_preintegrate(backends, args.samples, args.repeats),
        f"imu_linearize_batch_{args.batch}":
            bench_imu_linearize(backends, args.batch, args.repeats),
        "estimator_short_run": bench_estimator(backends, max(1, args.repeats // 2)),
    }

    width = max(len(k) for k in results)
    print(f"{'benchmark':<{width}}  {'python':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, r in results.items():
        py = r.get("python")
        cy = r.get("compiled")
        line = f"{name:<{width}}  {py * 1e3:>8.2f}ms"
        if cy is not None:
            line += f"  {cy * 1e3:>8.2f}ms  {py / cy:>7.1f}x"
        else:
            line += f"  {'-':>10}  {'-':>8}"
        print(line)

    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
