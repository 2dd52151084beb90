"""Compiled vs pure-Python plant kernels on the lab load-step scenario.

Each variant runs in its own interpreter because the switch is read at
import time. Usage: ``python benchmarks/bench_numba.py [--repeat N] [--hours H]``.
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = """
import json, sys, time
from aeltherm import _jit
from aeltherm.scenario import lab_step_config, run_scenario
hours, repeat = float(sys.argv[1]), int(sys.argv[2])
cfg = lab_step_config("pid", duration=hours * 3600.0)
t0 = time.perf_counter()
run_scenario(cfg.with_(duration=60.0))  # compile or load the cached kernels
warm = time.perf_counter() - t0
times = []
for _ in range(repeat):
    t0 = time.perf_counter()
    run_scenario(cfg)
    times.append(time.perf_counter() - t0)
print(json.dumps({"numba": _jit.USE_NUMBA, "warmup": warm, "best": min(times)}))
"""


def measure(disable, hours, repeat):
    env = {**os.environ, "AELTHERM_DISABLE_NUMBA": "1" if disable else "0"}
    out = subprocess.run([sys.executable, "-c", CHILD, str(hours), str(repeat)], env=env,
                         capture_output=True, text=True, check=True).stdout
    return json.loads(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--hours", type=float, default=6.0)
    args = ap.parse_args()
    fast = measure(False, args.hours, args.repeat)
    slow = measure(True, args.hours, args.repeat)
    print(f"{'variant':<12}{'warm-up s':>12}{'best run s':>12}")
    for name, r in (("numba", fast), ("python", slow)):
        print(f"{name:<12}{r['warmup']:>12.3f}{r['best']:>12.3f}")
    print(f"speed-up {slow['best'] / fast['best']:.1f}x over {args.hours:g} simulated hours")


if __name__ == "__main__":
    main()
