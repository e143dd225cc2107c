"""Simulate corpus kernels and look at the access log.

The simulator runs every thread, records each memory access with its
barrier epoch and reports pairs of accesses that could race.
"""

import itertools

import numpy as np

from safegpu import CORPUS_DIR
from safegpu.interpreter import SimConfig, run_function, run_kernel, sweep_configs
from safegpu.syntax import parse


def load(name):
    return parse((CORPUS_DIR / f"{name}.desc").read_text())


# block-wide reduction of 1..16
res = run_function(load("reduce"), "host_reduce", SimConfig(inputs={"h_in": np.arange(1, 17)}))
print("reduce 1..16 ->", res.memory["h_out"].tolist())

# scan against a sequential prefix sum
data = np.arange(32) % 5
res = run_function(load("scan"), "scan", SimConfig(inputs={"h_in": data}))
print("scan matches prefix sum:",
      res.memory["h_out"].tolist() == list(itertools.accumulate(data.tolist())))

# 8x8 transpose through shared memory, 2x2 blocks of 4x2 threads
m = np.arange(64).reshape(8, 8)
res = run_function(load("transpose_bench"), "host_transpose",
                   SimConfig(nats={"nb": 2, "k": 2, "r": 2}, inputs={"h_in": m}))
print("transpose correct:", np.array_equal(res.memory["h_out"], m.T),
      "| races:", len(res.races()))

# every small launch of the reduction kernel is race free
kernel = load("reduce").functions["reduce"]
for cfg in sweep_configs(kernel):
    races = run_kernel(load("reduce"), "reduce", cfg).races()
    print(f"reduce blocks={cfg.blocks} threads={cfg.threads}: {len(races)} races")

# the rejected reversal, run without the checker, does race
report = run_kernel(load("reject_rev_per_block"), "rev_per_block",
                    SimConfig(max_threads=128)).report(max_races=2)
launch = report["launches"][0]
print("\nunchecked reversal:", launch["race_count"], "races, e.g.")
for race in launch["races"]:
    print("  ", race)
