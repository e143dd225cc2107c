"""Emit CUDA for the tiled transpose and check its index arithmetic.

Each array subscript in the output is evaluated for every thread and loop
iteration and compared with the offsets the simulator computes for the
same place expression.
"""

import numpy as np

from safegpu import CORPUS_DIR
from safegpu.codegen import emit_cuda
from safegpu.interpreter import place_offsets
from safegpu.lowering import evaluate_index
from safegpu.syntax import parse

result = emit_cuda(parse((CORPUS_DIR / "transpose.desc").read_text()))
print(result.source)

for site in result.sites:
    print(f"{site.root:7} [{site.text}]")
print(f"\n{len(result.sites)} index expressions emitted")

# Spot-check one subscript for a single block over all its threads.
site = next(s for s in result.sites if s.root == "input")
ty, tx, i = np.meshgrid(np.arange(8), np.arange(32), np.arange(4), indexing="ij")
env = {"blockIdx.y": 3, "blockIdx.x": 5, "threadIdx.y": ty, "threadIdx.x": tx, "i": i}
got = evaluate_index(site.expr, env)
want = place_offsets(site.place, site.shape, site.execs, {"Y": 3, "X": 5},
                     {"Y": ty, "X": tx}, {"i": i}, result.program.views)
print("input index agrees with the simulator for block (3, 5):",
      np.array_equal(np.broadcast_to(got, want.shape), want))
