"""Loop auto-parallelization and write-conflict tiling.

Shows the symbolic dependence test accepting an independent loop, turning a
sequential accumulation into a conflict-resolved parallel map, refusing a
stencil time loop, and how tiling cuts conflict commits from one per element
to one per tile.

Run with:  python demos/demo_parallelization.py
"""

import numpy as np

from sdfgkit import frontend
from sdfgkit.autoopt import tile_wcr
from sdfgkit.interp import ExecContext, interpret
from sdfgkit.passes import PassReport, coarsen, find_loops, loop_to_map

INDEPENDENT = """
def bump(C: f64[NI]):
    for i in range(NI):
        C[i] += 1.0
"""

REDUCTION = """
def total(s: f64, A: f64[N]):
    for i in range(N):
        s += A[i]
"""

STENCIL = """
def jacobi_1d(TSTEPS: i32, A: f64[N], B: f64[N]):
    for t in range(1, TSTEPS):
        B[1:-1] = 0.33333 * (A[:-2] + A[1:-1] + A[2:])
        A[1:-1] = 0.33333 * (B[:-2] + B[1:-1] + B[2:])
"""


def decide(source, label):
    g, _ = frontend.compile_source(source)
    coarsen(g)
    report = PassReport()
    for loop in find_loops(g):
        applied = loop_to_map(g, loop, report)
        print(f"{label:12s} loop '{loop.var}': "
              + ("parallelized" if applied else "left sequential"))
    return g


def main():
    # Writes C[i] and C[i+k] never collide, so the loop becomes a map.
    g = decide(INDEPENDENT, "independent")
    ctx = ExecContext(bindings={"NI": 5}).bind_inputs({"C": np.zeros(5)})
    print("    result:", interpret(g, ctx)["C"])

    # Every iteration hits the same scalar; the accumulation is recognized
    # as a sum and becomes a map with write-conflict resolution.
    g = decide(REDUCTION, "reduction")
    ctx = ExecContext(bindings={"N": 64}).bind_inputs({"s": 0.0, "A": np.arange(64.0)})
    out = interpret(g, ctx)
    print(f"    s = {out['s'][()]:.1f} with {ctx.counters.wcr_commits} conflict commits")

    # Tiling the conflicted map accumulates per tile and commits once each.
    g, _ = frontend.compile_source(REDUCTION)
    coarsen(g)
    loop_to_map(g, find_loops(g)[0], PassReport())
    tile_wcr(g, 16)
    ctx = ExecContext(bindings={"N": 64}).bind_inputs({"s": 0.0, "A": np.arange(64.0)})
    out = interpret(g, ctx)
    print(f"    tiled: s = {out['s'][()]:.1f} with {ctx.counters.wcr_commits} commits")

    # The stencil's time loop carries a flow dependence and must refuse.
    decide(STENCIL, "stencil")


if __name__ == "__main__":
    main()
