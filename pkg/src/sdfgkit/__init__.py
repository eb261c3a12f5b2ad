"""sdfgkit: a desk-scale data-centric compiler.

Parses a restricted NumPy-style array DSL into a stateful dataflow graph IR,
coarsens and auto-optimizes the dataflow with verified graph rewrites, and can
lower programs onto a simulated distributed-memory machine.  A deterministic
reference interpreter doubles as the equivalence oracle for every rewrite.
"""

from .symbolic import (
    Assumptions, Const, Max, Min, SubsetRange, Sym, SymExpr, Ternary,
    compare, covers, disjoint, simplify, substitute,
)
from .ir import (
    AccessNode, DataDescriptor, DataKind, Diagnostic, DType, Edge,
    InterstateEdge, LibKind, LibraryNode, Lifetime, MapEntry, MapExit, Memlet,
    NestedSdfg, Schedule, Sdfg, State, Storage, Tasklet, Wcr, structural_eq,
    validate,
)
from .serialize import deserialize, serialize
from .dot import to_dot

__version__ = "0.1.0"
