"""The stateful-dataflow-graph IR.

An ``Sdfg`` owns a descriptor table (data containers), a symbol table with
lower-bound assumptions, and a control-flow graph of ``State`` objects joined
by ``InterstateEdge`` transitions.  Each state is an acyclic multigraph of
dataflow nodes (access nodes, tasklets, map entry/exit pairs, library nodes,
nested graphs) whose edges carry ``Memlet`` annotations describing exactly
which container subset moves.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import symbolic, texpr
from .symbolic import Assumptions, SubsetRange, SymExpr, Ternary
from .texpr import TExpr


class DType(Enum):
    F64 = "f64"
    I64 = "i64"
    I32 = "i32"
    BOOL = "bool"

    @property
    def nbytes(self) -> int:
        return {"f64": 8, "i64": 8, "i32": 4, "bool": 1}[self.value]

    @property
    def np(self):
        return {
            "f64": np.float64,
            "i64": np.int64,
            "i32": np.int32,
            "bool": np.bool_,
        }[self.value]

    @property
    def is_integer(self) -> bool:
        return self in (DType.I64, DType.I32)


class DataKind(Enum):
    ARRAY = "array"
    SCALAR = "scalar"
    STREAM = "stream"


class Lifetime(Enum):
    SCOPE = "scope"
    PERSISTENT = "persistent"


class Storage(Enum):
    HEAP = "heap"
    STACK = "stack"
    DISTRIBUTED_LOCAL = "distributed_local"


class Schedule(Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"
    DISTRIBUTED_HINT = "distributed_hint"


class Wcr(Enum):
    """Write-conflict resolution operators (commutative and associative)."""

    ADD = "add"
    MUL = "mul"
    MIN = "min"
    MAX = "max"

    def apply(self, old, new):
        if self is Wcr.ADD:
            return old + new
        if self is Wcr.MUL:
            return old * new
        if self is Wcr.MIN:
            return np.minimum(old, new)
        return np.maximum(old, new)

    @property
    def identity(self):
        return {"add": 0.0, "mul": 1.0, "min": np.inf, "max": -np.inf}[self.value]


class LibKind(Enum):
    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    REDUCE = "reduce"
    SCATTER = "scatter"
    GATHER = "gather"
    BCAST = "bcast"
    BLOCK_SCATTER = "block_scatter"
    BLOCK_GATHER = "block_gather"
    ISEND = "isend"
    IRECV = "irecv"
    WAITALL = "waitall"
    DIST_MATMUL = "dist_matmul"


COMM_KINDS = {
    LibKind.SCATTER,
    LibKind.GATHER,
    LibKind.BCAST,
    LibKind.BLOCK_SCATTER,
    LibKind.BLOCK_GATHER,
    LibKind.ISEND,
    LibKind.IRECV,
    LibKind.WAITALL,
    LibKind.DIST_MATMUL,
}


@dataclass
class DataDescriptor:
    name: str
    dtype: DType
    shape: tuple[SymExpr, ...] = ()
    kind: DataKind = DataKind.ARRAY
    transient: bool = False
    lifetime: Lifetime = Lifetime.SCOPE
    storage: Storage = Storage.HEAP

    def __post_init__(self):
        self.shape = tuple(symbolic.simplify(symbolic.as_expr(d)) for d in self.shape)
        if self.kind is DataKind.SCALAR and self.shape:
            raise ValueError(f"scalar '{self.name}' must have an empty shape")

    @property
    def rank(self) -> int:
        return len(self.shape)

    def full_subset(self) -> SubsetRange:
        return SubsetRange.full(self.shape)

    def byte_size(self, bindings: Mapping[str, int]) -> int:
        n = 1
        for d in self.shape:
            n *= d.evaluate(bindings)
        return n * self.dtype.nbytes


@dataclass
class Memlet:
    """A data-movement annotation: container name + strided subset."""

    container: str
    subset: SubsetRange
    wcr: Wcr | None = None
    volume: SymExpr | None = None

    def __post_init__(self):
        if self.volume is None:
            self.volume = self.subset.volume()

    def __str__(self):
        sub = str(self.subset)
        return f"{self.container}[{sub}]"


# ---------------------------------------------------------------------------
# Dataflow nodes


@dataclass(eq=False)
class Node:
    nid: int = field(default=-1, init=False, compare=False)


@dataclass(eq=False)
class AccessNode(Node):
    container: str


@dataclass(eq=False)
class Tasklet(Node):
    """Stateless scalar computation; ``code`` assigns each output connector."""

    name: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    code: tuple[tuple[str, TExpr], ...]

    def expr_for(self, out_conn: str) -> TExpr:
        for conn, e in self.code:
            if conn == out_conn:
                return e
        raise KeyError(out_conn)


@dataclass(eq=False)
class MapEntry(Node):
    params: tuple[tuple[str, tuple[SymExpr, SymExpr, SymExpr]], ...]
    schedule: Schedule = Schedule.SEQUENTIAL
    tiled: bool = False  # write-conflict tiling already applied or not needed

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p for p, _ in self.params)


@dataclass(eq=False)
class MapExit(Node):
    entry: MapEntry


@dataclass(eq=False)
class LibraryNode(Node):
    kind: LibKind
    name: str = ""
    attributes: dict = field(default_factory=dict)


@dataclass(eq=False)
class NestedSdfg(Node):
    sdfg: "Sdfg"
    symbol_map: dict[str, SymExpr] = field(default_factory=dict)
    # connector name == inner container name; memlets on edges give the outer view


@dataclass(eq=False)
class Edge:
    src: Node
    dst: Node
    memlet: Memlet | None = None
    src_conn: str | None = None
    dst_conn: str | None = None


@dataclass
class Diagnostic:
    severity: str  # 'error' | 'warning'
    message: str
    code: str = ""
    state: str | None = None
    node: int | None = None

    def to_json(self) -> dict:
        return {
            "severity": self.severity,
            "message": self.message,
            "code": self.code,
            "state": self.state,
            "node": self.node,
        }


class State:
    """A label plus an acyclic dataflow multigraph."""

    def __init__(self, label: str):
        self.label = label
        self.nodes: dict[int, Node] = {}
        self.edges: list[Edge] = []
        self._next_id = 0

    def add(self, node: Node) -> Node:
        node.nid = self._next_id
        self._next_id += 1
        self.nodes[node.nid] = node
        return node

    def add_edge(
        self,
        src: Node,
        dst: Node,
        memlet: Memlet | None = None,
        src_conn: str | None = None,
        dst_conn: str | None = None,
    ) -> Edge:
        e = Edge(src, dst, memlet, src_conn, dst_conn)
        self.edges.append(e)
        return e

    def remove_node(self, node: Node) -> None:
        self.edges = [e for e in self.edges if e.src is not node and e.dst is not node]
        del self.nodes[node.nid]

    def remove_edge(self, edge: Edge) -> None:
        self.edges.remove(edge)

    def sorted_nodes(self) -> list[Node]:
        return [self.nodes[k] for k in sorted(self.nodes)]

    def in_edges(self, node: Node) -> list[Edge]:
        return [e for e in self.edges if e.dst is node]

    def out_edges(self, node: Node) -> list[Edge]:
        return [e for e in self.edges if e.src is node]

    def degree(self, node: Node) -> tuple[int, int]:
        return len(self.in_edges(node)), len(self.out_edges(node))

    def topological(self) -> list[Node]:
        indeg = {nid: 0 for nid in self.nodes}
        for e in self.edges:
            indeg[e.dst.nid] += 1
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        order: list[Node] = []
        while ready:
            nid = ready.pop(0)
            order.append(self.nodes[nid])
            changed = False
            for e in self.edges:
                if e.src.nid == nid:
                    indeg[e.dst.nid] -= 1
                    if indeg[e.dst.nid] == 0:
                        ready.append(e.dst.nid)
                        changed = True
            if changed:
                ready.sort()
        if len(order) != len(self.nodes):
            raise ValueError(f"cycle in state '{self.label}'")
        return order

    def scope_parents(self) -> dict[int, MapEntry | None]:
        """Scope membership for every node; edges must respect scope brackets."""
        parent: dict[int, MapEntry | None] = {}
        for node in self.topological():
            preds = self.in_edges(node)
            if not preds:
                parent[node.nid] = None
                continue
            scopes = set()
            for e in preds:
                s = e.src
                if isinstance(s, MapEntry):
                    scopes.add(s.nid)
                elif isinstance(s, MapExit):
                    outer = parent[s.entry.nid]
                    scopes.add(outer.nid if outer is not None else -1)
                else:
                    p = parent[s.nid]
                    scopes.add(p.nid if p is not None else -1)
            if isinstance(node, MapExit):
                # the exit lives in the same scope as its entry
                p = parent[node.entry.nid]
                parent[node.nid] = p
                continue
            if len(scopes) != 1:
                raise ValueError(
                    f"node {node.nid} in state '{self.label}' joins different map scopes"
                )
            s = scopes.pop()
            parent[node.nid] = None if s == -1 else self.nodes[s]  # type: ignore[assignment]
        return parent

    def scope_children(self, entry: MapEntry) -> list[Node]:
        parents = self.scope_parents()
        out = []
        for node in self.sorted_nodes():
            p = parents.get(node.nid)
            while p is not None:
                if p is entry:
                    out.append(node)
                    break
                p = parents.get(p.nid)
        return out

    def exit_of(self, entry: MapEntry) -> MapExit:
        for node in self.nodes.values():
            if isinstance(node, MapExit) and node.entry is entry:
                return node
        raise KeyError(f"map entry {entry.nid} has no exit")

    def accesses(self, container: str) -> list[AccessNode]:
        return [
            n
            for n in self.sorted_nodes()
            if isinstance(n, AccessNode) and n.container == container
        ]

    def reachability(self) -> dict[int, set[int]]:
        reach: dict[int, set[int]] = {nid: set() for nid in self.nodes}
        for node in reversed(self.topological()):
            for e in self.out_edges(node):
                reach[node.nid].add(e.dst.nid)
                reach[node.nid] |= reach[e.dst.nid]
        return reach


@dataclass(eq=False)
class InterstateEdge:
    src: str
    dst: str
    condition: TExpr | None = None  # None is an always-taken fall-through
    assignments: dict[str, SymExpr] = field(default_factory=dict)


class Sdfg:
    """Top-level program graph."""

    def __init__(self, name: str):
        self.name = name
        self.containers: dict[str, DataDescriptor] = {}
        self.symbols: dict[str, int] = {}  # symbol -> lower bound
        self.states: list[State] = []
        self.transitions: list[InterstateEdge] = []
        self.start: str | None = None

    # -- construction -------------------------------------------------------

    def add_state(self, label: str | None = None, *, start: bool = False) -> State:
        if label is None:
            label = f"s{len(self.states)}"
        if any(s.label == label for s in self.states):
            raise ValueError(f"duplicate state label '{label}'")
        st = State(label)
        self.states.append(st)
        if start or self.start is None:
            self.start = label
        return st

    def add_transition(
        self,
        src: State | str,
        dst: State | str,
        condition: TExpr | None = None,
        assignments: Mapping[str, SymExpr | int] | None = None,
    ) -> InterstateEdge:
        sl = src.label if isinstance(src, State) else src
        dl = dst.label if isinstance(dst, State) else dst
        assigns = {
            k: symbolic.simplify(symbolic.as_expr(v)) for k, v in (assignments or {}).items()
        }
        e = InterstateEdge(sl, dl, condition, assigns)
        self.transitions.append(e)
        return e

    def add_symbol(self, name: str, lower: int = 1) -> None:
        self.symbols.setdefault(name, lower)

    def add_container(self, desc: DataDescriptor) -> DataDescriptor:
        if desc.name in self.containers:
            raise ValueError(f"duplicate container '{desc.name}'")
        self.containers[desc.name] = desc
        return desc

    def add_array(self, name, dtype, shape, transient=False, **kw) -> DataDescriptor:
        return self.add_container(
            DataDescriptor(name, dtype, tuple(symbolic.as_expr(s) for s in shape),
                           DataKind.ARRAY, transient, **kw)
        )

    def add_scalar(self, name, dtype, transient=False, **kw) -> DataDescriptor:
        return self.add_container(
            DataDescriptor(name, dtype, (), DataKind.SCALAR, transient, **kw)
        )

    def fresh_name(self, base: str) -> str:
        if base not in self.containers:
            return base
        k = 0
        while f"{base}_{k}" in self.containers:
            k += 1
        return f"{base}_{k}"

    # -- queries ------------------------------------------------------------

    def state(self, label: str) -> State:
        for s in self.states:
            if s.label == label:
                return s
        raise KeyError(f"no state '{label}'")

    def start_state(self) -> State:
        assert self.start is not None
        return self.state(self.start)

    def out_transitions(self, label: str) -> list[InterstateEdge]:
        return [t for t in self.transitions if t.src == label]

    def in_transitions(self, label: str) -> list[InterstateEdge]:
        return [t for t in self.transitions if t.dst == label]

    def assumptions(self) -> Assumptions:
        return Assumptions(self.symbols)

    def assigned_symbols(self) -> set[str]:
        """Symbols written on any interstate edge (loop counters etc.)."""
        out: set[str] = set()
        for t in self.transitions:
            out |= set(t.assignments)
        return out

    def copy(self) -> "Sdfg":
        return copy.deepcopy(self)

    def free_symbols(self) -> set[str]:
        """Symbols the caller must bind: everything that appears in shapes,
        subsets, map ranges, conditions, and assignments, minus loop/map-bound
        names and container names."""
        used: set[str] = set()
        for d in self.containers.values():
            for dim in d.shape:
                used |= dim.free_symbols()
        bound: set[str] = self.assigned_symbols()
        for st in self.states:
            for node in st.nodes.values():
                if isinstance(node, MapEntry):
                    bound |= set(node.param_names)
                    for _, (b, e, s) in node.params:
                        used |= b.free_symbols() | e.free_symbols() | s.free_symbols()
                elif isinstance(node, Tasklet):
                    for _, code in node.code:
                        used |= code.free_names() - set(node.inputs)
                elif isinstance(node, LibraryNode):
                    for v in node.attributes.values():
                        if isinstance(v, SymExpr):
                            used |= v.free_symbols()
                elif isinstance(node, NestedSdfg):
                    inner = node.sdfg.free_symbols()
                    for s_ in inner:
                        expr = node.symbol_map.get(s_, symbolic.Sym(s_))
                        used |= expr.free_symbols()
            for e in st.edges:
                if e.memlet is not None:
                    used |= e.memlet.subset.free_symbols()
        for t in self.transitions:
            if t.condition is not None:
                used |= t.condition.free_names()
            for k, v in t.assignments.items():
                used |= v.free_symbols()
        return used - bound - set(self.containers)

    # -- validation ----------------------------------------------------------

    def validate(self) -> list[Diagnostic]:
        return validate(self)


# ---------------------------------------------------------------------------
# Validation


def _node_memlets(state: State, node: AccessNode):
    writes = [e.memlet for e in state.in_edges(node) if e.memlet is not None]
    reads = [e.memlet for e in state.out_edges(node) if e.memlet is not None]
    return writes, reads


def unordered_hazards(
    state: State, assumptions: Assumptions
) -> list[tuple[str, AccessNode, AccessNode, Ternary]]:
    """Pairs of same-container access occurrences with a write and no
    ordering path between them.  The Ternary reports provable disjointness of
    the colliding subsets (UNKNOWN and FALSE are hazards)."""
    reach = state.reachability()
    by_container: dict[str, list[AccessNode]] = {}
    for n in state.sorted_nodes():
        if isinstance(n, AccessNode):
            by_container.setdefault(n.container, []).append(n)
    out = []
    for cont, occs in by_container.items():
        for i in range(len(occs)):
            for j in range(i + 1, len(occs)):
                u, v = occs[i], occs[j]
                if v.nid in reach[u.nid] or u.nid in reach[v.nid]:
                    continue
                uw, ur = _node_memlets(state, u)
                vw, vr = _node_memlets(state, v)
                if not uw and not vw:
                    continue
                verdicts = []
                for m1 in uw:
                    for m2 in vw + vr:
                        if m1.wcr is not None and m2.wcr == m1.wcr:
                            continue  # commuting conflict resolution
                        verdicts.append(symbolic.disjoint(m1.subset, m2.subset, assumptions))
                for m1 in vw:
                    for m2 in ur:
                        if m1.wcr is not None and m2.wcr == m1.wcr:
                            continue
                        verdicts.append(symbolic.disjoint(m1.subset, m2.subset, assumptions))
                if not verdicts:
                    continue
                verdict = (
                    Ternary.TRUE
                    if all(v_ is Ternary.TRUE for v_ in verdicts)
                    else (Ternary.FALSE if any(v_ is Ternary.FALSE for v_ in verdicts) else Ternary.UNKNOWN)
                )
                if verdict is not Ternary.TRUE:
                    out.append((cont, u, v, verdict))
    return out


def validate(g: Sdfg) -> list[Diagnostic]:
    """Structural validation; returns diagnostics instead of raising."""
    diags: list[Diagnostic] = []

    def err(msg, code, state=None, node=None):
        diags.append(Diagnostic("error", msg, code, state, node))

    def warn(msg, code, state=None, node=None):
        diags.append(Diagnostic("warning", msg, code, state, node))

    if g.start is None or not any(s.label == g.start for s in g.states):
        err(f"missing or unknown start state '{g.start}'", "start-state")
        return diags

    labels = [s.label for s in g.states]
    if len(set(labels)) != len(labels):
        err("duplicate state labels", "state-labels")

    assumptions = g.assumptions()
    known_names = set(g.containers) | set(g.symbols) | g.assigned_symbols()

    for d in g.containers.values():
        for dim in d.shape:
            for s in dim.free_symbols():
                if s not in g.symbols:
                    err(f"shape of '{d.name}' uses undeclared symbol '{s}'", "unknown-symbol")
        if d.kind is DataKind.SCALAR and d.shape:
            err(f"scalar '{d.name}' has a shape", "scalar-shape")
        if d.kind is DataKind.STREAM and d.rank != 1:
            err(f"stream '{d.name}' must be one-dimensional", "stream-rank")

    for st in g.states:
        # acyclicity + scope structure
        try:
            st.topological()
        except ValueError as ex:
            err(str(ex), "state-cycle", st.label)
            continue
        try:
            parents = st.scope_parents()
        except ValueError as ex:
            err(str(ex), "scope-structure", st.label)
            continue

        entries = [n for n in st.nodes.values() if isinstance(n, MapEntry)]
        exits = [n for n in st.nodes.values() if isinstance(n, MapExit)]
        if len(entries) != len(exits) or {id(x.entry) for x in exits} != {id(e) for e in entries}:
            err("unbalanced map entry/exit pairs", "scope-brackets", st.label)

        for e in st.edges:
            if e.memlet is None:
                continue
            m = e.memlet
            if m.container not in g.containers:
                err(f"unknown container {m.container}", "unknown-container", st.label)
                continue
            desc = g.containers[m.container]
            if m.subset.rank != desc.rank:
                err(
                    f"memlet {m} has rank {m.subset.rank}, container has rank {desc.rank}",
                    "rank-mismatch",
                    st.label,
                )
            if m.wcr is not None and not isinstance(e.dst, (AccessNode, MapExit)):
                err(f"wcr memlet {m} on a non-write edge", "wcr-read", st.label, e.dst.nid)
            for sname in m.subset.free_symbols():
                if sname not in known_names and not _is_map_param(st, parents, e, sname):
                    err(f"memlet {m} uses undeclared name '{sname}'", "unknown-symbol", st.label)

        # dataflow endpoints: sinks must be access nodes; tasklet outputs consumed
        for n in st.nodes.values():
            indeg, outdeg = st.degree(n)
            if outdeg == 0 and not isinstance(n, AccessNode):
                err(
                    f"{type(n).__name__} {n.nid} is a dataflow sink",
                    "sink-not-access",
                    st.label,
                    n.nid,
                )
            if isinstance(n, Tasklet):
                conns = {e.dst_conn for e in st.in_edges(n)}
                missing = set(n.inputs) - conns
                if missing:
                    err(
                        f"tasklet {n.name} missing inputs {sorted(missing)}",
                        "missing-input",
                        st.label,
                        n.nid,
                    )
                scope_params: set[str] = set()
                cur = parents.get(n.nid)
                while cur is not None:
                    scope_params |= set(cur.param_names)
                    cur = parents.get(cur.nid)
                for _, code in n.code:
                    for name in code.free_names():
                        if (name not in n.inputs and name not in known_names
                                and name not in scope_params):
                            err(
                                f"tasklet {n.name} references unknown name '{name}'",
                                "unknown-name",
                                st.label,
                                n.nid,
                            )

        # unordered write hazards
        for cont, u, v, verdict in unordered_hazards(st, assumptions):
            if verdict is Ternary.FALSE:
                err(f"data race on {cont}", "data-race", st.label, u.nid)
            else:
                err(f"possible data race on {cont} (unprovable disjointness)",
                    "data-race", st.label, u.nid)

        # per-map cross-iteration conflicts: unsafe unless resolved by wcr
        # (sequential maps execute in order and may carry dependences)
        for entry in entries:
            if entry.schedule is Schedule.SEQUENTIAL:
                continue
            try:
                st.exit_of(entry)
            except KeyError:
                continue
            for cont, w, x in scope_cross_iteration_hazards(st, entry):
                err(f"data race on {cont}", "data-race", st.label, entry.nid)

    # interstate edges
    for t in g.transitions:
        if not any(s.label == t.src for s in g.states) or not any(
            s.label == t.dst for s in g.states
        ):
            err(f"transition {t.src}->{t.dst} references unknown state", "unknown-state")
            continue
        if t.condition is not None:
            for name in t.condition.free_names():
                if name not in known_names:
                    err(
                        f"condition on {t.src}->{t.dst} uses undeclared name '{name}'",
                        "unknown-symbol",
                    )
    for st in g.states:
        outs = g.out_transitions(st.label)
        conded = [t for t in outs if t.condition is not None]
        if conded and len(conded) == len(outs):
            if not _exhaustive_conditions([t.condition for t in conded]):
                warn(
                    f"outgoing conditions of '{st.label}' may not be exhaustive",
                    "non-exhaustive",
                    st.label,
                )

    return diags


def _is_map_param(state: State, parents, edge: Edge, name: str) -> bool:
    if isinstance(edge.src, MapEntry) and name in edge.src.param_names:
        return True
    if isinstance(edge.dst, MapExit) and name in edge.dst.entry.param_names:
        return True
    for endpoint in (edge.src, edge.dst):
        cur = parents.get(endpoint.nid)
        while cur is not None:
            if name in cur.param_names:
                return True
            cur = parents.get(cur.nid)
    return False


def _pinned(param: str, all_params: set[str], w: SubsetRange, x: SubsetRange) -> bool:
    """A dimension pins a parameter when both subsets index it with the same
    single-parameter point expression, so a collision forces equal values."""
    for (wb, we, _), (xb, xe, _) in zip(w.dims, x.dims):
        if wb != we or xb != xe:
            continue
        if symbolic.simplify(wb) != symbolic.simplify(xb):
            continue
        deps = wb.free_symbols() & all_params
        if deps == {param}:
            return True
    return False


def scope_cross_iteration_hazards(
    state: State, entry: MapEntry
) -> list[tuple[str, Memlet, Memlet]]:
    """Same-container boundary memlets that may collide across iterations.

    A write/access pair is safe only if every map parameter is pinned (the
    colliding cells force the iterations to be identical) or both sides agree
    on the same write-conflict resolution.
    """
    exit_node = state.exit_of(entry)
    reads: dict[str, list[Memlet]] = {}
    writes: dict[str, list[Memlet]] = {}
    for e in state.out_edges(entry):
        if e.memlet is not None:
            reads.setdefault(e.memlet.container, []).append(e.memlet)
    for e in state.in_edges(exit_node):
        if e.memlet is not None:
            writes.setdefault(e.memlet.container, []).append(e.memlet)
    params = set(entry.param_names)
    hazards = []
    for cont, wlist in writes.items():
        others = wlist + reads.get(cont, [])
        for w in wlist:
            for x in others:
                if w.wcr is not None and x.wcr == w.wcr:
                    continue
                if all(_pinned(p, params, w.subset, x.subset) for p in params):
                    continue
                hazards.append((cont, w, x))
    return hazards


def _exhaustive_conditions(conds: Sequence[TExpr]) -> bool:
    """Structural check: some pair of conditions are each other's negation."""
    rendered = [texpr.to_text(c) for c in conds]
    negs = [texpr.to_text(texpr.negated(c)) for c in conds]
    return any(n in rendered for n in negs)


# ---------------------------------------------------------------------------
# Structural equality (identity-insensitive, order-sensitive)


def _node_signature(n: Node, pos: Mapping[int, int]):
    if isinstance(n, AccessNode):
        return ("access", n.container)
    if isinstance(n, Tasklet):
        return ("tasklet", n.name, n.inputs, n.outputs,
                tuple((c, texpr.to_text(e)) for c, e in n.code))
    if isinstance(n, MapEntry):
        return (
            "map_entry",
            tuple((p, str(b), str(e), str(s)) for p, (b, e, s) in n.params),
            n.schedule.value,
            n.tiled,
        )
    if isinstance(n, MapExit):
        return ("map_exit", pos[n.entry.nid])
    if isinstance(n, LibraryNode):
        return ("library", n.kind.value, n.name, _attr_sig(n.attributes))
    if isinstance(n, NestedSdfg):
        return ("nested", tuple(sorted((k, str(v)) for k, v in n.symbol_map.items())))
    raise TypeError(type(n).__name__)


def _attr_sig(attrs: Mapping) -> tuple:
    out = []
    for k in sorted(attrs):
        v = attrs[k]
        if isinstance(v, SymExpr):
            v = str(v)
        elif isinstance(v, (list, tuple)):
            v = tuple(str(x) if isinstance(x, SymExpr) else x for x in v)
        out.append((k, v))
    return tuple(out)


def _memlet_sig(m: Memlet | None):
    if m is None:
        return None
    return (m.container, str(m.subset), m.wcr.value if m.wcr else None, str(m.volume))


def structural_eq(a: Sdfg, b: Sdfg) -> bool:
    """Field-by-field comparison ignoring raw node-id values."""
    if a.name != b.name or a.start != b.start or a.symbols != b.symbols:
        return False
    if list(a.containers) != list(b.containers):
        return False
    for name in a.containers:
        da, db = a.containers[name], b.containers[name]
        if (da.dtype, da.kind, da.transient, da.lifetime, da.storage) != (
            db.dtype, db.kind, db.transient, db.lifetime, db.storage,
        ):
            return False
        if tuple(map(str, da.shape)) != tuple(map(str, db.shape)):
            return False
    if len(a.states) != len(b.states):
        return False
    for sa, sb in zip(a.states, b.states):
        if sa.label != sb.label:
            return False
        na, nb = sa.sorted_nodes(), sb.sorted_nodes()
        if len(na) != len(nb):
            return False
        pos_a = {n.nid: i for i, n in enumerate(na)}
        pos_b = {n.nid: i for i, n in enumerate(nb)}
        for x, y in zip(na, nb):
            if isinstance(x, NestedSdfg) != isinstance(y, NestedSdfg):
                return False
            if isinstance(x, NestedSdfg):
                if _node_signature(x, pos_a) != _node_signature(y, pos_b):
                    return False
                if not structural_eq(x.sdfg, y.sdfg):
                    return False
            elif _node_signature(x, pos_a) != _node_signature(y, pos_b):
                return False
        ea = [
            (pos_a[e.src.nid], pos_a[e.dst.nid], e.src_conn, e.dst_conn, _memlet_sig(e.memlet))
            for e in sa.edges
        ]
        eb = [
            (pos_b[e.src.nid], pos_b[e.dst.nid], e.src_conn, e.dst_conn, _memlet_sig(e.memlet))
            for e in sb.edges
        ]
        if ea != eb:
            return False
    ta = [
        (t.src, t.dst, texpr.to_text(t.condition) if t.condition else None,
         tuple((k, str(v)) for k, v in t.assignments.items()))
        for t in a.transitions
    ]
    tb = [
        (t.src, t.dst, texpr.to_text(t.condition) if t.condition else None,
         tuple((k, str(v)) for k, v in t.assignments.items()))
        for t in b.transitions
    ]
    return ta == tb
