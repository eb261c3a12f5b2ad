"""Dataflow-coarsening transformations and the loop auto-parallelizer.

Each transformation matches a local graph pattern and rewrites in place; a
rewrite only happens when its legality conditions hold, with UNKNOWN symbolic
verdicts treated as unsafe.  The coarsening driver applies state fusion,
redundant copy removal, and nested-graph inlining to a fixed point, which
terminates because every application strictly shrinks the graph (nodes +
states + copy edges).  Loop-to-map is consumed separately (by the map-cleanup
pass) and terminates by consuming one loop per application.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from . import symbolic, texpr
from .ir import (
    AccessNode, Edge, MapEntry, MapExit, Memlet, NestedSdfg, Schedule, Sdfg,
    State, Tasklet, Ternary, Wcr, scope_cross_iteration_hazards,
    unordered_hazards,
)
from .symbolic import Const, SubsetRange, Sym, SymExpr, propagate_subset
from .texpr import TBin, TExpr, TRef


@dataclass
class PassReport:
    applications: dict[str, int] = field(default_factory=dict)
    before_states: int = 0
    after_states: int = 0
    before_nodes: int = 0
    after_nodes: int = 0
    loop_decisions: list[tuple[str, bool]] = field(default_factory=list)

    def count(self, name: str, n: int = 1) -> None:
        self.applications[name] = self.applications.get(name, 0) + n

    @property
    def total(self) -> int:
        return sum(self.applications.values())

    def merge(self, other: "PassReport") -> None:
        for k, v in other.applications.items():
            self.count(k, v)
        self.loop_decisions.extend(other.loop_decisions)

    def to_json(self) -> dict:
        return {
            "applications": dict(self.applications),
            "states": {"before": self.before_states, "after": self.after_states},
            "nodes": {"before": self.before_nodes, "after": self.after_nodes},
            "loop_decisions": [
                {"loop": label, "parallelized": ok} for label, ok in self.loop_decisions
            ],
        }


def graph_measure(g: Sdfg) -> int:
    """Well-founded measure: states + nodes + container-to-container copies,
    counted recursively through nested graphs."""
    total = len(g.states)
    for st in g.states:
        total += len(st.nodes)
        total += sum(
            1
            for e in st.edges
            if isinstance(e.src, AccessNode) and isinstance(e.dst, AccessNode)
        )
        for n in st.nodes.values():
            if isinstance(n, NestedSdfg):
                total += graph_measure(n.sdfg)
    return total


def _snapshot(g: Sdfg, report: PassReport, before: bool) -> None:
    if before:
        report.before_states = len(g.states)
        report.before_nodes = sum(len(s.nodes) for s in g.states)
    else:
        report.after_states = len(g.states)
        report.after_nodes = sum(len(s.nodes) for s in g.states)


# ---------------------------------------------------------------------------
# State fusion


def _merge_states(s1: State, s2: State) -> State | None:
    """Build the fused state (copy); None when sink/source matching is
    ambiguous."""
    bundle = copy.deepcopy((s1, s2))
    a, b = bundle
    merged = State(s1.label)
    b_nodes = b.sorted_nodes()
    b_edges = [(e.src, e.dst, e.memlet, e.src_conn, e.dst_conn) for e in b.edges]
    b_sources = {id(n) for n in b_nodes if isinstance(n, AccessNode) and not b.in_edges(n)}
    for n in a.sorted_nodes():
        n.nid = -1
        merged.add(n)
    merged.edges = list(a.edges)

    # terminal occurrence per container: the version of the data that is live
    # at the end of the first state (no other occurrence downstream of it)
    reach = merged.reachability()
    occs: dict[str, list[AccessNode]] = {}
    for n in merged.sorted_nodes():
        if isinstance(n, AccessNode):
            occs.setdefault(n.container, []).append(n)
    terminals: dict[str, list[AccessNode]] = {}
    for cont, nodes in occs.items():
        terminals[cont] = [
            u for u in nodes
            if not any(v is not u and v.nid in reach[u.nid] for v in nodes)
        ]

    written = {
        n.container
        for n in merged.sorted_nodes()
        if isinstance(n, AccessNode) and merged.in_edges(n)
    }
    fuse_map: dict[int, AccessNode] = {}  # id(b node) -> merged node
    for n in b_nodes:
        if id(n) in b_sources:
            if n.container not in written:
                continue  # read-only so far: a separate read occurrence is safe
            cands = terminals.get(n.container, [])
            if len(cands) > 1:
                return None  # ambiguous merge target
            if len(cands) == 1:
                fuse_map[id(n)] = cands[0]
    for n in b_nodes:
        if id(n) in fuse_map:
            continue
        n.nid = -1
        merged.add(n)
    for src, dst, m, sc, dc in b_edges:
        merged.edges.append(Edge(fuse_map.get(id(src), src), fuse_map.get(id(dst), dst),
                                 m, sc, dc))
    return merged


def state_fusion(g: Sdfg, s1_label: str, s2_label: str) -> bool:
    """Merge two sequential states when no data race can arise.

    Requires an unconditional, assignment-free transition that is the only
    edge out of the first state and into the second.  Sink access nodes of the
    first state fuse with matching source access nodes of the second; the
    merge is refused when any same-container access pair is left unordered
    with unprovable disjointness.
    """
    if s1_label == s2_label:
        return False
    try:
        s1, s2 = g.state(s1_label), g.state(s2_label)
    except KeyError:
        raise ValueError(f"invalid state ids {s1_label!r}, {s2_label!r}")
    between = [t for t in g.transitions if t.src == s1_label and t.dst == s2_label]
    if len(between) != 1:
        return False
    t = between[0]
    if t.condition is not None or t.assignments:
        return False
    if len(g.out_transitions(s1_label)) != 1 or len(g.in_transitions(s2_label)) != 1:
        return False

    merged = _merge_states(s1, s2)
    if merged is None:
        return False
    try:
        merged.topological()
    except ValueError:
        return False
    if unordered_hazards(merged, g.assumptions()):
        return False
    for entry in [n for n in merged.nodes.values() if isinstance(n, MapEntry)]:
        if entry.schedule is Schedule.PARALLEL and scope_cross_iteration_hazards(merged, entry):
            return False

    # commit
    idx = g.states.index(s1)
    g.states[idx] = merged
    g.states.remove(s2)
    g.transitions.remove(t)
    for tr in g.transitions:
        if tr.src == s2_label:
            tr.src = s1_label
        if tr.dst == s2_label:
            tr.dst = s1_label
    return True


# ---------------------------------------------------------------------------
# Redundant copy removal


def compose_subsets(outer: SubsetRange, inner: SubsetRange) -> SubsetRange:
    """Index the region selected by `outer` with relative coordinates `inner`."""
    assert outer.rank == inner.rank
    dims = []
    for (ob, oe, os), (ib, ie, istep) in zip(outer.dims, inner.dims):
        b = symbolic.simplify(ob + ib * os)
        e = symbolic.simplify(ob + ie * os)
        s = symbolic.simplify(os * istep)
        dims.append((b, e, s))
    return SubsetRange.make(dims)


def redundant_copy_removal(g: Sdfg) -> bool:
    """Remove a transient that only materializes a copy of another container,
    composing the read subsets onto the source."""
    for st in g.states:
        for node in st.sorted_nodes():
            if not isinstance(node, AccessNode):
                continue
            name = node.container
            desc = g.containers.get(name)
            if desc is None or not desc.transient:
                continue
            ins = st.in_edges(node)
            if len(ins) != 1:
                continue
            ce = ins[0]
            if not isinstance(ce.src, AccessNode) or ce.memlet is None:
                continue
            if ce.memlet.wcr is not None or ce.memlet.container != ce.src.container:
                continue
            src_name = ce.src.container
            # the copy must cover the whole transient
            copy_lens = tuple(map(str, ce.memlet.subset.lengths()))
            t_shape = tuple(map(str, (symbolic.simplify(d) for d in desc.shape)))
            if copy_lens != t_shape:
                continue
            # T must live entirely here: this single write, reads on this node only
            occs = [
                (s2, n2)
                for s2 in g.states
                for n2 in s2.nodes.values()
                if isinstance(n2, AccessNode) and n2.container == name
            ]
            if len(occs) != 1:
                continue
            # rewired readers attach to the copy's own source occurrence, so
            # only *other* written occurrences of the source can break ordering
            if any(
                st.in_edges(n2)
                for n2 in st.nodes.values()
                if isinstance(n2, AccessNode) and n2.container == src_name
                and n2 is not ce.src
            ):
                continue
            # rewire readers onto the copy source
            for e in list(st.out_edges(node)):
                if e.memlet is None or e.memlet.container != name:
                    return False  # unexpected shape; bail conservatively
                new_sub = compose_subsets(ce.memlet.subset, e.memlet.subset)
                st.add_edge(
                    ce.src, e.dst,
                    Memlet(src_name, new_sub, e.memlet.wcr),
                    ce.src_conn, e.dst_conn,
                )
                st.remove_edge(e)
            st.remove_edge(ce)
            st.remove_node(node)
            del g.containers[name]
            return True
    return False


# ---------------------------------------------------------------------------
# Nested-graph inlining


def inline_nested(g: Sdfg) -> bool:
    """Splice a single-state nested graph into its parent state."""
    for st in g.states:
        for node in st.sorted_nodes():
            if not isinstance(node, NestedSdfg):
                continue
            inner = node.sdfg
            if len(inner.states) != 1 or inner.transitions:
                continue
            _inline_one(g, st, node)
            return True
    return False


def _subst_expr(e: SymExpr, symmap: dict[str, SymExpr]) -> SymExpr:
    return symbolic.substitute(e, symmap)


def _subst_subset(sub: SubsetRange, symmap: dict[str, SymExpr]) -> SubsetRange:
    return sub.substitute(symmap)


def _inline_one(g: Sdfg, st: State, node: NestedSdfg) -> None:
    inner = node.sdfg
    istate = inner.states[0]
    symmap = dict(node.symbol_map)

    in_by_conn = {e.dst_conn: e for e in st.in_edges(node) if e.memlet is not None}
    out_by_conn = {e.src_conn: e for e in st.out_edges(node) if e.memlet is not None}

    # name mapping for containers
    rename: dict[str, tuple[str, SubsetRange | None]] = {}
    for cname, desc in inner.containers.items():
        if desc.transient:
            fresh = g.fresh_name(f"{inner.name}_{cname}")
            nd = copy.deepcopy(desc)
            nd.name = fresh
            nd.shape = tuple(_subst_expr(d, symmap) for d in nd.shape)
            g.add_container(nd)
            rename[cname] = (fresh, None)
        else:
            e = in_by_conn.get(cname) or out_by_conn.get(cname)
            if e is None:
                raise ValueError(f"nested connector '{cname}' unbound")
            rename[cname] = (e.memlet.container, e.memlet.subset)

    parents = istate.scope_parents()
    node_map: dict[int, object] = {}
    for n in istate.sorted_nodes():
        old_id = n.nid
        if isinstance(n, AccessNode):
            outer_name, _ = rename[n.container]
            is_source = not istate.in_edges(n)
            is_sink = not istate.out_edges(n)
            if n.container in in_by_conn and is_source and not inner.containers[n.container].transient:
                node_map[old_id] = in_by_conn[n.container].src
                continue
            if n.container in out_by_conn and is_sink and not inner.containers[n.container].transient:
                node_map[old_id] = out_by_conn[n.container].dst
                continue
            nn = AccessNode(outer_name)
            st.add(nn)
            node_map[old_id] = nn
            continue
        nn = copy.deepcopy(n)
        nn.nid = -1
        if isinstance(nn, MapEntry):
            nn.params = tuple(
                (p, tuple(_subst_expr(x, symmap) for x in rng)) for p, rng in nn.params
            )
        if isinstance(nn, Tasklet):
            tmap = {k: texpr.parse_texpr(str(v)) for k, v in symmap.items()}
            nn.code = tuple((c, texpr.subst_refs(e, tmap)) for c, e in nn.code)
        st.add(nn)
        node_map[old_id] = nn
    # fix MapExit entry links to the copied entries
    for n in istate.sorted_nodes():
        if isinstance(n, MapExit):
            copied = node_map[n.nid]
            copied.entry = node_map[n.entry.nid]

    for e in istate.edges:
        m = e.memlet
        new_m = None
        if m is not None:
            outer_name, outer_sub = rename[m.container]
            sub = _subst_subset(m.subset, symmap)
            if outer_sub is not None:
                sub = compose_subsets(outer_sub, sub)
            new_m = Memlet(outer_name, sub, m.wcr)
        st.add_edge(node_map[e.src.nid], node_map[e.dst.nid], new_m, e.src_conn, e.dst_conn)

    for e in list(st.in_edges(node)) + list(st.out_edges(node)):
        st.remove_edge(e)
    st.remove_node(node)


# ---------------------------------------------------------------------------
# Loop detection and loop-to-map


@dataclass
class LoopInfo:
    guard: str
    body: str
    var: str
    start: SymExpr
    stop: SymExpr  # exclusive bound from the guard condition
    step: int
    init_edge: object
    back_edge: object
    body_edge: object
    exit_edge: object


def find_loops(g: Sdfg) -> list[LoopInfo]:
    """Guard/body patterns with conditions and increments on the transitions."""
    loops = []
    for st in g.states:
        outs = g.out_transitions(st.label)
        ins = g.in_transitions(st.label)
        if len(outs) != 2 or len(ins) != 2:
            continue
        body_t = exit_t = None
        for t in outs:
            if t.condition is None:
                continue
            c = t.condition
            if isinstance(c, TBin) and c.op in ("<", ">") and isinstance(c.left, TRef):
                body_t = t
            else:
                exit_t = t
        if body_t is None or exit_t is None or body_t.assignments:
            continue
        var = body_t.condition.left.name
        if var in exit_t.assignments:
            continue
        init_t = back_t = None
        for t in ins:
            if var in t.assignments:
                expr = t.assignments[var]
                delta = symbolic.simplify(expr - Sym(var))
                if isinstance(delta, Const) and t.src == body_t.dst:
                    back_t = t
                elif var not in expr.free_symbols():
                    init_t = t
        if init_t is None or back_t is None:
            continue
        body_label = body_t.dst
        if body_label == st.label:
            continue
        # single-state body: body's only transitions are guard->body->guard
        if [t.src for t in g.in_transitions(body_label)] != [st.label]:
            continue
        bouts = g.out_transitions(body_label)
        if len(bouts) != 1 or bouts[0] is not back_t:
            continue
        step = symbolic.simplify(back_t.assignments[var] - Sym(var))
        try:
            stop = symbolic.parse_expr(texpr.to_text(body_t.condition.right))
        except symbolic.ExprSyntaxError:
            continue
        if body_t.condition.op == ">":
            if not (isinstance(step, Const) and step.value < 0):
                continue
        loops.append(
            LoopInfo(
                st.label, body_label, var, init_t.assignments[var], stop,
                step.value, init_t, back_t, body_t, exit_t,
            )
        )
    return loops


def _body_access_sets(state: State):
    reads: dict[str, list[Memlet]] = {}
    writes: dict[str, list[Memlet]] = {}
    for n in state.sorted_nodes():
        if not isinstance(n, AccessNode):
            continue
        for e in state.in_edges(n):
            if e.memlet is not None:
                writes.setdefault(n.container, []).append(e.memlet)
        for e in state.out_edges(n):
            if e.memlet is not None:
                reads.setdefault(n.container, []).append(e.memlet)
    return reads, writes


def _reduction_op(tasklet: Tasklet, conn: str) -> tuple[Wcr, TExpr] | None:
    """Match `out = <conn> ⊕ rest` (or symmetric) for a commutative ⊕."""
    if len(tasklet.code) != 1:
        return None
    _, code = tasklet.code[0]
    if not isinstance(code, TBin) or code.op not in ("+", "*"):
        return None
    wcr = Wcr.ADD if code.op == "+" else Wcr.MUL
    for mine, rest in ((code.left, code.right), (code.right, code.left)):
        if isinstance(mine, TRef) and mine.name == conn and conn not in rest.free_names():
            return wcr, rest
    return None


def loop_to_map(g: Sdfg, loop: LoopInfo, report: PassReport | None = None) -> bool:
    """Convert an affine unit-step loop into a parallel map when provably safe.

    Safe means: for iterations `i` and `i + k` (k >= 1), writes are disjoint
    from the other iteration's reads and writes; containers violating this are
    admitted only as same-operator reductions (turned into wcr) or as
    write-before-read transients private to the body (privatized per
    iteration).  UNKNOWN verdicts refuse the conversion.
    """
    applied = _loop_to_map(g, loop)
    if report is not None:
        report.loop_decisions.append((loop.guard, applied))
        if applied:
            report.count("loop_to_map")
    if applied:
        # fold away the trivial states the loop construction left behind
        label = loop.body
        for pred in [t.src for t in g.in_transitions(label)]:
            if state_fusion(g, pred, label):
                label = pred
                if report is not None:
                    report.count("state_fusion")
                break
        for succ in [t.dst for t in g.out_transitions(label)]:
            if state_fusion(g, label, succ):
                if report is not None:
                    report.count("state_fusion")
                break
    return applied


def _loop_to_map(g: Sdfg, loop: LoopInfo) -> bool:
    if loop.step != 1:
        return False
    body = g.state(loop.body)
    var = loop.var
    a = g.assumptions()
    delta = "__iter_delta"
    a = a.with_bound(delta, 1)
    a = a.with_bound(var, g.symbols.get(var, 0))
    shift = {var: Sym(var) + Sym(delta)}

    reads, writes = _body_access_sets(body)
    reductions: dict[str, Wcr] = {}
    private: set[str] = set()
    for cont in sorted(writes):
        ws = writes[cont]
        others = ws + reads.get(cont, [])
        conflict = False
        for w in ws:
            for x in others:
                d1 = symbolic.disjoint(w.subset, x.subset.substitute(shift), a)
                d2 = symbolic.disjoint(x.subset, w.subset.substitute(shift), a)
                if d1 is not Ternary.TRUE or d2 is not Ternary.TRUE:
                    conflict = True
                    break
            if conflict:
                break
        if not conflict:
            continue
        wcr = _container_reduction(body, cont)
        if wcr is not None:
            reductions[cont] = wcr
            continue
        if _privatizable(g, body, cont, a):
            private.add(cont)
            continue
        return False

    # occurrences that are both read and written stay inside the scope, which
    # only privatized containers support
    for n in body.sorted_nodes():
        if not isinstance(n, AccessNode) or n.container in private:
            continue
        if n.container in reductions:
            continue
        if body.in_edges(n) and body.out_edges(n):
            return False

    _convert_loop(g, loop, reductions, private)
    return True


def _container_reduction(body: State, cont: str) -> Wcr | None:
    """All writes are `x ⊕= f(..)` read-modify-write tasklets with one ⊕,
    where `f` never reads the reduced container itself."""
    ops: set[Wcr] = set()
    for n in body.sorted_nodes():
        if not isinstance(n, AccessNode) or n.container != cont:
            continue
        for e in body.in_edges(n):
            if e.memlet is None or not isinstance(e.src, Tasklet):
                return None
            conn = _sole_read_conn(body, e.src, cont)
            if conn is None:
                return None
            red = _reduction_op(e.src, conn)
            if red is None:
                return None
            ops.add(red[0])
        for e in body.out_edges(n):
            # every read must be the read-modify connector of a reducing tasklet
            if not isinstance(e.dst, Tasklet):
                return None
            if _sole_read_conn(body, e.dst, cont) != e.dst_conn:
                return None
            if _reduction_op(e.dst, e.dst_conn) is None:
                return None
    if len(ops) != 1:
        return None
    return ops.pop()


def _sole_read_conn(body: State, tasklet: Tasklet, cont: str) -> str | None:
    conns = [e.dst_conn for e in body.in_edges(tasklet)
             if e.memlet is not None and e.memlet.container == cont]
    return conns[0] if len(conns) == 1 else None


def _read_conn(body: State, tasklet: Tasklet, cont: str) -> str:
    for e in body.in_edges(tasklet):
        if e.memlet is not None and e.memlet.container == cont:
            return e.dst_conn
    return ""


def _privatizable(g: Sdfg, body: State, cont: str, a) -> bool:
    desc = g.containers.get(cont)
    if desc is None or not desc.transient:
        return False
    for st in g.states:
        if st is body:
            continue
        if any(isinstance(n, AccessNode) and n.container == cont for n in st.nodes.values()):
            return False
    reads_sub = []
    writes_sub = []
    for n in body.sorted_nodes():
        if not isinstance(n, AccessNode) or n.container != cont:
            continue
        if not body.in_edges(n) and body.out_edges(n):
            return False  # read before any write
        writes_sub += [e.memlet.subset for e in body.in_edges(n) if e.memlet]
        reads_sub += [e.memlet.subset for e in body.out_edges(n) if e.memlet]
    for r in reads_sub:
        if not any(symbolic.covers(w, r, a) is Ternary.TRUE for w in writes_sub):
            return False
    return True


def _convert_loop(g: Sdfg, loop: LoopInfo, reductions: dict[str, Wcr], private: set[str]) -> None:
    body = g.state(loop.body)
    var = loop.var
    end = symbolic.simplify(loop.stop - 1)
    params = ((var, (loop.start, end, Const(1))),)

    # rewrite reducing tasklets to wcr form before moving nodes: out = in ⊕ f
    # becomes out = f with a wcr(⊕) write
    for cont in reductions:
        for n in body.sorted_nodes():
            if not isinstance(n, AccessNode) or n.container != cont:
                continue
            for e in body.in_edges(n):
                t = e.src
                assert isinstance(t, Tasklet)
                red = _reduction_op(t, _read_conn(body, t, cont))
                assert red is not None
                out_conn_, _ = t.code[0]
                _, rest = red
                t.code = ((out_conn_, rest),)
                t.inputs = tuple(i for i in t.inputs if i in rest.free_names())

    new = State(body.label)
    entry = new.add(MapEntry(params, Schedule.PARALLEL))
    exit_node = new.add(MapExit(entry))

    body_nodes = body.sorted_nodes()
    body_edges = [(e.src, e.dst, e.memlet, e.src_conn, e.dst_conn) for e in body.edges]
    body_ins = {id(n): bool(body.in_edges(n)) for n in body_nodes}

    node_map: dict[int, object] = {}  # id(body node) -> new node
    dropped: set[int] = set()
    outer_sources: set[int] = set()
    outer_sinks: set[int] = set()
    for n in body_nodes:
        if isinstance(n, AccessNode) and n.container in reductions and not body_ins[id(n)]:
            dropped.add(id(n))  # the read side of a reduction disappears
            continue
        if isinstance(n, AccessNode) and n.container not in private:
            acc = AccessNode(n.container)
            new.add(acc)
            (outer_sinks if body_ins[id(n)] else outer_sources).add(id(n))
            node_map[id(n)] = acc
        else:
            n.nid = -1
            new.add(n)
            node_map[id(n)] = n

    conn = [0]

    def fresh_conn():
        conn[0] += 1
        return f"L{conn[0]}"

    for bsrc, bdst, m, sc, dc in body_edges:
        if id(bsrc) in dropped or id(bdst) in dropped:
            continue  # read edges of reduction containers are dropped
        src = node_map[id(bsrc)]
        dst = node_map[id(bdst)]
        if id(bsrc) in outer_sources:
            c = fresh_conn()
            outer = propagate_subset(m.subset, params)
            new.add_edge(src, entry, Memlet(m.container, outer), dst_conn=f"IN_{c}")
            new.add_edge(entry, dst, Memlet(m.container, m.subset, m.wcr),
                         src_conn=f"OUT_{c}", dst_conn=dc)
            continue
        if id(bdst) in outer_sinks:
            c = fresh_conn()
            wcr = reductions.get(m.container, m.wcr)
            outer = propagate_subset(m.subset, params)
            new.add_edge(src, exit_node, Memlet(m.container, m.subset, wcr),
                         src_conn=sc, dst_conn=f"IN_{c}")
            new.add_edge(exit_node, dst, Memlet(m.container, outer, wcr),
                         src_conn=f"OUT_{c}")
            continue
        new.add_edge(src, dst, m, sc, dc)

    # tasklets with no remaining inputs still need a scope dependency
    for n in list(new.sorted_nodes()):
        if isinstance(n, (AccessNode, MapEntry, MapExit)):
            continue
        if not new.in_edges(n):
            new.add_edge(entry, n)

    # splice into the control-flow graph
    idx = g.states.index(body)
    g.states[idx] = new
    guard = g.state(loop.guard)
    g.states.remove(guard)
    init_assign = {k: v for k, v in loop.init_edge.assignments.items() if k != var}
    g.transitions.remove(loop.init_edge)
    g.transitions.remove(loop.back_edge)
    g.transitions.remove(loop.body_edge)
    g.transitions.remove(loop.exit_edge)
    if loop.init_edge.src == loop.guard:
        raise ValueError("self-looping guard cannot be converted")
    g.add_transition(loop.init_edge.src, new.label, loop.init_edge.condition, init_assign)
    g.add_transition(new.label, loop.exit_edge.dst, None, loop.exit_edge.assignments)
    if g.start == loop.guard:
        g.start = new.label


def reversed_loop_clone(g: Sdfg, guard_label: str) -> Sdfg:
    """Clone the graph with one loop running its iterations in reverse order.

    This is the brute-force dependence oracle: an order-insensitive loop gives
    identical results under the reversed clone.
    """
    clone = g.copy()
    loops = [l for l in find_loops(clone) if l.guard == guard_label]
    if not loops:
        raise ValueError(f"no loop with guard '{guard_label}'")
    loop = loops[0]
    s = loop.step
    start, stop = loop.start, loop.stop
    if s > 0:
        last = symbolic.simplify(start + ((stop - start - 1) // Const(s)) * Const(s))
        cond = TBin(">=", TRef(loop.var), texpr.parse_texpr(str(start)))
    else:
        last = symbolic.simplify(start + ((stop - start + 1) // Const(s)) * Const(s))
        cond = TBin("<=", TRef(loop.var), texpr.parse_texpr(str(start)))
    loop.init_edge.assignments[loop.var] = last
    loop.back_edge.assignments[loop.var] = symbolic.simplify(Sym(loop.var) - Const(s))
    loop.body_edge.condition = cond
    loop.exit_edge.condition = texpr.negated(cond)
    return clone


# ---------------------------------------------------------------------------
# Coarsening driver


def coarsen(g: Sdfg) -> PassReport:
    """Fixed-point application of state fusion, redundant copy removal, and
    nested-graph inlining, in deterministic order."""
    report = PassReport()
    _snapshot(g, report, before=True)
    budget = graph_measure(g)
    while True:
        measure = graph_measure(g)
        changed = False
        for t in sorted(
            list(g.transitions),
            key=lambda t: ([s.label for s in g.states].index(t.src),
                           [s.label for s in g.states].index(t.dst)),
        ):
            if t not in g.transitions:
                continue
            if state_fusion(g, t.src, t.dst):
                report.count("state_fusion")
                changed = True
                break
        if not changed and redundant_copy_removal(g):
            report.count("redundant_copy_removal")
            changed = True
        if not changed and inline_nested(g):
            report.count("inline_nested")
            changed = True
        if not changed:
            break
        new_measure = graph_measure(g)
        assert new_measure < measure, "coarsening step failed to shrink the graph"
        assert report.total <= budget, "coarsening exceeded its termination budget"
    _snapshot(g, report, before=False)
    return report
