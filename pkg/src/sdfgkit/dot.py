"""Graphviz rendering: states as clusters, access nodes as ovals, tasklets as
octagons, library nodes as folded boxes, map entry/exit as trapezia; memlets
with write-conflict resolution are drawn dashed."""

from __future__ import annotations

from . import texpr
from .ir import (
    AccessNode, LibraryNode, MapEntry, MapExit, NestedSdfg, Sdfg, Tasklet,
)


def _esc(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _node_decl(state_ix: int, n) -> str:
    nid = f"n{state_ix}_{n.nid}"
    if isinstance(n, AccessNode):
        return f'{nid} [shape=oval, label="{_esc(n.container)}"];'
    if isinstance(n, Tasklet):
        body = "; ".join(f"{c} = {texpr.to_text(e)}" for c, e in n.code)
        return f'{nid} [shape=octagon, label="{_esc(body)}"];'
    if isinstance(n, MapEntry):
        rng = ", ".join(f"{p}={b}:{e}:{s}" for p, (b, e, s) in n.params)
        return f'{nid} [shape=trapezium, label="map[{_esc(rng)}] ({n.schedule.value})"];'
    if isinstance(n, MapExit):
        return f'{nid} [shape=invtrapezium, label="map exit"];'
    if isinstance(n, LibraryNode):
        return f'{nid} [shape=folder, label="{_esc(n.kind.value)}"];'
    if isinstance(n, NestedSdfg):
        return f'{nid} [shape=box, peripheries=2, label="nested: {_esc(n.sdfg.name)}"];'
    raise TypeError(type(n).__name__)


def to_dot(g: Sdfg) -> str:
    """Render the graph as Graphviz text (deterministic)."""
    lines = [f'digraph "{_esc(g.name)}" {{', "  compound=true;"]
    anchors: dict[str, str] = {}
    for six, st in enumerate(g.states):
        lines.append(f"  subgraph cluster_{six} {{")
        lines.append(f'    label="{_esc(st.label)}"; style=filled; color=lightblue2; fillcolor=azure;')
        nodes = st.sorted_nodes()
        if not nodes:
            lines.append(f'    empty_{six} [shape=point, style=invis];')
            anchors[st.label] = f"empty_{six}"
        else:
            anchors[st.label] = f"n{six}_{nodes[0].nid}"
        for n in nodes:
            lines.append("    " + _node_decl(six, n))
        for e in st.edges:
            attrs = []
            if e.memlet is not None:
                attrs.append(f'label="{_esc(str(e.memlet))}"')
                if e.memlet.wcr is not None:
                    attrs.append("style=dashed")
                    attrs.append(f'taillabel="wcr:{e.memlet.wcr.value}"')
            else:
                attrs.append("style=dotted")
            lines.append(
                f"    n{six}_{e.src.nid} -> n{six}_{e.dst.nid} [{', '.join(attrs)}];"
            )
        lines.append("  }")
    state_ix = {st.label: i for i, st in enumerate(g.states)}
    for t in g.transitions:
        label_parts = []
        if t.condition is not None:
            label_parts.append(texpr.to_text(t.condition))
        for k, v in t.assignments.items():
            label_parts.append(f"{k} = {v}")
        label = _esc("; ".join(label_parts))
        lines.append(
            f'  {anchors[t.src]} -> {anchors[t.dst]} '
            f"[ltail=cluster_{state_ix[t.src]}, lhead=cluster_{state_ix[t.dst]}, "
            f'color=blue, label="{label}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"
