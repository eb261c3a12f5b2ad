"""JSON (de)serialization of program graphs.

Schema (version 1):

    {"version": 1, "name": ...,
     "symbols":     [{"name": "N", "min": 1}, ...],
     "containers":  [{"name", "dtype", "shape": ["N", ...], "kind",
                      "transient", "lifetime", "storage"}, ...],
     "states":      [{"label", "nodes": [...], "edges": [...]}, ...],
     "transitions": [{"src", "dst", "condition", "assignments"}, ...],
     "start": "s0"}

Subsets are serialized as text (``"A[1:N-1:1, 0:M-1:1]"``), expressions with
the grammar from :mod:`sdfgkit.symbolic`, tasklet code and conditions with the
grammar from :mod:`sdfgkit.texpr`.
"""

from __future__ import annotations

import json
import re
from typing import Any

from . import ir, symbolic, texpr
from .ir import (
    AccessNode, DataDescriptor, DataKind, DType, Edge, InterstateEdge, LibKind,
    LibraryNode, Lifetime, MapEntry, MapExit, Memlet, NestedSdfg, Schedule, Sdfg,
    State, Storage, Tasklet, Wcr,
)
from .symbolic import SubsetRange, SymExpr

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def memlet_to_text(m: Memlet) -> str:
    return f"{m.container}[{m.subset}]"


_MEMLET_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z_0-9]*)\s*\[(.*)\]\s*$")


def memlet_from_text(text: str, wcr: str | None = None, volume: str | None = None) -> Memlet:
    m = _MEMLET_RE.match(text)
    if not m:
        raise SchemaError(f"bad memlet text {text!r}")
    subset = symbolic.parse_subset(m.group(2))
    return Memlet(
        m.group(1),
        subset,
        Wcr(wcr) if wcr else None,
        symbolic.simplify(symbolic.parse_expr(volume)) if volume else None,
    )


def _attr_to_json(v):
    if isinstance(v, SymExpr):
        return {"$expr": str(v)}
    if isinstance(v, SubsetRange):
        return {"$subset": str(v)}
    if isinstance(v, (list, tuple)):
        return [_attr_to_json(x) for x in v]
    if isinstance(v, dict):
        return {k: _attr_to_json(x) for k, x in v.items()}
    return v


def _attr_from_json(v):
    if isinstance(v, dict):
        if set(v) == {"$expr"}:
            return symbolic.simplify(symbolic.parse_expr(v["$expr"]))
        if set(v) == {"$subset"}:
            return symbolic.parse_subset(v["$subset"])
        return {k: _attr_from_json(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_attr_from_json(x) for x in v]
    return v


def _node_to_json(n, pos: dict[int, int]) -> dict:
    if isinstance(n, AccessNode):
        return {"id": pos[n.nid], "type": "access", "container": n.container}
    if isinstance(n, Tasklet):
        return {
            "id": pos[n.nid],
            "type": "tasklet",
            "name": n.name,
            "ins": list(n.inputs),
            "outs": list(n.outputs),
            "code": [[c, texpr.to_text(e)] for c, e in n.code],
        }
    if isinstance(n, MapEntry):
        return {
            "id": pos[n.nid],
            "type": "map_entry",
            "params": [[p, f"{b}:{e}:{s}"] for p, (b, e, s) in n.params],
            "schedule": n.schedule.value,
            "tiled": n.tiled,
        }
    if isinstance(n, MapExit):
        return {"id": pos[n.nid], "type": "map_exit", "entry": pos[n.entry.nid]}
    if isinstance(n, LibraryNode):
        return {
            "id": pos[n.nid],
            "type": "library",
            "kind": n.kind.value,
            "name": n.name,
            "attrs": _attr_to_json(n.attributes),
        }
    if isinstance(n, NestedSdfg):
        return {
            "id": pos[n.nid],
            "type": "nested",
            "sdfg": to_dict(n.sdfg),
            "symbol_map": {k: str(v) for k, v in n.symbol_map.items()},
        }
    raise TypeError(type(n).__name__)


def _state_to_json(st: State) -> dict:
    nodes = st.sorted_nodes()
    pos = {n.nid: i for i, n in enumerate(nodes)}
    edges = []
    for e in st.edges:
        d: dict[str, Any] = {"src": pos[e.src.nid], "dst": pos[e.dst.nid]}
        if e.src_conn:
            d["src_conn"] = e.src_conn
        if e.dst_conn:
            d["dst_conn"] = e.dst_conn
        if e.memlet is not None:
            d["memlet"] = memlet_to_text(e.memlet)
            if e.memlet.wcr is not None:
                d["wcr"] = e.memlet.wcr.value
            d["volume"] = str(e.memlet.volume)
        edges.append(d)
    return {
        "label": st.label,
        "nodes": [_node_to_json(n, pos) for n in nodes],
        "edges": edges,
    }


def to_dict(g: Sdfg) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "name": g.name,
        "symbols": [{"name": k, "min": v} for k, v in g.symbols.items()],
        "containers": [
            {
                "name": d.name,
                "dtype": d.dtype.value,
                "shape": [str(s) for s in d.shape],
                "kind": d.kind.value,
                "transient": d.transient,
                "lifetime": d.lifetime.value,
                "storage": d.storage.value,
            }
            for d in g.containers.values()
        ],
        "states": [_state_to_json(s) for s in g.states],
        "transitions": [
            {
                "src": t.src,
                "dst": t.dst,
                "condition": texpr.to_text(t.condition) if t.condition is not None else None,
                "assignments": {k: str(v) for k, v in t.assignments.items()},
            }
            for t in g.transitions
        ],
        "start": g.start,
    }


def serialize(g: Sdfg) -> str:
    """Serialize to JSON text; the graph should validate without errors."""
    return json.dumps(to_dict(g), indent=2) + "\n"


def _state_from_json(d: dict) -> State:
    st = State(d["label"])
    nodes: list = []
    pending_exits: list[tuple[MapExit, int]] = []
    for nd in d["nodes"]:
        t = nd["type"]
        if t == "access":
            node = AccessNode(nd["container"])
        elif t == "tasklet":
            node = Tasklet(
                nd.get("name", "t"),
                tuple(nd["ins"]),
                tuple(nd["outs"]),
                tuple((c, texpr.parse_texpr(e)) for c, e in nd["code"]),
            )
        elif t == "map_entry":
            params = []
            for p, rng in nd["params"]:
                sub = symbolic.parse_subset(rng)
                params.append((p, sub.dims[0]))
            node = MapEntry(tuple(params), Schedule(nd["schedule"]), nd.get("tiled", False))
        elif t == "map_exit":
            node = MapExit(None)  # type: ignore[arg-type]
            pending_exits.append((node, nd["entry"]))
        elif t == "library":
            node = LibraryNode(LibKind(nd["kind"]), nd.get("name", ""),
                               _attr_from_json(nd.get("attrs", {})))
        elif t == "nested":
            node = NestedSdfg(
                from_dict(nd["sdfg"]),
                {k: symbolic.simplify(symbolic.parse_expr(v))
                 for k, v in nd["symbol_map"].items()},
            )
        else:
            raise SchemaError(f"unknown node type {t!r}")
        st.add(node)
        nodes.append(node)
    for ex, entry_pos in pending_exits:
        entry = nodes[entry_pos]
        if not isinstance(entry, MapEntry):
            raise SchemaError("map_exit does not reference a map_entry")
        ex.entry = entry
    for ed in d["edges"]:
        memlet = None
        if "memlet" in ed:
            memlet = memlet_from_text(ed["memlet"], ed.get("wcr"), ed.get("volume"))
        st.add_edge(
            nodes[ed["src"]],
            nodes[ed["dst"]],
            memlet,
            ed.get("src_conn"),
            ed.get("dst_conn"),
        )
    return st


def from_dict(d: dict) -> Sdfg:
    if not isinstance(d, dict) or "version" not in d:
        raise SchemaError("not a serialized graph (missing version)")
    if d["version"] != SCHEMA_VERSION:
        raise SchemaError(f"schema version {d['version']} unsupported (want {SCHEMA_VERSION})")
    try:
        g = Sdfg(d["name"])
        for s in d["symbols"]:
            g.symbols[s["name"]] = s["min"]
        for c in d["containers"]:
            g.containers[c["name"]] = DataDescriptor(
                c["name"],
                DType(c["dtype"]),
                tuple(symbolic.parse_expr(s) for s in c["shape"]),
                DataKind(c["kind"]),
                c["transient"],
                Lifetime(c["lifetime"]),
                Storage(c["storage"]),
            )
        for sd in d["states"]:
            g.states.append(_state_from_json(sd))
        for td in d["transitions"]:
            g.transitions.append(
                InterstateEdge(
                    td["src"],
                    td["dst"],
                    texpr.parse_texpr(td["condition"]) if td.get("condition") else None,
                    {k: symbolic.simplify(symbolic.parse_expr(v))
                     for k, v in td["assignments"].items()},
                )
            )
        g.start = d["start"]
    except (KeyError, TypeError, IndexError, ValueError) as ex:
        if isinstance(ex, SchemaError):
            raise
        raise SchemaError(f"malformed graph document: {ex}") from ex
    return g


def deserialize(text: str) -> Sdfg:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as ex:
        raise SchemaError(f"invalid JSON: {ex}") from ex
    return from_dict(doc)
