"""Direct big-step evaluation of the DSL AST over numpy arrays.

This evaluator is the independent reference for the whole pipeline: it never
touches the graph IR, the symbolic engine, or the interpreter.  Slices are
evaluated with raw Python/numpy semantics (including negative indices), so it
also cross-checks the frontend's symbolic slice rewriting.
"""

from __future__ import annotations

import math

import numpy as np

from .dsl_ast import (
    EBin, ECall, EName, ENum, ESlice, ESub, EUn, Expr, Program,
    SAssign, SCall, SFor, SIf, SReturn, Stmt,
)

_NP_DTYPES = {"f64": np.float64, "i64": np.int64, "i32": np.int32}

_SCALAR_FNS = {
    "sqrt": math.sqrt, "exp": math.exp, "abs": abs, "pow": pow,
    "min": min, "max": max,
}


class OracleError(ValueError):
    pass


class _Frame:
    def __init__(self):
        self.values: dict[str, object] = {}  # arrays, floats, ints


def evaluate_program(
    program: Program,
    symbols: dict[str, int],
    inputs: dict[str, np.ndarray | float],
    function: str | None = None,
) -> dict[str, np.ndarray]:
    """Run the entry function on copies of the inputs; returns all parameter
    containers (arrays as ndarrays, scalars as 0-d float64 arrays)."""
    f = program.function(function) if function else program.entry
    ev = _Evaluator(program, symbols)
    frame = _Frame()
    outputs: dict[str, np.ndarray] = {}
    for p in f.params:
        if p.shape:
            if p.name not in inputs:
                raise OracleError(f"missing input array '{p.name}'")
            arr = np.array(inputs[p.name], dtype=_NP_DTYPES[p.dtype])
            want = tuple(ev.eval_index_static(d, frame) for d in p.shape)
            if arr.shape != want:
                raise OracleError(f"input '{p.name}' has shape {arr.shape}, want {want}")
            frame.values[p.name] = arr
            outputs[p.name] = arr
        elif p.dtype in ("i64", "i32"):
            if p.name not in symbols:
                raise OracleError(f"missing integer binding '{p.name}'")
            frame.values[p.name] = int(symbols[p.name])
        else:
            if p.name not in inputs:
                raise OracleError(f"missing scalar input '{p.name}'")
            box = np.array(float(np.asarray(inputs[p.name]).reshape(())), dtype=np.float64)
            frame.values[p.name] = box
            outputs[p.name] = box
    ev.exec_block(f.body, frame)
    return outputs


class _Evaluator:
    def __init__(self, program: Program, symbols: dict[str, int]):
        self.program = program
        self.symbols = dict(symbols)
        self.functions = {f.name: f for f in program.functions}

    # -- statements ------------------------------------------------------------

    def exec_block(self, stmts: list[Stmt], frame: _Frame) -> None:
        for s in stmts:
            self.exec_stmt(s, frame)

    def exec_stmt(self, s: Stmt, frame: _Frame) -> None:
        if isinstance(s, SAssign):
            self.exec_assign(s, frame)
        elif isinstance(s, SFor) and s.kind == "range":
            start = self.eval_index(s.ranges[0], frame) if s.ranges[0] is not None else 0
            stop = self.eval_index(s.ranges[1], frame)
            step = self.eval_index(s.ranges[2], frame) if s.ranges[2] is not None else 1
            var = s.names[0]
            for v in range(start, stop, step):
                frame.values[var] = v
                self.exec_block(s.body, frame)
            frame.values.pop(var, None)
        elif isinstance(s, SFor):
            ranges = []
            for r in s.ranges:
                assert isinstance(r, ESlice)
                lo = self.eval_index(r.lo, frame) if r.lo is not None else 0
                hi = self.eval_index(r.hi, frame)
                st = self.eval_index(r.step, frame) if r.step is not None else 1
                ranges.append(range(lo, hi, st))
            self._run_map(s, ranges, 0, frame)
        elif isinstance(s, SIf):
            if self.eval_expr(s.cond, frame):
                self.exec_block(s.then, frame)
            else:
                self.exec_block(s.orelse, frame)
        elif isinstance(s, SCall):
            self.exec_call(s, frame)
        elif isinstance(s, SReturn):
            pass

    def _run_map(self, s: SFor, ranges: list[range], depth: int, frame: _Frame) -> None:
        if depth == len(ranges):
            self.exec_block(s.body, frame)
            return
        var = s.names[depth]
        for v in ranges[depth]:
            frame.values[var] = v
            self._run_map(s, ranges, depth + 1, frame)
        frame.values.pop(var, None)

    def exec_assign(self, s: SAssign, frame: _Frame) -> None:
        value = self.eval_expr(s.value, frame)
        if isinstance(s.target, EName):
            name = s.target.id
            if s.op == "=":
                cur = frame.values.get(name)
                if isinstance(cur, np.ndarray) and cur.shape == ():
                    cur[()] = value  # keep scalar parameter boxes in place
                else:
                    frame.values[name] = value
            else:
                cur = frame.values[name]
                new = self._combine(s.op, cur, value)
                if isinstance(cur, np.ndarray) and cur.shape == ():
                    cur[()] = new
                else:
                    frame.values[name] = new
            return
        assert isinstance(s.target, ESub)
        arr = frame.values[s.target.base]
        if not isinstance(arr, np.ndarray):
            raise OracleError(f"'{s.target.base}' is not an array")
        key = self._subscript_key(s.target, frame)
        if s.op == "=":
            arr[key] = value
        elif s.op == "+=":
            arr[key] += value
        elif s.op == "-=":
            arr[key] -= value
        elif s.op == "*=":
            arr[key] *= value

    def exec_call(self, s: SCall, frame: _Frame) -> None:
        if s.fn.startswith("comm_"):
            raise OracleError("communication statements have no shared-memory oracle")
        callee = self.functions[s.fn]
        sub = _Frame()
        for p, a in zip(callee.params, s.args):
            v = self.eval_expr(a, frame)
            if p.shape:
                if not isinstance(v, np.ndarray):
                    raise OracleError(f"argument '{p.name}' must be an array")
                sub.values[p.name] = v  # by reference
            elif p.dtype in ("i64", "i32"):
                sub.values[p.name] = int(v)
            else:
                sub.values[p.name] = np.array(float(v), dtype=np.float64)
        self.exec_block(callee.body, sub)

    # -- expressions -------------------------------------------------------------

    def eval_index_static(self, e: Expr, frame: _Frame) -> int:
        return self.eval_index(e, frame)

    def eval_index(self, e: Expr, frame: _Frame) -> int:
        v = self.eval_expr(e, frame)
        if isinstance(v, np.ndarray):
            v = v[()]
        return int(v)

    def _subscript_key(self, e: ESub, frame: _Frame):
        key = []
        for ix in e.indices:
            if isinstance(ix, ESlice):
                lo = self.eval_index(ix.lo, frame) if ix.lo is not None else None
                hi = self.eval_index(ix.hi, frame) if ix.hi is not None else None
                st = self.eval_index(ix.step, frame) if ix.step is not None else None
                key.append(slice(lo, hi, st))
            else:
                key.append(self.eval_index(ix, frame))
        return tuple(key)

    def _combine(self, op: str, a, b):
        if op == "+=":
            return a + b
        if op == "-=":
            return a - b
        return a * b

    def eval_expr(self, e: Expr, frame: _Frame):
        if isinstance(e, ENum):
            return float(e.value) if e.is_float else e.value
        if isinstance(e, EName):
            if e.id in frame.values:
                v = frame.values[e.id]
                if isinstance(v, np.ndarray) and v.shape == ():
                    return v[()]
                return v
            if e.id in self.symbols:
                return int(self.symbols[e.id])
            raise OracleError(f"unbound name '{e.id}'")
        if isinstance(e, ESub):
            arr = frame.values[e.base]
            return arr[self._subscript_key(e, frame)]
        if isinstance(e, EUn):
            v = self.eval_expr(e.operand, frame)
            return (not v) if e.op == "not" else -v
        if isinstance(e, EBin):
            if e.op == "and":
                return bool(self.eval_expr(e.left, frame)) and bool(
                    self.eval_expr(e.right, frame))
            if e.op == "or":
                return bool(self.eval_expr(e.left, frame)) or bool(
                    self.eval_expr(e.right, frame))
            a = self.eval_expr(e.left, frame)
            b = self.eval_expr(e.right, frame)
            return {
                "+": lambda: a + b,
                "-": lambda: a - b,
                "*": lambda: a * b,
                "/": lambda: a / b,
                "//": lambda: a // b,
                "@": lambda: a @ b,
                "<": lambda: a < b,
                "<=": lambda: a <= b,
                ">": lambda: a > b,
                ">=": lambda: a >= b,
                "==": lambda: a == b,
                "!=": lambda: a != b,
            }[e.op]()
        if isinstance(e, ECall):
            if e.fn == "sum":
                x = self.eval_expr(e.args[0], frame)
                if len(e.args) > 1:
                    return np.sum(x, axis=self.eval_index(e.args[1], frame))
                return np.sum(x)
            if e.fn in _SCALAR_FNS:
                return _SCALAR_FNS[e.fn](*(self.eval_expr(a, frame) for a in e.args))
            if e.fn in ("zeros", "empty"):
                shape = tuple(self.eval_index(a, frame) for a in e.args)
                return np.zeros(shape, dtype=np.float64)
            if e.fn == "requests":
                return np.zeros((self.eval_index(e.args[0], frame),), dtype=np.int64)
            if e.fn in ("block_scatter", "block_gather"):
                raise OracleError("communication has no shared-memory oracle")
            raise OracleError(f"unknown function '{e.fn}'")
        raise OracleError(f"cannot evaluate {type(e).__name__}")
