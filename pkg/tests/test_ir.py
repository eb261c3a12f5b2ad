import numpy as np
import pytest

from sdfgkit import frontend
from sdfgkit.ir import (
    AccessNode, DataDescriptor, DataKind, DType, LibKind, LibraryNode, MapEntry,
    MapExit, Memlet, Schedule, Sdfg, Tasklet, Wcr, structural_eq,
)
from sdfgkit.symbolic import Const, SubsetRange, Sym
from sdfgkit.texpr import TBin, TNum, TRef

from conftest import compile_kernel


def build_race_graph() -> Sdfg:
    """Two unguarded whole-container writes in one state."""
    g = Sdfg("race")
    g.add_symbol("N", 1)
    g.add_array("A", DType.F64, (Sym("N"),))
    g.add_scalar("x", DType.F64)
    st = g.add_state("s0")
    sub = SubsetRange.make([(0, Sym("N") - 1, 1)])
    for k in range(2):
        xin = st.add(AccessNode("x"))
        t = st.add(Tasklet(f"w{k}", ("v",), ("out",), (("out", TRef("v")),)))
        a = st.add(AccessNode("A"))
        st.add_edge(xin, t, Memlet("x", SubsetRange(())), dst_conn="v")
        st.add_edge(t, a, Memlet("A", sub), src_conn="out")
    return g


class TestValidate:
    def test_wellformed_gemm_clean(self):
        g = compile_kernel("gemm")
        assert [d for d in g.validate() if d.severity == "error"] == []

    def test_unknown_container(self):
        g = Sdfg("bad")
        g.add_array("A", DType.F64, (4,))
        st = g.add_state("s0")
        a = st.add(AccessNode("A"))
        t = st.add(Tasklet("t", ("v",), ("out",), (("out", TRef("v")),)))
        b = st.add(AccessNode("A"))
        st.add_edge(a, t, Memlet("X", SubsetRange.make([(0, 0, 1)])), dst_conn="v")
        st.add_edge(t, b, Memlet("A", SubsetRange.make([(0, 0, 1)])), src_conn="out")
        codes = [d.code for d in g.validate() if d.severity == "error"]
        assert "unknown-container" in codes

    def test_data_race(self):
        g = build_race_graph()
        diags = g.validate()
        assert any(d.code == "data-race" and "A" in d.message for d in diags)

    def test_rank_mismatch(self):
        g = Sdfg("bad")
        g.add_array("A", DType.F64, (4, 4))
        g.add_scalar("x", DType.F64)
        st = g.add_state("s0")
        a = st.add(AccessNode("A"))
        t = st.add(Tasklet("t", ("v",), ("out",), (("out", TRef("v")),)))
        out = st.add(AccessNode("x"))
        st.add_edge(a, t, Memlet("A", SubsetRange.make([(0, 0, 1)])), dst_conn="v")
        st.add_edge(t, out, Memlet("x", SubsetRange(())), src_conn="out")
        codes = [d.code for d in g.validate() if d.severity == "error"]
        assert "rank-mismatch" in codes

    def test_sink_must_be_access(self):
        g = Sdfg("bad")
        g.add_scalar("x", DType.F64)
        st = g.add_state("s0")
        a = st.add(AccessNode("x"))
        t = st.add(Tasklet("t", ("v",), ("out",), (("out", TRef("v")),)))
        st.add_edge(a, t, Memlet("x", SubsetRange(())), dst_conn="v")
        codes = [d.code for d in g.validate()]
        assert "sink-not-access" in codes

    def test_parallel_map_conflict_needs_wcr(self):
        g = Sdfg("bad")
        g.add_symbol("N", 1)
        g.add_array("A", DType.F64, (Sym("N"),))
        g.add_scalar("s", DType.F64)
        st = g.add_state("s0")
        entry = st.add(MapEntry((("i", (Const(0), Sym("N") - 1, Const(1))),),
                                Schedule.PARALLEL))
        ex = st.add(MapExit(entry))
        a = st.add(AccessNode("A"))
        t = st.add(Tasklet("t", ("v",), ("out",), (("out", TRef("v")),)))
        out = st.add(AccessNode("s"))
        elem = SubsetRange.point([Sym("i")])
        st.add_edge(a, entry, Memlet("A", SubsetRange.make([(0, Sym("N") - 1, 1)])),
                    dst_conn="IN_v")
        st.add_edge(entry, t, Memlet("A", elem), src_conn="OUT_v", dst_conn="v")
        st.add_edge(t, ex, Memlet("s", SubsetRange(())), src_conn="out", dst_conn="IN_o")
        st.add_edge(ex, out, Memlet("s", SubsetRange(())), src_conn="OUT_o")
        assert any(d.code == "data-race" for d in g.validate())
        # the same write with conflict resolution is clean
        for e in st.edges:
            if e.memlet is not None and e.memlet.container == "s":
                e.memlet.wcr = Wcr.ADD
        assert [d for d in g.validate() if d.severity == "error"] == []


class TestFreeSymbols:
    def test_gemm(self):
        g = compile_kernel("gemm")
        assert g.free_symbols() == {"NI", "NJ", "NK"}

    def test_jacobi(self):
        g = compile_kernel("jacobi_1d")
        assert g.free_symbols() == {"N", "TSTEPS"}

    def test_concrete_graph_empty(self):
        g = Sdfg("conc")
        g.add_array("A", DType.F64, (4,))
        st = g.add_state("s0")
        a = st.add(AccessNode("A"))
        t = st.add(Tasklet("t", ("v",), ("out",), (("out", TBin("+", TRef("v"), TNum(1))),)))
        b = st.add(AccessNode("A"))
        st.add_edge(a, t, Memlet("A", SubsetRange.make([(0, 0, 1)])), dst_conn="v")
        st.add_edge(t, b, Memlet("A", SubsetRange.make([(0, 0, 1)])), src_conn="out")
        assert g.free_symbols() == set()


class TestScopes:
    def test_balanced_brackets(self):
        g = compile_kernel("wcr_sum")
        st = g.states[0]
        depth = 0
        for node in st.topological():
            if isinstance(node, MapEntry):
                depth += 1
            elif isinstance(node, MapExit):
                depth -= 1
            assert depth >= 0
        assert depth == 0

    def test_structural_eq_detects_changes(self):
        g1 = compile_kernel("gemm")
        g2 = compile_kernel("gemm")
        assert structural_eq(g1, g2)
        g2.states[0].label = "other"
        assert not structural_eq(g1, g2)


class TestStreams:
    def test_streams_serialize_but_never_execute(self):
        import numpy as np
        from sdfgkit.interp import ExecContext, InterpreterError, interpret
        from sdfgkit.serialize import deserialize, serialize
        from sdfgkit.texpr import TRef

        g = Sdfg("fifo")
        g.add_symbol("N", 1)
        g.add_container(DataDescriptor("q", DType.F64, (Sym("N"),),
                                       DataKind.STREAM, transient=True))
        g.add_scalar("x", DType.F64)
        st = g.add_state("s0")
        xin = st.add(AccessNode("x"))
        t = st.add(Tasklet("push", ("v",), ("out",), (("out", TRef("v")),)))
        qn = st.add(AccessNode("q"))
        st.add_edge(xin, t, Memlet("x", SubsetRange(())), dst_conn="v")
        st.add_edge(t, qn, Memlet("q", SubsetRange.make([(0, 0, 1)])), src_conn="out")
        assert [d for d in g.validate() if d.severity == "error"] == []
        assert structural_eq(deserialize(__import__("sdfgkit.serialize", fromlist=["serialize"]).serialize(g)), g)
        ctx = ExecContext(bindings={"N": 4}).bind_inputs({"x": 1.0})
        with pytest.raises(InterpreterError, match="stream"):
            interpret(g, ctx)
