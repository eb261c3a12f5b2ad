import pytest

from sdfgkit import autoopt, frontend
from sdfgkit.cemit import EmitError, emit_c

from conftest import GOLDEN, compile_kernel


class TestGolden:
    def test_single_tasklet(self):
        g, _ = frontend.compile_source("def inc(a: f64, b: f64):\n    b = a + 1.0\n")
        assert emit_c(g) == (GOLDEN / "single_tasklet.c").read_text()

    def test_loop_graph(self):
        g = compile_kernel("fig4_loop")
        text = emit_c(g)
        assert text == (GOLDEN / "fig4_loop.c").read_text()
        assert "loop0_guard:" in text
        assert "if ((i < NI)) { goto" in text

    def test_gemm_optimized(self):
        g = compile_kernel("gemm")
        autoopt.auto_optimize(g)
        text = emit_c(g)
        assert text == (GOLDEN / "gemm_optimized.c").read_text()
        assert "/* parallel-for */" in text
        assert "static double *" in text  # persistent transients hoisted


class TestStability:
    def test_two_consecutive_runs_identical(self):
        g1 = compile_kernel("gemm")
        autoopt.auto_optimize(g1)
        g2 = compile_kernel("gemm")
        autoopt.auto_optimize(g2)
        assert emit_c(g1) == emit_c(g2)


class TestErrors:
    def test_unexpanded_library_node_rejected(self):
        g = compile_kernel("gemm")  # matmul still a library node
        with pytest.raises(EmitError, match="unexpanded"):
            emit_c(g)
