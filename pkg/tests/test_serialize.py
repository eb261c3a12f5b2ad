import pytest

from sdfgkit import autoopt, passes
from sdfgkit.dot import to_dot
from sdfgkit.ir import Sdfg, structural_eq
from sdfgkit.serialize import SchemaError, deserialize, serialize

from conftest import ALL_KERNELS, GOLDEN, compile_kernel


class TestRoundTrip:
    def test_empty_graph_byte_identical(self):
        g = Sdfg("empty")
        g.add_state("s0")
        text = serialize(g)
        assert serialize(deserialize(text)) == text

    @pytest.mark.parametrize("name", ALL_KERNELS)
    def test_corpus_structural_identity(self, name):
        g = compile_kernel(name)
        assert structural_eq(deserialize(serialize(g)), g)

    @pytest.mark.parametrize("name", ["gemm", "jacobi_1d", "doitgen"])
    def test_optimized_corpus_roundtrip(self, name):
        g = compile_kernel(name)
        autoopt.auto_optimize(g)
        assert structural_eq(deserialize(serialize(g)), g)

    def test_truncated_json(self):
        g = compile_kernel("gemm")
        text = serialize(g)
        with pytest.raises(SchemaError):
            deserialize(text[: len(text) // 2])

    def test_version_mismatch(self):
        g = Sdfg("v")
        g.add_state("s0")
        text = serialize(g).replace('"version": 1', '"version": 99')
        with pytest.raises(SchemaError):
            deserialize(text)

    def test_not_a_graph(self):
        with pytest.raises(SchemaError):
            deserialize("{}")
        with pytest.raises(SchemaError):
            deserialize("not json at all")


class TestDot:
    def test_single_state_cluster(self):
        g = Sdfg("tiny")
        g.add_state("s0")
        text = to_dot(g)
        assert "subgraph cluster_0" in text
        assert text.count("subgraph") == 1

    def test_wcr_edges_dashed(self):
        g = compile_kernel("wcr_sum")
        text = to_dot(g)
        assert "style=dashed" in text

    def test_loop_graph_golden(self):
        g = compile_kernel("fig4_loop")
        text = to_dot(g)
        golden = GOLDEN / "fig4_loop.dot"
        assert text == golden.read_text()

    def test_stable_across_runs(self):
        g1 = compile_kernel("jacobi_1d")
        g2 = compile_kernel("jacobi_1d")
        assert to_dot(g1) == to_dot(g2)
