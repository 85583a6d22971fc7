import pytest

from phaze.synth import synth_block_graph, synth_workload
from phaze.workload import serialize_workload, validate_linear


def test_block_node_count_formula():
    assert len(synth_block_graph(1, 1).nodes) == 9 + 3
    assert len(synth_block_graph(2, 1, hidden=512).nodes) == 9 + 3 + 1
    g = synth_block_graph(2, 1, branches=30, hidden=960)
    assert len(g.nodes) == 9 + 90 + 1 == 100


def test_block_requires_divisible_hidden():
    with pytest.raises(ValueError):
        synth_block_graph(2, 1, branches=30)  # 1024 % 60 != 0


def test_block_branches_share_endpoints():
    g = synth_block_graph(1, 1, branches=4, hidden=512, tag="x")
    for br in range(4):
        assert ("x.qkv", f"x.score{br}") in g.edges
        assert (f"x.ctx{br}", "x.proj") in g.edges


def test_workload_shape_and_linearity():
    w = synth_workload("s", 5, hidden=256, seq=16, vocab=128)
    assert w.layer_ids == ("embed", "block000", "block001", "block002", "head")
    for (t, b), lg in w.variants.items():
        chain = validate_linear(lg)
        assert [l.id for l in chain] == list(w.layer_ids)
        for lyr in chain:
            assert lyr.fw.nodes and lyr.bw.nodes


def test_workload_minimum_three_layers():
    with pytest.raises(ValueError):
        synth_workload("s", 2)


def test_blocks_slice_but_embed_and_head_do_not():
    w = synth_workload("s", 4, hidden=256, seq=16, vocab=128,
                       tmp_widths=(1, 2))
    lg1, lg2 = w.variant(1, 1), w.variant(2, 1)
    b1, b2 = lg1.layer("block000"), lg2.layer("block000")
    assert b1.sliceable and b2.weights_size == b1.weights_size // 2
    for lid in ("embed", "head"):
        assert not lg1.layer(lid).sliceable
        assert lg1.layer(lid).weights_size == lg2.layer(lid).weights_size
        assert len(lg1.layer(lid).fw.nodes) == len(lg2.layer(lid).fw.nodes)


def test_first_layer_has_no_input_edge():
    w = synth_workload("s", 4, hidden=256, seq=16, vocab=128)
    chain = validate_linear(w.variant(1, 1))
    assert chain[0].input_edge_size == 0
    assert all(l.input_edge_size > 0 for l in chain[1:])


def test_generation_is_deterministic():
    a = serialize_workload(synth_workload("s", 6, hidden=256, seq=16, vocab=128))
    b = serialize_workload(synth_workload("s", 6, hidden=256, seq=16, vocab=128))
    assert a == b
