"""Graph layout, EdgeConvolution, block, and network tests.

Brute-force enumeration oracles are written independently of the module
code and compared exactly.
"""

import numpy as np
import pytest

from asdgraph import autodiff as ad
from asdgraph.autodiff import Tensor
from asdgraph.errors import CheckpointError, ConfigError, ShapeError
from asdgraph.graph import (
    BLOCK_STYLES,
    ModelConfig,
    SpeakerGraphNet,
    build_layout,
    edge_conv,
)
from asdgraph.nn import EdgeMlp
from asdgraph.scene import GraphSample

RNG = np.random.default_rng(515)


# ---------------------------------------------------------------------------
# Brute-force layout oracle (independent enumeration over node pairs)
# ---------------------------------------------------------------------------


def oracle_layout_edges(l, i, ids):
    """Expected undirected edge sets, enumerated from first principles."""
    def audio(j):
        return j * (i + 1)

    def video(j, s):
        return j * (i + 1) + 1 + s

    spatial = set()
    for j in range(l):
        nodes = [audio(j)] + [video(j, s) for s in range(i)]
        for a in nodes:
            for b in nodes:
                if a < b:
                    spatial.add((a, b))
    temporal = set()
    for j in range(l - 1):
        temporal.add(tuple(sorted((audio(j), audio(j + 1)))))
        for s in range(i):
            tid = ids[j][s]
            if ids[j + 1][s] == tid:
                p = s
            elif tid in ids[j + 1]:
                p = ids[j + 1].index(tid)
            else:
                p = s
            temporal.add(tuple(sorted((video(j, s), video(j + 1, p)))))
    return spatial, temporal


def adj_to_edges(adj):
    edges = set()
    for a, nbrs in enumerate(adj):
        for b in nbrs:
            edges.add(tuple(sorted((a, b))))
    return edges


def distinct_ids(l, i):
    return [[f"t{s}" for s in range(i)] for _ in range(l)]


class TestLayout:
    def test_smallest_nontrivial(self):
        lay = build_layout(2, 1, distinct_ids(2, 1))
        assert lay.num_nodes == 4
        assert adj_to_edges(lay.spatial_adj) == {(0, 1), (2, 3)}
        assert adj_to_edges(lay.temporal_adj) == {(0, 2), (1, 3)}

    def test_single_endpoint_triangle(self):
        lay = build_layout(1, 2, distinct_ids(1, 2))
        assert lay.num_nodes == 3
        assert adj_to_edges(lay.temporal_adj) == set()
        assert adj_to_edges(lay.spatial_adj) == {(0, 1), (0, 2), (1, 2)}

    def test_l3_i2_counts(self):
        lay = build_layout(3, 2, distinct_ids(3, 2))
        assert lay.num_nodes == 9
        assert len(adj_to_edges(lay.spatial_adj)) == 9
        assert len(adj_to_edges(lay.temporal_adj)) == 6

    def test_oracle_sweep_with_random_identities(self):
        pool = ["a", "b", "c", "d", "e"]
        for l in range(1, 6):
            for i in range(1, 5):
                for trial in range(3):
                    rng = np.random.default_rng(1000 * l + 100 * i + trial)
                    ids = [[pool[k] for k in rng.integers(0, len(pool), size=i)]
                           for _ in range(l)]
                    lay = build_layout(l, i, ids)
                    exp_s, exp_t = oracle_layout_edges(l, i, ids)
                    assert lay.num_nodes == (i + 1) * l
                    assert adj_to_edges(lay.spatial_adj) == exp_s
                    assert adj_to_edges(lay.temporal_adj) == exp_t

    def test_adjacency_is_symmetric(self):
        ids = [["a", "b"], ["b", "c"], ["c", "a"]]
        lay = build_layout(3, 2, ids)
        for adj in (lay.spatial_adj, lay.temporal_adj):
            for a, nbrs in enumerate(adj):
                for b in nbrs:
                    assert a in adj[b]

    def test_spatial_edges_stay_within_endpoint(self):
        lay = build_layout(4, 3, distinct_ids(4, 3))
        for a, nbrs in enumerate(lay.spatial_adj):
            for b in nbrs:
                assert lay.endpoint_of(a) == lay.endpoint_of(b)
        for a, nbrs in enumerate(lay.temporal_adj):
            for b in nbrs:
                assert abs(lay.endpoint_of(a) - lay.endpoint_of(b)) == 1

    def test_bad_inputs(self):
        with pytest.raises(ConfigError):
            build_layout(0, 2, [])
        with pytest.raises(ShapeError):
            build_layout(2, 2, [["a", "b"]])


# ---------------------------------------------------------------------------
# EdgeConvolution
# ---------------------------------------------------------------------------


def run_mlp_rows(mlp, rows):
    """Oracle helper: evaluate the MLP on explicit rows in eval mode."""
    return mlp(Tensor(np.asarray(rows)), training=False).data


class TestEdgeConv:
    def make_mlp(self, d_in, hidden, d_out, seed=3):
        mlp = EdgeMlp(np.random.default_rng(seed), d_in, hidden, d_out)
        # Randomize running stats so eval mode is a non-trivial affine map.
        rng = np.random.default_rng(seed + 1)
        for bn in (mlp.bn1, mlp.bn2):
            bn.running_mean[:] = rng.normal(size=bn.running_mean.shape)
            bn.running_var[:] = rng.uniform(0.5, 2.0, size=bn.running_var.shape)
        return mlp

    def test_isolated_node(self):
        mlp = self.make_mlp(4, 8, 3)
        x = RNG.normal(size=(1, 2))
        out = edge_conv(Tensor(x), [[]], mlp, training=False)
        expected = run_mlp_rows(mlp, np.concatenate([x, np.zeros((1, 2))], axis=1))
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_two_identical_nodes_symmetric(self):
        mlp = self.make_mlp(4, 8, 3)
        row = RNG.normal(size=2)
        x = Tensor(np.stack([row, row]))
        out = edge_conv(x, [[1], [0]], mlp, training=False)
        np.testing.assert_allclose(out.data[0], out.data[1], rtol=1e-12)

    def test_path_graph_matches_enumeration_oracle(self):
        mlp = self.make_mlp(6, 10, 4, seed=9)
        x = RNG.normal(size=(3, 3))
        adj = [[1], [0, 2], [1]]  # 3-node path
        out = edge_conv(Tensor(x), adj, mlp, training=False)
        for node in range(3):
            rows = []
            for nbr in sorted({node, *adj[node]}):
                rows.append(np.concatenate([x[node], x[nbr] - x[node]]))
            per_edge = run_mlp_rows(mlp, rows)
            np.testing.assert_allclose(out.data[node], per_edge.max(axis=0),
                                       rtol=1e-12)

    def test_gradients_flow_through_edge_conv(self):
        mlp = EdgeMlp(np.random.default_rng(5), 4, 6, 3)
        x = Tensor(RNG.normal(size=(4, 2)), requires_grad=True)
        out = edge_conv(x, [[1], [0, 2], [1, 3], [2]], mlp, training=True)
        ad.mean(out).backward()
        assert x.grad is not None and np.any(x.grad != 0)


# ---------------------------------------------------------------------------
# Blocks and network
# ---------------------------------------------------------------------------


def make_sample(rng, l=3, i=2, clip_len=2, d_v=2, audio_shape=(3, 2), ids=None):
    """A synthetic GraphSample with arbitrary (non-MFCC) audio features."""
    if ids is None:
        ids = [[f"t{s}" for s in range(i)] for _ in range(l)]
    return GraphSample(
        endpoints=list(range(0, 5 * l, 5)),
        audio_clips=[rng.normal(size=audio_shape) for _ in range(l)],
        visual_clips=rng.normal(size=(l, i, clip_len, d_v)),
        tracklet_ids=[list(row) for row in ids],
        video_labels=rng.random((l, i)) < 0.5,
        audio_labels=rng.random(l) < 0.5,
        slot_valid=np.ones((l, i), dtype=bool),
    )


def tiny_config(style="ST", num_blocks=2, l_i=(3, 2)):
    return ModelConfig(audio_in=6, visual_in=4, block_style=style,
                       num_blocks=num_blocks, hidden=6, d_in=5, d_a=4,
                       encoder_width=5)


class TestNetwork:
    def test_phi_shape_and_row_ordering(self):
        cfg = tiny_config()
        model = SpeakerGraphNet(cfg, np.random.default_rng(0))
        sample = make_sample(np.random.default_rng(1), l=7, i=2)
        phi, aux_a, aux_v = model.assemble_phi(sample)
        assert phi.features.shape == (21, cfg.d_in)
        assert aux_a.shape == (7, 2)
        assert aux_v.shape == (14, 2)

    def test_duplicate_slots_give_identical_rows(self):
        cfg = tiny_config()
        model = SpeakerGraphNet(cfg, np.random.default_rng(0))
        sample = make_sample(np.random.default_rng(1), l=2, i=2,
                             ids=[["a", "a"], ["a", "a"]])
        sample.visual_clips[:, 1] = sample.visual_clips[:, 0]
        phi, _, _ = model.assemble_phi(sample)
        lay = phi.layout
        for j in range(2):
            np.testing.assert_array_equal(
                phi.features.data[lay.video_index(j, 0)],
                phi.features.data[lay.video_index(j, 1)])
        res = model.forward(sample, training=False)
        np.testing.assert_allclose(res.video_logits.data[0::2],
                                   res.video_logits.data[1::2], rtol=1e-12)

    def test_zero_reducer_gives_equal_rows(self):
        model = SpeakerGraphNet(tiny_config(), np.random.default_rng(0))
        model.reducer.w.data[:] = 0.0
        model.reducer.b.data[:] = RNG.normal(size=model.reducer.b.shape)
        sample = make_sample(np.random.default_rng(1))
        phi, _, _ = model.assemble_phi(sample)
        np.testing.assert_array_equal(
            phi.features.data, np.tile(model.reducer.b.data, (phi.layout.num_nodes, 1)))

    @pytest.mark.parametrize("style", ["ST", "TS", "Parallel", "Joint"])
    @pytest.mark.parametrize("n_blocks", [1, 4, 6])
    def test_residual_identity_with_zeroed_outputs(self, style, n_blocks):
        cfg = tiny_config(style=style, num_blocks=n_blocks)
        model = SpeakerGraphNet(cfg, np.random.default_rng(2))
        model.zero_block_outputs_()
        sample = make_sample(np.random.default_rng(3))
        phi, _, _ = model.assemble_phi(sample)
        for training in (True, False):
            out, _ = model.run_blocks(phi, training=training)
            assert np.max(np.abs(out.data - phi.features.data)) < 1e-12

    def test_l1_temporal_stage_reduces_to_self_term(self):
        cfg = tiny_config(style="ST", num_blocks=1)
        model = SpeakerGraphNet(cfg, np.random.default_rng(4))
        sample = make_sample(np.random.default_rng(5), l=1, i=2)
        phi, _, _ = model.assemble_phi(sample)
        assert all(not nbrs for nbrs in phi.layout.temporal_adj)
        out, _ = model.run_blocks(phi, training=False)
        # Temporal EdgeConv over an empty adjacency is the per-node self term.
        h = edge_conv(phi.features, phi.layout.spatial_adj,
                      model.blocks[0].spatial, training=False)
        h = edge_conv(h, [[] for _ in range(3)], model.blocks[0].temporal,
                      training=False)
        np.testing.assert_allclose(out.data, (h + phi.features).data, rtol=1e-12)

    def test_joint_differs_from_st_in_general(self):
        sample = make_sample(np.random.default_rng(6), l=2, i=1)
        outs = {}
        for style in ("ST", "Joint"):
            model = SpeakerGraphNet(tiny_config(style=style, num_blocks=1),
                                    np.random.default_rng(7))
            outs[style] = model.forward(sample, training=False).video_logits.data
        assert np.max(np.abs(outs["ST"] - outs["Joint"])) > 1e-6

    def test_readout_zero_heads_give_half_probabilities(self):
        model = SpeakerGraphNet(tiny_config(), np.random.default_rng(8))
        model.audio_head.zero_()
        model.video_head.zero_()
        sample = make_sample(np.random.default_rng(9), l=7, i=2)
        res = model.forward(sample, training=False)
        assert res.audio_logits.shape == (7, 2)
        assert res.video_logits.shape == (14, 2)
        np.testing.assert_array_equal(res.video_logits.data, 0.0)
        np.testing.assert_allclose(res.video_scores(), 0.5)

    @pytest.mark.parametrize("style", BLOCK_STYLES)
    def test_slot_permutation_equivariance(self, style):
        # Permuting video slots at one endpoint permutes that endpoint's
        # video logits identically and leaves every other logit unchanged.
        l, i = 4, 3
        ids = [["a", "b", "c"]] * l
        model = SpeakerGraphNet(tiny_config(style=style), np.random.default_rng(10))
        sample = make_sample(np.random.default_rng(11), l=l, i=i, ids=ids)
        base = model.forward(sample, training=False)

        j_star, perm = 2, [2, 0, 1]
        permuted = make_sample(np.random.default_rng(11), l=l, i=i, ids=ids)
        permuted.visual_clips[j_star] = sample.visual_clips[j_star][perm]
        permuted.tracklet_ids[j_star] = [ids[j_star][p] for p in perm]
        permuted.video_labels[j_star] = sample.video_labels[j_star][perm]
        out = model.forward(permuted, training=False)

        for j in range(l):
            for s in range(i):
                src = perm[s] if j == j_star else s
                np.testing.assert_allclose(
                    out.video_logits.data[j * i + s],
                    base.video_logits.data[j * i + src], rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(out.audio_logits.data, base.audio_logits.data,
                                   rtol=1e-10, atol=1e-12)

    def test_gradient_reaches_every_parameter(self):
        model = SpeakerGraphNet(tiny_config(style="ST", num_blocks=2),
                                np.random.default_rng(12))
        sample = make_sample(np.random.default_rng(13), l=3, i=2)
        res = model.forward(sample, training=True)
        loss = ad.mean(ad.concat([
            ad.softmax_cross_entropy(res.audio_logits,
                                     sample.audio_labels.astype(int)),
            ad.softmax_cross_entropy(res.video_logits,
                                     sample.video_labels.reshape(-1).astype(int)),
            ad.softmax_cross_entropy(res.aux_audio_logits,
                                     sample.audio_labels.astype(int)),
            ad.softmax_cross_entropy(res.aux_video_logits,
                                     sample.video_labels.reshape(-1).astype(int)),
        ], axis=0))
        loss.backward()
        for name, p in model.named_parameters().items():
            assert p.grad is not None and np.any(p.grad != 0), f"dead parameter {name}"

    def test_checkpoint_round_trip_preserves_outputs(self, tmp_path):
        cfg = tiny_config(style="Parallel", num_blocks=2)
        model = SpeakerGraphNet(cfg, np.random.default_rng(14))
        sample = make_sample(np.random.default_rng(15))
        model.forward(sample, training=True)  # move running stats off init
        before = model.forward(sample, training=False)
        path = tmp_path / "model.json"
        model.save(path, extra_header={"note": "test"})
        loaded, header = SpeakerGraphNet.load(path)
        assert header["note"] == "test"
        after = loaded.forward(sample, training=False)
        np.testing.assert_array_equal(after.video_logits.data,
                                      before.video_logits.data)
        np.testing.assert_array_equal(after.audio_logits.data,
                                      before.audio_logits.data)

    def test_corrupt_checkpoint_raises(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(CheckpointError):
            SpeakerGraphNet.load(path)

    def test_unknown_style_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(audio_in=4, visual_in=4, block_style="Diagonal")

    def test_sample_model_shape_mismatch(self):
        model = SpeakerGraphNet(tiny_config(), np.random.default_rng(16))
        sample = make_sample(np.random.default_rng(17), audio_shape=(4, 2))
        with pytest.raises(ShapeError):
            model.forward(sample, training=False)
