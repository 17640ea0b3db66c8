"""Encoder forward, head, interpolation, parameter naming, checkpoints."""

import numpy as np
import pytest

from roft import tensor as T
from roft.errors import ContractViolationError
from roft.model import (
    GinConfig,
    GraphBatch,
    ParamSet,
    encode,
    encode_nodes,
    init_params,
    interpolate,
    layer_param_names,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from roft.rng import stream
from roft.tensor import Tensor, finite_diff_grad


def single_node_batch(feat):
    feat = np.atleast_2d(np.asarray(feat, dtype=np.float64))
    return GraphBatch(
        node_feats=feat,
        edges=np.zeros((0, 2), dtype=np.int64),
        segment=np.zeros(feat.shape[0], dtype=np.int64),
        labels=np.zeros((1, 1)),
        label_mask=np.ones((1, 1), dtype=bool),
        graph_count=1,
    )


def identity_like_params(arch):
    """eps=0, both MLP maps identity, zero biases: each layer passes
    max(agg, 0) @ I = relu(agg) through unchanged."""
    params = init_params(arch, seed=0)
    for i in range(arch.num_layers):
        params.params[f"layer.{i}.w1"].data = np.eye(arch.hidden_dim)
        params.params[f"layer.{i}.b1"].data = np.zeros(arch.hidden_dim)
        params.params[f"layer.{i}.w2"].data = np.eye(arch.hidden_dim)
        params.params[f"layer.{i}.b2"].data = np.zeros(arch.hidden_dim)
        params.params[f"layer.{i}.eps"].data = np.asarray(0.0)
    params.params["embed.weight"].data = np.eye(arch.feat_dim, arch.hidden_dim)
    params.params["embed.bias"].data = np.zeros(arch.hidden_dim)
    return params


class TestEncode:
    def test_isolated_node_uses_only_self_term(self, small_arch):
        params = init_params(small_arch, seed=3)
        batch = single_node_batch(np.ones(4))
        nodes = encode_nodes(batch, params)
        pooled = encode(batch, params)
        assert nodes.data.shape == (1, 8)
        assert np.allclose(pooled.data, nodes.data)

    def test_identical_disconnected_graphs_get_identical_rows(self, small_arch):
        params = init_params(small_arch, seed=4)
        rng = stream("model-test", 0)
        feats = rng.normal(size=(3, 4))
        batch = GraphBatch(
            node_feats=np.vstack([feats, feats]),
            edges=np.array([[0, 1], [1, 0], [3, 4], [4, 3]], dtype=np.int64),
            segment=np.array([0, 0, 0, 1, 1, 1], dtype=np.int64),
            labels=np.zeros((2, 1)),
            label_mask=np.ones((2, 1), dtype=bool),
            graph_count=2,
        )
        emb = encode(batch, params).data
        assert np.allclose(emb[0], emb[1])

    def test_three_node_path_hand_trace(self):
        """Identity MLPs, eps=0, one layer: h_v' = relu((1+0) h_v + sum of
        neighbors); verified against the hand computation."""
        arch = GinConfig(feat_dim=2, hidden_dim=2, num_layers=1)
        params = identity_like_params(arch)
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
        batch = GraphBatch(
            node_feats=feats,
            edges=np.array([[0, 1], [1, 0], [1, 2], [2, 1]], dtype=np.int64),
            segment=np.zeros(3, dtype=np.int64),
            labels=np.zeros((1, 1)),
            label_mask=np.ones((1, 1), dtype=bool),
            graph_count=1,
        )
        nodes = encode_nodes(batch, params).data
        expected = np.array(
            [
                [1.0, 1.0],  # ends aggregate the middle node
                [3.0, 1.0],  # middle aggregates both ends
                [2.0, 1.0],
            ]
        )
        assert np.allclose(nodes, expected)
        pooled = encode(batch, params).data
        assert np.allclose(pooled, expected.mean(axis=0, keepdims=True))

    def test_segment_permutation_invariance(self, small_arch):
        params = init_params(small_arch, seed=5)
        rng = stream("model-test", 1)
        feats = [rng.normal(size=(k, 4)) for k in (2, 3, 4)]
        edge_sets = [
            np.array([[0, 1], [1, 0]], dtype=np.int64),
            np.array([[0, 1], [1, 0], [1, 2], [2, 1]], dtype=np.int64),
            np.array([[0, 1], [1, 0], [2, 3], [3, 2]], dtype=np.int64),
        ]

        def build(order):
            parts, edges, seg, offset = [], [], [], 0
            for g, j in enumerate(order):
                parts.append(feats[j])
                edges.append(edge_sets[j] + offset)
                seg.extend([g] * feats[j].shape[0])
                offset += feats[j].shape[0]
            return GraphBatch(
                node_feats=np.vstack(parts),
                edges=np.vstack(edges),
                segment=np.array(seg, dtype=np.int64),
                labels=np.zeros((3, 1)),
                label_mask=np.ones((3, 1), dtype=bool),
                graph_count=3,
            )

        forward = encode(build([0, 1, 2]), params).data
        permuted = encode(build([2, 0, 1]), params).data
        assert np.allclose(forward, permuted[[1, 2, 0]])

    def test_gradients_through_one_layer(self):
        """encode end to end passes finite-difference checks."""
        arch = GinConfig(feat_dim=3, hidden_dim=4, num_layers=1)
        params = init_params(arch, seed=9)
        rng = stream("model-test", 2)
        batch = GraphBatch(
            node_feats=rng.normal(size=(4, 3)),
            edges=np.array([[0, 1], [1, 0], [1, 2], [2, 1]], dtype=np.int64),
            segment=np.array([0, 0, 0, 1], dtype=np.int64),
            labels=np.zeros((2, 1)),
            label_mask=np.ones((2, 1), dtype=bool),
            graph_count=2,
        )
        weights = rng.normal(size=(2, 4))
        names = list(params.params)
        loss = T.tsum(T.mul(encode(batch, params), weights))
        grads = T.grad(loss, {n: params[n] for n in names})
        for name in names:
            shape = params.value_of(name).shape

            def f(vec):
                probe = params.copy()
                probe.params[name].data = vec.reshape(shape)
                return float(T.tsum(T.mul(encode(batch, probe), weights)).data)

            fd = finite_diff_grad(f, params.value_of(name).reshape(-1), 1e-5)
            auto = grads[name].data.reshape(-1)
            scale = max(np.max(np.abs(fd)), 1e-8)
            assert np.max(np.abs(auto - fd)) / scale < 1e-4, name

    def test_feature_width_mismatch_rejected(self, small_arch):
        params = init_params(small_arch, seed=0)
        batch = single_node_batch(np.ones(3))
        with pytest.raises(ContractViolationError):
            encode(batch, params)


class TestPredict:
    def test_zero_weights_give_bias(self, small_arch):
        params = init_params(small_arch, seed=0, head_tasks=2)
        params.params["head.weight"].data = np.zeros((8, 2))
        params.params["head.bias"].data = np.array([0.3, -0.7])
        emb = Tensor(np.ones((5, 8)))
        out = predict(emb, params).data
        assert np.allclose(out, np.tile([0.3, -0.7], (5, 1)))

    def test_identity_head_passes_embedding(self):
        arch = GinConfig(feat_dim=2, hidden_dim=1, num_layers=1)
        params = init_params(arch, seed=0, head_tasks=1)
        params.params["head.weight"].data = np.array([[1.0]])
        params.params["head.bias"].data = np.array([0.0])
        emb = Tensor(np.array([[2.5], [-1.0]]))
        assert np.allclose(predict(emb, params).data, emb.data)

    def test_against_matmul_oracle(self, small_arch):
        params = init_params(small_arch, seed=7, head_tasks=3)
        rng = stream("model-test", 3)
        emb = rng.normal(size=(6, 8))
        out = predict(Tensor(emb), params).data
        oracle = emb @ params.value_of("head.weight") + params.value_of("head.bias")
        assert np.max(np.abs(out - oracle)) < 1e-12

    def test_width_mismatch_rejected(self, small_arch):
        params = init_params(small_arch, seed=0, head_tasks=1)
        with pytest.raises(ContractViolationError):
            predict(Tensor(np.ones((2, 5))), params)


class TestInterpolate:
    def test_left_endpoint_bit_equal(self, checkpoint_pair):
        pre, ft = checkpoint_pair
        mixed = interpolate(pre, ft, np.zeros(3))
        for name in pre.encoder_names():
            assert mixed.value_of(name).tobytes() == pre.value_of(name).tobytes()

    def test_right_endpoint_bit_equal(self, checkpoint_pair):
        pre, ft = checkpoint_pair
        mixed = interpolate(pre, ft, np.ones(3))
        for name in ft.encoder_names():
            assert mixed.value_of(name).tobytes() == ft.value_of(name).tobytes()

    def test_scalar_midpoint(self, small_arch):
        pre = init_params(small_arch, seed=0)
        ft = init_params(small_arch, seed=1)
        pre.params["layer.0.w1"].data = np.full((8, 8), 1.0)
        ft.params["layer.0.w1"].data = np.full((8, 8), 3.0)
        pre.params["layer.0.b1"].data = np.full(8, 2.0)
        ft.params["layer.0.b1"].data = np.full(8, 4.0)
        mixed = interpolate(pre, ft, [0.5, 0.0, 0.0])
        assert np.allclose(mixed.value_of("layer.0.w1"), 2.0)
        assert np.allclose(mixed.value_of("layer.0.b1"), 3.0)

    def test_self_interpolation_is_identity(self, checkpoint_pair):
        pre, _ = checkpoint_pair
        mixed = interpolate(pre, pre, np.array([0.3, 0.8, 0.5]))
        for name in pre.encoder_names():
            assert mixed.value_of(name).tobytes() == pre.value_of(name).tobytes()

    def test_affine_composition(self, checkpoint_pair):
        """Interpolating to alpha then beta along the same segment lands at
        alpha * beta (coefficients compose multiplicatively toward ft)."""
        pre, ft = checkpoint_pair
        a, b = 0.6, 0.5
        stage = interpolate(pre, ft, np.full(3, a))
        twice = interpolate(pre, stage, np.full(3, b))
        direct = interpolate(pre, ft, np.full(3, a * b))
        for name in pre.encoder_names():
            assert np.max(np.abs(twice.value_of(name) - direct.value_of(name))) < 1e-12

    def test_embed_group_follows_alpha0(self, checkpoint_pair):
        pre, ft = checkpoint_pair
        mixed = interpolate(pre, ft, np.array([1.0, 0.0, 0.0]))
        assert mixed.value_of("embed.weight").tobytes() == ft.value_of("embed.weight").tobytes()
        assert mixed.value_of("layer.1.w1").tobytes() == pre.value_of("layer.1.w1").tobytes()

    def test_head_taken_from_ft(self, small_arch):
        pre = init_params(small_arch, seed=0)
        ft = init_params(small_arch, seed=1, head_tasks=2)
        mixed = interpolate(pre, ft, np.full(3, 0.25))
        assert mixed.value_of("head.weight").tobytes() == ft.value_of("head.weight").tobytes()

    def test_alpha_out_of_range_rejected(self, checkpoint_pair):
        pre, ft = checkpoint_pair
        with pytest.raises(ContractViolationError):
            interpolate(pre, ft, np.array([0.5, 1.2, 0.0]))

    def test_wrong_alpha_count_rejected(self, checkpoint_pair):
        pre, ft = checkpoint_pair
        with pytest.raises(ContractViolationError):
            interpolate(pre, ft, np.array([0.5, 0.5]))


class TestParamNames:
    def test_layer_names(self, small_arch):
        params = init_params(small_arch, seed=0)
        names = layer_param_names(params, 0)
        assert names == {
            "layer.0.eps",
            "layer.0.w1",
            "layer.0.b1",
            "layer.0.w2",
            "layer.0.b2",
        }

    def test_last_layer(self, small_arch):
        params = init_params(small_arch, seed=0)
        assert all(n.startswith("layer.2.") for n in layer_param_names(params, 2))

    def test_partition_of_name_inventory(self, small_arch):
        params = init_params(small_arch, seed=0, head_tasks=2)
        groups = [layer_param_names(params, k) for k in range(3)]
        groups.append({n for n in params.params if n.startswith("head.")})
        groups.append({n for n in params.params if n.startswith("embed.")})
        union = set().union(*groups)
        assert union == set(params.names())
        assert sum(len(g) for g in groups) == len(union)  # pairwise disjoint

    def test_out_of_range_rejected(self, small_arch):
        params = init_params(small_arch, seed=0)
        with pytest.raises(ContractViolationError):
            layer_param_names(params, 3)


class TestCheckpointIO:
    def test_round_trip(self, small_arch, tmp_path):
        params = init_params(small_arch, seed=12, head_tasks=2)
        path = tmp_path / "enc.ckpt"
        save_checkpoint(path, params, paradigm="ssl")
        loaded, manifest = load_checkpoint(path)
        assert manifest["paradigm"] == "ssl"
        assert not loaded.has_head
        for name in loaded.names():
            assert loaded.value_of(name).tobytes() == params.value_of(name).tobytes()

    def test_head_kept_when_requested(self, small_arch, tmp_path):
        params = init_params(small_arch, seed=12, head_tasks=2)
        path = tmp_path / "full.ckpt"
        save_checkpoint(path, params, paradigm="finetuned", include_head=True)
        loaded, _ = load_checkpoint(path)
        assert loaded.has_head

    def test_same_params_same_bytes(self, small_arch, tmp_path):
        params = init_params(small_arch, seed=12)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, paradigm="ssl")
        save_checkpoint(p2, params, paradigm="ssl")
        assert p1.read_bytes() == p2.read_bytes()

    def test_manifest_is_first_line_json(self, small_arch, tmp_path):
        import json

        params = init_params(small_arch, seed=12)
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, params, paradigm="supervised")
        first = path.read_bytes().split(b"\n", 1)[0]
        manifest = json.loads(first)
        assert {e["name"] for e in manifest["params"]} == set(params.names())
