"""Full network assembly: embedding, pyramid, heads, export, gradients."""

import jsonschema
import numpy as np
import pytest

from gkgnet.config import CONNECTIONS_SCHEMA, RunConfig, tiny_config
from gkgnet.data import label_names
from gkgnet.graph import NodeSet
from gkgnet.losses import LossConfig, total_loss
from gkgnet.model import GkgModel, ModelConfig
from gkgnet.numerics import constant, finite_difference_gradcheck, ops


def tiny_model(seed=0, **overrides):
    raw = tiny_config()
    raw["model"].update(overrides)
    cfg = RunConfig.from_dict(raw)
    return GkgModel(cfg.model, seed=seed), cfg


def small_image(seed=0, size=32):
    return np.random.default_rng(seed).random((size, size, 3)).astype(np.float32)


class TestPatchify:
    def test_shape_arithmetic(self):
        model, _ = tiny_model()  # 32x32, P=4
        out = model.patchify_embed(constant(small_image()))
        assert out.count == 64 and out.grid == (8, 8)
        assert out.features.shape == (64, 8)

    def test_zero_image_zero_pos_gives_bias(self):
        model, _ = tiny_model()
        model.patch_embed.b.value.data[...] = 1.5
        out = model.patchify_embed(constant(np.zeros((32, 32, 3))))
        assert np.allclose(out.features.data, 1.5, atol=1e-15)

    def test_matches_naive_loop_extraction(self):
        model, _ = tiny_model(dims=[16, 16, 16, 16])
        img = small_image(3)
        out = model.patchify_embed(constant(img)).features.data
        w = model.patch_embed.w.value.data
        b = model.patch_embed.b.value.data
        pos = model.pos_table.value.data
        p = 4
        expect = np.empty((64, 16))
        for r in range(8):
            for c in range(8):
                patch = img[r * p : (r + 1) * p, c * p : (c + 1) * p, :].astype(np.float64)
                expect[r * 8 + c] = patch.reshape(-1) @ w + b + pos[r * 8 + c]
        assert np.allclose(out, expect, atol=1e-12)

    def test_wrong_image_shape_rejected(self):
        model, _ = tiny_model()
        with pytest.raises(ValueError, match="shape"):
            model.patchify_embed(constant(np.zeros((16, 16, 3))))


class TestDownsample:
    def test_four_identical_nodes_mean_is_identity_before_projection(self):
        model, _ = tiny_model()
        feat = np.tile(np.array([[0.5, -1.0, 2.0, 0.0, 1.0, 3.0, -2.0, 0.25]]), (4, 1))
        patches = NodeSet(constant(feat), grid=(2, 2))
        out = model.downsample(patches, 0)
        w = model.downsamplers[0].w.value.data
        b = model.downsamplers[0].b.value.data
        assert np.allclose(out.features.data, feat[:1] @ w + b, atol=1e-12)
        assert out.grid == (1, 1)

    def test_grid_shape_halves(self):
        model, _ = tiny_model()
        patches = NodeSet(constant(np.random.default_rng(0).normal(size=(16, 8))), grid=(4, 4))
        out = model.downsample(patches, 0)
        assert out.grid == (2, 2) and out.count == 4

    def test_matches_windowed_mean_oracle(self):
        model, _ = tiny_model(dims=[6, 6, 8, 8], groups=2)
        rng = np.random.default_rng(1)
        feat = rng.normal(size=(16, 6))
        patches = NodeSet(constant(feat), grid=(4, 4))
        out = model.downsample(patches, 0)
        grid = feat.reshape(4, 4, 6)
        pooled = np.empty((2, 2, 6))
        for i in range(2):
            for j in range(2):
                pooled[i, j] = grid[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean(axis=(0, 1))
        w = model.downsamplers[0].w.value.data
        b = model.downsamplers[0].b.value.data
        assert np.allclose(out.features.data, pooled.reshape(4, 6) @ w + b, atol=1e-12)

    def test_odd_grid_rejected(self):
        model, _ = tiny_model()
        patches = NodeSet(constant(np.ones((3, 8))), grid=(3, 1))
        with pytest.raises(ValueError, match="even"):
            model.downsample(patches, 0)


class TestForward:
    def test_micro_shape_contract_and_clamping(self):
        model, cfg = tiny_model()
        trace = model.forward(small_image(), capture_graphs=True)
        nl = cfg.model.num_labels
        assert trace.logits_patch.shape == (nl,)
        assert trace.logits_label.shape == (nl,)
        assert trace.scores.shape == (nl,)
        grids = [s.grid for s in trace.snapshots if s.kind == "patch"]
        assert grids == [(8, 8), (4, 4), (2, 2), (1, 1)]
        ks = {s.stage: s.graph.k for s in trace.snapshots if s.kind == "patch"}
        assert ks == {0: 3, 1: 3, 2: 3, 3: 1}  # K=3 clamped at the 1-node stage

    def test_forward_deterministic(self):
        model, _ = tiny_model(seed=5)
        img = small_image(7)
        a = model.forward(img).scores.data
        b = model.forward(img).scores.data
        assert np.array_equal(a, b)

    def test_zero_heads_give_half_scores(self):
        model, _ = tiny_model()
        for p in (model.head_patch.w, model.head_patch.b, model.head_label_w, model.head_label_b):
            p.value.data[...] = 0.0
        trace = model.forward(small_image())
        assert np.array_equal(trace.scores.data, np.full(4, 0.5))

    def test_score_identity_and_bounds(self):
        model, _ = tiny_model(seed=2)
        trace = model.forward(small_image(4))
        z = trace.logits_patch.data + trace.logits_label.data
        assert np.allclose(trace.logits.data, z, atol=1e-15)
        assert np.allclose(trace.scores.data, 1 / (1 + np.exp(-z)), atol=1e-12)
        assert np.all(trace.scores.data > 0) and np.all(trace.scores.data < 1)

    def test_head_additivity_shift_invariance(self):
        model, _ = tiny_model(seed=3)
        img = small_image(9)
        base = model.forward(img).scores.data.copy()
        delta = 0.37
        model.head_patch.b.value.data[2] += delta
        model.head_label_b.value.data[2] -= delta
        shifted = model.forward(img).scores.data
        assert np.allclose(base, shifted, atol=1e-12)

    def test_stage_monotonicity(self):
        model, _ = tiny_model()
        trace = model.forward(small_image(), capture_graphs=True)
        patch_counts = [s.src_count for s in trace.snapshots if s.kind == "patch"]
        assert patch_counts == sorted(patch_counts, reverse=True)
        assert all(a > b for a, b in zip(patch_counts, patch_counts[1:]))
        label_counts = {s.dest_count for s in trace.snapshots if s.kind == "cross"}
        assert label_counts == {4}

    def test_residual_identity_with_zeroed_ffn(self):
        model, cfg = tiny_model(seed=4)
        for group in model.patch_params + model.cross_params:
            for m in group:
                m.ffn_w2.w.value.data[...] = 0.0
                m.ffn_w2.b.value.data[...] = 0.0
        img = small_image(5)
        trace = model.forward(img)

        # reference: embeddings flow through boundaries only, modules are identity
        patches = model.patchify_embed(constant(img))
        labels = NodeSet(model.label_embed.value, kind="label")
        for s in range(3):
            patches = model.downsample(patches, s)
            labels = NodeSet(model.label_projectors[s](labels.features), kind="label")
        pooled = ops.mean_pool_segments(patches.features, patches.count)
        yp = ops.affine(pooled, model.head_patch.w.value, model.head_patch.b.value)
        yl = ops.add(
            ops.row_sums(ops.mul(labels.features, model.head_label_w.value)),
            model.head_label_b.value,
        )
        z = yp.data.reshape(-1) + yl.data
        assert np.array_equal(trace.logits.data, z)
        assert np.array_equal(trace.scores.data, ops.sigmoid(constant(z)).data)

    def test_batched_forward_matches_per_sample(self):
        model, _ = tiny_model(seed=6)
        imgs = [small_image(i) for i in range(3)]
        batch = model.forward_batch(imgs)
        for i, img in enumerate(imgs):
            single = model.forward(img)
            assert np.allclose(batch.scores.data[i], single.scores.data, atol=1e-12)

    def test_graph_override_freezes_selection(self):
        model, _ = tiny_model(seed=8)
        img = small_image(11)
        trace = model.forward(img, capture_graphs=True)
        frozen = [s.graph for s in trace.snapshots]
        replay = model.forward(img, graph_override=frozen, capture_graphs=True)
        assert np.array_equal(trace.scores.data, replay.scores.data)
        for a, b in zip(trace.snapshots, replay.snapshots):
            assert a.graph is b.graph or np.array_equal(a.graph.idx, b.graph.idx)


class TestExport:
    def test_record_structure_and_schema(self):
        model, cfg = tiny_model()
        record = model.export_connections(small_image(), label_names(4))
        jsonschema.validate(record, CONNECTIONS_SCHEMA)
        n_modules = sum(len(st["modules"]) for st in record["stages"])
        assert n_modules == sum(cfg.model.patch_modules) + sum(cfg.model.cross_modules)

    def test_cross_entries_have_label_destinations(self):
        model, cfg = tiny_model()
        record = model.export_connections(small_image(), label_names(4))
        for stage in record["stages"]:
            for module in stage["modules"]:
                dests = {e["dest"] for e in module["edges"]}
                if module["kind"] == "cross":
                    assert dests == set(range(cfg.model.num_labels))

    def test_recorded_indices_valid_against_source_counts(self):
        model, _ = tiny_model()
        trace = model.forward(small_image(), capture_graphs=True)
        for snap in trace.snapshots:
            assert snap.graph.idx.min() >= 0
            assert snap.graph.idx.max() < snap.src_count

    def test_name_count_checked(self):
        model, _ = tiny_model()
        with pytest.raises(ValueError):
            model.export_connections(small_image(), ["just-one"])


class TestModelConfigValidation:
    def test_dims_not_divisible_by_groups(self):
        with pytest.raises(ValueError, match="divisible"):
            tiny_model(dims=[9, 16, 16, 16])

    def test_image_not_divisible_by_patch(self):
        with pytest.raises(ValueError, match="divisible"):
            tiny_model(patch_size=5)

    def test_grid_too_small_for_four_stages(self):
        with pytest.raises(ValueError, match="stages"):
            tiny_model(patch_size=8)

    def test_decreasing_dims_rejected(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            tiny_model(dims=[16, 8, 16, 16])


class TestEndToEndGradient:
    def test_quick_subset_gradcheck(self):
        model, cfg = tiny_model(seed=1)
        img = small_image(13)
        targets = np.array([1, 0, 1, 0])
        trace = model.forward(img, capture_graphs=True)
        frozen = [s.graph for s in trace.snapshots]
        loss_cfg = LossConfig()

        def f():
            out = model.forward(img, graph_override=frozen)
            return total_loss(out.logits, targets, loss_cfg)

        result = finite_difference_gradcheck(f, model.store, h=1e-5, sample_fraction=0.01, seed=0)
        assert result.max_rel_error <= 1e-4, result
