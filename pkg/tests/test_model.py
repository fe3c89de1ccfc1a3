"""
Tests for the gated multi-expert depth network and its sub-networks.
"""

import numpy as np
import pytest

from src.config import ABLATION_MODES
from src.errors import DimensionError, ParameterError
from src.model.atrfas import (
    AtrFasModel,
    attention_gate,
    classify,
    expert_forward,
    forward,
    fuse_frames,
    gate_parameter_names,
    mix_experts,
    normalize_attention,
    stem_forward,
    tie_experts,
    type_gate,
)
from src.model.layers import count_parameters
from src.ndarr import ops
from src.ndarr.rng import RngStream
from src.ndarr.tensor import Tensor, no_grad, precision
from src.training.losses import LossWeights, cls_loss, depth_loss, gate_loss, make_gate_target, total_loss


def _model(n_frames=3, size=(16, 16), seed=0, **kwargs) -> AtrFasModel:
    return AtrFasModel(n_frames=n_frames, height=size[0], width=size[1], seed=seed, stem_channels=8, **kwargs)


def _input(n_frames=3, size=(16, 16), seed=1) -> Tensor:
    return Tensor(RngStream(seed).normal(shape=(n_frames, 1) + tuple(size)))


def _zero(module) -> None:
    for p in module.parameters():
        p.data[...] = 0.0


# =============================================================================
# Stem & position embedding
# =============================================================================

class TestStem:
    def test_output_shape_at_default_geometry(self):
        model = AtrFasModel(n_frames=6, height=64, width=64, seed=0)
        with no_grad():
            out = stem_forward(model, _input(6, (64, 64)))
        assert out.shape == (6, 16, 16, 16)

    def test_zero_embedding_leaves_stem_output(self):
        model = _model()
        x = _input()
        model.pos_embed.data[...] = 0.0
        with no_grad():
            plain = ops.relu(model.stem2(ops.relu(model.stem1(x))))
            np.testing.assert_array_equal(stem_forward(model, x).data, plain.data)

    def test_embedding_gradient_of_mean(self):
        model = _model()
        ops.mean(stem_forward(model, _input())).backward()
        c, h, w = model.pos_embed.shape
        np.testing.assert_allclose(model.pos_embed.grad, 1.0 / (c * h * w), rtol=1e-5)

    def test_rejects_indivisible_input(self):
        with pytest.raises(DimensionError):
            stem_forward(_model(), _input(3, (14, 16)))

    def test_embedding_is_shared_across_frames(self):
        model = _model()
        x = Tensor(np.repeat(_input(1).data, 3, axis=0))
        with no_grad():
            out = stem_forward(model, x).data
        np.testing.assert_allclose(out[0], out[2], atol=1e-6)


# =============================================================================
# Experts & gates
# =============================================================================

class TestExperts:
    def test_zeroed_expert_outputs_half(self):
        model = _model()
        _zero(model.experts[1])
        with no_grad():
            out = expert_forward(model, 2, stem_forward(model, _input()))
        assert out.shape == (3, 1, 4, 4)
        np.testing.assert_allclose(out.data, 0.5)

    def test_outputs_are_probabilities(self):
        model = _model()
        with no_grad():
            out = expert_forward(model, 1, stem_forward(model, _input())).data
        assert (out >= 0).all() and (out <= 1).all()

    def test_tied_experts_agree_but_stay_separate(self):
        model = _model()
        tie_experts(model)
        with no_grad():
            x0 = stem_forward(model, _input())
            outs = [expert_forward(model, i, x0).data for i in (1, 2, 3)]
        np.testing.assert_array_equal(outs[0], outs[1])
        np.testing.assert_array_equal(outs[0], outs[2])
        assert model.experts[0].out.weight is not model.experts[1].out.weight

    def test_index_is_one_based(self):
        model = _model()
        x0 = stem_forward(model, _input())
        with pytest.raises(ParameterError):
            expert_forward(model, 0, x0)
        with pytest.raises(ParameterError):
            expert_forward(model, 4, x0)


class TestTypeGate:
    def test_zeroed_gate_gives_zero_logits(self):
        model = _model()
        for name in ("gate1", "gate2", "gate3", "gate_fc1", "gate_fc2"):
            _zero(getattr(model, name))
        with no_grad():
            g = type_gate(model, _input())
        assert g.shape == (3,)
        np.testing.assert_array_equal(g.data, 0.0)

    def test_output_layer_is_initialised(self):
        model = _model()
        limit = np.sqrt(6.0 / (model.gate_fc2.weight.shape[0] + 3))
        assert np.abs(model.gate_fc2.weight.data).max() > 0.0
        assert np.abs(model.gate_fc2.weight.data).max() <= limit
        with no_grad():
            g = type_gate(model, _input())
        assert np.ptp(g.data) > 0.0

    def test_logits_ignore_input_scale_and_offset(self):
        model = _model()
        x = _input()
        with no_grad():
            base = type_gate(model, x).data
            shifted = type_gate(model, Tensor(x.data * 3.0 + 2.0)).data
        np.testing.assert_allclose(shifted, base, atol=1e-4)

    def test_parameter_names_cover_the_gate_only(self):
        model = _model()
        names = gate_parameter_names(model)
        assert "gate_fc2.weight" in names and "gate1.weight" in names
        assert all(name.startswith("gate") for name in names)
        assert len(names) == 10

    def test_needs_configured_frame_count(self):
        with pytest.raises(DimensionError):
            type_gate(_model(n_frames=3), _input(4))


class TestAttentionGate:
    def test_frames_are_processed_independently(self):
        model = _model()
        x = _input(4)
        perm = [2, 0, 3, 1]
        with no_grad():
            maps = attention_gate(model, x).data
            permuted = attention_gate(model, Tensor(x.data[perm])).data
        assert maps.shape == (4, 4, 4)
        np.testing.assert_allclose(permuted, maps[perm], atol=1e-6)

    def test_zeroed_gate_gives_uniform_attention(self):
        model = _model()
        _zero(model.attn1)
        _zero(model.attn2)
        _zero(model.attn_net)
        with no_grad():
            A = normalize_attention(attention_gate(model, _input(4))).data
        np.testing.assert_allclose(A, 0.25, atol=1e-7)

    def test_attention_sums_to_one_per_pixel(self):
        model = _model()
        with no_grad():
            A = normalize_attention(attention_gate(model, _input(5))).data
        np.testing.assert_allclose(A.sum(axis=0, dtype=np.float64), 1.0, atol=1e-6)


# =============================================================================
# Mixing, fusion and the head
# =============================================================================

class TestMixAndFuse:
    def test_equal_logits_average_the_experts(self):
        X_bar = Tensor(np.stack([np.full((2, 2, 2), v) for v in (0.3, 0.6, 0.9)]))
        out = mix_experts(X_bar, Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.6, atol=1e-6)

    def test_matches_weighted_sum_oracle(self, rng):
        X_bar = rng.uniform(shape=(3, 4, 2, 2))
        g = rng.normal(shape=3)
        w = np.exp(g) / np.exp(g).sum()
        expected = np.tensordot(w, X_bar, axes=1)
        np.testing.assert_allclose(mix_experts(Tensor(X_bar), Tensor(g)).data, expected, atol=1e-6)

    def test_dominant_logit_selects_an_expert(self):
        X_bar = Tensor(np.stack([np.full((1, 2, 2), v) for v in (0.1, 0.2, 0.7)]))
        out = mix_experts(X_bar, Tensor([0.0, 0.0, 50.0]))
        np.testing.assert_allclose(out.data, 0.7, atol=1e-6)

    def test_gate_size_must_match(self):
        with pytest.raises(DimensionError):
            mix_experts(Tensor(np.zeros((3, 2, 2, 2))), Tensor(np.zeros(2)))

    def test_uniform_attention_takes_the_frame_mean(self, rng):
        X_prime = rng.uniform(shape=(4, 3, 3))
        out = fuse_frames(Tensor(X_prime), Tensor(np.zeros((4, 3, 3))))
        np.testing.assert_allclose(out.data, X_prime.mean(axis=0), atol=1e-6)

    def test_fusion_shape_mismatch(self):
        with pytest.raises(DimensionError):
            fuse_frames(Tensor(np.zeros((4, 3, 3))), Tensor(np.zeros((3, 3, 3))))

    def test_gradient_reaches_every_expert(self):
        model = _model()
        forward(model, _input(), "DGM").prob.backward()
        for expert in model.experts:
            assert np.abs(expert.out.weight.grad).sum() > 0

    def test_classify_gives_a_probability(self):
        model = _model()
        with no_grad():
            p = classify(model, Tensor(np.full((4, 4), 0.5)))
        assert p.shape == ()
        assert 0.0 < p.item() < 1.0


# =============================================================================
# Forward modes
# =============================================================================

class TestForward:
    @pytest.mark.parametrize("n_frames,size", [(3, (8, 12)), (5, (16, 16)), (8, (12, 8))])
    def test_output_shapes(self, n_frames, size):
        model = _model(n_frames=n_frames, size=size)
        with no_grad():
            out = forward(model, _input(n_frames, size), "DGM")
        h, w = size[0] // 4, size[1] // 4
        assert out.g.shape == (3,)
        assert out.A.shape == (n_frames, h, w)
        assert out.frame_depths.shape == (n_frames, h, w)
        assert out.depth.shape == (h, w)
        assert out.prob.shape == ()

    @pytest.mark.parametrize("mode", ABLATION_MODES)
    def test_every_mode_runs(self, mode):
        model = _model()
        with no_grad():
            out = forward(model, _input(), mode)
        assert 0.0 < out.prob.item() < 1.0
        assert (out.g is None) == (mode not in ("RG", "RG_ATT", "TG", "DGM"))

    def test_avg_with_tied_experts_equals_single_expert(self):
        model = _model()
        tie_experts(model)
        x = _input()
        with no_grad():
            single = forward(model, x, "woMEMM")
            avg = forward(model, x, "Avg")
        np.testing.assert_allclose(avg.frame_depths.data, single.frame_depths.data, atol=1e-6)
        assert avg.prob.item() == pytest.approx(single.prob.item(), abs=1e-6)

    def test_sum_is_three_times_avg(self):
        model = _model()
        x = _input()
        with no_grad():
            total = forward(model, x, "Sum").frame_depths.data
            avg = forward(model, x, "Avg").frame_depths.data
        np.testing.assert_allclose(total, 3 * avg, atol=1e-6)

    def test_cat_starts_as_avg(self):
        model = _model()
        x = _input()
        with no_grad():
            cat = forward(model, x, "Cat").frame_depths.data
            avg = forward(model, x, "Avg").frame_depths.data
        np.testing.assert_allclose(cat, avg, atol=1e-6)

    def test_fixed_random_gate_logits(self):
        model = _model()
        x = _input()
        logits = np.array([0.3, -1.0, 2.0])
        with no_grad():
            a = forward(model, x, "RG", rg_logits=logits)
            b = forward(model, x, "RG", rg_logits=logits)
        np.testing.assert_array_equal(a.depth.data, b.depth.data)
        np.testing.assert_allclose(a.g.data, logits, atol=1e-7)

    def test_unknown_mode(self):
        with pytest.raises(ParameterError):
            forward(_model(), _input(), "Max")

    def test_same_seed_same_model(self):
        a, b = _model(seed=5), _model(seed=5)
        for (name_a, pa), (name_b, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert name_a == name_b
            np.testing.assert_array_equal(pa.data, pb.data)
        assert count_parameters(a) == count_parameters(b) > 0

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences_through_full_pipeline(self, seed):
        eps = 1e-6
        with precision(np.float64):
            model = _model(n_frames=3, size=(8, 8), seed=seed)
            x = Tensor(RngStream(100 + seed).normal(shape=(3, 1, 8, 8)))
            forward(model, x, "DGM").prob.backward()

            picker = RngStream(6)
            params = list(model.named_parameters())
            analytic, numeric = [], []
            for _ in range(20):
                name, p = params[int(picker.integers(0, len(params)))]
                j = int(picker.integers(0, p.size))
                flat = p.data.reshape(-1)
                original = flat[j]
                with no_grad():
                    flat[j] = original + eps
                    plus = forward(model, x, "DGM").prob.item()
                    flat[j] = original - eps
                    minus = forward(model, x, "DGM").prob.item()
                flat[j] = original
                analytic.append(0.0 if p.grad is None else p.grad.reshape(-1)[j])
                numeric.append((plus - minus) / (2 * eps))

        analytic, numeric = np.array(analytic), np.array(numeric)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-3

    def test_training_loss_gradients_stay_finite(self):
        model = _model(n_frames=3, size=(8, 8), seed=2)
        batches = RngStream(77)
        weights = LossWeights()
        for _ in range(100):
            outs, labels, gates = [], [], []
            for _ in range(2):
                scale = float(batches.uniform(0.01, 100.0))
                outs.append(forward(model, Tensor(batches.normal(0.0, scale, shape=(3, 1, 8, 8))), "DGM"))
                label = int(batches.integers(0, 2))
                labels.append(label)
                gates.append(make_gate_target(label, "none" if label == 0 else "replay", 3))
            depth_target = batches.uniform(shape=(2, 2, 2))
            loss = total_loss(
                cls_loss(ops.stack([o.prob for o in outs]), np.array(labels)),
                depth_loss(ops.stack([o.depth for o in outs]), depth_target),
                gate_loss(ops.stack([o.g for o in outs]), np.stack(gates)),
                weights,
            )
            model.zero_grad()
            loss.backward()
            assert np.isfinite(loss.item())
            for name, p in model.named_parameters():
                assert p.grad is None or np.isfinite(p.grad).all(), name
