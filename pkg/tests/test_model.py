import numpy as np
import pytest

from petforge.backbone import BackboneConfig
from petforge.head import HeadConfig
from petforge.model import (SpeakerModel, analytic_trainable, backbone_total, backend_count,
                            count_trainable, is_trainable)
from petforge.pet import METHODS, MethodSpec

from conftest import TINY, TINY_LEN, tiny_model

MID = BackboneConfig(num_layers=3, hidden=32, heads=4, ffn_dim=64, conv_spec=((5, 3, 16), (3, 2, 24)))


def mid_spec(method):
    return MethodSpec(method, bottleneck=8, inter_dim=12, prompt_length=5, lora_rank=4)


class TestFreezing:
    def test_backend_only(self):
        spec = MethodSpec("backend_only")
        assert is_trainable("head.backend.segment6.weight", spec)
        assert not is_trainable("head.layer_weights", spec)
        assert not is_trainable("backbone.block1.ffn_in.weight", spec)

    def test_weighted_sum_trains_layer_weights(self):
        assert is_trainable("head.layer_weights", MethodSpec("weighted_sum"))

    def test_ft_keeps_conv_frozen(self):
        spec = MethodSpec("ft")
        assert is_trainable("backbone.block1.attn.query.weight", spec)
        assert is_trainable("backbone.proj.weight", spec)
        assert not is_trainable("backbone.conv0.weight", spec)
        assert not is_trainable("backbone.mask_emb", spec)

    @pytest.mark.parametrize("method", [m for m in METHODS if m not in ("ft",)])
    def test_backbone_frozen_for_pet_methods(self, method):
        reg = tiny_model(method).registry
        assert all(not n.startswith("backbone.") for n in reg.trainable())

    def test_registry_sets_flags(self):
        reg = tiny_model("unipet").registry
        assert all(reg[n].trainable for n in reg.trainable())
        assert not any(reg[n].trainable for n in reg.frozen())
        assert len(reg.trainable()) + len(reg.frozen()) == len(reg)


class TestCounting:
    def test_backbone_total_matches_enumeration(self):
        reg = SpeakerModel(MID, MethodSpec("backend_only")).registry
        assert reg.count(owners=("backbone",)) == backbone_total(MID)

    @pytest.mark.parametrize("method", METHODS)
    def test_analytic_equals_enumerated(self, method):
        spec = mid_spec(method)
        assert count_trainable(spec, MID)[0] == analytic_trainable(spec, MID)

    def test_learnable_scale_adds_one(self):
        a = analytic_trainable(mid_spec("inner"), MID)
        spec = MethodSpec("inner", bottleneck=8, scale="learnable")
        assert count_trainable(spec, MID)[0] == analytic_trainable(spec, MID) == a + 1

    def test_paper_scale_closed_forms(self):
        c = BackboneConfig.paper()
        assert analytic_trainable(MethodSpec("prompt"), c) == 12 * 30 * 768
        assert analytic_trainable(MethodSpec("lora"), c) == 12 * 2 * 2 * 768 * 64

    def test_composition(self):
        parts = {m: analytic_trainable(mid_spec(m), MID) for m in ("inner", "inter", "prompt", "inner_inter",
                                                                   "unipet", "unipet_nogate")}
        assert parts["inner_inter"] == parts["inner"] + parts["inter"]
        assert parts["unipet_nogate"] == parts["inner_inter"] + parts["prompt"]
        gates = (2 * MID.num_layers + 1) * (MID.hidden + 1)
        assert parts["unipet"] - parts["unipet_nogate"] == gates

    def test_fractions_ordered(self):
        frac = {m: count_trainable(mid_spec(m), MID)[1] for m in ("prompt", "inner", "unipet", "ft")}
        assert 0 < frac["prompt"] < frac["inner"] < frac["unipet"] < frac["ft"] < 1

    def test_backend_count_excludes_classifier(self):
        a = backend_count(MethodSpec("backend_only"), MID, HeadConfig(embed_dim=8, tdnn_channels=4), 3)
        b = backend_count(MethodSpec("backend_only"), MID, HeadConfig(embed_dim=8, tdnn_channels=4), 30)
        assert a == b > 0


class TestZeroInitIdentity:
    @pytest.mark.parametrize("method", METHODS)
    def test_logits_equal_reference(self, method, rng):
        m = tiny_model(method)
        wave = rng.normal(size=(2, TINY_LEN))
        out = m.logits(wave, {"prompt": 0.0}).data
        np.testing.assert_allclose(out, m.reference_logits(wave).data, atol=1e-6, rtol=0)

    def test_prompts_matter_when_gate_open(self, rng):
        m = tiny_model("prompt")
        wave = rng.normal(size=(2, TINY_LEN))
        assert not np.allclose(m.logits(wave).data, m.reference_logits(wave).data)


class TestState:
    def test_round_trip(self):
        a, b = tiny_model("unipet", seed=1), tiny_model("unipet", seed=2)
        b.load_state(a.state())
        for n in a.registry:
            assert a.registry[n].data.tobytes() == b.registry[n].data.tobytes()

    def test_missing_key(self):
        state = dict(tiny_model("inner").state())
        state.pop("pet.inner1.up.weight")
        with pytest.raises(KeyError, match="pet.inner1.up.weight"):
            tiny_model("inner").load_state(state)

    def test_seed_reproducible(self):
        a, b = tiny_model("lora", seed=9), tiny_model("lora", seed=9)
        assert all(a.registry[n].data.tobytes() == b.registry[n].data.tobytes() for n in a.registry)

    def test_dtype(self):
        m = SpeakerModel(TINY, MethodSpec.desk("inner", bottleneck=4), seed=0, dtype=np.float32)
        assert all(p.dtype == np.float32 for _, p in m.named_parameters())
