"""Unit tests for model assembly, forward pass, and checkpointing."""
import numpy as np
import pytest

from gcnrwz import graph as graphmod
from gcnrwz import model as modelmod
from gcnrwz.model import ModelConfig


@pytest.fixture
def small_graph():
    return graphmod.build_graph([("a", "b", 1.0), ("b", "c", 2.0)])


def small_config(**overrides):
    base = dict(history=8, horizon=2, heads=1, channels=3, k_t=3,
                d_hidden=2, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


class TestConfigValidation:
    def test_defaults_are_valid(self):
        ModelConfig().validate()

    def test_history_must_cover_conv_shrinkage(self):
        with pytest.raises(ValueError, match="too short"):
            small_config(history=4).validate()

    def test_unknown_fusion_variant_rejected(self):
        with pytest.raises(ValueError, match="fusion variant"):
            small_config(fusion_variant="nope").validate()

    def test_non_positive_lambda_rejected(self):
        with pytest.raises(ValueError, match="lambda must be positive"):
            small_config(kernel_lambda=0.0).validate()

    def test_block_shapes_track_time_shrinkage(self):
        cfg = small_config(history=12, channels=5, k_t=3, blocks=2)
        assert cfg.block_shapes(7) == [(1, 5, 12), (5, 5, 10)]


class TestInitModel:
    def test_same_seed_same_parameters(self, small_graph):
        m1 = modelmod.init_model(small_config(), small_graph)
        m2 = modelmod.init_model(small_config(), small_graph)
        assert list(m1.registry) == list(m2.registry)
        for name in m1.registry:
            assert np.array_equal(m1.registry[name].values,
                                  m2.registry[name].values), name

    def test_different_seed_differs(self, small_graph):
        m1 = modelmod.init_model(small_config(seed=0), small_graph)
        m2 = modelmod.init_model(small_config(seed=1), small_graph)
        assert not np.array_equal(m1.registry["head.w_out"].values,
                                  m2.registry["head.w_out"].values)

    def test_fusion_weights_registered_by_variant(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        assert "fusion.w_s" in m.registry and "fusion.w_c" in m.registry
        m2 = modelmod.init_model(small_config(fusion_variant="learned-c-only"),
                                 small_graph)
        assert "fusion.w_s" not in m2.registry
        m3 = modelmod.init_model(small_config(include_construction=False),
                                 small_graph)
        assert "fusion.w_c" not in m3.registry

    def test_attention_divisibility_enforced(self, small_graph):
        # temporal attention width C*N = 3 is not divisible by 2 heads
        with pytest.raises(ValueError, match="divisible by heads"):
            modelmod.init_model(small_config(heads=2), small_graph)

    def test_parameter_count_matches_registry(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        assert m.parameter_count() == sum(
            t.values.size for t in m.registry.values())


class TestForward:
    def test_output_shape(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        x = np.random.default_rng(0).uniform(0, 1, (4, 2, 3, 8))
        assert modelmod.predict(m, x).shape == (4, 3, 2)

    def test_channel_count_checked(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        with pytest.raises(ValueError, match="channel axis"):
            modelmod.predict(m, np.zeros((1, 1, 3, 8)))

    def test_node_count_checked(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        with pytest.raises(ValueError, match="node axis"):
            modelmod.predict(m, np.zeros((1, 2, 5, 8)))

    def test_history_checked(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        with pytest.raises(ValueError, match="time axis"):
            modelmod.predict(m, np.zeros((1, 2, 3, 6)))

    def test_construction_channel_changes_output_after_w_c_nudge(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        m.fusion_w_c.values[:] = 0.5
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (2, 2, 3, 8))
        x2 = x.copy()
        x2[:, 1] = 0.0
        assert not np.allclose(modelmod.predict(m, x), modelmod.predict(m, x2))

    def test_minus_variant_ignores_single_channel_input(self, small_graph):
        m = modelmod.init_model(small_config(include_construction=False),
                                small_graph)
        x = np.random.default_rng(2).uniform(0, 1, (2, 1, 3, 8))
        assert modelmod.predict(m, x).shape == (2, 3, 2)

    def test_chebyshev_mode_runs(self, small_graph):
        m = modelmod.init_model(small_config(spatial_mode="chebyshev", cheb_k=3),
                                small_graph)
        x = np.random.default_rng(3).uniform(0, 1, (2, 2, 3, 8))
        assert np.all(np.isfinite(modelmod.predict(m, x)))

    def test_gradients_flow_to_every_parameter(self, small_graph):
        from gcnrwz import autodiff as ad
        m = modelmod.init_model(small_config(), small_graph)
        x = np.random.default_rng(4).uniform(0.2, 0.8, (3, 2, 3, 8))
        out = modelmod.forward(m, x)
        ad.backward(ad.reduce_sum(ad.hadamard(out, out)))
        dead = [name for name, t in m.registry.items() if t.grad is None
                or not np.any(t.grad)]
        # ReLU can zero small slices, but no parameter group should be dead
        assert dead == [], f"no gradient reached: {dead}"


class TestCheckpoint:
    def _roundtrip(self, small_graph, **overrides):
        m = modelmod.init_model(small_config(**overrides), small_graph)
        blob = modelmod.save_checkpoint(m, extras={"note": 1})
        restored, extras = modelmod.load_checkpoint(blob, small_graph)
        return m, restored, extras, blob

    def test_roundtrip_restores_parameters_exactly(self, small_graph):
        m, restored, extras, _ = self._roundtrip(small_graph)
        for name in m.registry:
            assert np.array_equal(m.registry[name].values,
                                  restored.registry[name].values), name
        assert extras == {"note": 1}

    def test_save_is_deterministic(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        assert modelmod.save_checkpoint(m) == modelmod.save_checkpoint(m)

    def test_bad_magic_rejected(self, small_graph):
        _, _, _, blob = self._roundtrip(small_graph)
        with pytest.raises(ValueError, match="magic"):
            modelmod.load_checkpoint(b"XXXXXXXX" + blob[8:], small_graph)

    def test_corruption_detected_by_crc(self, small_graph):
        _, _, _, blob = self._roundtrip(small_graph)
        corrupted = bytearray(blob)
        corrupted[len(blob) // 2] ^= 0xFF
        with pytest.raises(ValueError, match="CRC"):
            modelmod.load_checkpoint(bytes(corrupted), small_graph)

    def test_truncation_detected(self, small_graph):
        _, _, _, blob = self._roundtrip(small_graph)
        with pytest.raises(ValueError):
            modelmod.load_checkpoint(blob[:-20], small_graph)

    def test_wrong_roster_rejected(self, small_graph):
        _, _, _, blob = self._roundtrip(small_graph)
        other = graphmod.build_graph([("x", "y", 1.0), ("y", "z", 2.0)])
        with pytest.raises(ValueError, match="segment roster"):
            modelmod.load_checkpoint(blob, other)

    def test_config_travels_with_checkpoint(self, small_graph):
        _, restored, _, _ = self._roundtrip(small_graph, horizon=2, channels=3)
        assert restored.config.horizon == 2
        assert restored.config.channels == 3

    def test_non_finite_parameters_refused_on_save(self, small_graph):
        m = modelmod.init_model(small_config(), small_graph)
        m.registry["head.w_out"].values[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            modelmod.save_checkpoint(m)
