import numpy as np
import pytest

from imexreg.nets import (ContinualModel, EmaState, ModelConfig, ema_forward,
                          ema_update, encode_project, forward_all)
from imexreg.tensor import ShapeError, Tensor, backward


def small_config(**overrides):
    base = dict(input_dim=7, num_classes=10, encoder_widths=(12, 8),
                proj_head_widths=(8, 8, 6), clf_proj_widths=(6, 4))
    base.update(overrides)
    return ModelConfig(**base)


def build_model(seed=0, **overrides):
    return ContinualModel.build(small_config(**overrides), np.random.default_rng(seed))


class TestModelConfig:
    def test_defaults_have_three_and_two_affine_layers(self):
        cfg = ModelConfig(input_dim=5, num_classes=3)
        assert len(cfg.proj_head_widths) == 3
        assert len(cfg.clf_proj_widths) == 2
        assert cfg.proj_dim == 128

    def test_rejects_bad_widths(self):
        with pytest.raises(ValueError):
            ModelConfig(input_dim=5, num_classes=3, encoder_widths=())
        with pytest.raises(ValueError):
            ModelConfig(input_dim=5, num_classes=3, encoder_widths=(4, 0))
        with pytest.raises(ValueError):
            ModelConfig(input_dim=0, num_classes=3)


class TestForward:
    def test_output_shapes(self):
        model = build_model()
        x = Tensor(np.random.default_rng(1).normal(size=(5, 7)))
        feats, logits, z, c = forward_all(model, x)
        assert feats.shape == (5, 8)
        assert logits.shape == (5, 10)
        assert z.shape == (5, 6)
        assert c.shape == (5, 4)

    def test_projections_are_unit_rows(self):
        model = build_model(seed=3)
        x = Tensor(np.random.default_rng(2).normal(size=(9, 7)))
        _, _, z, c = forward_all(model, x)
        np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(c.data, axis=1), 1.0, atol=1e-12)

    def test_zero_classifier_gives_zero_logits(self):
        model = build_model()
        model.params["g_lin.W"].data = np.zeros_like(model.params["g_lin.W"].data)
        model.params["g_lin.b"].data = np.zeros_like(model.params["g_lin.b"].data)
        x = Tensor(np.random.default_rng(0).normal(size=(4, 7)))
        _, logits, _, _ = forward_all(model, x)
        np.testing.assert_array_equal(logits.data, np.zeros((4, 10)))

    def test_input_dim_mismatch(self):
        model = build_model()
        with pytest.raises(ShapeError, match="expected input"):
            forward_all(model, Tensor(np.zeros((3, 6))))

    def test_forward_is_deterministic(self):
        model = build_model(seed=5)
        x = np.random.default_rng(4).normal(size=(6, 7))
        a = forward_all(model, Tensor(x))
        b = forward_all(model, Tensor(x))
        for ta, tb in zip(a, b):
            assert ta.data.tobytes() == tb.data.tobytes()

    def test_encode_project_matches_forward_all(self):
        model = build_model(seed=6)
        x = np.random.default_rng(5).normal(size=(4, 7))
        z_full = forward_all(model, Tensor(x))[2]
        z_only = encode_project(model, Tensor(x))
        np.testing.assert_array_equal(z_full.data, z_only.data)

    def test_parameters_flow_gradients(self):
        model = build_model(seed=7)
        x = Tensor(np.random.default_rng(6).normal(size=(3, 7)))
        _, logits, z, c = forward_all(model, x)
        (logits.sq_norm() + z.sq_norm() + c.sq_norm()).backward()
        touched = [name for name, p in model.params.items() if p.grad is not None]
        assert set(touched) == set(model.params)

    def test_build_is_seeded(self):
        a, b = build_model(seed=9), build_model(seed=9)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)
        c = build_model(seed=10)
        assert any(not np.array_equal(a.params[n].data, c.params[n].data) for n in a.params)


class TestEma:
    def test_construction_mirrors_exactly(self):
        model = build_model()
        ema = EmaState.from_model(model, 0.999, 0.5, np.random.default_rng(0))
        for name in model.params:
            np.testing.assert_array_equal(ema.params[name].data, model.params[name].data)
            assert not ema.params[name].requires_grad

    def test_fixed_point_when_mirror_equals_model(self):
        model = build_model()
        ema = EmaState.from_model(model, 0.7, 1.0, np.random.default_rng(0))
        fired = ema_update(ema, model)
        assert fired
        for name in model.params:
            np.testing.assert_allclose(ema.params[name].data, model.params[name].data,
                                       rtol=0, atol=1e-15)

    def test_rate_zero_never_fires(self):
        model = build_model()
        ema = EmaState.from_model(model, 0.9, 0.0, np.random.default_rng(1))
        before = {n: p.data.copy() for n, p in ema.params.items()}
        assert not any(ema_update(ema, model) for _ in range(1000))
        for name in before:
            np.testing.assert_array_equal(ema.params[name].data, before[name])

    def test_geometric_recursion_on_scalar_fixture(self):
        # mirror starts at 0, model fixed at 1: after k fired updates the
        # mirror equals 1 - eta^k (closed form of the recursion)
        cfg = ModelConfig(input_dim=1, num_classes=1, encoder_widths=(1,),
                          proj_head_widths=(1,), clf_proj_widths=(1,))
        model = ContinualModel.build(cfg, np.random.default_rng(0))
        for p in model.params.values():
            p.data = np.ones_like(p.data)
        ema = EmaState.from_model(model, 0.999, 1.0, np.random.default_rng(2))
        for p in ema.params.values():
            p.data = np.zeros_like(p.data)
        eta = 0.999
        for k in range(1, 1001):
            assert ema_update(ema, model)
            expected = 1.0 - eta ** k
            got = float(ema.params["f.0.W"].data[0, 0])
            assert abs(got - expected) < 1e-12, (k, got, expected)

    def test_firing_frequency_matches_rate(self):
        model = build_model()
        for gamma in (0.08, 0.15, 0.4):
            ema = EmaState.from_model(model, 1.0, gamma, np.random.default_rng(42))
            n = 10_000
            fired = sum(ema_update(ema, model) for _ in range(n))
            sigma = np.sqrt(gamma * (1 - gamma) * n)
            assert abs(fired - gamma * n) <= 3 * sigma, (gamma, fired)

    def test_max_norm_gap_decays_geometrically(self):
        model = build_model(seed=1)
        ema = EmaState.from_model(model, 0.9, 1.0, np.random.default_rng(3))
        for p in ema.params.values():
            p.data = p.data + 1.0
        gaps = []
        for _ in range(5):
            gap = max(np.abs(ema.params[n].data - model.params[n].data).max()
                      for n in model.params)
            gaps.append(gap)
            ema_update(ema, model)
        for a, b in zip(gaps, gaps[1:]):
            np.testing.assert_allclose(b, 0.9 * a, rtol=1e-12)

    def test_ema_forward_mirror_identity(self):
        model = build_model(seed=2)
        ema = EmaState.from_model(model, 0.9, 1.0, np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(4, 7))
        live = forward_all(model, Tensor(x))
        mirrored = ema_forward(ema, model.config, Tensor(x))
        for a, b in zip(live, mirrored):
            assert a.data.tobytes() == b.data.tobytes()

    def test_ema_outputs_are_detached(self):
        model = build_model(seed=3)
        ema = EmaState.from_model(model, 0.9, 1.0, np.random.default_rng(6))
        x = Tensor(np.random.default_rng(7).normal(size=(3, 7)))
        _, logits_e, z_e, _ = ema_forward(ema, model.config, x)
        assert not logits_e.requires_grad and not z_e.requires_grad
        assert backward((logits_e.sq_norm() + z_e.sq_norm())) == {}
        assert all(p.grad is None for p in ema.params.values())

    def test_outputs_diverge_after_fired_update(self):
        model = build_model(seed=4)
        ema = EmaState.from_model(model, 0.5, 1.0, np.random.default_rng(8))
        for p in model.params.values():
            p.data = p.data + 0.3
        assert ema_update(ema, model)
        x = np.random.default_rng(9).normal(size=(4, 7))
        live = forward_all(model, Tensor(x))[1].data
        mirrored = ema_forward(ema, model.config, Tensor(x))[1].data
        assert np.abs(live - mirrored).max() > 1e-6
