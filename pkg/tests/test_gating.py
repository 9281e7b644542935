import numpy as np
import pytest

from dualgate.errors import ConfigurationError, ContractError
from dualgate.gating import (
    GateSamplerConfig,
    GatingParams,
    gate_scores,
    gumbel_mask,
    hard_mask,
    logistic_noise,
    temperature,
)
from dualgate.tensorcore import Tensor, parameter


def make_gate(c_prev=16, c_block=32, seed=0, **kw):
    return GatingParams(c_prev, c_block, rng=np.random.default_rng(seed), **kw)


def test_hidden_width_uses_reduction_rate_four():
    g = make_gate(16, 32)
    assert g.hidden == 4
    assert g.w1.shape == (4, 16, 1, 1)
    assert g.w2.shape == (32, 4, 1, 1)
    assert gate_scores(Tensor(np.ones((3, 16))), g).shape == (3, 32)


def test_context_width_must_divide():
    with pytest.raises(ConfigurationError):
        GatingParams(10, 8)


def test_zero_w2_and_bias_gives_zero_scores():
    g = make_gate(bias_init=0.0, w2_std=0.0)
    ctx = Tensor(np.random.default_rng(1).standard_normal((5, 16)))
    np.testing.assert_array_equal(gate_scores(ctx, g).data, 0.0)


def test_scores_match_matrix_product_oracle():
    g = make_gate(bias_init=0.5, w2_std=0.3)
    ctx = np.random.default_rng(2).standard_normal((6, 16))
    got = gate_scores(Tensor(ctx), g).data
    # oracle: two 1x1 convolutions on a 1x1 map are matrix products
    h = ctx @ g.w1.data.reshape(4, 16).T.astype(np.float64)
    h = (h - h.mean(0)) / np.sqrt(h.var(0) + 1e-5)
    h = np.maximum(h, 0)
    want = h @ g.w2.data.reshape(32, 4).T + g.bias.data
    np.testing.assert_allclose(got, want, atol=1e-5)


def test_channel_mismatch():
    with pytest.raises(ConfigurationError):
        gate_scores(Tensor(np.ones((2, 8))), make_gate())


def test_saturated_score_always_on():
    scores = Tensor(np.full((64, 16), 1e6))
    for stream in range(5):
        m = gumbel_mask(scores, 1.0, stream, GateSamplerConfig())
        assert (m.hard == 1).all()


def test_zero_score_opens_half_the_time():
    scores = Tensor(np.zeros((100, 100)))
    m = gumbel_mask(scores, 1.0, 123, GateSamplerConfig())
    assert abs(m.hard.mean() - 0.5) < 0.02


def test_zero_temperature_limit():
    rng = np.random.default_rng(4)
    s = rng.standard_normal((8, 10))
    g = logistic_noise(s.shape, 77)
    m = gumbel_mask(Tensor(s), 1e-4, 77, GateSamplerConfig(hard_forward=False))
    np.testing.assert_array_equal(np.rint(m.mask.data), (s + g > 0).astype(float))


def test_hard_forward_mask_is_binary_and_reproducible():
    s = Tensor(np.random.default_rng(5).standard_normal((4, 6)))
    a = gumbel_mask(s, 2.0, 9, GateSamplerConfig())
    b = gumbel_mask(s, 2.0, 9, GateSamplerConfig())
    assert set(np.unique(a.mask.data)) <= {0.0, 1.0}
    np.testing.assert_array_equal(a.mask.data, b.mask.data)
    c = gumbel_mask(s, 2.0, 10, GateSamplerConfig())
    assert not np.array_equal(logistic_noise((4, 6), 9), logistic_noise((4, 6), 10))
    assert c.mask.shape == a.mask.shape


def test_straight_through_gradient_nonzero():
    s = parameter(np.random.default_rng(6).standard_normal((4, 6)) * 0.1)
    m = gumbel_mask(s, 1.0, 3, GateSamplerConfig())
    m.mask.sum().backward()
    soft = m.soft.data
    np.testing.assert_allclose(s.grad, soft * (1 - soft), rtol=1e-5)
    assert (np.abs(s.grad) > 0).all()


def test_nonpositive_temperature_rejected():
    with pytest.raises(ContractError):
        gumbel_mask(Tensor(np.zeros((1, 1))), 0.0, 0, GateSamplerConfig())


def test_hard_mask_threshold_and_tie():
    m = hard_mask(Tensor(np.array([[0.3, -0.3, 0.0]])))
    np.testing.assert_array_equal(m.hard, [[1.0, 0.0, 0.0]])


def test_temperature_schedule():
    cfg = GateSamplerConfig()
    assert temperature(0.0, cfg) == 5.0
    assert temperature(0.4, cfg) == pytest.approx(2.55)
    assert temperature(0.8, cfg) == pytest.approx(0.1)
    assert temperature(1.0, cfg) == pytest.approx(0.1)


def test_sampler_config_validation():
    with pytest.raises(ConfigurationError):
        GateSamplerConfig(tau_start=0.1, tau_end=1.0)
    with pytest.raises(ConfigurationError):
        GateSamplerConfig(anneal_fraction=0.0)
