from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualgate.budget import (
    BudgetConfig,
    FlopsModel,
    budget_loss,
    flops_ratio,
    flops_ratio_value,
    gate_flops,
    gate_param_overhead,
    static_flops,
)
from dualgate.encoder import EncoderConfig
from dualgate.errors import ConfigurationError, ContractError
from dualgate.gating import GateSamplerConfig, gumbel_mask
from dualgate.tensorcore import gradient_check, parameter

TOY = EncoderConfig()
MODEL = FlopsModel.from_config(TOY)


def brute_force_ratio(masks, config):
    """Walk every sample, block and channel and add up MACs one by one."""
    n = masks[0].shape[0]
    used = Fraction(0)
    full = 0
    for spec in config.block_specs():
        s = spec.out_size
        full += 9 * spec.c_in * spec.c_out * s * s + 9 * spec.c_out * spec.c_out * s * s
    for i in range(n):
        for spec, m in zip(config.block_specs(), masks):
            s = spec.out_size
            for c in range(spec.c_out):
                if m[i, c]:
                    used += 9 * spec.c_in * s * s      # conv1 output channel c
                    used += 9 * spec.c_out * s * s     # conv2 input channel c
            hidden = spec.c_in // 4
            used += spec.c_in * hidden + hidden * spec.c_out
    return used / (n * full)


def test_static_flops_examples():
    assert static_flops(3, 16, 32, 8, 8) == 294_912
    assert static_flops(1, 1, 1, 1, 1) == 1
    with pytest.raises(ConfigurationError):
        static_flops(3, 0, 1, 1, 1)


def test_gate_flops_example():
    assert gate_flops(16, 32) == 192


def test_ratio_matches_brute_force_counter():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        p = rng.random()
        masks = [(rng.random((n, s.c_out)) < p).astype(np.float32) for s in TOY.block_specs()]
        assert Fraction(flops_ratio_value(masks, MODEL)) == Fraction(float(brute_force_ratio(masks, TOY)))


def test_all_on_and_all_off():
    on = [np.ones((3, s.c_out)) for s in TOY.block_specs()]
    off = [np.zeros((3, s.c_out)) for s in TOY.block_specs()]
    overhead = MODEL.total_gate / MODEL.total_original
    assert flops_ratio_value(on, MODEL) == pytest.approx(1 + overhead, rel=1e-15)
    assert flops_ratio_value(off, MODEL) == pytest.approx(overhead, rel=1e-15)
    assert 0 < overhead < 1e-3


def test_missing_block_is_contract_error():
    masks = [np.ones((2, s.c_out)) for s in TOY.block_specs()][:-1]
    with pytest.raises(ContractError):
        flops_ratio_value(masks, MODEL)
    with pytest.raises(ContractError):
        flops_ratio([parameter(m) for m in masks], MODEL)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), block=st.integers(0, 5))
def test_ratio_monotone_in_each_entry(seed, block):
    rng = np.random.default_rng(seed)
    masks = [(rng.random((4, s.c_out)) < 0.5).astype(np.float32) for s in TOY.block_specs()]
    i, c = int(rng.integers(4)), int(rng.integers(masks[block].shape[1]))
    lo, hi = [m.copy() for m in masks], [m.copy() for m in masks]
    lo[block][i, c], hi[block][i, c] = 0, 1
    assert flops_ratio_value(lo, MODEL) < flops_ratio_value(hi, MODEL)


def test_budget_loss_examples():
    assert budget_loss(0.5, BudgetConfig(t_d=0.5)).item() == 0.0
    assert budget_loss(1.0, BudgetConfig(t_d=0.5, lam=5)).item() == pytest.approx(1.25)
    assert budget_loss(0.6, BudgetConfig(t_d=0.3, lam=5)).item() == pytest.approx(0.45)
    with pytest.raises(ConfigurationError):
        BudgetConfig(t_d=0.0)
    with pytest.raises(ConfigurationError):
        BudgetConfig(lam=-1.0)


def test_budget_gradient_through_straight_through_masks():
    rng = np.random.default_rng(1)
    scores = [parameter(rng.standard_normal((3, s.c_out)) * 0.5) for s in TOY.block_specs()]
    cfg = GateSamplerConfig()

    def fn():
        masks = [gumbel_mask(s, 1.0, 40 + i, cfg) for i, s in enumerate(scores)]
        return budget_loss(flops_ratio(masks, MODEL), BudgetConfig(t_d=0.3))

    # hard masks are piecewise constant, so compare against the surrogate
    # obtained with the forward pass relaxed to the soft probabilities
    soft_cfg = GateSamplerConfig(hard_forward=False)

    def soft_fn():
        masks = [gumbel_mask(s, 1.0, 40 + i, soft_cfg) for i, s in enumerate(scores)]
        return budget_loss(flops_ratio(masks, MODEL), BudgetConfig(t_d=0.3))

    assert gradient_check(soft_fn, scores, max_coords=50, rng=np.random.default_rng(2)) < 1e-4
    loss = fn()
    loss.backward()
    assert all(np.abs(s.grad).sum() > 0 for s in scores)


def test_full_width_overheads():
    full = EncoderConfig(stage_widths=[64, 128, 256, 512])
    model = FlopsModel.from_config(full)
    assert gate_param_overhead(full) < 0.03
    assert model.gate_overhead < 1e-3
