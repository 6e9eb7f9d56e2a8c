import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialign import (ConfigError, NumericsError, Schedule, accumulate,
                      adamw_step, clip_global_norm, init_optim_state, lr_at)


class TestSchedule:
    def test_warmup_endpoints(self):
        sched = Schedule(base_lr=1e-3, total_steps=1000)
        assert sched.warmup_steps == 20
        assert lr_at(sched, 0) == 0.0
        assert lr_at(sched, 20) == 1e-3
        assert lr_at(sched, 1000) == 0.0

    def test_warmup_fraction_rounding(self):
        assert Schedule(1.0, 140).warmup_steps == 3

    def test_continuity_at_warmup_boundary(self):
        sched = Schedule(base_lr=0.5, total_steps=200)
        left = lr_at(sched, sched.warmup_steps - 1)
        boundary = lr_at(sched, sched.warmup_steps)
        right = lr_at(sched, sched.warmup_steps + 1)
        assert left < boundary and right < boundary
        assert boundary == 0.5

    def test_cosine_midpoint(self):
        sched = Schedule(base_lr=1.0, total_steps=100, warmup_steps=0)
        assert math.isclose(lr_at(sched, 50), 0.5, rel_tol=1e-12)

    def test_floor_lr(self):
        sched = Schedule(base_lr=1.0, total_steps=100, warmup_steps=0, floor_lr=0.1)
        assert lr_at(sched, 100) == 0.1

    def test_out_of_range(self):
        sched = Schedule(1.0, 10)
        with pytest.raises(ConfigError):
            lr_at(sched, 11)
        with pytest.raises(ConfigError):
            lr_at(sched, -1)

    @given(total=st.integers(2, 5000), step_frac=st.floats(0, 1))
    @settings(max_examples=50, deadline=None)
    def test_always_within_base(self, total, step_frac):
        sched = Schedule(base_lr=1.0, total_steps=total)
        step = int(step_frac * total)
        assert 0.0 <= lr_at(sched, step) <= 1.0


class TestClip:
    def test_three_four_scales_to_unit(self):
        grads, norm = clip_global_norm({"g": np.array([3.0, 4.0])}, max_norm=1.0)
        assert norm == 5.0
        np.testing.assert_allclose(grads["g"], [0.6, 0.8])

    def test_small_norm_untouched(self):
        g = {"g": np.array([0.3, 0.4])}
        out, norm = clip_global_norm(g, max_norm=1.0)
        assert math.isclose(norm, 0.5)
        assert out["g"] is g["g"]

    def test_postclip_norm_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            grads = {f"t{i}": rng.standard_normal((3, 4)) * 10 for i in range(3)}
            out, _ = clip_global_norm(grads, max_norm=1.0)
            total = math.sqrt(sum(float((g * g).sum()) for g in out.values()))
            assert total <= 1.0 + 1e-7

    def test_direction_preserved(self):
        g = np.random.default_rng(1).standard_normal(6) * 5
        out, norm = clip_global_norm({"g": g}, max_norm=1.0)
        np.testing.assert_allclose(out["g"] * norm, g, rtol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericsError):
            clip_global_norm({"g": np.array([1.0, np.inf])})


class TestAdamW:
    def test_zero_gradient_no_decay_is_identity(self):
        params = {"p": np.array([1.0, -2.0])}
        state = init_optim_state(params, weight_decay=0.0)
        out, _ = adamw_step(params, {"p": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(out["p"], params["p"])

    def test_zero_gradient_with_decay_shrinks(self):
        params = {"p": np.array([2.0])}
        state = init_optim_state(params, weight_decay=0.5)
        out, _ = adamw_step(params, {"p": np.zeros(1)}, state, lr=0.1)
        np.testing.assert_allclose(out["p"], 2.0 * (1 - 0.1 * 0.5))
        out2, _ = adamw_step(out, {"p": np.zeros(1)}, state, lr=0.1)
        np.testing.assert_allclose(out2["p"], 2.0 * (1 - 0.1 * 0.5) ** 2)

    def test_single_step_hand_recurrence(self):
        # oracle: hand evaluation, m_hat = v_hat = 1 so the step size is lr
        params = {"p": np.array([1.0])}
        state = init_optim_state(params, weight_decay=0.0)
        out, state = adamw_step(params, {"p": np.array([1.0])}, state, lr=0.1)
        expected = 1.0 - 0.1 / (1.0 + 1e-8)
        np.testing.assert_allclose(out["p"], expected, rtol=1e-12)
        assert abs(out["p"][0] - 0.9) < 1e-6

    def test_decay_mask_skips_flagged_tensors(self):
        params = {"W1": np.ones(2), "b1": np.ones(2)}
        state = init_optim_state(params, weight_decay=0.5, decay_keys=["W1"])
        out, _ = adamw_step(params, {k: np.zeros(2) for k in params}, state, lr=0.1)
        assert np.all(out["W1"] < 1.0)
        assert np.all(out["b1"] == 1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        params = {"p": rng.standard_normal(5)}
        grads = {"p": rng.standard_normal(5)}
        outs = []
        for _ in range(2):
            state = init_optim_state({"p": params["p"].copy()}, weight_decay=1e-5)
            out, _ = adamw_step({"p": params["p"].copy()}, grads, state, lr=1e-3)
            outs.append(out["p"])
        np.testing.assert_array_equal(outs[0], outs[1])


class TestAccumulate:
    def test_single_micro_batch_identity(self):
        g = {"a": np.arange(4.0)}
        out = accumulate([g])
        np.testing.assert_array_equal(out["a"], g["a"])

    def test_identical_micro_batches_unchanged(self):
        g = {"a": np.array([1.0, 2.0])}
        out = accumulate([g, {"a": g["a"].copy()}])
        np.testing.assert_array_equal(out["a"], g["a"])

    def test_mean_of_copies(self):
        g = {"a": np.array([3.0])}
        out = accumulate([{"a": g["a"].copy()} for _ in range(7)])
        np.testing.assert_allclose(out["a"], 3.0)

    def test_actual_mean(self):
        out = accumulate([{"a": np.array([1.0])}, {"a": np.array([3.0])}])
        np.testing.assert_allclose(out["a"], 2.0)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            accumulate([])
