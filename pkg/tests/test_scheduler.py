"""Tests for replay proxies and the hysteresis scheduler."""

import math

import numpy as np
import pytest

from htmdp.mdp import action_gap
from htmdp.scheduler import (
    HyperParams,
    ProxySignals,
    ReplayBuffer,
    SchedulerConfig,
    chatter_stats,
    feature_mean_drift,
    initial_scheduler_state,
    map_hyperparams,
    minibatch_gap,
    one_hot_features,
    proxy_update,
    reward_drift,
    robbins_monro_audit,
    scheduled_rate,
    scheduler_step,
    zero_signals,
)


def _fill(buffer, steps, reward_fn, next_fn, state=0, action=0):
    for t in steps:
        buffer.append(state, action, reward_fn(t), next_fn(t), t)


class TestReplayBuffer:
    def test_capacity_eviction(self):
        buf = ReplayBuffer(3)
        _fill(buf, range(1, 6), float, lambda t: 0)
        assert len(buf) == 3
        assert buf.first_step == 3 and buf.last_step == 5

    def test_strictly_increasing_steps(self):
        buf = ReplayBuffer(4)
        buf.append(0, 0, 1.0, 0, 5)
        with pytest.raises(ValueError, match="strictly increasing"):
            buf.append(0, 0, 1.0, 0, 5)

    def test_window_inclusive_bounds(self):
        buf = ReplayBuffer(10)
        _fill(buf, range(1, 9), float, lambda t: 0)
        window = buf.window(3, 6)
        assert [tr.step_index for tr in window] == [3, 4, 5, 6]
        assert buf.window(9, 12) == []

    def test_span_and_sample(self):
        buf = ReplayBuffer(100)
        _fill(buf, range(10, 30), float, lambda t: 0)
        assert buf.span() == 20
        rng = np.random.default_rng(0)
        batch = buf.sample(5, rng)
        assert len(batch) == 5
        assert buf.sample(50, rng) == buf.window(10, 29)
        with pytest.raises(ValueError):
            buf.sample(0, rng)

    def test_capacity_validation(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)


class TestRewardDrift:
    def test_not_ready(self):
        buf = ReplayBuffer(100)
        _fill(buf, range(1, 10), lambda t: 1.0, lambda t: 0)
        assert reward_drift(buf, 5, [(0, 0)]) is None

    def test_stationary_is_zero(self):
        buf = ReplayBuffer(100)
        _fill(buf, range(1, 41), lambda t: 0.75, lambda t: 0)
        assert reward_drift(buf, 20, [(0, 0)]) == 0.0

    def test_deterministic_step_recovered(self):
        # constant reward per window: the EMA equals the constant, so the
        # drift is exactly the step size regardless of the EMA coefficient
        buf = ReplayBuffer(100)
        _fill(buf, range(1, 21), lambda t: 0.2, lambda t: 0)
        _fill(buf, range(21, 41), lambda t: 0.9, lambda t: 0)
        assert reward_drift(buf, 20, [(0, 0)]) == pytest.approx(0.7, abs=1e-12)

    def test_absent_pair_contributes_zero(self):
        buf = ReplayBuffer(100)
        _fill(buf, range(1, 41), lambda t: float(t), lambda t: 0)
        assert reward_drift(buf, 20, [(3, 2)]) == 0.0

    def test_nonnegative_random(self):
        rng = np.random.default_rng(7)
        buf = ReplayBuffer(200)
        for t in range(1, 101):
            buf.append(int(rng.integers(4)), int(rng.integers(2)), float(rng.normal()), 0, t)
        pairs = [(s, a) for s in range(4) for a in range(2)]
        drift = reward_drift(buf, 50, pairs)
        assert drift is not None and drift >= 0.0

    def test_coeff_validation(self):
        buf = ReplayBuffer(10)
        with pytest.raises(ValueError):
            reward_drift(buf, 5, [], ema_coeff=0.0)
        with pytest.raises(ValueError):
            reward_drift(buf, 0, [])


class TestFeatureMeanDrift:
    def test_successor_swap_is_sqrt_two(self):
        buf = ReplayBuffer(100)
        _fill(buf, range(1, 21), lambda t: 0.0, lambda t: 2)
        _fill(buf, range(21, 41), lambda t: 0.0, lambda t: 5)
        drift = feature_mean_drift(buf, 20, [(0, 0)], one_hot_features(8))
        assert drift == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_stationary_deterministic_zero(self):
        buf = ReplayBuffer(100)
        _fill(buf, range(1, 41), lambda t: 0.0, lambda t: 3)
        assert feature_mean_drift(buf, 20, [(0, 0)], one_hot_features(8)) == 0.0

    def test_one_hot_bound(self):
        # feature means are probability vectors: the L2 drift is at most 2
        rng = np.random.default_rng(11)
        buf = ReplayBuffer(400)
        for t in range(1, 201):
            buf.append(int(rng.integers(3)), int(rng.integers(2)), 0.0, int(rng.integers(6)), t)
        pairs = [(s, a) for s in range(3) for a in range(2)]
        drift = feature_mean_drift(buf, 100, pairs, one_hot_features(6))
        assert 0.0 <= drift <= 2.0

    def test_not_ready(self):
        buf = ReplayBuffer(10)
        _fill(buf, range(1, 5), lambda t: 0.0, lambda t: 0)
        assert feature_mean_drift(buf, 5, [(0, 0)], one_hot_features(2)) is None


class TestProxyUpdate:
    def _signals(self, pl):
        return ProxySignals(pl, 0.0, pl, 0.0, 1.0, 0)

    def test_pl_combination(self):
        q = np.array([[1.0, 0.0], [0.5, 0.0]])
        out = proxy_update(
            [],
            w2=2,
            delta_r_inf=0.3,
            delta_p_phi=0.2,
            l_s=4.0,
            q_values=q,
            minibatch_states=[0, 1],
            eps_gap=0.05,
        )
        assert out.delta_pl_hat == pytest.approx(0.3 + 4.0 * 0.2)
        assert out.delta_curv_hat == 0.0  # no history yet
        assert out.gap_hat == pytest.approx(0.5)
        assert out.kink == 0

    def test_constant_history_zero_curvature(self):
        history = [self._signals(0.7) for _ in range(10)]
        out = proxy_update(
            history,
            w2=4,
            delta_r_inf=0.7,
            delta_p_phi=0.0,
            l_s=1.0,
            q_values=np.array([[1.0, 0.0]]),
            minibatch_states=[0],
            eps_gap=-1.0,
        )
        assert out.delta_curv_hat == 0.0

    def test_lag_selection(self):
        history = [self._signals(pl) for pl in (1.0, 2.0, 3.0, 4.0)]
        out = proxy_update(
            history,
            w2=2,
            delta_r_inf=10.0,
            delta_p_phi=0.0,
            l_s=1.0,
            q_values=np.array([[1.0, 0.0]]),
            minibatch_states=[0],
            eps_gap=0.0,
        )
        assert out.delta_curv_hat == pytest.approx(10.0 - 3.0)
        # warm-up shorter than the lag: earliest entry is used
        out = proxy_update(
            history[:1],
            w2=3,
            delta_r_inf=10.0,
            delta_p_phi=0.0,
            l_s=1.0,
            q_values=np.array([[1.0, 0.0]]),
            minibatch_states=[0],
            eps_gap=0.0,
        )
        assert out.delta_curv_hat == pytest.approx(9.0)

    def test_kink_threshold(self):
        q = np.array([[1.0, 0.99]])
        out = proxy_update(
            [], 1, delta_r_inf=0.0, delta_p_phi=0.0, l_s=1.0,
            q_values=q, minibatch_states=[0], eps_gap=0.05,
        )
        assert out.kink == 1
        out = proxy_update(
            [], 1, delta_r_inf=0.0, delta_p_phi=0.0, l_s=1.0,
            q_values=q, minibatch_states=[0], eps_gap=-1.0,
        )
        assert out.kink == 0

    def test_minibatch_gap_dominates_global(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(12, 3))
        _, global_gap = action_gap(q)
        for _ in range(10):
            states = rng.choice(12, size=4, replace=False)
            assert minibatch_gap(q, states) >= global_gap - 1e-15

    def test_signal_validation(self):
        with pytest.raises(ValueError):
            ProxySignals(-0.1, 0.0, 0.0, 0.0, 1.0, 0)
        with pytest.raises(ValueError):
            ProxySignals(0.0, 0.0, 0.0, 0.0, 1.0, 2)
        with pytest.raises(ValueError):
            proxy_update([], 0, delta_r_inf=0.0, delta_p_phi=0.0, l_s=1.0,
                         q_values=np.array([[1.0, 0.0]]), minibatch_states=[0], eps_gap=0.0)


class TestHyperMapping:
    def test_quiet_regime_base_values(self):
        cfg = SchedulerConfig()
        hyper = map_hyperparams(cfg, 0.0, 0.0, 0.0, math.inf)
        assert hyper.eta == pytest.approx(cfg.eta0)
        assert hyper.nu == pytest.approx(cfg.nu0)
        assert hyper.lam == pytest.approx(cfg.lambda0)
        assert hyper.budget == cfg.b0

    def test_learning_rate_arithmetic(self):
        cfg = SchedulerConfig(eta0=0.1, alpha1=1.0, alpha2=0.0)
        hyper = map_hyperparams(cfg, 1.0, 0.0, 0.0, math.inf)
        assert hyper.eta == pytest.approx(0.05)

    def test_depth_arithmetic(self):
        cfg = SchedulerConfig(d0=8, gamma1=2.0, gamma2=1.0, gamma3=4.0, dmax=64)
        hyper = map_hyperparams(cfg, 0.0, 0.0, 0.0, math.inf)
        assert hyper.depth == 11

    def test_monotone_response(self):
        cfg = SchedulerConfig(eta_min=0.0, eta_max=math.inf, nu_min=0.0, nu_max=math.inf)
        pls = np.linspace(0.0, 5.0, 11)
        hypers = [map_hyperparams(cfg, pl, 0.3, 0.2, 0.4) for pl in pls]
        for a, b in zip(hypers, hypers[1:]):
            assert b.eta <= a.eta
            assert b.lam >= a.lam and b.depth >= a.depth and b.budget >= a.budget
        kink_hypers = [map_hyperparams(cfg, 1.0, 0.3, k, 0.4) for k in np.linspace(0, 1, 6)]
        for a, b in zip(kink_hypers, kink_hypers[1:]):
            assert b.nu <= a.nu

    def test_clipping_extreme_inputs(self):
        cfg = SchedulerConfig(beta2=10.0)
        hyper = map_hyperparams(cfg, 1e9, 1e9, 1.0, 1e-12)
        assert hyper.eta == cfg.eta_min
        assert hyper.nu == cfg.nu_min
        assert hyper.depth == cfg.dmax and hyper.budget == cfg.bmax

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SchedulerConfig(beta=1.0)
        with pytest.raises(ValueError):
            SchedulerConfig(eta_min=0.2, eta_max=0.1)
        with pytest.raises(ValueError):
            SchedulerConfig(d0=10, dmax=5)
        with pytest.raises(ValueError):
            SchedulerConfig(delta=0.0)


def _run_schedule(cfg, raws, eta0=None):
    state = initial_scheduler_state(cfg)
    trace = []
    for t, raw in enumerate(raws, start=1):
        state = scheduler_step(state, raw, t, eta0=eta0)
        trace.append(state.hyper)
    return state, trace


def _noisy_raws(rng, n, scale=1.0):
    out = []
    for _ in range(n):
        pl = float(scale * rng.uniform(0.0, 2.0))
        curv = float(scale * rng.uniform(0.0, 1.0))
        gap = float(rng.uniform(0.01, 1.0))
        out.append(ProxySignals(pl, 0.0, pl, curv, gap, int(gap < 0.05)))
    return out


class TestSchedulerStep:
    def test_off_cadence_passthrough(self):
        cfg = SchedulerConfig(h=10)
        state = initial_scheduler_state(cfg)
        raw = ProxySignals(5.0, 0.0, 5.0, 1.0, 0.2, 0)
        assert scheduler_step(state, raw, 7) is state
        assert scheduler_step(state, raw, 10) is not state

    def test_piecewise_constant_on_cadence(self):
        cfg = SchedulerConfig(h=25, delta_hys=0.0)
        rng = np.random.default_rng(0)
        _, trace = _run_schedule(cfg, _noisy_raws(rng, 200))
        for t in range(1, 200):
            if (t + 1) % 25 != 0:  # steps are 1-based in the trace
                assert trace[t] == trace[t - 1]

    def test_ema_smoothing_values(self):
        cfg = SchedulerConfig(h=1, beta=0.5, delta_hys=0.0)
        state = initial_scheduler_state(cfg)
        raw = ProxySignals(2.0, 0.0, 2.0, 4.0, 1.0, 1)
        state = scheduler_step(state, raw, 1)
        assert state.pl_tilde == pytest.approx(1.0)
        assert state.curv_tilde == pytest.approx(2.0)
        assert state.kink_tilde == pytest.approx(0.5)
        state = scheduler_step(state, raw, 2)
        assert state.pl_tilde == pytest.approx(1.5)

    def test_hysteresis_freezes_hyper_but_not_ema(self):
        cfg = SchedulerConfig(h=1, beta=0.0, delta_hys=1e9)
        state = initial_scheduler_state(cfg)
        base = state.hyper
        raw = ProxySignals(3.0, 0.0, 3.0, 1.0, 0.3, 1)
        state = scheduler_step(state, raw, 1)
        assert state.hyper == base  # frozen by hysteresis
        assert state.pl_tilde == pytest.approx(3.0)  # EMA still moved

    def test_hysteresis_l2_metric(self):
        # two proxies moving by 0.4 each: L2 change ~0.566 crosses a 0.5
        # threshold even though neither coordinate does on its own
        cfg = SchedulerConfig(h=1, beta=0.0, delta_hys=0.5)
        state = initial_scheduler_state(cfg)
        raw = ProxySignals(0.4, 0.0, 0.4, 0.4, 1.0, 0)
        state = scheduler_step(state, raw, 1)
        assert state.hyper.eta < cfg.eta0

    def test_duplicate_step_ignored(self):
        cfg = SchedulerConfig(h=1, beta=0.0, delta_hys=0.0)
        state = initial_scheduler_state(cfg)
        raw = ProxySignals(1.0, 0.0, 1.0, 0.0, 1.0, 0)
        once = scheduler_step(state, raw, 1)
        assert scheduler_step(once, raw, 1) is once

    def test_emitted_hyper_always_clipped(self):
        cfg = SchedulerConfig(h=5, delta_hys=0.0)
        rng = np.random.default_rng(42)
        _, trace = _run_schedule(cfg, _noisy_raws(rng, 300, scale=50.0))
        for hyper in trace:
            assert cfg.eta_min <= hyper.eta <= cfg.eta_max
            assert cfg.nu_min <= hyper.nu <= cfg.nu_max
            assert hyper.lam >= cfg.lambda0
            assert hyper.depth <= cfg.dmax and hyper.budget <= cfg.bmax

    def test_normalization_toggle(self):
        cfg = SchedulerConfig(h=1, delta_hys=0.0, normalize=True)
        rng = np.random.default_rng(9)
        state, trace = _run_schedule(cfg, _noisy_raws(rng, 100))
        assert state.norm_count == 100
        assert all(math.isfinite(h.eta) for h in trace)
        # a constant stream z-scores to zero: hyper stays at base values
        cfg2 = SchedulerConfig(h=1, delta_hys=0.0, normalize=True)
        raws = [ProxySignals(5.0, 0.0, 5.0, 5.0, 1.0, 0)] * 50
        _, trace2 = _run_schedule(cfg2, raws)
        assert trace2[-1].eta == pytest.approx(cfg2.eta0)


class TestChatterStats:
    def test_hand_trace(self):
        trace = [
            HyperParams(0.1, 0.05, 0.01, 8, 64),
            HyperParams(0.1, 0.05, 0.01, 8, 64),
            HyperParams(0.2, 0.05, 0.03, 9, 64),
            HyperParams(0.15, 0.05, 0.03, 9, 80),
        ]
        variation, fraction = chatter_stats(trace, eps=0.01)
        assert variation["eta"] == pytest.approx(0.15)
        assert variation["lam"] == pytest.approx(0.02)
        assert variation["depth"] == pytest.approx(1.0)
        assert variation["budget"] == pytest.approx(16.0)
        assert fraction == pytest.approx(2.0 / 4.0)

    def test_variation_counting_bound(self):
        cfg = SchedulerConfig(h=20, delta_hys=0.0)
        rng = np.random.default_rng(1)
        total = 400
        _, trace = _run_schedule(cfg, _noisy_raws(rng, total, scale=10.0))
        variation, _ = chatter_stats(trace, eps=1e-9)
        updates = math.ceil(total / cfg.h)
        assert variation["eta"] <= updates * (cfg.eta_max - cfg.eta_min) + 1e-12
        assert variation["nu"] <= updates * (cfg.nu_max - cfg.nu_min) + 1e-12
        assert variation["depth"] <= updates * (cfg.dmax - 1)
        assert variation["budget"] <= updates * (cfg.bmax - 1)

    def test_infinite_hysteresis_never_retriggers(self):
        cfg = SchedulerConfig(h=5, delta_hys=math.inf)
        rng = np.random.default_rng(2)
        _, trace = _run_schedule(cfg, _noisy_raws(rng, 100, scale=10.0))
        variation, fraction = chatter_stats(trace, eps=1e-12)
        assert all(v == 0.0 for v in variation.values())
        assert fraction == 0.0

    def test_empty_trace_rejected(self):
        with pytest.raises(ValueError):
            chatter_stats([], eps=0.1)


class TestRobbinsMonro:
    def test_idle_scheduler_identity(self):
        cfg = SchedulerConfig(h=1, eta_min=0.0, eta_max=1.0)
        state = initial_scheduler_state(cfg)
        base = [1.0 / t for t in range(1, 501)]
        etas = [scheduled_rate(state, b) for b in base]
        fraction, s1, s2 = robbins_monro_audit(etas, base, c=1.0)
        assert fraction == 1.0
        assert s1 == pytest.approx(sum(base))
        assert s2 == pytest.approx(sum(b * b for b in base))

    def test_bounded_proxies_comparable(self):
        # alpha1 * PL + alpha2 * Curv <= K = 3 keeps eta within [base/(1+K), base]
        cfg = SchedulerConfig(
            h=10, beta=0.0, delta_hys=0.0, alpha1=1.0, alpha2=1.0,
            eta_min=0.0, eta_max=1.0,
        )
        state = initial_scheduler_state(cfg)
        rng = np.random.default_rng(17)
        etas, base = [], []
        for t in range(1, 2001):
            pl = float(rng.uniform(0.0, 2.0))
            curv = float(rng.uniform(0.0, 1.0))
            raw = ProxySignals(pl, 0.0, pl, curv, 1.0, 0)
            state = scheduler_step(state, raw, t)
            eta0_t = 1.0 / t
            base.append(eta0_t)
            etas.append(scheduled_rate(state, eta0_t))
        fraction, _, _ = robbins_monro_audit(etas, base, c=1.0 / (1.0 + 3.0))
        assert fraction == 1.0

    def test_inverse_t_square_summable(self):
        base = 1.0 / np.arange(1, 100_001)
        _, _, s2 = robbins_monro_audit(base, base, c=1.0)
        assert s2 < math.pi**2 / 6.0 + 1e-4

    def test_alignment_validation(self):
        with pytest.raises(ValueError):
            robbins_monro_audit([0.1, 0.2], [0.1], c=1.0)
        with pytest.raises(ValueError):
            robbins_monro_audit([], [], c=1.0)


class TestZeroSignals:
    def test_quiet(self):
        z = zero_signals()
        assert z.delta_pl_hat == 0.0 and z.kink == 0 and math.isinf(z.gap_hat)
