"""Replay-based drift proxies and the hysteresis hyper-parameter scheduler.

The learners in :mod:`htmdp.agents` never see the path parameter.  Everything
they adapt to is estimated from replayed transitions:

- ``reward_drift`` / ``feature_mean_drift`` compare two adjacent windows of
  length ``W1`` and bound first-order reward / kernel motion;
- ``proxy_update`` combines them into length and curvature estimates (the
  curvature proxy differences the length proxy across a lag of ``W2``
  evaluations) plus a minibatch action-gap / kink indicator;
- ``scheduler_step`` smooths the proxies with an EMA every ``H`` steps and,
  unless the smoothed change stays under the hysteresis threshold, remaps
  them to clipped hyper-parameters (learning rate, target rate,
  regularization, search depth, simulation budget).

``chatter_stats`` and ``robbins_monro_audit`` measure the two stability
properties the scheduler is designed around: bounded variation of the emitted
hyper-parameters and rate schedules that stay within a constant factor of the
base schedule.
"""

from __future__ import annotations

import math
from collections import deque
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, replace

import numpy as np

from htmdp.mdp import action_gap

__all__ = [
    "Transition",
    "ReplayBuffer",
    "ProxySignals",
    "SchedulerConfig",
    "HyperParams",
    "SchedulerState",
    "one_hot_features",
    "zero_signals",
    "reward_drift",
    "feature_mean_drift",
    "minibatch_gap",
    "proxy_update",
    "map_hyperparams",
    "initial_scheduler_state",
    "scheduler_step",
    "scheduled_rate",
    "chatter_stats",
    "robbins_monro_audit",
]


@dataclass(frozen=True)
class Transition:
    """One environment interaction kept in the replay ring."""

    state: int
    action: int
    reward: float
    next_state: int
    step_index: int


class ReplayBuffer:
    """Bounded ring of transitions with step-indexed window access.

    Step indices must be strictly increasing; eviction drops the oldest
    entries first, so a window query sees exactly the retained transitions
    whose ``step_index`` falls in the requested inclusive range.
    """

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be a positive integer")
        self.capacity = int(capacity)
        self._entries: deque[Transition] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def append(
        self, state: int, action: int, reward: float, next_state: int, step_index: int
    ) -> None:
        if self._entries and step_index <= self._entries[-1].step_index:
            raise ValueError("step indices must be strictly increasing")
        self._entries.append(
            Transition(int(state), int(action), float(reward), int(next_state), int(step_index))
        )

    @property
    def first_step(self) -> int | None:
        return self._entries[0].step_index if self._entries else None

    @property
    def last_step(self) -> int | None:
        return self._entries[-1].step_index if self._entries else None

    def span(self) -> int:
        """Number of steps covered, ``last - first + 1`` (0 when empty)."""
        if not self._entries:
            return 0
        return self._entries[-1].step_index - self._entries[0].step_index + 1

    def window(self, lo: int, hi: int) -> list[Transition]:
        """Transitions with ``lo <= step_index <= hi`` in insertion order."""
        out: list[Transition] = []
        for tr in reversed(self._entries):
            if tr.step_index > hi:
                continue
            if tr.step_index < lo:
                break
            out.append(tr)
        out.reverse()
        return out

    def sample(self, size: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform minibatch without replacement (all entries if undersized)."""
        if size < 1:
            raise ValueError("minibatch size must be positive")
        if size >= len(self._entries):
            return list(self._entries)
        idx = rng.choice(len(self._entries), size=size, replace=False)
        entries = list(self._entries)
        return [entries[i] for i in sorted(idx)]


def one_hot_features(n_states: int) -> Callable[[int], np.ndarray]:
    """One-hot state feature map; the drift proxy then reads in TV-like units."""
    eye = np.eye(int(n_states))

    def phi(state: int) -> np.ndarray:
        return eye[state]

    return phi


def _window_reward_ema(
    transitions: Iterable[Transition],
    pairs: frozenset[tuple[int, int]],
    coeff: float,
) -> dict[tuple[int, int], float]:
    # EMA seeded at the first observation so constant streams are recovered
    # exactly no matter how short the window is
    est: dict[tuple[int, int], float] = {}
    for tr in transitions:
        key = (tr.state, tr.action)
        if key not in pairs:
            continue
        if key in est:
            est[key] = (1.0 - coeff) * est[key] + coeff * tr.reward
        else:
            est[key] = tr.reward
    return est


def _two_windows(
    buffer: ReplayBuffer, window_w1: int
) -> tuple[list[Transition], list[Transition]] | None:
    if window_w1 < 1:
        raise ValueError("window_w1 must be a positive integer")
    last = buffer.last_step
    if last is None or buffer.span() < 2 * window_w1:
        return None
    recent = buffer.window(last - window_w1 + 1, last)
    previous = buffer.window(last - 2 * window_w1 + 1, last - window_w1)
    return recent, previous


def reward_drift(
    buffer: ReplayBuffer,
    window_w1: int,
    minibatch: Iterable[tuple[int, int]],
    ema_coeff: float = 0.1,
) -> float | None:
    """Max per-pair shift of the windowed reward EMA; ``None`` until ready.

    Pairs missing from either window contribute zero (there is nothing to
    compare), so the estimate is conservative under thin sampling.
    """
    if not 0.0 < ema_coeff <= 1.0:
        raise ValueError("ema_coeff must lie in (0, 1]")
    windows = _two_windows(buffer, window_w1)
    if windows is None:
        return None
    pairs = frozenset((int(s), int(a)) for s, a in minibatch)
    recent = _window_reward_ema(windows[0], pairs, ema_coeff)
    previous = _window_reward_ema(windows[1], pairs, ema_coeff)
    drift = 0.0
    for key in pairs:
        if key in recent and key in previous:
            drift = max(drift, abs(recent[key] - previous[key]))
    return drift


def feature_mean_drift(
    buffer: ReplayBuffer,
    window_w1: int,
    minibatch: Iterable[tuple[int, int]],
    phi: Callable[[int], np.ndarray],
) -> float | None:
    """Max L2 shift of per-pair next-state feature means; ``None`` until ready."""
    windows = _two_windows(buffer, window_w1)
    if windows is None:
        return None
    pairs = frozenset((int(s), int(a)) for s, a in minibatch)

    def means(transitions: list[Transition]) -> dict[tuple[int, int], np.ndarray]:
        sums: dict[tuple[int, int], np.ndarray] = {}
        counts: dict[tuple[int, int], int] = {}
        for tr in transitions:
            key = (tr.state, tr.action)
            if key not in pairs:
                continue
            feat = np.asarray(phi(tr.next_state), dtype=float)
            if key in sums:
                sums[key] = sums[key] + feat
                counts[key] += 1
            else:
                sums[key] = feat.copy()
                counts[key] = 1
        return {key: sums[key] / counts[key] for key in sums}

    recent = means(windows[0])
    previous = means(windows[1])
    drift = 0.0
    for key in pairs:
        if key in recent and key in previous:
            drift = max(drift, float(np.linalg.norm(recent[key] - previous[key])))
    return drift


def minibatch_gap(q: np.ndarray, states: Iterable[int]) -> float:
    """Smallest top1-top2 action gap of ``q`` over the minibatch states."""
    q = np.asarray(q, dtype=float)
    mask = np.zeros(q.shape[0], dtype=bool)
    mask[list({int(s) for s in states})] = True
    _, gap = action_gap(q, state_mask=mask)
    return gap


@dataclass(frozen=True)
class ProxySignals:
    """One evaluation of the replay-based geometry proxies."""

    delta_r_inf: float
    delta_p_phi: float
    delta_pl_hat: float
    delta_curv_hat: float
    gap_hat: float
    kink: int

    def __post_init__(self) -> None:
        for name in ("delta_r_inf", "delta_p_phi", "delta_pl_hat", "delta_curv_hat", "gap_hat"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kink not in (0, 1):
            raise ValueError("kink must be 0 or 1")


def zero_signals() -> ProxySignals:
    """The cold-start proxies (everything quiet, gap effectively infinite)."""
    return ProxySignals(0.0, 0.0, 0.0, 0.0, math.inf, 0)


def proxy_update(
    history: Sequence[ProxySignals],
    w2: int,
    *,
    delta_r_inf: float,
    delta_p_phi: float,
    l_s: float,
    q_values: np.ndarray,
    minibatch_states: Iterable[int],
    eps_gap: float,
) -> ProxySignals:
    """Combine raw drifts into the length/curvature/kink proxy triple.

    ``history`` holds earlier evaluations (oldest first); the curvature proxy
    differences the length proxy against the entry ``w2`` evaluations back,
    falling back to the earliest available one during warm-up (so a constant
    history always reports zero curvature).
    """
    if w2 < 1:
        raise ValueError("w2 must be a positive integer")
    delta_pl = delta_r_inf + l_s * delta_p_phi
    if history:
        lagged = history[-w2].delta_pl_hat if len(history) >= w2 else history[0].delta_pl_hat
    else:
        lagged = delta_pl
    gap_hat = minibatch_gap(q_values, minibatch_states)
    return ProxySignals(
        delta_r_inf=float(delta_r_inf),
        delta_p_phi=float(delta_p_phi),
        delta_pl_hat=float(delta_pl),
        delta_curv_hat=abs(delta_pl - lagged),
        gap_hat=gap_hat,
        kink=int(gap_hat <= eps_gap),
    )


@dataclass(frozen=True)
class SchedulerConfig:
    """Scheduler knobs; names follow the experiment-config block."""

    beta: float = 0.9
    h: int = 50
    delta_hys: float = 0.01
    eps_gap: float = 0.05
    w1: int = 500
    w2: int = 1500
    eta0: float = 0.1
    eta_min: float = 1e-5
    eta_max: float = 0.5
    nu0: float = 0.05
    nu_min: float = 1e-4
    nu_max: float = 0.5
    lambda0: float = 0.01
    alpha1: float = 1.0
    alpha2: float = 1.0
    beta1: float = 1.0
    beta2: float = 0.1
    c1: float = 1.0
    c2: float = 1.0
    gamma1: float = 2.0
    gamma2: float = 1.0
    gamma3: float = 4.0
    delta: float = 1e-3
    d0: int = 8
    dmax: int = 64
    b0: int = 64
    bmax: int = 1024
    ema_reward_coeff: float = 0.1
    normalize: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.h < 1 or self.w1 < 1 or self.w2 < 1:
            raise ValueError("H, W1 and W2 must be positive integers")
        if self.delta_hys < 0.0:
            raise ValueError("delta_hys must be nonnegative")
        if not 0.0 <= self.eta_min <= self.eta_max:
            raise ValueError("need 0 <= eta_min <= eta_max")
        if not 0.0 <= self.nu_min <= self.nu_max:
            raise ValueError("need 0 <= nu_min <= nu_max")
        if self.eta0 <= 0.0 or self.nu0 <= 0.0:
            raise ValueError("base rates eta0 and nu0 must be positive")
        if self.lambda0 < 0.0:
            raise ValueError("lambda0 must be nonnegative")
        for name in ("alpha1", "alpha2", "beta1", "beta2", "c1", "c2", "gamma1", "gamma2", "gamma3"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if not 1 <= self.d0 <= self.dmax:
            raise ValueError("need 1 <= D0 <= Dmax")
        if not 1 <= self.b0 <= self.bmax:
            raise ValueError("need 1 <= B0 <= Bmax")
        if not 0.0 < self.ema_reward_coeff <= 1.0:
            raise ValueError("ema_reward_coeff must lie in (0, 1]")


@dataclass(frozen=True)
class HyperParams:
    """Hyper-parameters emitted by the scheduler at one step."""

    eta: float
    nu: float
    lam: float
    depth: int
    budget: int


def _clip(value: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, value))


def map_hyperparams(
    config: SchedulerConfig,
    pl: float,
    curv: float,
    kink: float,
    gap: float,
    eta0: float | None = None,
) -> HyperParams:
    """Monotone clipped mapping from smoothed proxies to hyper-parameters.

    Larger length/curvature lowers the learning rate and raises the
    regularization, depth and budget; a kink regime (indicator high, gap
    small) lowers the target rate and raises the depth further.
    """
    base_eta = config.eta0 if eta0 is None else eta0
    gap_floor = max(gap, config.delta)
    eta = _clip(
        base_eta / (1.0 + config.alpha1 * pl + config.alpha2 * curv),
        config.eta_min,
        config.eta_max,
    )
    nu = _clip(
        config.nu0 / (1.0 + config.beta1 * kink * (1.0 + config.beta2 / gap_floor)),
        config.nu_min,
        config.nu_max,
    )
    lam = config.lambda0 * (1.0 + config.c1 * pl + config.c2 * math.sqrt(curv))
    depth = min(
        config.dmax,
        math.ceil(
            config.d0
            + config.gamma1 * (1.0 + pl)
            + config.gamma2 * math.sqrt(1.0 + curv)
            + config.gamma3 * kink / gap_floor
        ),
    )
    budget = min(
        config.bmax,
        math.ceil(config.b0 * (1.0 + config.gamma1 * pl + config.gamma2 * curv)),
    )
    return HyperParams(eta=eta, nu=nu, lam=lam, depth=depth, budget=budget)


@dataclass(frozen=True)
class SchedulerState:
    """Smoothed proxies plus the currently scheduled hyper-parameters.

    ``eta_scale`` keeps the learning-rate multiplier separately so a decaying
    base schedule can be rescaled per step (``scheduled_rate``) without
    breaking the piecewise constancy of the emitted ``hyper`` trace.
    """

    config: SchedulerConfig
    hyper: HyperParams
    pl_tilde: float = 0.0
    curv_tilde: float = 0.0
    kink_tilde: float = 0.0
    last_update_step: int = 0
    eta_scale: float = 1.0
    norm_count: int = 0
    norm_mean: tuple[float, float] = (0.0, 0.0)
    norm_m2: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        for name in ("pl_tilde", "curv_tilde", "kink_tilde"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        cfg = self.config
        hyper = self.hyper
        if not cfg.eta_min <= hyper.eta <= cfg.eta_max:
            raise ValueError("eta outside its clip range")
        if not cfg.nu_min <= hyper.nu <= cfg.nu_max:
            raise ValueError("nu outside its clip range")
        if hyper.lam < cfg.lambda0:
            raise ValueError("lambda below its base value")
        if hyper.depth > cfg.dmax or hyper.budget > cfg.bmax:
            raise ValueError("depth/budget above their caps")


def initial_scheduler_state(config: SchedulerConfig) -> SchedulerState:
    """State before any data: zero proxies, hyper at their quiet-regime values."""
    return SchedulerState(
        config=config,
        hyper=map_hyperparams(config, 0.0, 0.0, 0.0, math.inf),
    )


def _normalized(state: SchedulerState, pl_raw: float, curv_raw: float) -> tuple[
    float, float, int, tuple[float, float], tuple[float, float]
]:
    # Welford moments over the raw (pl, curv) stream; scores clipped to
    # [0, 10] so the monotone formulas stay well-defined
    count = state.norm_count + 1
    mean = list(state.norm_mean)
    m2 = list(state.norm_m2)
    values = (pl_raw, curv_raw)
    scores = []
    for i, x in enumerate(values):
        delta = x - mean[i]
        mean[i] += delta / count
        m2[i] += delta * (x - mean[i])
        var = m2[i] / count if count > 1 else 0.0
        scores.append(_clip((x - mean[i]) / math.sqrt(var + 1e-8), 0.0, 10.0))
    return scores[0], scores[1], count, (mean[0], mean[1]), (m2[0], m2[1])


def scheduler_step(
    state: SchedulerState,
    raw: ProxySignals,
    step: int,
    eta0: float | None = None,
) -> SchedulerState:
    """Advance the scheduler by one environment step.

    Off the ``H`` cadence the state passes through untouched.  On it, the
    smoothed proxies always absorb the raw signals; the hyper-parameters are
    remapped only when the smoothed change clears the hysteresis threshold
    (L2 norm over the three proxies).
    """
    cfg = state.config
    if step % cfg.h != 0 or step == state.last_update_step:
        return state
    pl_raw, curv_raw = raw.delta_pl_hat, raw.delta_curv_hat
    norm_fields = {}
    if cfg.normalize:
        pl_raw, curv_raw, count, mean, m2 = _normalized(state, pl_raw, curv_raw)
        norm_fields = {"norm_count": count, "norm_mean": mean, "norm_m2": m2}
    pl = cfg.beta * state.pl_tilde + (1.0 - cfg.beta) * pl_raw
    curv = cfg.beta * state.curv_tilde + (1.0 - cfg.beta) * curv_raw
    kink = cfg.beta * state.kink_tilde + (1.0 - cfg.beta) * raw.kink
    change = math.sqrt(
        (pl - state.pl_tilde) ** 2
        + (curv - state.curv_tilde) ** 2
        + (kink - state.kink_tilde) ** 2
    )
    if change < cfg.delta_hys:
        hyper = state.hyper
        eta_scale = state.eta_scale
    else:
        hyper = map_hyperparams(cfg, pl, curv, kink, raw.gap_hat, eta0)
        eta_scale = 1.0 / (1.0 + cfg.alpha1 * pl + cfg.alpha2 * curv)
    return replace(
        state,
        pl_tilde=pl,
        curv_tilde=curv,
        kink_tilde=kink,
        last_update_step=step,
        hyper=hyper,
        eta_scale=eta_scale,
        **norm_fields,
    )


def scheduled_rate(state: SchedulerState, eta0_t: float) -> float:
    """Clip the frozen learning-rate multiplier onto a per-step base rate."""
    cfg = state.config
    return _clip(eta0_t * state.eta_scale, cfg.eta_min, cfg.eta_max)


_HYPER_FIELDS = ("eta", "nu", "lam", "depth", "budget")


def chatter_stats(
    trace: Sequence[HyperParams], eps: float
) -> tuple[dict[str, float], float]:
    """Per-parameter total variation and the fraction of large-change steps."""
    if not trace:
        raise ValueError("trace must be nonempty")
    columns = {
        name: np.array([getattr(h, name) for h in trace], dtype=float)
        for name in _HYPER_FIELDS
    }
    variation = {
        name: float(np.abs(np.diff(col)).sum()) for name, col in columns.items()
    }
    if len(trace) == 1:
        return variation, 0.0
    large = np.zeros(len(trace) - 1, dtype=bool)
    for col in columns.values():
        large |= np.abs(np.diff(col)) > eps
    return variation, float(large.sum() / len(trace))


def robbins_monro_audit(
    eta_trace: Sequence[float], base_schedule: Sequence[float], c: float
) -> tuple[float, float, float]:
    """Fraction of steps with ``c * eta0_t <= eta_t <= eta0_t`` plus rate sums."""
    eta = np.asarray(eta_trace, dtype=float)
    base = np.asarray(base_schedule, dtype=float)
    if eta.ndim != 1 or eta.shape != base.shape or eta.size == 0:
        raise ValueError("eta trace and base schedule must be aligned nonempty 1-D arrays")
    tol = 1e-12
    comparable = (eta >= c * base - tol) & (eta <= base + tol)
    return float(comparable.mean()), float(eta.sum()), float(np.square(eta).sum())
