"""Tracking learners and planners driven by the replay-geometry scheduler.

Two runner families share one measurement harness:

- ``ht_q_learning_run`` / ``static_q_learning_run`` — tabular Q-learning with
  a target table, replaying minibatches while the environment drifts along a
  :class:`StochasticPathProcess`.  The HT variant feeds replay proxies into
  :func:`htmdp.scheduler.scheduler_step`; the static variant keeps the base
  hyper-parameters.  Both consume identical RNG streams, so with quiet
  proxies the two runs coincide exactly.
- ``ht_mcts_run`` / ``static_mcts_run`` — UCT planning on a (true or
  EMA-learned) model, with search depth and simulation budget scheduled the
  same way.

Every run emits a :class:`RunTrace` with per-step tracking error against
exact solves (``tau`` snapped to a small grid and memoized), exact regret
increments, and the certified drift bound of each step's parameter interval
(``geo_load[t]`` covers ``[tau_t, tau_{t+1}]``; the last row is zero).
``tracking_recursion_audit`` fits the contraction recursion
``e_{t+1} <= rho e_t + c1 geo_load_t + c_noise`` by least absolute residuals.

Regret conventions: RL runs score the full greedy policy against the optimum
under a uniform start distribution; MCTS runs score the executed action at
the visited state, ``V*(s_t) - Q*(s_t, a_t)``, since the planner does not
define a global policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from htmdp.geometry import (
    default_delta,
    detect_kinks,
    kink_drift_cap,
    path_mixing,
    path_value_bound,
    speed_density,
)
from htmdp.mdp import FiniteMdp, bellman_optimal_apply, policy_evaluation, policy_iteration
from htmdp.paths import MdpPath
from htmdp.scheduler import (
    ProxySignals,
    ReplayBuffer,
    SchedulerConfig,
    feature_mean_drift,
    initial_scheduler_state,
    one_hot_features,
    proxy_update,
    reward_drift,
    scheduled_rate,
    scheduler_step,
    zero_signals,
)

__all__ = [
    "StochasticPathProcess",
    "AgentConfig",
    "RunTrace",
    "value_range",
    "ht_q_learning_run",
    "static_q_learning_run",
    "uct_plan",
    "ht_mcts_run",
    "static_mcts_run",
    "bellman_sweep_run",
    "dynamic_regret",
    "tracking_recursion_audit",
]

_PROCESS_KINDS = ("linear_ramp", "noisy_ramp", "frozen_after")


@dataclass(frozen=True)
class StochasticPathProcess:
    """A drifting environment: an MDP path plus a monotone index process.

    ``linear_ramp`` moves ``tau`` from ``tau_start`` to ``tau_end`` over
    ``horizon`` steps; ``noisy_ramp`` draws nonnegative normal increments
    around the same mean slope; ``frozen_after`` follows the linear ramp up
    to step ``freeze_at`` and stays constant afterwards.
    """

    path: MdpPath
    kind: str
    horizon: int
    tau_start: float = 0.0
    tau_end: float = 1.0
    noise: float = 0.5
    freeze_at: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _PROCESS_KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}; options: {_PROCESS_KINDS}")
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if not 0.0 <= self.tau_start <= self.tau_end <= 1.0:
            raise ValueError("need 0 <= tau_start <= tau_end <= 1")
        if self.noise < 0.0:
            raise ValueError("noise must be nonnegative")
        if self.kind == "frozen_after":
            if self.freeze_at is None or self.freeze_at < 1:
                raise ValueError("frozen_after needs freeze_at >= 1")
        elif self.freeze_at is not None:
            raise ValueError("freeze_at only applies to frozen_after")

    def sampler(self) -> "_TauSampler":
        """Fresh stateful sampler; one is consumed per run."""
        return _TauSampler(self)


class _TauSampler:
    def __init__(self, process: StochasticPathProcess) -> None:
        self._process = process
        self._tau = process.tau_start
        self._step = 0

    def sample(self, step: int, rng: np.random.Generator) -> float:
        proc = self._process
        if step != self._step + 1:
            raise ValueError("sample() must be called with consecutive steps")
        self._step = step
        span = proc.tau_end - proc.tau_start
        denom = max(proc.horizon - 1, 1)
        if proc.kind == "linear_ramp":
            self._tau = proc.tau_start + span * min(1.0, (step - 1) / denom)
        elif proc.kind == "frozen_after":
            clock = min(step, proc.freeze_at)
            self._tau = proc.tau_start + span * min(1.0, (clock - 1) / denom)
        else:  # noisy_ramp
            if step > 1:
                base_inc = span / denom
                inc = max(0.0, float(rng.normal(base_inc, proc.noise * base_inc)))
                self._tau = min(proc.tau_end, self._tau + inc)
        return self._tau


@dataclass(frozen=True)
class AgentConfig:
    """Knobs of the learning/planning loop not owned by the scheduler."""

    epsilon_greedy: float = 0.1
    episode_length: int = 50
    minibatch_size: int = 32
    buffer_capacity: int = 4000
    snap: float = 1e-3
    geo_grid: int = 2
    eta_decay: float = 0.0
    eta_decay_offset: float = 1.0
    model_lr_scale: float = 5.0
    c_uct: float = 1.4
    gap_uses_target: bool = False
    proxy_period: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon_greedy <= 1.0:
            raise ValueError("epsilon_greedy must lie in [0, 1]")
        if self.episode_length < 1 or self.minibatch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("episode_length, minibatch_size, buffer_capacity must be positive")
        if not 0.0 < self.snap <= 0.1:
            raise ValueError("snap must lie in (0, 0.1]")
        if self.geo_grid < 2:
            raise ValueError("geo_grid needs at least two quadrature nodes")
        if self.eta_decay < 0.0 or self.eta_decay_offset <= 0.0:
            raise ValueError("eta_decay must be nonnegative and eta_decay_offset positive")
        if self.model_lr_scale <= 0.0 or self.c_uct < 0.0:
            raise ValueError("model_lr_scale must be positive and c_uct nonnegative")
        if self.proxy_period < 1:
            raise ValueError("proxy_period must be a positive integer")


_TRACE_COLUMNS = (
    "steps", "taus", "e_t", "regret_inc", "geo_load",
    "eta", "nu", "lam", "depth", "budget", "episode_return",
)


@dataclass(frozen=True)
class RunTrace:
    """Per-step measurements of one run (arrays share one length)."""

    mode: str
    seed: int
    steps: np.ndarray
    taus: np.ndarray
    e_t: np.ndarray
    regret_inc: np.ndarray
    geo_load: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    depth: np.ndarray
    budget: np.ndarray
    episode_return: np.ndarray
    meta: dict

    def __post_init__(self) -> None:
        n = len(self.steps)
        for name in _TRACE_COLUMNS:
            if len(getattr(self, name)) != n:
                raise ValueError(f"trace column {name} has mismatched length")
        if n == 0:
            raise ValueError("trace must contain at least one step")
        if np.any(np.diff(self.taus) < -1e-15):
            raise ValueError("tau sequence must be nondecreasing")
        if self.regret_inc.min(initial=0.0) < -1e-9:
            raise ValueError("regret increments must be >= -1e-9")
        if self.geo_load.min(initial=0.0) < 0.0:
            raise ValueError("geo_load must be nonnegative")


def value_range(path: MdpPath) -> float:
    """Worst-case value spread ``reward_range / (1 - gamma)`` along the path."""
    return kink_drift_cap(path) / 2.0


class _SnapOracle:
    """Memoized exact solves on a snapped tau grid.

    Snapping bounds the number of policy iterations per run; the induced
    error is at most ``sup_tau v_tau * snap / 2`` (reported in run metadata).
    """

    def __init__(self, path: MdpPath, snap: float) -> None:
        self._path = path
        self._snap = snap
        self._tables: dict[int, tuple[FiniteMdp, np.ndarray, np.ndarray]] = {}
        self._policy_values: dict[tuple[int, bytes], np.ndarray] = {}
        self._last_policy: np.ndarray | None = None

    def _key(self, tau: float) -> int:
        return int(round(tau / self._snap))

    def tables(self, tau: float) -> tuple[FiniteMdp, np.ndarray, np.ndarray]:
        """``(mdp, Q*, V*)`` at the snapped parameter."""
        key = self._key(tau)
        hit = self._tables.get(key)
        if hit is None:
            mdp = self._path.evaluate(min(1.0, key * self._snap))
            q = policy_iteration(mdp, policy0=self._last_policy)
            self._last_policy = np.argmax(q, axis=1)
            hit = (mdp, q, np.max(q, axis=1))
            self._tables[key] = hit
        return hit

    def policy_state_values(self, tau: float, policy: np.ndarray) -> np.ndarray:
        key = (self._key(tau), policy.tobytes())
        hit = self._policy_values.get(key)
        if hit is None:
            mdp, _, _ = self.tables(tau)
            q_pi = policy_evaluation(mdp, policy)
            hit = q_pi[np.arange(mdp.n_states), policy]
            self._policy_values[key] = hit
        return hit


def _snap_error_bound(path: MdpPath, snap: float) -> float:
    sup_speed = max(speed_density(path, t) for t in np.linspace(0.0, 1.0, 11))
    return sup_speed * snap / 2.0


def _geo_loads(path: MdpPath, taus: np.ndarray, grid: int, kinks, delta: float) -> np.ndarray:
    loads = np.zeros(len(taus))
    for t in range(len(taus) - 1):
        lo, hi = taus[t], taus[t + 1]
        if hi - lo > 1e-15:
            loads[t], _ = path_value_bound(path, lo, hi, grid=grid, delta=delta, kinks=kinks)
    return loads


def _sample_successor(p_row: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(p_row)
    return min(int(np.searchsorted(cum, rng.random(), side="right")), len(p_row) - 1)


def _base_eta(cfg: SchedulerConfig, agent: AgentConfig, step: int) -> float:
    # Robbins-Monro base schedule whenever eta_decay is in (1/2, 1]; the
    # offset delays the decay so early bootstrap generations keep moving.
    if agent.eta_decay == 0.0:
        return cfg.eta0
    return cfg.eta0 * (1.0 + step / agent.eta_decay_offset) ** -agent.eta_decay


class _ProxyLoop:
    """Per-step proxy bookkeeping shared by the HT runners."""

    def __init__(self, path: MdpPath, cfg: SchedulerConfig, agent: AgentConfig) -> None:
        self.buffer = ReplayBuffer(agent.buffer_capacity)
        self._cfg = cfg
        self._agent = agent
        self._phi = one_hot_features(path.evaluate(0.0).n_states)
        self._l_s = path_mixing(path).l_s
        self._history: list[ProxySignals] = []
        self._w2_lag = max(1, cfg.w2 // agent.proxy_period)
        self.signals = zero_signals()

    def observe(self, step: int, batch, q_for_gap: np.ndarray) -> ProxySignals:
        if step % self._agent.proxy_period != 0:
            return self.signals
        pairs = [(tr.state, tr.action) for tr in batch]
        drift_r = reward_drift(self.buffer, self._cfg.w1, pairs, self._cfg.ema_reward_coeff)
        drift_p = feature_mean_drift(self.buffer, self._cfg.w1, pairs, self._phi)
        if drift_r is None or drift_p is None:
            return self.signals  # not ready: keep previous signals
        self.signals = proxy_update(
            self._history,
            self._w2_lag,
            delta_r_inf=drift_r,
            delta_p_phi=drift_p,
            l_s=self._l_s,
            q_values=q_for_gap,
            minibatch_states=[tr.state for tr in batch],
            eps_gap=self._cfg.eps_gap,
        )
        self._history.append(self.signals)
        return self.signals


def _rl_engine(
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    base_config: AgentConfig,
    seed: int,
    horizon: int,
    adaptive: bool,
) -> RunTrace:
    if horizon < 1:
        raise ValueError("T must be a positive integer")
    path = process.path
    env_rng, agent_rng, _ = _spawn_rngs(seed)
    sampler = process.sampler()
    oracle = _SnapOracle(path, base_config.snap)
    kinks = detect_kinks(path, grid=201)
    delta = default_delta(path)
    n_states = path.evaluate(0.0).n_states
    n_actions = path.evaluate(0.0).n_actions
    gamma = path.gamma

    q = np.zeros((n_states, n_actions))
    target = np.zeros_like(q)
    proxies = _ProxyLoop(path, scheduler_config, base_config)
    sched = initial_scheduler_state(scheduler_config)

    cols = {name: np.zeros(horizon) for name in _TRACE_COLUMNS}
    cols["steps"] = np.arange(1, horizon + 1)
    cols["depth"] = np.zeros(horizon, dtype=int)
    cols["budget"] = np.zeros(horizon, dtype=int)

    state = 0
    episode_return = 0.0
    for t in range(1, horizon + 1):
        tau = sampler.sample(t, env_rng)
        mdp = path.evaluate(tau)
        if (t - 1) % base_config.episode_length == 0:
            state = int(env_rng.integers(n_states))
            episode_return = 0.0

        if agent_rng.random() < base_config.epsilon_greedy:
            action = int(agent_rng.integers(n_actions))
        else:
            action = int(np.argmax(q[state]))
        reward = float(mdp.r[state, action])
        next_state = _sample_successor(mdp.p[state, action], env_rng)
        episode_return += reward
        proxies.buffer.append(state, action, reward, next_state, t)

        batch = proxies.buffer.sample(base_config.minibatch_size, agent_rng)
        if adaptive:
            gap_table = target if base_config.gap_uses_target else q
            signals = proxies.observe(t, batch, gap_table)
            sched = scheduler_step(sched, signals, t)
        eta = scheduled_rate(sched, _base_eta(scheduler_config, base_config, t))
        hyper = sched.hyper

        b_s = np.fromiter((tr.state for tr in batch), dtype=int, count=len(batch))
        b_a = np.fromiter((tr.action for tr in batch), dtype=int, count=len(batch))
        b_r = np.fromiter((tr.reward for tr in batch), dtype=float, count=len(batch))
        b_n = np.fromiter((tr.next_state for tr in batch), dtype=int, count=len(batch))
        bootstrap = b_r + gamma * np.max(target[b_n], axis=1)
        # average duplicates of one (s, a) pair so the effective step stays
        # eta per pair, independent of how often the pair recurs in the batch
        flat = b_s * n_actions + b_a
        pairs, inverse = np.unique(flat, return_inverse=True)
        sums = np.zeros(pairs.size)
        np.add.at(sums, inverse, bootstrap)
        counts = np.bincount(inverse, minlength=pairs.size)
        p_s, p_a = pairs // n_actions, pairs % n_actions
        td = sums / counts - q[p_s, p_a]
        anchor = q[p_s, p_a] - target[p_s, p_a]
        q[p_s, p_a] += eta * td - eta * hyper.lam * anchor
        target += hyper.nu * (q - target)

        _, q_star, v_star = oracle.tables(tau)
        policy = np.argmax(q, axis=1)
        v_pi = oracle.policy_state_values(tau, policy)
        cols["taus"][t - 1] = tau
        cols["e_t"][t - 1] = float(np.abs(q - q_star).max())
        cols["regret_inc"][t - 1] = float(np.mean(v_star - v_pi))
        cols["eta"][t - 1] = eta
        cols["nu"][t - 1] = hyper.nu
        cols["lam"][t - 1] = hyper.lam
        cols["depth"][t - 1] = hyper.depth
        cols["budget"][t - 1] = hyper.budget
        cols["episode_return"][t - 1] = episode_return
        state = next_state

    cols["geo_load"] = _geo_loads(path, cols["taus"], base_config.geo_grid, kinks, delta)
    return RunTrace(
        mode="ht-rl" if adaptive else "static-rl",
        seed=seed,
        meta=_run_meta(path, base_config, kinks, extra={}),
        **cols,
    )


def _spawn_rngs(seed: int) -> tuple[np.random.Generator, ...]:
    # one child stream per component keeps runs reproducible even if a
    # component changes how many draws it consumes
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def _run_meta(path: MdpPath, agent: AgentConfig, kinks, extra: dict) -> dict:
    meta = {
        "snap": agent.snap,
        "snap_error_bound": _snap_error_bound(path, agent.snap),
        "value_range": value_range(path),
        "l_s": path_mixing(path).l_s,
        "n_kinks": len(kinks),
        "d0": "uniform",
    }
    meta.update(extra)
    return meta


def ht_q_learning_run(
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    base_config: AgentConfig,
    seed: int,
    horizon: int,
) -> RunTrace:
    """Tabular Q-learning with replay-proxy scheduled hyper-parameters."""
    return _rl_engine(process, scheduler_config, base_config, seed, horizon, adaptive=True)


def static_q_learning_run(
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    base_config: AgentConfig,
    seed: int,
    horizon: int,
) -> RunTrace:
    """The same loop with the scheduler idle (base hyper-parameters)."""
    return _rl_engine(process, scheduler_config, base_config, seed, horizon, adaptive=False)


class _UctNode:
    __slots__ = ("counts", "returns", "visits", "children")

    def __init__(self, n_actions: int) -> None:
        self.counts = np.zeros(n_actions, dtype=np.int64)
        self.returns = np.zeros(n_actions)
        self.visits = 0
        self.children: dict[tuple[int, int], _UctNode] = {}


def uct_plan(
    model: FiniteMdp,
    root: int,
    depth: int,
    budget: int,
    c_uct: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> int:
    """UCT from ``root``: returns the visit-count argmax action.

    Each simulation selects by mean value plus ``c_uct * sqrt(ln N / N_a)``
    (untried actions first, lowest index), expands at most one node, rolls
    out uniformly at random to ``depth`` actions, and backs up discounted
    returns.  Ties everywhere resolve to the lowest action index; ``stats``
    (optional) receives simulation/expansion counters.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if budget < model.n_actions:
        raise ValueError("budget must be at least the number of actions")
    tree = _UctNode(model.n_actions)
    expansions = 0

    def rollout(state: int, steps: int) -> float:
        total, discount = 0.0, 1.0
        for _ in range(steps):
            action = int(rng.integers(model.n_actions))
            total += discount * model.r[state, action]
            discount *= model.gamma
            state = _sample_successor(model.p[state, action], rng)
        return total

    def simulate(node: _UctNode, state: int, depth_left: int) -> float:
        nonlocal expansions
        untried = np.flatnonzero(node.counts == 0)
        if untried.size:
            action = int(untried[0])
            successor = _sample_successor(model.p[state, action], rng)
            node.children[(action, successor)] = _UctNode(model.n_actions)
            expansions += 1
            value = model.r[state, action] + model.gamma * rollout(successor, depth_left - 1)
        else:
            means = node.returns / node.counts
            bonus = c_uct * np.sqrt(math.log(node.visits) / node.counts)
            action = int(np.argmax(means + bonus))
            successor = _sample_successor(model.p[state, action], rng)
            child = node.children.get((action, successor))
            if child is None:
                child = _UctNode(model.n_actions)
                node.children[(action, successor)] = child
                expansions += 1
                tail = rollout(successor, depth_left - 1)
            elif depth_left > 1:
                tail = simulate(child, successor, depth_left - 1)
            else:
                tail = 0.0
            value = model.r[state, action] + model.gamma * tail
        node.counts[action] += 1
        node.returns[action] += value
        node.visits += 1
        return value

    for _ in range(budget):
        simulate(tree, root, depth)
    if stats is not None:
        stats["simulations"] = budget
        stats["expansions"] = expansions
    return int(np.argmax(tree.counts))


_MODEL_MODES = ("true_model", "ema_model")


def _mcts_engine(
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    model_learning: str,
    seed: int,
    horizon: int,
    base_config: AgentConfig,
    adaptive: bool,
    depth_override: int | None = None,
    budget_override: int | None = None,
) -> RunTrace:
    if horizon < 1:
        raise ValueError("T must be a positive integer")
    if model_learning not in _MODEL_MODES:
        raise ValueError(f"model_learning must be one of {_MODEL_MODES}")
    path = process.path
    env_rng, agent_rng, planner_rng = _spawn_rngs(seed)
    sampler = process.sampler()
    oracle = _SnapOracle(path, base_config.snap)
    kinks = detect_kinks(path, grid=201)
    delta = default_delta(path)
    first = path.evaluate(0.0)
    n_states, n_actions, gamma = first.n_states, first.n_actions, path.gamma

    learned_r = np.zeros((n_states, n_actions))
    learned_p = np.full((n_states, n_actions, n_states), 1.0 / n_states)
    q_sweep = np.zeros((n_states, n_actions))
    proxies = _ProxyLoop(path, scheduler_config, base_config)
    sched = initial_scheduler_state(scheduler_config)
    eye = np.eye(n_states)

    cols = {name: np.zeros(horizon) for name in _TRACE_COLUMNS}
    cols["steps"] = np.arange(1, horizon + 1)
    cols["depth"] = np.zeros(horizon, dtype=int)
    cols["budget"] = np.zeros(horizon, dtype=int)

    state = 0
    episode_return = 0.0
    total_expansions = 0
    for t in range(1, horizon + 1):
        tau = sampler.sample(t, env_rng)
        mdp = path.evaluate(tau)
        if (t - 1) % base_config.episode_length == 0:
            state = int(env_rng.integers(n_states))
            episode_return = 0.0

        if model_learning == "true_model":
            model = mdp
        else:
            model = FiniteMdp(p=learned_p, r=learned_r, gamma=gamma)
        q_sweep = bellman_optimal_apply(model, q_sweep)

        if adaptive and len(proxies.buffer) >= 1:
            batch = proxies.buffer.sample(base_config.minibatch_size, agent_rng)
            signals = proxies.observe(t, batch, q_sweep)
            sched = scheduler_step(sched, signals, t)
        hyper = sched.hyper
        depth = depth_override if depth_override is not None else hyper.depth
        budget = budget_override if budget_override is not None else hyper.budget

        stats: dict = {}
        action = uct_plan(model, state, depth, budget, base_config.c_uct, planner_rng, stats)
        total_expansions += stats["expansions"]
        reward = float(mdp.r[state, action])
        next_state = _sample_successor(mdp.p[state, action], env_rng)
        episode_return += reward
        proxies.buffer.append(state, action, reward, next_state, t)

        if model_learning == "ema_model":
            eta = scheduled_rate(sched, _base_eta(scheduler_config, base_config, t))
            lr = min(1.0, base_config.model_lr_scale * eta)
            learned_r[state, action] += lr * (reward - learned_r[state, action])
            learned_p[state, action] += lr * (eye[next_state] - learned_p[state, action])

        _, q_star, v_star = oracle.tables(tau)
        cols["taus"][t - 1] = tau
        cols["e_t"][t - 1] = float(np.abs(q_sweep - q_star).max())
        cols["regret_inc"][t - 1] = float(v_star[state] - q_star[state, action])
        cols["eta"][t - 1] = scheduled_rate(sched, _base_eta(scheduler_config, base_config, t))
        cols["nu"][t - 1] = hyper.nu
        cols["lam"][t - 1] = hyper.lam
        cols["depth"][t - 1] = depth
        cols["budget"][t - 1] = budget
        cols["episode_return"][t - 1] = episode_return
        state = next_state

    cols["geo_load"] = _geo_loads(path, cols["taus"], base_config.geo_grid, kinks, delta)
    extra = {
        "model_learning": model_learning,
        "total_budget": int(cols["budget"].sum()),
        "total_expansions": total_expansions,
    }
    return RunTrace(
        mode="ht-mcts" if adaptive else "static-mcts",
        seed=seed,
        meta=_run_meta(path, base_config, kinks, extra=extra),
        **cols,
    )


def ht_mcts_run(
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    model_learning: str,
    seed: int,
    horizon: int,
    base_config: AgentConfig | None = None,
) -> RunTrace:
    """UCT control with depth/budget scheduled from the replay proxies."""
    return _mcts_engine(
        process, scheduler_config, model_learning, seed, horizon,
        base_config or AgentConfig(), adaptive=True,
    )


def static_mcts_run(
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    model_learning: str,
    seed: int,
    horizon: int,
    base_config: AgentConfig | None = None,
    depth: int | None = None,
    budget: int | None = None,
) -> RunTrace:
    """Fixed-depth/budget UCT baseline (overrides enable matched totals)."""
    return _mcts_engine(
        process, scheduler_config, model_learning, seed, horizon,
        base_config or AgentConfig(), adaptive=False,
        depth_override=depth, budget_override=budget,
    )


def bellman_sweep_run(
    process: StochasticPathProcess,
    horizon: int,
    seed: int = 0,
    snap: float = 1e-3,
) -> RunTrace:
    """Idealized tracker applying one exact Bellman sweep per step.

    No sampling noise: ``e_{t+1} <= gamma e_t + geo-load terms`` holds by the
    contraction, which makes this the reference input for
    :func:`tracking_recursion_audit`.
    """
    if horizon < 1:
        raise ValueError("T must be a positive integer")
    path = process.path
    rng = np.random.default_rng(seed)
    sampler = process.sampler()
    oracle = _SnapOracle(path, snap)
    kinks = detect_kinks(path, grid=201)
    delta = default_delta(path)
    first = path.evaluate(0.0)
    q = np.zeros((first.n_states, first.n_actions))

    cols = {name: np.zeros(horizon) for name in _TRACE_COLUMNS}
    cols["steps"] = np.arange(1, horizon + 1)
    cols["depth"] = np.zeros(horizon, dtype=int)
    cols["budget"] = np.zeros(horizon, dtype=int)
    for t in range(1, horizon + 1):
        tau = sampler.sample(t, rng)
        q = bellman_optimal_apply(path.evaluate(tau), q)
        _, q_star, _ = oracle.tables(tau)
        cols["taus"][t - 1] = tau
        cols["e_t"][t - 1] = float(np.abs(q - q_star).max())
    cols["geo_load"] = _geo_loads(path, cols["taus"], 2, kinks, delta)
    agent = AgentConfig(snap=snap)
    return RunTrace(
        mode="bellman-sweeps", seed=seed,
        meta=_run_meta(path, agent, kinks, extra={}), **cols,
    )


def dynamic_regret(trace: RunTrace) -> float:
    """Total regret: the sum of the trace's exact per-step increments."""
    return float(trace.regret_inc.sum())


def _lad_fit(y: np.ndarray, g: np.ndarray, coverage: float) -> tuple[float, float, float]:
    # Least-absolute-residual fit of y ~ c1 * g + c_noise with c1, c_noise >= 0.
    # Overshoot (y above the fit, i.e. a recursion violation) is weighted
    # `coverage` and undershoot `1 - coverage`, so the solution leaves at most
    # a `1 - coverage` fraction of steps above the line whenever that is
    # feasible; tiny costs on (c1, c_noise) pick the minimal such constants.
    # LP variables: [c1, c_noise, over_1..n, under_1..n] with
    # y = c1 g + c_noise + over - under.
    n = y.size
    g_col = sparse.csc_matrix(g.reshape(-1, 1))
    one_col = sparse.csc_matrix(np.ones((n, 1)))
    identity = sparse.identity(n, format="csc")
    a_eq = sparse.hstack([g_col, one_col, identity, -identity], format="csc")
    cost = np.concatenate(
        [[1e-9, 1e-9], np.full(n, coverage), np.full(n, 1.0 - coverage)]
    )
    result = linprog(cost, A_eq=a_eq, b_eq=y, bounds=(0, None), method="highs")
    if not result.success:
        raise ArithmeticError(f"LAD fit failed: {result.message}")
    c1, c_noise = float(result.x[0]), float(result.x[1])
    objective = float(np.abs(y - c1 * g - c_noise).sum())
    return c1, c_noise, objective


def tracking_recursion_audit(
    trace: RunTrace,
    rho_grid,
    hold_fraction: float = 0.95,
    tol: float = 1e-9,
) -> dict:
    """Fit ``e_{t+1} <= rho e_t + c1 geo_load_t + c_noise`` over a rho grid.

    For each rho the minimal nonnegative ``(c1, c_noise)`` is fit by least
    absolute residual, with overshoot weighted ``hold_fraction`` so the fit
    covers at least that share of the steps whenever feasible; a step
    violates the recursion when its residual exceeds ``tol``.  The report
    carries one entry per rho plus the best one (fewest violations, then
    smallest fit objective), flagged by whether it holds on at least
    ``hold_fraction`` of the steps.
    """
    rho_grid = np.atleast_1d(np.asarray(rho_grid, dtype=float))
    if rho_grid.size == 0 or np.any(rho_grid < 0.0):
        raise ValueError("rho_grid must contain nonnegative values")
    if len(trace.e_t) < 2:
        raise ValueError("audit needs at least two steps")
    e_next = trace.e_t[1:]
    e_prev = trace.e_t[:-1]
    g_step = trace.geo_load[:-1]
    entries = []
    for rho in rho_grid:
        y = e_next - rho * e_prev
        c1, c_noise, objective = _lad_fit(y, g_step, hold_fraction)
        residual = y - c1 * g_step - c_noise
        violations = float(np.mean(residual > tol))
        entries.append(
            {
                "rho": float(rho),
                "c1": c1,
                "c_noise": c_noise,
                "violation_fraction": violations,
                "lad_objective": objective,
                "holds": violations <= 1.0 - hold_fraction,
            }
        )
    feasible = [e for e in entries if e["holds"]]
    pool = feasible if feasible else entries
    best = min(pool, key=lambda e: (e["violation_fraction"], e["lad_objective"]))
    return {"best": best, "per_rho": entries}
