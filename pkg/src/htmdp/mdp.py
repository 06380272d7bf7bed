"""Finite MDPs, Bellman operators, and exact tabular solvers.

Conventions used throughout the package:

- ``p`` is the transition tensor with shape ``(S, A, S)``; ``p[s, a, s']`` is
  the probability of landing in ``s'`` after playing ``a`` in ``s``.
- ``r`` is the reward table with shape ``(S, A)``.
- A *Q-table* is an ``(S, A)`` float array, a *value function* an ``(S,)``
  float array, and a *policy* an ``(S,)`` integer array of action indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FiniteMdp",
    "ValueIterationResult",
    "IterationLimitError",
    "bellman_optimal_apply",
    "value_iteration",
    "policy_iteration",
    "policy_evaluation",
    "state_values",
    "greedy_policy",
    "action_gap",
    "policy_transition",
    "resolvent_apply",
]

_ROW_SUM_TOL = 1e-12


class IterationLimitError(RuntimeError):
    """Raised when an iterative solver exhausts its iteration budget.

    The final sup-norm residual is kept on the exception so callers can
    decide whether the partial answer is still usable.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.6e})")
        self.residual = float(residual)


@dataclass(frozen=True)
class FiniteMdp:
    """A finite MDP ``(S, A, p, r, gamma)`` with validated arrays.

    Raises ``ValueError`` when a transition row does not sum to one within
    1e-12, when a probability leaves ``[0, 1]``, when a reward is not finite,
    or when the discount is outside ``(0, 1)``.
    """

    p: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        if p.ndim != 3 or r.ndim != 2 or p.shape[:2] != r.shape or p.shape[0] != p.shape[2]:
            raise ValueError(f"inconsistent shapes: p {p.shape}, r {r.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("transition tensor contains non-finite entries")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward table contains non-finite entries")
        if p.min() < -_ROW_SUM_TOL or p.max() > 1.0 + _ROW_SUM_TOL:
            raise ValueError("transition probabilities must lie in [0, 1]")
        row_err = np.abs(p.sum(axis=2) - 1.0).max()
        if row_err > _ROW_SUM_TOL:
            raise ValueError(f"transition rows must sum to 1 (max error {row_err:.3e})")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"discount must be in (0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.p.shape[0]

    @property
    def n_actions(self) -> int:
        return self.p.shape[1]

    def reward_range(self) -> float:
        """Spread ``max r - min r``, the natural scale of value differences."""
        return float(self.r.max() - self.r.min())


def bellman_optimal_apply(mdp: FiniteMdp, q: np.ndarray) -> np.ndarray:
    """One application of the optimal Bellman operator, ``r + gamma * P max_a q``.

    A gamma-contraction in the sup norm, which is what every convergence and
    perturbation argument in this package leans on.
    """
    v = np.max(q, axis=1)
    return mdp.r + mdp.gamma * (mdp.p @ v)


def _policy_backup(mdp: FiniteMdp, q: np.ndarray, policy: np.ndarray) -> np.ndarray:
    v = np.take_along_axis(q, policy[:, None], axis=1)[:, 0]
    return mdp.r + mdp.gamma * (mdp.p @ v)


@dataclass(frozen=True)
class ValueIterationResult:
    """Outcome of value iteration.

    ``residual`` is the final ``||T q - q||_inf`` and ``error_bound`` the
    implied a-posteriori guarantee ``||q - q*||_inf <= residual * gamma / (1 - gamma)``.
    """

    q: np.ndarray
    iterations: int
    residual: float
    error_bound: float


def value_iteration(
    mdp: FiniteMdp,
    tol: float = 1e-10,
    max_iterations: int = 200_000,
    q0: np.ndarray | None = None,
) -> ValueIterationResult:
    """Iterate the optimal Bellman operator until ``||T q - q||_inf <= tol``.

    Raises :class:`IterationLimitError` (carrying the final residual) if the
    budget is exhausted first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros_like(mdp.r) if q0 is None else np.array(q0, dtype=float)
    residual = np.inf
    for it in range(1, max_iterations + 1):
        tq = bellman_optimal_apply(mdp, q)
        residual = float(np.abs(tq - q).max())
        q = tq
        if residual <= tol:
            bound = residual * mdp.gamma / (1.0 - mdp.gamma)
            return ValueIterationResult(q=q, iterations=it, residual=residual, error_bound=bound)
    raise IterationLimitError(
        f"value iteration did not reach tol={tol:g} in {max_iterations} iterations", residual
    )


def policy_evaluation(mdp: FiniteMdp, policy: np.ndarray) -> np.ndarray:
    """Exact ``Q^pi`` via one linear solve (LU with partial pivoting).

    Solves ``(I - gamma P_pi) v = r_pi`` for the policy's state values and
    backs the result up once to Q-shape.
    """
    policy = _check_policy(mdp, policy)
    idx = np.arange(mdp.n_states)
    p_pi = mdp.p[idx, policy, :]
    r_pi = mdp.r[idx, policy]
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    v = np.linalg.solve(a, r_pi)
    return mdp.r + mdp.gamma * (mdp.p @ v)


def policy_iteration(
    mdp: FiniteMdp, max_iterations: int = 1000, policy0: np.ndarray | None = None
) -> np.ndarray:
    """Exact ``Q*`` by Howard policy iteration (finite termination).

    Each sweep evaluates the greedy policy exactly, so the fixed point is
    limited only by linear-solve accuracy; used wherever the package needs a
    reference optimum rather than an iterative approximation.  ``policy0``
    warm-starts the sweep (useful when solving along a drift grid where the
    optimal policy rarely changes between neighboring points).
    """
    policy = greedy_policy(mdp.r) if policy0 is None else _check_policy(mdp, policy0)
    for _ in range(max_iterations):
        q = policy_evaluation(mdp, policy)
        improved = greedy_policy(q)
        if np.array_equal(improved, policy):
            return q
        policy = improved
    raise IterationLimitError(
        f"policy iteration did not stabilize in {max_iterations} sweeps",
        float(np.abs(bellman_optimal_apply(mdp, q) - q).max()),
    )


def state_values(q: np.ndarray) -> np.ndarray:
    """State values ``max_a q(s, a)`` of a Q-table."""
    return np.max(np.asarray(q, dtype=float), axis=1)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Greedy policy of a Q-table; ties resolve to the lowest action index."""
    return np.argmax(np.asarray(q, dtype=float), axis=1)


def action_gap(q: np.ndarray, state_mask: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Per-state action gaps ``top1 - top2`` and their minimum.

    Duplicated maxima give a gap of exactly zero.  Requires at least two
    actions; the optional boolean ``state_mask`` restricts the minimum (the
    per-state vector is always returned for the full state space).
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[1] < 2:
        raise ValueError("action_gap needs a Q-table with at least two actions")
    top2 = np.partition(q, q.shape[1] - 2, axis=1)[:, -2:]
    gaps = top2[:, 1] - top2[:, 0]
    if state_mask is not None:
        state_mask = np.asarray(state_mask, dtype=bool)
        if state_mask.shape != (q.shape[0],) or not state_mask.any():
            raise ValueError("state_mask must be a nonempty boolean mask over states")
        return gaps, float(gaps[state_mask].min())
    return gaps, float(gaps.min())


def policy_transition(mdp: FiniteMdp, policy: np.ndarray) -> np.ndarray:
    """The ``(S*A) x (S*A)`` state-action kernel of ``policy``.

    Row ``(s, a)`` puts mass ``p[s, a, s']`` on column ``(s', policy[s'])``
    and zero elsewhere, so the matrix is row-stochastic by construction.
    """
    policy = _check_policy(mdp, policy)
    s, a = mdp.n_states, mdp.n_actions
    out = np.zeros((s * a, s * a))
    cols = np.arange(s) * a + policy
    out[:, cols] = mdp.p.reshape(s * a, s)
    return out


def resolvent_apply(mdp: FiniteMdp, policy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply the policy resolvent ``(I - gamma P^pi)^{-1}`` to a Q-shaped input.

    Solved directly (LU); the solve residual is checked below 1e-10 before
    returning.  The result's sup norm is at most ``||x||_inf / (1 - gamma)``.
    """
    policy = _check_policy(mdp, policy)
    x = np.asarray(x, dtype=float)
    if x.shape != mdp.r.shape:
        raise ValueError(f"x must be Q-shaped {mdp.r.shape}, got {x.shape}")
    s, a = mdp.n_states, mdp.n_actions
    m = np.eye(s * a) - mdp.gamma * policy_transition(mdp, policy)
    z = np.linalg.solve(m, x.reshape(s * a))
    residual = float(np.abs(m @ z - x.reshape(s * a)).max())
    if residual >= 1e-10:
        raise ArithmeticError(f"resolvent solve residual {residual:.3e} exceeds 1e-10")
    return z.reshape(s, a)


def _check_policy(mdp: FiniteMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states,):
        raise ValueError(f"policy must have shape ({mdp.n_states},), got {policy.shape}")
    if policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ValueError("policy contains out-of-range action indices")
    return policy.astype(int)
