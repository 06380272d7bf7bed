"""Ground metrics on finite state spaces and Wasserstein-dual machinery.

The certificates only ever need the W1 dual norm of *zero-mass* signed
measures (rows of kernel derivatives), for which the classical Kantorovich
duality gives exact closed forms on line and ring metrics and an exact
transport LP on general metrics.

Note the Lipschitz class used here drops the sup-norm cap of a bounded-
Lipschitz norm; for zero-mass measures this is the classical W1 dual and a
conservative upper bound, so every downstream certificate stays valid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "GroundMetric",
    "SignedMeasure",
    "MixingCertificate",
    "NonZeroMassError",
    "InfiniteLipschitzError",
    "NoMixingCertificateError",
    "w1_dual_norm",
    "l1_surrogate_norm",
    "lipschitz_seminorm",
    "mixing_certificate",
]

_MASS_TOL = 1e-12
_TRIANGLE_TOL = 1e-9


class NonZeroMassError(ValueError):
    """The measure has nonzero total mass; the W1 dual norm needs mass zero."""


class InfiniteLipschitzError(ValueError):
    """Two distinct states at distance zero carry different values."""


class NoMixingCertificateError(RuntimeError):
    """gamma * kappa >= 1, so the mixing route cannot certify C_mix."""

    def __init__(self, gamma: float, kappa: float):
        super().__init__(
            f"cannot certify mixing: gamma*kappa = {gamma * kappa:.6g} >= 1 "
            f"(gamma={gamma:.6g}, kappa={kappa:.6g})"
        )
        self.gamma = gamma
        self.kappa = kappa


@dataclass(frozen=True)
class GroundMetric:
    """A finite metric space, with closed-form W1 support for line/ring kinds.

    Use the constructors :meth:`line`, :meth:`ring`, or :meth:`general`.
    ``dist`` is the full symmetric matrix; ``positions`` (line) and
    ``edge_length`` (ring) retain the structure the closed forms need.
    """

    dist: np.ndarray
    kind: str
    positions: np.ndarray | None = None
    edge_length: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        object.__setattr__(self, "dist", d)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.all(np.isfinite(d)) or d.min() < 0:
            raise ValueError("distances must be finite and nonnegative")
        if np.abs(np.diag(d)).max() > 0:
            raise ValueError("self-distances must be zero")
        if np.abs(d - d.T).max() > _TRIANGLE_TOL:
            raise ValueError("distance matrix must be symmetric")
        if self.kind not in ("line", "ring", "general"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "general":
            # O(n^3) triangle check; construction-time only, desk-scale n.
            viol = (d[:, :, None] + d[None, :, :] - d[:, None, :]).min()
            if viol < -_TRIANGLE_TOL:
                raise ValueError(f"triangle inequality violated by {-viol:.3e}")

    @property
    def n_states(self) -> int:
        return self.dist.shape[0]

    @property
    def diameter(self) -> float:
        return float(self.dist.max())

    @classmethod
    def line(cls, positions) -> "GroundMetric":
        x = np.asarray(positions, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("line metric needs at least two positions")
        if np.any(np.diff(x) <= 0):
            raise ValueError("line positions must be strictly increasing")
        return cls(dist=np.abs(x[:, None] - x[None, :]), kind="line", positions=x)

    @classmethod
    def ring(cls, n: int, edge_length: float = 1.0) -> "GroundMetric":
        if n < 3:
            raise ValueError("ring metric needs n >= 3")
        if edge_length <= 0:
            raise ValueError("edge_length must be positive")
        idx = np.arange(n)
        hops = np.abs(idx[:, None] - idx[None, :])
        hops = np.minimum(hops, n - hops)
        return cls(dist=hops * float(edge_length), kind="ring", edge_length=float(edge_length))

    @classmethod
    def general(cls, dist) -> "GroundMetric":
        return cls(dist=np.asarray(dist, dtype=float), kind="general")


@dataclass(frozen=True)
class SignedMeasure:
    """A signed measure on the state space; ``zero_mass`` asserts Σw = 0."""

    weights: np.ndarray
    zero_mass: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if not np.all(np.isfinite(w)):
            raise ValueError("measure weights must be finite")
        if self.zero_mass and abs(w.sum()) > _MASS_TOL:
            raise NonZeroMassError(f"total mass {w.sum():.3e} exceeds {_MASS_TOL:g}")


@dataclass(frozen=True)
class MixingCertificate:
    """Certified constants: L_r, kappa, and C_mix = L_r / (1 - gamma*kappa).

    ``l_s`` is the conversion scale used by path-length integrands; it
    defaults to C_mix (the certified bound on ||V*||_Lip).  A constant-reward
    family legitimately certifies C_mix = 0.
    """

    lip_reward: float
    kappa: float
    gamma: float
    c_mix: float = field(default=None)  # type: ignore[assignment]
    l_s: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.gamma * self.kappa >= 1.0:
            raise NoMixingCertificateError(self.gamma, self.kappa)
        if self.c_mix is None:
            object.__setattr__(self, "c_mix", self.lip_reward / (1.0 - self.gamma * self.kappa))
        if self.l_s is None:
            object.__setattr__(self, "l_s", self.c_mix)
        if self.c_mix < 0 or self.lip_reward < 0 or self.kappa < 0:
            raise ValueError("certificate constants must be nonnegative")


def _weights_of(xi) -> np.ndarray:
    if isinstance(xi, SignedMeasure):
        return xi.weights
    return np.asarray(xi, dtype=float)


def w1_dual_norm(xi, metric: GroundMetric) -> float:
    """sup over 1-Lipschitz f of |∫ f dξ| for a zero-mass signed measure ξ.

    Line and ring metrics use exact closed forms (cumulative sums; weighted
    median shift on the ring); general metrics solve the Kantorovich
    transport LP between ξ⁺ and ξ⁻ exactly.
    """
    w = _weights_of(xi)
    if w.shape != (metric.n_states,):
        raise ValueError(f"measure has {w.shape} weights for {metric.n_states} states")
    if abs(w.sum()) > _MASS_TOL:
        raise NonZeroMassError(
            f"w1_dual_norm needs zero total mass, got {w.sum():.3e}; "
            "bounded-Lipschitz handling of massive measures is out of scope"
        )
    return float(w1_dual_norm_rows(w[None, :], metric)[0])


def w1_dual_norm_rows(rows: np.ndarray, metric: GroundMetric) -> np.ndarray:
    """Vectorized w1_dual_norm over the last axis of ``rows`` (all zero-mass).

    The hot path for kernel-derivative tensors: shape (..., n) in, (...) out.
    """
    rows = np.asarray(rows, dtype=float)
    flat = rows.reshape(-1, rows.shape[-1])
    if metric.kind == "line":
        order = np.argsort(metric.positions, kind="stable")
        f = np.cumsum(flat[:, order], axis=1)[:, :-1]
        gaps = np.diff(metric.positions[order])
        out = np.abs(f) @ gaps
    elif metric.kind == "ring":
        f = np.cumsum(flat, axis=1)
        med = np.median(f, axis=1, keepdims=True)
        out = np.abs(f - med).sum(axis=1) * metric.edge_length
    else:
        out = np.array([_w1_transport_lp(row, metric.dist) for row in flat])
    return out.reshape(rows.shape[:-1])


def _w1_transport_lp(xi: np.ndarray, dist: np.ndarray) -> float:
    """Exact Kantorovich transport LP between ξ⁺ and ξ⁻ (zero-mass ξ)."""
    pos = np.clip(xi, 0.0, None)
    neg = np.clip(-xi, 0.0, None)
    mass = pos.sum()
    if mass <= _MASS_TOL:
        return 0.0
    src = np.flatnonzero(pos > 0)
    dst = np.flatnonzero(neg > 0)
    m, k = len(src), len(dst)
    cost = dist[np.ix_(src, dst)].ravel()
    a_eq = np.zeros((m + k - 1, m * k))
    b_eq = np.zeros(m + k - 1)
    for i in range(m):
        a_eq[i, i * k : (i + 1) * k] = 1.0
        b_eq[i] = pos[src[i]]
    # Last column constraint dropped: redundant given zero mass.
    for j in range(k - 1):
        a_eq[m + j, j::k] = 1.0
        b_eq[m + j] = neg[dst[j]]
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def l1_surrogate_norm(xi, metric: GroundMetric) -> float:
    """Cheap upper bound (diameter/2) * ||ξ||₁ on the W1 dual norm."""
    w = _weights_of(xi)
    return 0.5 * metric.diameter * float(np.abs(w).sum())


def lipschitz_seminorm(f, metric: GroundMetric) -> float:
    """max over state pairs of |f(x) - f(y)| / d(x, y)."""
    v = np.asarray(f, dtype=float)
    if v.shape != (metric.n_states,):
        raise ValueError(f"value vector has shape {v.shape} for {metric.n_states} states")
    diff = np.abs(v[:, None] - v[None, :])
    d = metric.dist
    off = ~np.eye(metric.n_states, dtype=bool)
    degenerate = off & (d <= 0)
    if np.any(degenerate & (diff > 0)):
        raise InfiniteLipschitzError("distinct states at distance 0 carry different values")
    pairs = off & (d > 0)
    if not pairs.any():
        return 0.0
    return float((diff[pairs] / d[pairs]).max())


def mixing_certificate(mdp, metric: GroundMetric) -> MixingCertificate:
    """Certify C_mix = L_r / (1 - gamma*kappa) for one MDP.

    L_r is the worst per-action reward Lipschitz seminorm and kappa the worst
    pairwise W1 ratio of kernel rows (exact, not a bound).  Raises
    :class:`NoMixingCertificateError` when gamma*kappa >= 1.
    """
    n = mdp.n_states
    if metric.n_states != n:
        raise ValueError("metric and MDP disagree on the number of states")
    l_r = max(lipschitz_seminorm(mdp.r[:, a], metric) for a in range(mdp.n_actions))
    iu, ju = np.triu_indices(n, k=1)
    d_pairs = metric.dist[iu, ju]
    if np.any(d_pairs <= 0):
        # Distinct states at distance zero: kernel rows must agree exactly.
        zero = d_pairs <= 0
        rows_i = mdp.p[iu[zero], :, :]
        rows_j = mdp.p[ju[zero], :, :]
        if np.abs(rows_i - rows_j).max() > 0:
            raise InfiniteLipschitzError("distinct states at distance 0 have different kernels")
    kappa = 0.0
    for a in range(mdp.n_actions):
        diffs = mdp.p[iu, a, :] - mdp.p[ju, a, :]
        w1 = w1_dual_norm_rows(diffs, metric)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(d_pairs > 0, w1 / d_pairs, 0.0)
        kappa = max(kappa, float(ratios.max()) if ratios.size else 0.0)
    return MixingCertificate(lip_reward=l_r, kappa=kappa, gamma=mdp.gamma)
