"""Drifting-MDP families: ring construction, shipped regimes, derivatives.

Three regimes ship as configs (see ``configs/``):

- ``length``: linear interpolation of the endpoint reward tables.  The
  interpolation is linear in the *tables*, so second derivatives vanish
  identically and the path is purely length-dominated (Curv = 0).
- ``curvature``: the same endpoints traversed with a sharp speed change —
  the drift rate ramps smoothly from 0.25x to 1.75x across tau in
  [0.4, 0.6], so curvature concentrates on the ramp (Curv = 1.5 * PL).
- ``kink``: two actions share a bump whose weights cross at alpha = 1/2,
  forcing an exact greedy tie (zero global gap) at an interior tau.

A ``moving_center`` family (continuously interpolated bump center, plus a
``moving_center_floored`` stress variant) is kept for qualitative use; the
ring distance is not differentiable in the center, so those two are excluded
from analytic-derivative paths and claims.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from htmdp.mdp import FiniteMdp
from htmdp.metric import GroundMetric

__all__ = [
    "MdpPath",
    "PathDerivatives",
    "ring_mdp",
    "ring_bump",
    "ring_kernel",
    "stationary_path",
    "length_dominated_path",
    "curvature_dominated_path",
    "kink_prone_path",
    "moving_center_path",
    "make_path",
    "path_derivatives",
    "path_speed_terms",
    "PATH_FAMILIES",
]

_DP_MASS_TOL = 1e-8

# Action order everywhere: 0 = L (step -1), 1 = N (stay), 2 = R (step +1).
N_RING_ACTIONS = 3


@dataclass(frozen=True)
class MdpPath:
    """A parameterized family tau in [0,1] -> FiniteMdp.

    ``first``/``second`` hold the closed-form derivative callables
    (tau -> (dr, dP) and tau -> (ddr, ddP)) when ``derivative_mode`` is
    "analytic"; "central_fd" differentiates ``evaluate`` numerically with the
    stored stencil widths instead.
    """

    evaluate: Callable[[float], FiniteMdp]
    metric: GroundMetric
    gamma: float
    family: str = "custom"
    derivative_mode: str = "analytic"
    fd_step: float = 1e-4
    fd_step_second: float = 1e-3
    scale_l_s: float | None = None
    first: Callable[[float], tuple] | None = None
    second: Callable[[float], tuple] | None = None
    endpoints: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.derivative_mode not in ("analytic", "central_fd"):
            raise ValueError(f"unknown derivative_mode {self.derivative_mode!r}")
        for h in (self.fd_step, self.fd_step_second):
            if not (0.0 < h < 0.1):
                raise ValueError("fd steps must lie in (0, 0.1)")
        if self.derivative_mode == "analytic" and (self.first is None or self.second is None):
            raise ValueError("analytic mode requires closed-form derivative callables")


@dataclass(frozen=True)
class PathDerivatives:
    """First/second derivatives of (r, P) at one tau; kernel rows are zero-mass."""

    dr: np.ndarray
    dp: np.ndarray
    ddr: np.ndarray
    ddp: np.ndarray

    def __post_init__(self):
        for name, arr in (("dp", self.dp), ("ddp", self.ddp)):
            mass = np.abs(np.asarray(arr).sum(axis=-1)).max()
            if mass > _DP_MASS_TOL:
                raise ValueError(
                    f"{name} rows must be zero-mass within {_DP_MASS_TOL:g}, got {mass:.3e}"
                )


def ring_bump(n: int, center: float, width: float) -> np.ndarray:
    """Gaussian bump exp(-d_ring(s, center)^2 / (2 width^2)) over ring states."""
    d = np.abs(np.arange(n) - float(center)) % n
    d = np.minimum(d, n - d)
    return np.exp(-(d**2) / (2.0 * width**2))


def ring_kernel(n: int, epsilon_mix: float) -> np.ndarray:
    """(1 - eps) deterministic {L, N, R} moves mixed with eps * uniform."""
    p = np.full((n, N_RING_ACTIONS, n), epsilon_mix / n)
    s = np.arange(n)
    p[s, 0, (s - 1) % n] += 1.0 - epsilon_mix
    p[s, 1, s] += 1.0 - epsilon_mix
    p[s, 2, (s + 1) % n] += 1.0 - epsilon_mix
    return p


def ring_mdp(
    n: int,
    epsilon_mix: float,
    gamma: float,
    bump_center: float,
    bump_width: float,
    action_weights,
) -> FiniteMdp:
    """Ring MDP: 3 actions {L, N, R}, mixed deterministic moves, bump rewards.

    r(s, a) = w_a * exp(-d_ring(s, c)^2 / (2 sigma^2)); the center may be a
    real number (wrap-around distance handles non-lattice centers).
    """
    if n < 3:
        raise ValueError("ring_mdp needs n >= 3")
    if not (0.0 <= epsilon_mix < 1.0):
        raise ValueError("epsilon_mix must lie in [0, 1)")
    if bump_width <= 0:
        raise ValueError("bump_width must be positive")
    w = np.asarray(action_weights, dtype=float)
    if w.shape != (N_RING_ACTIONS,):
        raise ValueError(f"action_weights must have length {N_RING_ACTIONS}")
    b = ring_bump(n, bump_center, bump_width)
    return FiniteMdp(p=ring_kernel(n, epsilon_mix), r=b[:, None] * w[None, :], gamma=gamma)


def stationary_path(mdp: FiniteMdp, metric: GroundMetric, family: str = "stationary") -> MdpPath:
    """A constant path; all derivatives vanish."""
    zero_r = np.zeros_like(mdp.r)
    zero_p = np.zeros_like(mdp.p)
    return MdpPath(
        evaluate=lambda tau: mdp,
        metric=metric,
        gamma=mdp.gamma,
        family=family,
        first=lambda tau: (zero_r, zero_p),
        second=lambda tau: (zero_r, zero_p),
        endpoints=(mdp, mdp),
    )


def _profiled_table_path(
    m0: FiniteMdp,
    m1: FiniteMdp,
    metric: GroundMetric,
    family: str,
    profile: Callable[[float], tuple[float, float, float]],
    meta: dict,
) -> MdpPath:
    """Interpolate two endpoint MDPs through a scalar profile s(tau).

    ``profile`` returns (s, ds, dds); the path is M(tau) = (1 - s) M0 + s M1
    entrywise, so derivatives are the endpoint differences scaled by ds/dds.
    """
    dr_tab = m1.r - m0.r
    dp_tab = m1.p - m0.p

    def evaluate(tau: float) -> FiniteMdp:
        s = profile(float(tau))[0]
        return FiniteMdp(
            p=(1.0 - s) * m0.p + s * m1.p,
            r=(1.0 - s) * m0.r + s * m1.r,
            gamma=m0.gamma,
        )

    return MdpPath(
        evaluate=evaluate,
        metric=metric,
        gamma=m0.gamma,
        family=family,
        first=lambda tau: (profile(float(tau))[1] * dr_tab, profile(float(tau))[1] * dp_tab),
        second=lambda tau: (profile(float(tau))[2] * dr_tab, profile(float(tau))[2] * dp_tab),
        endpoints=(m0, m1),
        meta=meta,
    )


def _linear_profile(tau: float) -> tuple[float, float, float]:
    return tau, 1.0, 0.0


# Speed-ramp profile: the table drifts at a low constant rate, smoothly
# accelerates across _RAMP_LO..HI, then continues at a high constant rate.
# Speeds sum to 2 and the ramp is centered, so s(1) = 1 without rescaling;
# the second derivative is supported only on the ramp window.
_RAMP_LO, _RAMP_HI = 0.4, 0.6
_RAMP_A, _RAMP_B = 0.25, 1.75


def _speed_ramp_profile(tau: float) -> tuple[float, float, float]:
    w = _RAMP_HI - _RAMP_LO
    rise = _RAMP_B - _RAMP_A
    u = min(max((tau - _RAMP_LO) / w, 0.0), 1.0)
    step = 3.0 * u**2 - 2.0 * u**3
    s = _RAMP_A * tau + rise * (w * (u**3 - 0.5 * u**4) + max(tau - _RAMP_HI, 0.0))
    ds = _RAMP_A + rise * step
    dds = rise * (6.0 * u - 6.0 * u**2) / w
    return s, ds, dds


def _epsilon_pair(epsilon_mix) -> tuple[float, float]:
    if np.ndim(epsilon_mix) == 0:
        e = float(epsilon_mix)
        return e, e
    e0, e1 = (float(v) for v in epsilon_mix)
    return e0, e1


def _table_family(
    family: str,
    profile: Callable[[float], tuple[float, float, float]],
    n: int = 20,
    gamma: float = 0.95,
    epsilon_mix=0.02,
    c0: float = 10.0,
    c1: float = 10.0,
    sigma: float = 2.0,
    weights0=(0.4, 1.0, 0.7),
    weights1=(0.88, 2.2, 1.54),
) -> MdpPath:
    e0, e1 = _epsilon_pair(epsilon_mix)
    m0 = ring_mdp(n, e0, gamma, c0, sigma, weights0)
    m1 = ring_mdp(n, e1, gamma, c1, sigma, weights1)
    meta = {
        "n": n,
        "gamma": gamma,
        "epsilon_mix": (e0, e1),
        "c0": c0,
        "c1": c1,
        "sigma": sigma,
        "weights0": tuple(float(w) for w in np.asarray(weights0, dtype=float)),
        "weights1": tuple(float(w) for w in np.asarray(weights1, dtype=float)),
    }
    return _profiled_table_path(m0, m1, GroundMetric.ring(n), family, profile, meta)


def length_dominated_path(**kwargs) -> MdpPath:
    """Linear table interpolation between two ring MDPs (Curv identically 0).

    The shipped defaults scale every reward weight by 2.2 with a fixed bump
    center, so Q* scales along the path and the greedy gap stays positive.
    """
    return _table_family("length", _linear_profile, **kwargs)


def curvature_dominated_path(**kwargs) -> MdpPath:
    """The length endpoints traversed with a sharp mid-path speed change.

    Same image as the linear path, but the drift rate jumps smoothly from
    0.25x to 1.75x across tau in [0.4, 0.6]: |dds| integrates to 1.5x the
    first-order table drift (Curv = 1.5 * PL), concentrated on the ramp.
    """
    return _table_family("curvature", _speed_ramp_profile, **kwargs)


def kink_prone_path(
    n: int = 20,
    gamma: float = 0.95,
    epsilon_mix: float = 0.02,
    c0: float = 10.0,
    sigma: float = 2.0,
    alpha_profile=(0.3, 0.7),
    weight_n: float = 0.0,
    scale_l: float = 1.0,
    scale_r: float = 1.0,
) -> MdpPath:
    """Two bump actions whose weights cross: r_L = alpha(tau) b_L, r_R = (1 - alpha(tau)) b_R.

    The two action bumps share center and width (``b_L = scale_l * b``,
    ``b_R = scale_r * b``); alpha interpolates linearly over ``alpha_profile``.
    With the default symmetric scales the family is exactly mirror-symmetric
    at alpha = 1/2 (L <-> R, s -> 2 c0 - s), so the greedy tie at the bump
    center and its antipode is exact and the global gap profile is V-shaped
    with a zero at the crossing.
    """
    e = float(epsilon_mix)
    a0, a1 = (float(a) for a in alpha_profile)
    for a in (a0, a1):
        if not (0.0 <= a <= 1.0):
            raise ValueError("alpha_profile values must lie in [0, 1]")
    if scale_l <= 0 or scale_r <= 0:
        raise ValueError("bump scales must be positive")
    b = ring_bump(n, c0, sigma)
    p = ring_kernel(n, e)
    da = a1 - a0
    zero_r = np.zeros((n, N_RING_ACTIONS))
    zero_p = np.zeros_like(p)
    dr_tab = np.stack([da * scale_l * b, np.zeros(n), -da * scale_r * b], axis=1)

    def evaluate(tau: float) -> FiniteMdp:
        a = a0 + (a1 - a0) * float(tau)
        r = np.stack([a * scale_l * b, weight_n * b, (1.0 - a) * scale_r * b], axis=1)
        return FiniteMdp(p=p, r=r, gamma=gamma)

    return MdpPath(
        evaluate=evaluate,
        metric=GroundMetric.ring(n),
        gamma=gamma,
        family="kink",
        first=lambda tau: (dr_tab, zero_p),
        second=lambda tau: (zero_r, zero_p),
        endpoints=(evaluate(0.0), evaluate(1.0)),
        meta={
            "n": n,
            "gamma": gamma,
            "epsilon_mix": (e, e),
            "c0": c0,
            "sigma": sigma,
            "alpha_profile": (a0, a1),
            "weight_n": weight_n,
            "scale_l": scale_l,
            "scale_r": scale_r,
        },
    )


def moving_center_path(
    n: int = 20,
    gamma: float = 0.95,
    epsilon_mix: float = 0.02,
    c0: float = 4.0,
    c1: float = 14.0,
    sigma: float = 2.0,
    weights0=(0.4, 1.0, 0.7),
    weights1=(0.4, 1.0, 0.7),
    floored: bool = False,
) -> MdpPath:
    """Bump center (and weights) interpolated continuously in tau.

    The ring distance in the center has a non-smooth point at the antipode, so
    this family carries finite-difference derivatives only.  ``floored=True``
    snaps the center to floor(c(tau)), producing a piecewise-constant reward
    table (a deliberate non-smooth stress case; derivatives are meaningless
    at the jumps).
    """
    e = float(epsilon_mix)
    p = ring_kernel(n, e)
    w0 = np.asarray(weights0, dtype=float)
    w1 = np.asarray(weights1, dtype=float)

    def evaluate(tau: float) -> FiniteMdp:
        t = float(tau)
        c = (1.0 - t) * c0 + t * c1
        if floored:
            c = float(np.floor(c))
        w = (1.0 - t) * w0 + t * w1
        b = ring_bump(n, c, sigma)
        return FiniteMdp(p=p, r=b[:, None] * w[None, :], gamma=gamma)

    return MdpPath(
        evaluate=evaluate,
        metric=GroundMetric.ring(n),
        gamma=gamma,
        family="moving_center_floored" if floored else "moving_center",
        derivative_mode="central_fd",
        endpoints=(evaluate(0.0), evaluate(1.0)),
        meta={
            "n": n,
            "gamma": gamma,
            "epsilon_mix": (e, e),
            "c0": c0,
            "c1": c1,
            "sigma": sigma,
            "weights0": tuple(w0),
            "weights1": tuple(w1),
            "floored": floored,
        },
    )


_FAMILY_KEYS = {
    "length": {"n", "gamma", "epsilon_mix", "c0", "c1", "sigma", "weights0", "weights1"},
    "curvature": {"n", "gamma", "epsilon_mix", "c0", "c1", "sigma", "weights0", "weights1"},
    "custom": {"n", "gamma", "epsilon_mix", "c0", "c1", "sigma", "weights0", "weights1"},
    "kink": {
        "n",
        "gamma",
        "epsilon_mix",
        "c0",
        "sigma",
        "alpha_profile",
        "weight_n",
        "scale_l",
        "scale_r",
    },
    "moving_center": {"n", "gamma", "epsilon_mix", "c0", "c1", "sigma", "weights0", "weights1"},
    "moving_center_floored": {
        "n",
        "gamma",
        "epsilon_mix",
        "c0",
        "c1",
        "sigma",
        "weights0",
        "weights1",
    },
}

PATH_FAMILIES = tuple(sorted(_FAMILY_KEYS))


def make_path(config: dict) -> MdpPath:
    """Build a path from a flat config dict with a ``family`` key.

    Unknown keys (and keys not applicable to the family) are rejected so that
    config typos fail loudly.
    """
    cfg = dict(config)
    family = cfg.pop("family", None)
    if family not in _FAMILY_KEYS:
        raise ValueError(f"unknown path family {family!r}; expected one of {PATH_FAMILIES}")
    unknown = set(cfg) - _FAMILY_KEYS[family]
    if unknown:
        raise ValueError(f"unknown keys for family {family!r}: {sorted(unknown)}")
    if family == "length":
        return length_dominated_path(**cfg)
    if family == "curvature":
        return curvature_dominated_path(**cfg)
    if family == "custom":
        return _table_family("custom", _linear_profile, **cfg)
    if family == "kink":
        return kink_prone_path(**cfg)
    return moving_center_path(floored=(family == "moving_center_floored"), **cfg)


def path_derivatives(path: MdpPath, tau: float) -> PathDerivatives:
    """First and second derivatives of (r, P) at tau.

    Analytic paths call their closed forms; otherwise central differences with
    the path's stencil widths, clamping the evaluation point so the stencil
    stays inside [0, 1].
    """
    tau = float(tau)
    if not (0.0 <= tau <= 1.0):
        raise ValueError("tau must lie in [0, 1]")
    if path.derivative_mode == "analytic":
        dr, dp = path.first(tau)
        ddr, ddp = path.second(tau)
        return PathDerivatives(
            dr=np.asarray(dr, dtype=float),
            dp=np.asarray(dp, dtype=float),
            ddr=np.asarray(ddr, dtype=float),
            ddp=np.asarray(ddp, dtype=float),
        )
    h = path.fd_step
    t1 = min(max(tau, h), 1.0 - h)
    hi = path.evaluate(t1 + h)
    lo = path.evaluate(t1 - h)
    dr = (hi.r - lo.r) / (2.0 * h)
    dp = (hi.p - lo.p) / (2.0 * h)
    h2 = path.fd_step_second
    t2 = min(max(tau, h2), 1.0 - h2)
    mid = path.evaluate(t2)
    hi2 = path.evaluate(t2 + h2)
    lo2 = path.evaluate(t2 - h2)
    ddr = (hi2.r - 2.0 * mid.r + lo2.r) / h2**2
    ddp = (hi2.p - 2.0 * mid.p + lo2.p) / h2**2
    return PathDerivatives(dr=dr, dp=dp, ddr=ddr, ddp=ddp)


def path_speed_terms(path: MdpPath, tau: float) -> tuple[float, float, float, float]:
    """(sup|dr|, sup_sa W1*(dP rows), sup|ddr|, sup_sa W1*(ddP rows)) at tau."""
    from htmdp.metric import w1_dual_norm_rows

    d = path_derivatives(path, tau)
    dr_inf = float(np.abs(d.dr).max())
    ddr_inf = float(np.abs(d.ddr).max())

    def sup_w1(rows: np.ndarray) -> float:
        if not np.any(rows):
            return 0.0
        flat = rows.reshape(-1, rows.shape[-1])
        return float(w1_dual_norm_rows(flat, path.metric).max())

    return dr_inf, sup_w1(d.dp), ddr_inf, sup_w1(d.ddp)
