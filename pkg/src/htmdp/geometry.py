"""Path-integral stability certificates for drifting MDPs.

Everything here reduces questions about how far the optimal action-value
table can move along a drift path to computable path integrals:

- raw first/second-order drift integrands and their integrals (``path_length``,
  ``curvature``), plus the value-scale ``speed_density``/``curvature_density``
  that bound ``||dQ*/dtau||`` directly;
- kink detection (greedy-action ties), the kink penalty Phi, and the combined
  ``path_value_bound``;
- feasible tubes and gap-safe regions around a regular anchor point;
- multi-parameter feasibility (Jacobian-vector products, pullback metric,
  ellipsoids, and projected cones).

Exact reference solves use Howard policy iteration; along a grid the solves
are warm-started with the neighboring optimal policy, which makes a full
201-point certificate sweep cheap at tabular scale.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from htmdp.mdp import (
    FiniteMdp,
    action_gap,
    greedy_policy,
    policy_iteration,
    resolvent_apply,
    state_values,
)
from htmdp.metric import GroundMetric, MixingCertificate, mixing_certificate
from htmdp.paths import MdpPath, path_derivatives, path_speed_terms

__all__ = [
    "NonRegularPointError",
    "KinkRecord",
    "GeometrySummary",
    "TubeResult",
    "GapSafeResult",
    "ParamFamily",
    "ParamGeometry",
    "path_mixing",
    "speed_density",
    "curvature_density",
    "path_length",
    "curvature",
    "solve_on_grid",
    "gap_profile",
    "detect_kinks",
    "kink_penalty",
    "q_path_derivative",
    "path_value_bound",
    "bound_matrix",
    "bound_term_matrices",
    "tube_first_order",
    "tube_second_order",
    "gap_safe_region",
    "geometry_summary",
    "jacobian_vector_product",
    "pullback_metric",
    "param_geometry",
    "ellipsoid_contains",
    "feasible_cone",
    "default_delta",
    "kink_drift_cap",
]

# Explicit constant in the curvature-density certificate (the cross term that
# couples first-order drift into the second derivative).  A certified, possibly
# loose choice; see curvature_density.
C2 = 2.0

_QUAD_TOL = 1e-12
_trapz = getattr(np, "trapezoid", None) or np.trapz


class NonRegularPointError(RuntimeError):
    """The anchor parameter sits at (or too close to) a greedy-action tie."""


@dataclass(frozen=True)
class KinkRecord:
    """One detected greedy-action switch and its quadrature window.

    ``local_taus``/``local_gaps`` hold the refined (10x grid density) gap
    samples inside the window — the kink-penalty integrand is stiff, so the
    penalty is always integrated on these rather than the coarse grid.
    ``phi_delta`` is the floor used for the stored ``local_phi``; call
    :func:`kink_penalty` to re-integrate with a different floor.
    """

    tau_star: float
    window: tuple[float, float]
    min_gap_in_window: float
    local_phi: float
    local_taus: np.ndarray
    local_gaps: np.ndarray
    phi_delta: float

    def __post_init__(self):
        lo, hi = self.window
        if not (lo < self.tau_star < hi):
            raise ValueError(
                f"kink window {self.window} must strictly contain tau_star={self.tau_star}"
            )


@dataclass(frozen=True)
class TubeResult:
    """A certified feasible interval around ``tau0``.

    Every tau in ``interval`` carries the guarantee
    ``||Q*_tau - Q*_tau0||_inf <= budget_eps``; the interval never crosses a
    detected kink window.
    """

    tau0: float
    budget_eps: float
    interval: tuple[float, float]
    order: str

    def __post_init__(self):
        lo, hi = self.interval
        if not (lo <= self.tau0 <= hi):
            raise ValueError(f"tube interval {self.interval} must contain tau0={self.tau0}")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")


@dataclass(frozen=True)
class GapSafeResult:
    """Gap-safe portions of a tube.

    ``measured`` intersects the tube with grid points whose exactly solved gap
    clears ``xi``; ``certificate_only`` keeps only taus where
    ``gap(tau0) - 2 * drift_budget(tau)`` already clears ``xi``, i.e. the
    region certified without any solve beyond the anchor.
    """

    tube: TubeResult
    xi: float
    measured: list[tuple[float, float]]
    certificate_only: list[tuple[float, float]]


@dataclass(frozen=True)
class GeometrySummary:
    """Grid view of the path geometry: densities, gaps, kinks, and totals.

    ``pl_density``/``curv_density`` are the raw drift integrands
    ``sup|dr| + L_s sup W1*(dP)`` (first/second order); ``PL``/``Curv`` are
    their trapezoid integrals and must agree with re-quadrature to 1e-12.
    ``Phi`` is the raw kink penalty at ``constants['delta']``; the value-bound
    multiplies it by ``constants['kink_drift_cap']``.
    """

    grid: np.ndarray
    pl_density: np.ndarray
    curv_density: np.ndarray
    gap_profile: np.ndarray
    PL: float
    Curv: float
    kinks: list[KinkRecord]
    Phi: float
    constants: dict

    def __post_init__(self):
        if min(self.PL, self.Curv, self.Phi) < 0:
            raise ValueError("PL, Curv and Phi must be nonnegative")
        for total, density in ((self.PL, self.pl_density), (self.Curv, self.curv_density)):
            if abs(total - float(_trapz(density, self.grid))) > _QUAD_TOL:
                raise ValueError("totals must match trapezoid quadrature of the densities")


@dataclass(frozen=True)
class ParamFamily:
    """A theta-parameterized MDP family over R^p.

    ``evaluate`` maps a theta vector to a FiniteMdp; directional derivatives
    of the tables are taken by central differences with step ``fd_step``.
    """

    evaluate: Callable[[np.ndarray], FiniteMdp]
    theta_dim: int
    metric: GroundMetric
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.theta_dim < 1:
            raise ValueError("theta_dim must be at least 1")
        if not (0.0 < self.fd_step < 0.1):
            raise ValueError("fd_step must lie in (0, 0.1)")


@dataclass(frozen=True)
class ParamGeometry:
    """Local first-order geometry at one theta: probe, pullback, active set."""

    theta_dim: int
    jacobian_probe: Callable[[np.ndarray], np.ndarray]
    pullback: np.ndarray
    active_constraints: list

    def __post_init__(self):
        g = np.asarray(self.pullback, dtype=float)
        if g.shape != (self.theta_dim, self.theta_dim):
            raise ValueError("pullback must be a (p, p) matrix")
        if float(np.linalg.eigvalsh((g + g.T) / 2.0).min()) < -1e-8:
            raise ValueError("pullback metric must be positive semidefinite within 1e-8")


# ---------------------------------------------------------------------------
# mixing constants and densities
# ---------------------------------------------------------------------------


def path_mixing(path: MdpPath, sample_taus: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0)):
    """Mixing certificate valid along the whole path: (C_mix, L_s).

    Takes the worst reward-Lipschitz constant and the worst kernel contraction
    over ``sample_taus`` and combines them, which upper-bounds every pointwise
    certificate.  For table-linear families both quantities are convex in tau,
    so including the endpoints makes the sample maximum exact.  Honors
    ``path.scale_l_s`` as an override for the conversion scale.
    """
    cached = path.meta.get("_mixing")
    if cached is not None:
        return cached
    lip, kappa = 0.0, 0.0
    for tau in sample_taus:
        cert = mixing_certificate(path.evaluate(tau), path.metric)
        lip = max(lip, cert.lip_reward)
        kappa = max(kappa, cert.kappa)
    combined = MixingCertificate(lip_reward=lip, kappa=kappa, gamma=path.gamma)
    if path.scale_l_s is not None:
        combined = MixingCertificate(
            lip_reward=lip, kappa=kappa, gamma=path.gamma, l_s=path.scale_l_s
        )
    path.meta["_mixing"] = combined
    return combined


def speed_density(path: MdpPath, tau: float, mixing: MixingCertificate | None = None) -> float:
    """Value-scale drift rate: ``sup|dr|/(1-g) + g C_mix/(1-g)^2 sup W1*(dP)``.

    Upper-bounds ``||dQ*/dtau||_inf`` at regular points.
    """
    cert = mixing if mixing is not None else path_mixing(path)
    dr, dp, _, _ = path_speed_terms(path, tau)
    g = path.gamma
    return dr / (1.0 - g) + g * cert.c_mix / (1.0 - g) ** 2 * dp


def curvature_density(path: MdpPath, tau: float, mixing: MixingCertificate | None = None) -> float:
    """Value-scale acceleration bound on ``||d^2 Q*/dtau^2||_inf``.

    Second-order tables enter at the speed-density scale; first-order drift
    feeds back through the resolvent, giving the ``C2/(1-g)^3`` cross term.
    A certified upper bound, not claimed tight.
    """
    cert = mixing if mixing is not None else path_mixing(path)
    dr, dp, ddr, ddp = path_speed_terms(path, tau)
    g = path.gamma
    return (
        ddr / (1.0 - g)
        + g * cert.c_mix * cert.l_s / (1.0 - g) ** 2 * ddp
        + C2 / (1.0 - g) ** 3 * (dr + cert.l_s * dp)
    )


def _raw_densities(path: MdpPath, tau: float, l_s: float) -> tuple[float, float]:
    dr, dp, ddr, ddp = path_speed_terms(path, tau)
    return dr + l_s * dp, ddr + l_s * ddp


def _check_interval(tau0: float, tau1: float, grid: int):
    if not tau0 < tau1:
        raise ValueError(f"need tau0 < tau1, got [{tau0}, {tau1}]")
    if int(grid) < 2:
        raise ValueError("quadrature grid must have at least 2 points")


def path_length(path: MdpPath, tau0: float = 0.0, tau1: float = 1.0, grid: int = 101) -> float:
    """Trapezoid integral of the first-order drift integrand over [tau0, tau1]."""
    _check_interval(tau0, tau1, grid)
    l_s = path_mixing(path).l_s
    taus = np.linspace(tau0, tau1, int(grid))
    vals = [_raw_densities(path, t, l_s)[0] for t in taus]
    return float(_trapz(vals, taus))


def curvature(path: MdpPath, tau0: float = 0.0, tau1: float = 1.0, grid: int = 101) -> float:
    """Trapezoid integral of the second-order drift integrand over [tau0, tau1]."""
    _check_interval(tau0, tau1, grid)
    l_s = path_mixing(path).l_s
    taus = np.linspace(tau0, tau1, int(grid))
    vals = [_raw_densities(path, t, l_s)[1] for t in taus]
    return float(_trapz(vals, taus))


# ---------------------------------------------------------------------------
# grid solves, gap profile, kinks
# ---------------------------------------------------------------------------


def _grid_taus(grid) -> np.ndarray:
    if np.ndim(grid) == 0:
        n = int(grid)
        if n < 2:
            raise ValueError("grid must have at least 2 points")
        return np.linspace(0.0, 1.0, n)
    taus = np.asarray(grid, dtype=float)
    if taus.ndim != 1 or taus.size < 2:
        raise ValueError("grid must be a count or a 1-d array of at least 2 taus")
    if np.any(np.diff(taus) <= 0):
        raise ValueError("grid taus must be strictly increasing")
    if taus[0] < 0.0 or taus[-1] > 1.0:
        raise ValueError("grid taus must lie in [0, 1]")
    return taus


def _solve_chunk(path: MdpPath, taus: np.ndarray) -> list[np.ndarray]:
    qs = []
    policy0 = None
    for tau in taus:
        q = policy_iteration(path.evaluate(float(tau)), policy0=policy0)
        policy0 = greedy_policy(q)
        qs.append(q)
    return qs


def solve_on_grid(path: MdpPath, grid, workers: int = 1) -> tuple[np.ndarray, list[np.ndarray]]:
    """Exact Q* at each grid tau (policy iteration, warm-started within chunks).

    ``workers > 1`` splits the grid into contiguous chunks solved on a thread
    pool; solves at distinct taus are independent, and results are reassembled
    in grid order regardless of completion order.
    """
    taus = _grid_taus(grid)
    workers = max(1, int(workers))
    if workers == 1 or taus.size < 2 * workers:
        return taus, _solve_chunk(path, taus)
    chunks = np.array_split(taus, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: _solve_chunk(path, c), chunks))
    return taus, [q for part in parts for q in part]


def gap_profile(path: MdpPath, grid) -> np.ndarray:
    """Global action gap at each grid tau from exactly solved Q*."""
    _, qs = solve_on_grid(path, grid)
    return np.array([action_gap(q)[1] for q in qs])


def default_delta(path: MdpPath) -> float:
    """Default kink-penalty floor: 1e-3 times the value-scale reward range."""
    return 1e-3 * _path_reward_range(path) / (1.0 - path.gamma)


def kink_drift_cap(path: MdpPath) -> float:
    """Sup-norm drift cap per unit tau near a kink: 2 * reward_range / (1 - gamma).

    Multiplies the raw kink penalty inside :func:`path_value_bound`; recorded
    in the summary constants so bound audits are reproducible.
    """
    return 2.0 * _path_reward_range(path) / (1.0 - path.gamma)


def _path_reward_range(path: MdpPath) -> float:
    cached = path.meta.get("_reward_range")
    if cached is None:
        cached = max(path.evaluate(t).reward_range() for t in np.linspace(0.0, 1.0, 11))
        path.meta["_reward_range"] = cached
    return cached


def _refine_gap_minimum(
    path: MdpPath, lo: float, hi: float, policy0: np.ndarray
) -> tuple[float, float]:
    def gap_at(t: float) -> float:
        q = policy_iteration(path.evaluate(float(t)), policy0=policy0)
        return action_gap(q)[1]

    res = minimize_scalar(gap_at, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    return float(res.x), float(res.fun)


def detect_kinks(path: MdpPath, grid=201, tie_threshold: float = 1e-3) -> list[KinkRecord]:
    """Locate greedy-action switches whose bracketed gap falls below the tie threshold.

    A switch between adjacent grid points only counts as a kink if the refined
    (1e-6 in tau) minimum gap over the bracket drops below ``tie_threshold``;
    the window then extends over grid points until the gap recovers above the
    threshold, and overlapping windows are truncated at the midpoint between
    the refined tie locations.
    """
    if tie_threshold <= 0:
        raise ValueError("tie_threshold must be positive")
    taus = _grid_taus(grid)
    _, qs = solve_on_grid(path, taus)
    return _detect_kinks_from(path, taus, qs, tie_threshold)


def _detect_kinks_from(
    path: MdpPath, taus: np.ndarray, qs: list[np.ndarray], tie_threshold: float
) -> list[KinkRecord]:
    gaps = np.array([action_gap(q)[1] for q in qs])
    policies = [greedy_policy(q) for q in qs]
    delta = default_delta(path)
    spacing = float(np.median(np.diff(taus)))

    found: list[tuple[float, float, int, int]] = []  # (tau_star, min_gap, lo_idx, hi_idx)
    for i in range(len(taus) - 1):
        if np.array_equal(policies[i], policies[i + 1]):
            continue
        tau_star, min_gap = _refine_gap_minimum(path, taus[i], taus[i + 1], policies[i])
        if min_gap >= tie_threshold:
            continue
        lo_idx = i
        while lo_idx > 0 and gaps[lo_idx] < tie_threshold:
            lo_idx -= 1
        hi_idx = i + 1
        while hi_idx < len(taus) - 1 and gaps[hi_idx] < tie_threshold:
            hi_idx += 1
        found.append((tau_star, min_gap, lo_idx, hi_idx))

    # Deduplicate seeds that refined to the same tie, then truncate any
    # remaining overlap at the midpoint so windows stay disjoint.
    found.sort()
    merged: list[list] = []
    for tau_star, min_gap, lo_idx, hi_idx in found:
        if merged and abs(tau_star - merged[-1][0]) <= spacing:
            prev = merged[-1]
            prev[1] = min(prev[1], min_gap)
            prev[3] = max(prev[3], hi_idx)
            continue
        merged.append([tau_star, min_gap, lo_idx, hi_idx])

    windows: list[tuple[float, float]] = []
    for k, (tau_star, _, lo_idx, hi_idx) in enumerate(merged):
        lo, hi = float(taus[lo_idx]), float(taus[hi_idx])
        if k > 0:
            mid = (merged[k - 1][0] + tau_star) / 2.0
            lo = max(lo, mid)
        if k + 1 < len(merged):
            mid = (tau_star + merged[k + 1][0]) / 2.0
            hi = min(hi, mid)
        windows.append((lo, hi))

    records = []
    for (tau_star, min_gap, _, _), (lo, hi) in zip(merged, windows):
        spans = max(1, int(round((hi - lo) / spacing)))
        local_taus = np.linspace(lo, hi, 10 * spans + 1)
        _, local_qs = solve_on_grid(path, local_taus)
        local_gaps = np.array([action_gap(q)[1] for q in local_qs])
        min_gap = min(min_gap, float(local_gaps.min()))
        local_phi = float(_trapz(1.0 / np.maximum(local_gaps, delta), local_taus))
        records.append(
            KinkRecord(
                tau_star=tau_star,
                window=(lo, hi),
                min_gap_in_window=min_gap,
                local_phi=local_phi,
                local_taus=local_taus,
                local_gaps=local_gaps,
                phi_delta=delta,
            )
        )
    return records


def _check_disjoint_windows(kinks: Sequence[KinkRecord]):
    ordered = sorted(kinks, key=lambda k: k.window[0])
    for a, b in zip(ordered, ordered[1:]):
        if b.window[0] < a.window[1] - 1e-15:
            raise ValueError(f"kink windows overlap: {a.window} and {b.window}")


def kink_penalty(kinks: Sequence[KinkRecord], gap_profile=None, delta: float | None = None) -> float:
    """Raw kink penalty: sum over kinks of the window integral of 1/max(gap, delta).

    Integrates each record's refined local samples when present, else falls
    back to the ``(taus, gaps)`` profile passed as ``gap_profile``.  Rejects
    overlapping windows.
    """
    if delta is None or delta <= 0:
        raise ValueError("delta must be a positive floor")
    _check_disjoint_windows(kinks)
    total = 0.0
    for kink in kinks:
        if kink.local_taus is not None and len(kink.local_taus) >= 2:
            taus, gaps = kink.local_taus, kink.local_gaps
        else:
            if gap_profile is None:
                raise ValueError("kink lacks local samples and no gap_profile was given")
            taus, gaps = _window_slice(gap_profile, kink.window)
        total += float(_trapz(1.0 / np.maximum(gaps, delta), taus))
    return total


def _window_slice(profile, window: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    taus, gaps = (np.asarray(a, dtype=float) for a in profile)
    lo, hi = window
    inner = (taus > lo) & (taus < hi)
    ts = np.concatenate([[lo], taus[inner], [hi]])
    gs = np.interp(ts, taus, gaps)
    return ts, gs


def _phi_cumulative(kinks: Sequence[KinkRecord], delta: float, ts: np.ndarray) -> np.ndarray:
    """Cumulative kink measure K(t): integral of the penalty integrand up to t.

    Piecewise linear between each kink's refined nodes, so differences
    ``K(b) - K(a)`` are exactly additive over interval splits and match the
    full-window trapezoid when (a, b) covers the window.
    """
    out = np.zeros_like(np.asarray(ts, dtype=float))
    for kink in kinks:
        f = 1.0 / np.maximum(kink.local_gaps, delta)
        steps = np.diff(kink.local_taus) * (f[:-1] + f[1:]) / 2.0
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        out = out + np.interp(ts, kink.local_taus, cum, left=0.0, right=cum[-1])
    return out


def _phi_restricted(
    kinks: Sequence[KinkRecord], tau0: float, tau1: float, delta: float
) -> float:
    ends = _phi_cumulative(kinks, delta, np.array([tau0, tau1]))
    return float(ends[1] - ends[0])


# ---------------------------------------------------------------------------
# derivatives of the optimal fixed point, value bound
# ---------------------------------------------------------------------------


def q_path_derivative(
    path: MdpPath,
    tau: float,
    tie_threshold: float = 1e-3,
    kinks: Sequence[KinkRecord] | None = None,
) -> tuple[np.ndarray, float]:
    """Analytic ``dQ*/dtau`` at a regular tau, with its speed-density bound.

    Solves the resolvent equation driven by ``dr + gamma * (dP V*)``.  Raises
    :class:`NonRegularPointError` when tau lies inside a supplied kink window
    or when the solved global gap is below ``tie_threshold`` (the greedy
    policy is about to switch, so the fixed point is not differentiable).
    Returns ``(table, bound)`` with ``||table||_inf <= bound``.
    """
    tau = float(tau)
    if kinks is not None:
        for kink in kinks:
            lo, hi = kink.window
            if lo <= tau <= hi:
                raise NonRegularPointError(
                    f"tau={tau} lies inside the kink window ({lo}, {hi})"
                )
    mdp = path.evaluate(tau)
    q = policy_iteration(mdp)
    _, gap = action_gap(q)
    if gap < tie_threshold:
        raise NonRegularPointError(
            f"global gap {gap:.3e} at tau={tau} is below the tie threshold {tie_threshold:g}"
        )
    policy = greedy_policy(q)
    v = state_values(q)
    d = path_derivatives(path, tau)
    rhs = d.dr + mdp.gamma * np.einsum("sax,x->sa", d.dp, v)
    return resolvent_apply(mdp, policy, rhs), speed_density(path, tau)


def path_value_bound(
    path: MdpPath,
    tau0: float,
    tau1: float,
    grid: int = 201,
    delta: float | None = None,
    kinks: Sequence[KinkRecord] | None = None,
    tie_threshold: float = 1e-3,
    quad_taus: np.ndarray | None = None,
) -> tuple[float, dict]:
    """Certified upper bound on ``||Q*_tau1 - Q*_tau0||_inf``.

    ``PL/(1-g)^2 + Curv/(1-g)^3 + cap * Phi`` restricted to [tau0, tau1],
    where ``cap`` is :func:`kink_drift_cap` and Phi uses the additive
    cumulative kink measure.  ``kinks`` may be precomputed (otherwise they are
    detected on a full-interval grid of the same resolution); ``quad_taus``
    pins the quadrature nodes, which makes bounds over sub-intervals of a
    shared grid exactly additive.
    """
    if not tau0 < tau1:
        raise ValueError(f"need tau0 < tau1, got [{tau0}, {tau1}]")
    g = path.gamma
    if kinks is None:
        kinks = detect_kinks(path, grid, tie_threshold)
    if delta is None:
        delta = default_delta(path)
    if quad_taus is None:
        quad_taus = np.linspace(tau0, tau1, int(grid))
    else:
        quad_taus = np.asarray(quad_taus, dtype=float)
    l_s = path_mixing(path).l_s
    raw = np.array([_raw_densities(path, t, l_s) for t in quad_taus])
    pl = float(_trapz(raw[:, 0], quad_taus))
    cv = float(_trapz(raw[:, 1], quad_taus))
    parts = {
        "pl_term": pl / (1.0 - g) ** 2,
        "curv_term": cv / (1.0 - g) ** 3,
        "phi_term": kink_drift_cap(path) * _phi_restricted(kinks, tau0, tau1, delta),
    }
    return parts["pl_term"] + parts["curv_term"] + parts["phi_term"], parts


def bound_matrix(path: MdpPath, summary: "GeometrySummary") -> np.ndarray:
    """Value-drift bounds for every grid pair, from cumulative quadrature.

    Entry (i, j) with i < j equals :func:`path_value_bound` evaluated with the
    summary's grid slice as quadrature nodes (differences of cumulative
    trapezoids are exact), making all-pairs audits cheap.
    """
    terms = bound_term_matrices(path, summary)
    return terms["pl_term"] + terms["curv_term"] + terms["phi_term"]


def bound_term_matrices(path: MdpPath, summary: "GeometrySummary") -> dict[str, np.ndarray]:
    """Per-term split of :func:`bound_matrix` (same cumulative quadrature).

    The three matrices sum to :func:`bound_matrix` exactly, since each
    cumulative array is nondecreasing in tau.
    """
    taus = summary.grid
    g = path.gamma
    per_point = {
        "pl_term": _cumtrapz(summary.pl_density, taus) / (1.0 - g) ** 2,
        "curv_term": _cumtrapz(summary.curv_density, taus) / (1.0 - g) ** 3,
        "phi_term": summary.constants["kink_drift_cap"]
        * _phi_cumulative(summary.kinks, summary.constants["delta"], taus),
    }
    return {k: np.abs(v[None, :] - v[:, None]) for k, v in per_point.items()}


def _cumtrapz(vals: np.ndarray, taus: np.ndarray) -> np.ndarray:
    steps = np.diff(taus) * (vals[:-1] + vals[1:]) / 2.0
    return np.concatenate([[0.0], np.cumsum(steps)])


# ---------------------------------------------------------------------------
# tubes and gap-safe regions
# ---------------------------------------------------------------------------


def _regular_component(
    kinks: Sequence[KinkRecord], tau0: float
) -> tuple[float, float]:
    lo, hi = 0.0, 1.0
    for kink in kinks:
        wlo, whi = kink.window
        if wlo <= tau0 <= whi:
            raise NonRegularPointError(
                f"tau0={tau0} lies inside the kink window ({wlo}, {whi})"
            )
        if whi < tau0:
            lo = max(lo, whi)
        if wlo > tau0:
            hi = min(hi, wlo)
    return lo, hi


def _tube(
    path: MdpPath,
    tau0: float,
    eps: float,
    order: str,
    grid: int,
    kinks: Sequence[KinkRecord] | None,
    tie_threshold: float,
):
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not 0.0 <= tau0 <= 1.0:
        raise ValueError("tau0 must lie in [0, 1]")
    if kinks is None:
        kinks = detect_kinks(path, grid, tie_threshold)
    comp_lo, comp_hi = _regular_component(kinks, tau0)
    taus = np.unique(np.concatenate([np.linspace(comp_lo, comp_hi, int(grid)), [tau0]]))
    mix = path_mixing(path)
    v = np.array([speed_density(path, t, mix) for t in taus])
    cum_v = _cumtrapz(v, taus)
    i0 = int(np.searchsorted(taus, tau0))
    drift = np.abs(cum_v - cum_v[i0])
    if order == "second":
        kappa = np.array([curvature_density(path, t, mix) for t in taus])
        cum_k = _cumtrapz(kappa, taus)
        drift = drift + 0.5 * np.abs(taus - tau0) * np.abs(cum_k - cum_k[i0])
    ok = drift <= eps
    hi_idx = i0
    while hi_idx + 1 < len(taus) and ok[hi_idx + 1]:
        hi_idx += 1
    lo_idx = i0
    while lo_idx - 1 >= 0 and ok[lo_idx - 1]:
        lo_idx -= 1
    tube = TubeResult(
        tau0=float(tau0),
        budget_eps=float(eps),
        interval=(float(taus[lo_idx]), float(taus[hi_idx])),
        order=order,
    )
    return tube, taus, drift, kinks


def tube_first_order(
    path: MdpPath,
    tau0: float,
    eps: float,
    grid: int = 201,
    kinks: Sequence[KinkRecord] | None = None,
    tie_threshold: float = 1e-3,
) -> TubeResult:
    """Maximal interval around tau0 where the integrated speed stays within eps.

    Expansion stops at the budget, a kink-window boundary, or the [0, 1] edge;
    endpoints round inward to grid points, so the guarantee holds everywhere
    inside the returned interval.
    """
    return _tube(path, tau0, eps, "first", grid, kinks, tie_threshold)[0]


def tube_second_order(
    path: MdpPath,
    tau0: float,
    eps: float,
    grid: int = 201,
    kinks: Sequence[KinkRecord] | None = None,
    tie_threshold: float = 1e-3,
) -> TubeResult:
    """First-order tube refined by the curvature correction.

    Budget condition: integrated speed plus ``0.5 |tau - tau0|`` times the
    integrated curvature density stays within eps.  Always a subset of the
    first-order tube on the same grid.
    """
    return _tube(path, tau0, eps, "second", grid, kinks, tie_threshold)[0]


def gap_safe_region(
    path: MdpPath,
    tau0: float,
    eps: float,
    xi: float | None = None,
    order: str = "first",
    grid: int = 201,
    kinks: Sequence[KinkRecord] | None = None,
    tie_threshold: float = 1e-3,
) -> GapSafeResult:
    """Portions of the tube where the greedy gap provably (or measurably) clears xi.

    ``measured`` uses exact gap solves at the tube's grid points;
    ``certificate_only`` uses only the anchor gap and the drift budget via the
    gap-decay inequality ``gap(tau) >= gap(tau0) - 2 * drift(tau)``, so it is
    always contained in the measured region.  Warns when
    ``gap(tau0) < xi + 2 eps`` (the budget cannot certify the whole tube).
    """
    tube, taus, drift, kinks = _tube(path, tau0, eps, order, grid, kinks, tie_threshold)
    _, qs = solve_on_grid(path, taus)
    gaps = np.array([action_gap(q)[1] for q in qs])
    if xi is None:
        xi = 0.05 * float(gaps.max())
    i0 = int(np.searchsorted(taus, tau0))
    g0 = float(gaps[i0])
    if g0 < xi + 2.0 * eps:
        warnings.warn(
            f"anchor gap {g0:.4g} is below xi + 2 eps = {xi + 2.0 * eps:.4g}; "
            "the certificate cannot cover the full tube",
            stacklevel=2,
        )
    in_tube = (taus >= tube.interval[0]) & (taus <= tube.interval[1])
    measured = _mask_to_intervals(taus, in_tube & (gaps >= xi))
    certified = _mask_to_intervals(taus, in_tube & (g0 - 2.0 * drift >= xi))
    return GapSafeResult(tube=tube, xi=float(xi), measured=measured, certificate_only=certified)


def _mask_to_intervals(taus: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    intervals = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            intervals.append((float(taus[start]), float(taus[i - 1])))
            start = None
    if start is not None:
        intervals.append((float(taus[start]), float(taus[-1])))
    return intervals


# ---------------------------------------------------------------------------
# grid summary
# ---------------------------------------------------------------------------


def geometry_summary(
    path: MdpPath,
    grid=201,
    tie_threshold: float = 1e-3,
    delta: float | None = None,
    xi: float | None = None,
    workers: int = 1,
) -> GeometrySummary:
    """One-pass certificate sweep: densities, gaps, kinks, PL/Curv/Phi, constants.

    The constants dict records everything needed to reproduce bounds from the
    summary alone: C_mix, L_s, the kink floor delta, the regular margin xi,
    and the kink drift cap used by the value bound.
    """
    taus = _grid_taus(grid)
    mix = path_mixing(path)
    _, qs = solve_on_grid(path, taus, workers=workers)
    gaps = np.array([action_gap(q)[1] for q in qs])
    raw = np.array([_raw_densities(path, t, mix.l_s) for t in taus])
    pl_density, curv_density = raw[:, 0], raw[:, 1]
    kinks = _detect_kinks_from(path, taus, qs, tie_threshold)
    if delta is None:
        delta = default_delta(path)
    phi = kink_penalty(kinks, (taus, gaps), delta) if kinks else 0.0
    if xi is None:
        xi = 0.05 * float(gaps.max())
    return GeometrySummary(
        grid=taus,
        pl_density=pl_density,
        curv_density=curv_density,
        gap_profile=gaps,
        PL=float(_trapz(pl_density, taus)),
        Curv=float(_trapz(curv_density, taus)),
        kinks=kinks,
        Phi=float(phi),
        constants={
            "C_mix": float(mix.c_mix),
            "L_s": float(mix.l_s),
            "delta": float(delta),
            "xi": float(xi),
            "kink_drift_cap": float(kink_drift_cap(path)),
        },
    )


# ---------------------------------------------------------------------------
# multi-parameter feasibility
# ---------------------------------------------------------------------------


def _solve_regular(family: ParamFamily, theta: np.ndarray, tie_threshold: float):
    mdp = family.evaluate(theta)
    q = policy_iteration(mdp)
    _, gap = action_gap(q)
    if gap < tie_threshold:
        raise NonRegularPointError(
            f"global gap {gap:.3e} at theta={theta} is below the tie threshold"
        )
    return mdp, q


def jacobian_vector_product(
    family: ParamFamily,
    theta,
    u,
    tie_threshold: float = 1e-3,
) -> np.ndarray:
    """Directional derivative ``J_theta u`` of the optimal Q-table.

    Central differences along ``u`` supply the table derivatives; one
    resolvent solve turns them into the fixed-point derivative.  With
    ``theta_dim == 1`` and a path's evaluate this reproduces
    :func:`q_path_derivative`.
    """
    theta = _check_theta(family, theta)
    u = _check_theta(family, u, name="u")
    mdp, q = _solve_regular(family, theta, tie_threshold)
    if not np.any(u):
        return np.zeros_like(mdp.r)
    h = family.fd_step
    hi = family.evaluate(theta + h * u)
    lo = family.evaluate(theta - h * u)
    dr_u = (hi.r - lo.r) / (2.0 * h)
    dp_u = (hi.p - lo.p) / (2.0 * h)
    v = state_values(q)
    rhs = dr_u + mdp.gamma * np.einsum("sax,x->sa", dp_u, v)
    return resolvent_apply(mdp, greedy_policy(q), rhs)


def _check_theta(family: ParamFamily, vec, name: str = "theta") -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (family.theta_dim,):
        raise ValueError(f"{name} must have shape ({family.theta_dim},), got {vec.shape}")
    return vec


def pullback_metric(family: ParamFamily, theta, weight: str = "identity") -> np.ndarray:
    """Pullback metric ``G = J^T W J`` assembled from basis-direction JVPs.

    Only the identity weight is supported; the result is symmetrized and its
    quadratic form reproduces ``||J dtheta||_2^2``.
    """
    if weight != "identity":
        raise ValueError(f"unsupported weight {weight!r}; only 'identity' is available")
    theta = _check_theta(family, theta)
    p = family.theta_dim
    probes = [
        jacobian_vector_product(family, theta, np.eye(p)[i]) for i in range(p)
    ]
    g = np.array(
        [[float(np.sum(probes[i] * probes[j])) for j in range(p)] for i in range(p)]
    )
    return (g + g.T) / 2.0


def param_geometry(
    family: ParamFamily, theta, constraints: list | None = None
) -> ParamGeometry:
    """Bundle the local probe, pullback metric, and active set at one theta."""
    theta = _check_theta(family, theta)
    return ParamGeometry(
        theta_dim=family.theta_dim,
        jacobian_probe=lambda u: jacobian_vector_product(family, theta, u),
        pullback=pullback_metric(family, theta),
        active_constraints=list(constraints or []),
    )


def ellipsoid_contains(g_matrix: np.ndarray, dtheta, eps: float) -> bool:
    """Membership test for the local feasible ellipsoid: dtheta^T G dtheta <= eps^2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    dtheta = np.asarray(dtheta, dtype=float)
    return float(dtheta @ np.asarray(g_matrix, dtype=float) @ dtheta) <= eps * eps


def feasible_cone(
    family: ParamFamily,
    theta,
    constraints: Sequence[Callable[[np.ndarray, np.ndarray], float]],
    tol_active: float,
    direction,
    tie_threshold: float = 1e-3,
) -> bool:
    """First-order feasibility of ``direction`` against the active constraints.

    Each constraint is a scalar ``h_j(theta, q_table)``; its composite
    gradient is assembled by the chain rule from finite-difference partials
    and basis JVPs.  The direction is accepted when no active constraint
    decreases to first order (inner product >= 0, with 1e-12 slack for
    roundoff).
    """
    theta = _check_theta(family, theta)
    direction = _check_theta(family, direction, name="direction")
    _, q = _solve_regular(family, theta, tie_threshold)
    h = family.fd_step
    p = family.theta_dim
    probes = None
    for hj in constraints:
        if abs(float(hj(theta, q))) > tol_active:
            continue
        grad_theta = np.zeros(p)
        for i in range(p):
            e = np.eye(p)[i]
            grad_theta[i] = (
                float(hj(theta + h * e, q)) - float(hj(theta - h * e, q))
            ) / (2.0 * h)
        grad_q = np.zeros_like(q)
        it = np.nditer(q, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            bump = np.zeros_like(q)
            bump[idx] = h
            grad_q[idx] = (float(hj(theta, q + bump)) - float(hj(theta, q - bump))) / (
                2.0 * h
            )
            it.iternext()
        if probes is None:
            probes = [
                jacobian_vector_product(family, theta, np.eye(p)[i], tie_threshold)
                for i in range(p)
            ]
        grad_h = grad_theta + np.array(
            [float(np.sum(probes[i] * grad_q)) for i in range(p)]
        )
        if float(grad_h @ direction) < -1e-12:
            return False
    return True
