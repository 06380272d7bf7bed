"""Batch command-line interface for reproducible certificate and run studies.

Subcommands
-----------
``certify``
    Audit the path--value drift bound on an all-pairs tau grid: writes the
    pairwise audit CSV (true drift vs. bound with its per-term split) and a
    geometry summary.  Any bound violation sets a nonzero exit status.
``tubes``
    For each configured ``(tau0, eps)`` probe, report the first- and
    second-order feasible tubes, the measured worst deviation inside each,
    and the gap-safe subregion.  Coverage violations set a nonzero exit
    status; non-regular anchors are reported per row and the run continues.
``run``
    Execute the tracking runners (``ht-rl``, ``static-rl``, ``ht-mcts``,
    ``static-mcts``) over seeds, writing one trace CSV per seed and an
    aggregate summary.
``scheduler-stability``
    Sweep the update period ``H`` and hysteresis width ``delta_hys`` over
    synthetic bounded proxy streams, reporting per-cell total variation and
    large-change fractions together with the counting and no-chatter bounds.
``gen-path``
    Dump the model snapshots along the path on a uniform tau grid.

All artefacts are byte-deterministic for a fixed config and seed: CSV floats
use ``repr`` (shortest round-trip form) and JSON is emitted with sorted keys.
``HTMDP_THREADS`` caps the worker pool; workers only split independent tasks
(grid solves, seeds), never a single task, so results do not depend on the
pool size.

Exit codes: 0 success, 1 certificate/coverage violation, 2 config or I/O
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from htmdp.agents import (
    AgentConfig,
    RunTrace,
    StochasticPathProcess,
    dynamic_regret,
    ht_mcts_run,
    ht_q_learning_run,
    static_mcts_run,
    static_q_learning_run,
)
from htmdp.config import ConfigError, ExperimentConfig, load_config
from htmdp.mdp import policy_iteration
from htmdp.geometry import (
    NonRegularPointError,
    bound_matrix,
    bound_term_matrices,
    gap_safe_region,
    geometry_summary,
    solve_on_grid,
    tube_first_order,
    tube_second_order,
)
from htmdp.scheduler import (
    HyperParams,
    ProxySignals,
    SchedulerConfig,
    chatter_stats,
    initial_scheduler_state,
    robbins_monro_audit,
    scheduled_rate,
    scheduler_step,
)

__all__ = [
    "main",
    "cmd_certify",
    "cmd_tubes",
    "cmd_run",
    "cmd_scheduler_stability",
    "cmd_gen_path",
    "RUN_MODES",
]

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2

RUN_MODES = ("ht-rl", "static-rl", "ht-mcts", "static-mcts")

_BOUND_TOL = 1e-9
_DRIFT_FLOOR = 1e-9

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def resolved_workers() -> int:
    """Worker count for the task pool, capped by ``HTMDP_THREADS``."""
    raw = os.environ.get("HTMDP_THREADS")
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"HTMDP_THREADS must be an integer, got {raw!r}") from None
    return max(1, count)


def _pool_map(fn: Callable[[Any], Any], items: Sequence[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _cell(value: Any) -> str:
    """One CSV cell; floats via repr for byte-stable round-trip formatting."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    number = float(value)
    if math.isnan(number):
        return ""
    return repr(number)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(value) for value in row) for row in rows)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def _jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays; infinities become strings."""
    if isinstance(obj, dict):
        return {str(key): _jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(value) for value in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        number = float(obj)
        if math.isinf(number):
            return "inf" if number > 0 else "-inf"
        if math.isnan(number):
            return None
        return number
    return obj


def _write_json(path: Path, payload: Any) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    path.write_bytes((text + "\n").encode("utf-8"))


def _median_iqr(values: Sequence[float]) -> dict[str, Any]:
    arr = np.asarray(values, dtype=float)
    q25, q50, q75 = np.quantile(arr, [0.25, 0.5, 0.75])
    return {
        "per_seed": [float(v) for v in arr],
        "median": float(q50),
        "iqr": float(q75 - q25),
    }


def _solved_q_grid(path, taus, workers: int) -> np.ndarray:
    """Optimal Q tables on a tau grid, stacked as rows of flat vectors."""
    _, qs = solve_on_grid(path, taus, workers=workers)
    return np.stack([q.ravel() for q in qs])


def _nonincreasing(values: Sequence[float], tol: float = 1e-12) -> bool:
    arr = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(arr) <= tol))


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def cmd_certify(
    config: ExperimentConfig, out_dir: Path, formats: Sequence[str], workers: int = 1
) -> int:
    """All-pairs drift audit; returns the process exit code."""
    path = config.require_path()
    geo = config.geometry
    summary = geometry_summary(
        path,
        grid=geo.grid,
        tie_threshold=geo.tie_threshold,
        delta=geo.delta,
        xi=geo.xi,
        workers=workers,
    )
    taus = summary.grid
    stacked = _solved_q_grid(path, taus, workers)
    true_drift = np.abs(stacked[None, :, :] - stacked[:, None, :]).max(axis=2)
    bounds = bound_matrix(path, summary)
    terms = bound_term_matrices(path, summary)

    # A pair is "regular" when its tau interval avoids every kink window and
    # the true drift is large enough for a meaningful ratio.
    iu, ju = np.triu_indices(len(taus), k=1)
    straddles = np.zeros(iu.shape, dtype=bool)
    for record in summary.kinks:
        lo, hi = record.window
        straddles |= (taus[iu] <= hi) & (taus[ju] >= lo)
    drift_flat = true_drift[iu, ju]
    bound_flat = bounds[iu, ju]
    measurable = drift_flat >= _DRIFT_FLOOR
    regular = measurable & ~straddles
    ratios = np.divide(
        bound_flat, drift_flat, out=np.full_like(bound_flat, np.nan), where=measurable
    )

    rows = [
        (
            taus[i],
            taus[j],
            drift_flat[k],
            bound_flat[k],
            terms["pl_term"][i, j],
            terms["curv_term"][i, j],
            terms["phi_term"][i, j],
            ratios[k] if measurable[k] else None,
        )
        for k, (i, j) in enumerate(zip(iu, ju))
    ]

    excess = drift_flat - bound_flat
    violations = int(np.count_nonzero(excess > _BOUND_TOL))
    report = {
        "family": path.family,
        "gamma": path.gamma,
        "grid_size": int(len(taus)),
        "pairs": int(len(drift_flat)),
        "violations": violations,
        "max_bound_excess": float(excess.max()) if len(excess) else 0.0,
        "regular_pairs": int(regular.sum()),
        "median_ratio_regular": float(np.median(ratios[regular])) if regular.any() else None,
        "pl_total": summary.PL,
        "curv_total": summary.Curv,
        "phi_total": summary.Phi,
        "constants": dict(summary.constants),
        "kinks": [
            {
                "tau_star": record.tau_star,
                "window": list(record.window),
                "min_gap_in_window": record.min_gap_in_window,
                "local_phi": record.local_phi,
                "phi_delta": record.phi_delta,
            }
            for record in summary.kinks
        ],
    }

    if "csv" in formats:
        _write_csv(
            out_dir / "certify_pairs.csv",
            ("tau0", "tau1", "true_drift", "bound", "pl_term", "curv_term", "phi_term", "ratio"),
            rows,
        )
        _write_csv(
            out_dir / "geometry_profile.csv",
            ("tau", "pl_density", "curv_density", "min_gap"),
            list(zip(taus, summary.pl_density, summary.curv_density, summary.gap_profile)),
        )
    if "json" in formats:
        _write_json(out_dir / "certify_summary.json", report)

    median_txt = (
        "n/a" if report["median_ratio_regular"] is None else repr(report["median_ratio_regular"])
    )
    print(
        f"certify: {report['pairs']} pairs, {violations} violations, "
        f"median ratio (regular) {median_txt}"
    )
    if violations:
        print(f"certify: bound violated on {violations} pair(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# tubes
# ---------------------------------------------------------------------------


def _intervals_cell(intervals: Sequence[tuple[float, float]]) -> str:
    return "|".join(f"{repr(float(lo))}:{repr(float(hi))}" for lo, hi in intervals)


def cmd_tubes(
    config: ExperimentConfig, out_dir: Path, formats: Sequence[str], workers: int = 1
) -> int:
    """Tube coverage audit over the configured (tau0, eps) probes."""
    path = config.require_path()
    geo = config.geometry
    if not geo.tube_taus or not geo.tube_eps:
        raise ConfigError("tubes requires geometry.tube_taus and geometry.tube_eps")
    summary = geometry_summary(
        path,
        grid=geo.grid,
        tie_threshold=geo.tie_threshold,
        delta=geo.delta,
        xi=geo.xi,
        workers=workers,
    )
    taus = summary.grid
    stacked = _solved_q_grid(path, taus, workers)

    def measured_dev(anchor_q: np.ndarray, interval: tuple[float, float]) -> float:
        lo, hi = interval
        mask = (taus >= lo - 1e-12) & (taus <= hi + 1e-12)
        return float(np.abs(stacked[mask] - anchor_q).max())

    header = (
        "tau0",
        "eps",
        "status",
        "first_lo",
        "first_hi",
        "first_dev",
        "second_lo",
        "second_hi",
        "second_dev",
        "gap_safe_measured",
        "gap_safe_certified",
    )
    rows: list[tuple[Any, ...]] = []
    records: list[dict[str, Any]] = []
    violations = 0
    nonregular = 0
    for tau0 in geo.tube_taus:
        for eps in geo.tube_eps:
            try:
                first = tube_first_order(
                    path, tau0, eps, grid=geo.grid, kinks=summary.kinks,
                    tie_threshold=geo.tie_threshold,
                )
                second = tube_second_order(
                    path, tau0, eps, grid=geo.grid, kinks=summary.kinks,
                    tie_threshold=geo.tie_threshold,
                )
                safe = gap_safe_region(
                    path, tau0, eps, xi=geo.xi, grid=geo.grid, kinks=summary.kinks,
                    tie_threshold=geo.tie_threshold,
                )
            except NonRegularPointError as exc:
                nonregular += 1
                rows.append((tau0, eps, "nonregular") + (None,) * 8)
                records.append({"tau0": tau0, "eps": eps, "status": "nonregular",
                                "reason": str(exc)})
                continue
            anchor_q = policy_iteration(path.evaluate(tau0)).ravel()
            dev1 = measured_dev(anchor_q, first.interval)
            dev2 = measured_dev(anchor_q, second.interval)
            covered = dev1 <= eps + _BOUND_TOL and dev2 <= eps + _BOUND_TOL
            if not covered:
                violations += 1
            rows.append(
                (
                    tau0,
                    eps,
                    "ok" if covered else "violated",
                    first.interval[0],
                    first.interval[1],
                    dev1,
                    second.interval[0],
                    second.interval[1],
                    dev2,
                    _intervals_cell(safe.measured),
                    _intervals_cell(safe.certificate_only),
                )
            )
            records.append(
                {
                    "tau0": tau0,
                    "eps": eps,
                    "status": "ok" if covered else "violated",
                    "first": {"interval": list(first.interval), "measured_dev": dev1},
                    "second": {"interval": list(second.interval), "measured_dev": dev2},
                    "gap_safe": {
                        "xi": safe.xi,
                        "measured": [list(seg) for seg in safe.measured],
                        "certificate_only": [list(seg) for seg in safe.certificate_only],
                    },
                }
            )

    report = {
        "family": path.family,
        "grid_size": int(len(taus)),
        "probes": len(rows),
        "violations": violations,
        "nonregular": nonregular,
        "rows": records,
    }
    if "csv" in formats:
        _write_csv(out_dir / "tubes.csv", header, rows)
    if "json" in formats:
        _write_json(out_dir / "tubes_summary.json", report)
    print(f"tubes: {len(rows)} probes, {violations} coverage violations, {nonregular} nonregular")
    if violations:
        print(f"tubes: coverage violated on {violations} probe(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _run_one(
    mode: str,
    process: StochasticPathProcess,
    scheduler_config: SchedulerConfig,
    agent_block,
    seed: int,
    horizon: int,
) -> RunTrace:
    agent: AgentConfig = agent_block.agent
    if mode == "ht-rl":
        return ht_q_learning_run(process, scheduler_config, agent, seed, horizon)
    if mode == "static-rl":
        return static_q_learning_run(process, scheduler_config, agent, seed, horizon)
    if mode == "ht-mcts":
        return ht_mcts_run(
            process, scheduler_config, agent_block.model_learning, seed, horizon,
            base_config=agent,
        )
    if mode == "static-mcts":
        return static_mcts_run(
            process, scheduler_config, agent_block.model_learning, seed, horizon,
            base_config=agent, depth=agent_block.static_depth,
            budget=agent_block.static_budget,
        )
    raise ConfigError(f"unknown run mode {mode!r} (choose from {', '.join(RUN_MODES)})")


_TRACE_HEADER = (
    "step", "tau", "e_t", "regret_inc", "geo_load", "eta", "nu", "lambda",
    "depth", "budget", "return",
)


def _trace_rows(trace: RunTrace) -> list[tuple[Any, ...]]:
    return list(
        zip(
            trace.steps.tolist(),
            trace.taus.tolist(),
            trace.e_t.tolist(),
            trace.regret_inc.tolist(),
            trace.geo_load.tolist(),
            trace.eta.tolist(),
            trace.nu.tolist(),
            trace.lam.tolist(),
            [int(v) for v in trace.depth.tolist()],
            [int(v) for v in trace.budget.tolist()],
            trace.episode_return.tolist(),
        )
    )


def _hyper_trace(trace: RunTrace) -> list[HyperParams]:
    return [
        HyperParams(eta=float(e), nu=float(n), lam=float(l), depth=int(d), budget=int(b))
        for e, n, l, d, b in zip(trace.eta, trace.nu, trace.lam, trace.depth, trace.budget)
    ]


def cmd_run(
    config: ExperimentConfig,
    out_dir: Path,
    formats: Sequence[str],
    mode: str,
    seeds_override: int | None = None,
    workers: int = 1,
) -> int:
    """Seeded tracking runs for one mode; writes traces plus a summary."""
    if mode not in RUN_MODES:
        raise ConfigError(f"unknown run mode {mode!r} (choose from {', '.join(RUN_MODES)})")
    path = config.require_path()
    scheduler_config = config.require_scheduler()
    block = config.require_agent()
    if seeds_override is not None and seeds_override < 1:
        raise ConfigError("--seeds must be >= 1")
    seeds = tuple(range(seeds_override)) if seeds_override is not None else block.seeds
    proc = block.process
    process = StochasticPathProcess(
        path=path,
        kind=proc.kind,
        horizon=proc.horizon if proc.horizon is not None else block.t,
        tau_start=proc.tau_start,
        tau_end=proc.tau_end,
        noise=proc.noise,
        freeze_at=proc.freeze_at,
    )

    traces: list[RunTrace] = _pool_map(
        lambda seed: _run_one(mode, process, scheduler_config, block, seed, block.t),
        seeds,
        workers,
    )

    if "csv" in formats:
        for seed, trace in zip(seeds, traces):
            _write_csv(out_dir / f"trace_{mode}_seed{seed}.csv", _TRACE_HEADER, _trace_rows(trace))

    eps_chatter = config.stability.eps
    chatter = [chatter_stats(_hyper_trace(trace), eps_chatter) for trace in traces]
    variation_median = {
        key: float(np.median([variation[key] for variation, _ in chatter]))
        for key in chatter[0][0]
    }
    summary = {
        "mode": mode,
        "t": block.t,
        "seeds": list(seeds),
        "process": {
            "kind": proc.kind,
            "noise": proc.noise,
            "freeze_at": proc.freeze_at,
            "tau_start": proc.tau_start,
            "tau_end": proc.tau_end,
        },
        "cumulative_regret": _median_iqr([dynamic_regret(trace) for trace in traces]),
        "auc_return": _median_iqr(
            [float(_trapezoid(trace.episode_return, trace.steps)) for trace in traces]
        ),
        "final_return": _median_iqr([float(trace.episode_return[-1]) for trace in traces]),
        "final_tracking_error": _median_iqr([float(trace.e_t[-1]) for trace in traces]),
        "chatter": {
            "eps": eps_chatter,
            "variation_median": variation_median,
            "large_change_fraction": _median_iqr([fraction for _, fraction in chatter]),
        },
        "meta": dict(traces[0].meta),
    }
    if "json" in formats:
        _write_json(out_dir / f"run_summary_{mode}.json", summary)
    print(
        f"run[{mode}]: {len(seeds)} seeds, median cumulative regret "
        f"{summary['cumulative_regret']['median']!r}, median final return "
        f"{summary['final_return']['median']!r}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# scheduler-stability
# ---------------------------------------------------------------------------


def _synthetic_signals(rng: np.random.Generator, scale: float) -> ProxySignals:
    """Bounded i.i.d. proxy stream: uniform channels plus a rare kink flag."""
    pl, curv, gap, flip = rng.uniform(0.0, 1.0, size=4)
    return ProxySignals(
        delta_r_inf=scale * pl,
        delta_p_phi=scale * curv,
        delta_pl_hat=scale * pl,
        delta_curv_hat=scale * curv,
        gap_hat=scale * gap,
        kink=int(flip < 0.2),
    )


_HYPER_KEYS = ("eta", "nu", "lam", "depth", "budget")


def _stability_cell(
    base: SchedulerConfig,
    h: int,
    delta_hys: float,
    t: int,
    seed: int,
    eps: float,
    scale: float,
) -> dict[str, Any]:
    cfg = dataclasses.replace(base, h=h, delta_hys=delta_hys)
    state = initial_scheduler_state(cfg)
    rng = np.random.default_rng(seed)
    trace: list[HyperParams] = []
    for step in range(1, t + 1):
        state = scheduler_step(state, _synthetic_signals(rng, scale), step)
        trace.append(state.hyper)
    variation, fraction = chatter_stats(trace, eps)

    # Accepted-change magnitudes (max over hyper-parameters per event) feed the
    # measured second moment C2 in the no-chatter inequality.
    columns = np.array([[getattr(hp, key) for key in _HYPER_KEYS] for hp in trace], dtype=float)
    diffs = np.abs(np.diff(columns, axis=0)).max(axis=1)
    changes = diffs[diffs > 0.0]
    c2 = float(np.mean(np.square(changes))) if changes.size else 0.0
    if math.isinf(delta_hys):
        bound_rhs = math.inf if c2 > 0 else 0.0
    else:
        bound_rhs = 2.0 * c2 / (h * delta_hys**2) if delta_hys > 0 else math.inf
    counting_ok = all(
        variation[key] <= math.ceil(t / h) * (columns[:, k].max() - columns[:, k].min()) + 1e-9
        for k, key in enumerate(_HYPER_KEYS)
    )
    return {
        "seed": seed,
        "variation": variation,
        "fraction": fraction,
        "c2": c2,
        "bound_rhs": bound_rhs,
        "bound_holds": fraction <= bound_rhs + 1e-12,
        "counting_bound_holds": counting_ok,
        "updates": int(np.count_nonzero(diffs > 0.0)),
    }


def _rm_audit(base: SchedulerConfig, t: int, scale: float) -> dict[str, Any]:
    """Audit step-size comparability against a decaying base schedule.

    Uses ``scheduled_rate`` (the per-step rate the runners consume) with the
    scheduler's damping multiplier, and reports the worst measured damping
    factor c such that c * base <= eta <= base at every step.
    """
    cfg = dataclasses.replace(base, eta_min=0.0)
    state = initial_scheduler_state(cfg)
    rng = np.random.default_rng(0)
    base_schedule = [cfg.eta0 / (1.0 + step) ** 0.6 for step in range(1, t + 1)]
    eta_trace: list[float] = []
    for step in range(1, t + 1):
        state = scheduler_step(state, _synthetic_signals(rng, scale), step)
        eta_trace.append(scheduled_rate(state, base_schedule[step - 1]))
    measured_c = float(min(e / b for e, b in zip(eta_trace, base_schedule)))
    fraction, sum_eta, sum_eta_sq = robbins_monro_audit(eta_trace, base_schedule, measured_c)
    return {
        "t": t,
        "measured_c": measured_c,
        "comparable_fraction": fraction,
        "sum_eta": sum_eta,
        "sum_eta_sq": sum_eta_sq,
    }


def cmd_scheduler_stability(
    config: ExperimentConfig, out_dir: Path, formats: Sequence[str], workers: int = 1
) -> int:
    """Sweep (H, delta_hys) over synthetic proxy streams."""
    base = config.scheduler if config.scheduler is not None else SchedulerConfig()
    st = config.stability
    cells = [(h, d) for h in st.h_values for d in st.delta_hys_values]

    def run_cell(cell: tuple[int, float]) -> dict[str, Any]:
        h, delta_hys = cell
        per_seed = [
            _stability_cell(base, h, delta_hys, st.t, seed, st.eps, st.proxy_scale)
            for seed in st.seeds
        ]
        return {
            "h": h,
            "delta_hys": delta_hys,
            "fraction_median": float(np.median([entry["fraction"] for entry in per_seed])),
            "c2_median": float(np.median([entry["c2"] for entry in per_seed])),
            "variation_median": {
                key: float(np.median([entry["variation"][key] for entry in per_seed]))
                for key in _HYPER_KEYS
            },
            "bound_holds": all(entry["bound_holds"] for entry in per_seed),
            "counting_bound_holds": all(entry["counting_bound_holds"] for entry in per_seed),
            "per_seed": per_seed,
        }

    results = _pool_map(run_cell, cells, workers)

    by_h: dict[int, list[dict[str, Any]]] = {}
    by_delta: dict[float, list[dict[str, Any]]] = {}
    for entry in results:
        by_h.setdefault(entry["h"], []).append(entry)
        by_delta.setdefault(entry["delta_hys"], []).append(entry)
    monotone_in_h = {
        str(_jsonable(delta)): _nonincreasing(
            [e["fraction_median"] for e in sorted(rows, key=lambda e: e["h"])]
        )
        for delta, rows in by_delta.items()
    }
    monotone_in_delta = {
        str(h): _nonincreasing(
            [e["fraction_median"] for e in sorted(rows, key=lambda e: e["delta_hys"])]
        )
        for h, rows in by_h.items()
    }

    report = {
        "t": st.t,
        "seeds": list(st.seeds),
        "eps": st.eps,
        "proxy_scale": st.proxy_scale,
        "cells": results,
        "monotone_fraction_in_h": monotone_in_h,
        "monotone_fraction_in_delta_hys": monotone_in_delta,
        "rm_audit": _rm_audit(base, st.t, st.proxy_scale),
    }

    if "csv" in formats:
        header = (
            "h", "delta_hys", "fraction_median", "c2_median", "bound_holds",
            "counting_bound_holds", "tv_eta", "tv_nu", "tv_lambda", "tv_depth", "tv_budget",
        )
        rows = [
            (
                entry["h"],
                "inf" if math.isinf(entry["delta_hys"]) else entry["delta_hys"],
                entry["fraction_median"],
                entry["c2_median"],
                entry["bound_holds"],
                entry["counting_bound_holds"],
                entry["variation_median"]["eta"],
                entry["variation_median"]["nu"],
                entry["variation_median"]["lam"],
                entry["variation_median"]["depth"],
                entry["variation_median"]["budget"],
            )
            for entry in results
        ]
        _write_csv(out_dir / "scheduler_stability.csv", header, rows)
    if "json" in formats:
        _write_json(out_dir / "scheduler_stability_summary.json", report)

    failed = [e for e in results if not (e["bound_holds"] and e["counting_bound_holds"])]
    print(
        f"scheduler-stability: {len(results)} cells, "
        f"{len(results) - len(failed)} satisfy both bounds, "
        f"rm comparable fraction {report['rm_audit']['comparable_fraction']!r}"
    )
    if failed:
        print(f"scheduler-stability: bounds failed on {len(failed)} cell(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-path
# ---------------------------------------------------------------------------


def cmd_gen_path(
    config: ExperimentConfig, out_dir: Path, formats: Sequence[str], workers: int = 1
) -> int:
    """Dump model snapshots (rewards and transition rows) on a tau grid."""
    path = config.require_path()
    taus = np.linspace(0.0, 1.0, config.geometry.grid)
    sample = path.evaluate(0.0)
    n_states, n_actions = sample.r.shape
    header = ("tau", "state", "action", "reward") + tuple(
        f"p_to_{j}" for j in range(n_states)
    )
    rows: list[tuple[Any, ...]] = []
    for tau in taus:
        mdp = path.evaluate(float(tau))
        for s in range(n_states):
            for a in range(n_actions):
                rows.append(
                    (float(tau), s, a, float(mdp.r[s, a])) + tuple(float(v) for v in mdp.p[s, a])
                )
    meta = {
        "family": path.family,
        "gamma": path.gamma,
        "n_states": int(n_states),
        "n_actions": int(n_actions),
        "grid_size": int(len(taus)),
        "derivative_mode": path.derivative_mode,
        "scale_l_s": path.scale_l_s,
        "meta": dict(path.meta),
    }
    if "csv" in formats:
        _write_csv(out_dir / "path_grid.csv", header, rows)
    if "json" in formats:
        _write_json(out_dir / "path_meta.json", meta)
    print(f"gen-path: {len(taus)} snapshots x {n_states * n_actions} pairs")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="htmdp",
        description="Certificate audits, tube coverage, scheduler stability, and tracking runs.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, help="YAML experiment config")
        sub.add_argument("--out", default=None, help="output directory (overrides config)")
        sub.add_argument(
            "--format", choices=("csv", "json"), default=None,
            help="restrict artefacts to one format (default: config output.formats)",
        )

    add_common(subparsers.add_parser("certify", help="all-pairs drift bound audit"))
    add_common(subparsers.add_parser("tubes", help="tube coverage and gap-safe audit"))
    run_parser = subparsers.add_parser("run", help="seeded tracking runs")
    add_common(run_parser)
    run_parser.add_argument("--mode", choices=RUN_MODES, default="ht-rl")
    run_parser.add_argument(
        "--seeds", type=int, default=None, help="run seeds 0..N-1 (overrides config)"
    )
    add_common(
        subparsers.add_parser("scheduler-stability", help="(H, delta_hys) chatter sweep")
    )
    add_common(subparsers.add_parser("gen-path", help="dump model snapshots on a tau grid"))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        out_dir = Path(args.out) if args.out else Path(config.output.directory)
        out_dir.mkdir(parents=True, exist_ok=True)
        formats = (args.format,) if args.format else config.output.formats
        workers = resolved_workers()
        if args.command == "certify":
            return cmd_certify(config, out_dir, formats, workers)
        if args.command == "tubes":
            return cmd_tubes(config, out_dir, formats, workers)
        if args.command == "run":
            return cmd_run(config, out_dir, formats, args.mode, args.seeds, workers)
        if args.command == "scheduler-stability":
            return cmd_scheduler_stability(config, out_dir, formats, workers)
        if args.command == "gen-path":
            return cmd_gen_path(config, out_dir, formats, workers)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
