"""Tests for certificates: densities, PL/Curv/Phi, tubes, cones."""

import numpy as np
import pytest

from htmdp.mdp import policy_iteration, state_values, value_iteration
from htmdp.metric import GroundMetric
from htmdp.geometry import (
    GapSafeResult,
    GeometrySummary,
    KinkRecord,
    NonRegularPointError,
    ParamFamily,
    ParamGeometry,
    bound_matrix,
    bound_term_matrices,
    curvature,
    curvature_density,
    default_delta,
    detect_kinks,
    ellipsoid_contains,
    feasible_cone,
    gap_profile,
    gap_safe_region,
    geometry_summary,
    jacobian_vector_product,
    kink_drift_cap,
    kink_penalty,
    param_geometry,
    path_length,
    path_mixing,
    path_value_bound,
    pullback_metric,
    q_path_derivative,
    solve_on_grid,
    speed_density,
    tube_first_order,
    tube_second_order,
)
from htmdp.paths import (
    MdpPath,
    curvature_dominated_path,
    kink_prone_path,
    length_dominated_path,
    ring_mdp,
    stationary_path,
)
from oracles import fd_q_star_derivative


@pytest.fixture(scope="module")
def length_path():
    return length_dominated_path()


@pytest.fixture(scope="module")
def curve_path():
    return curvature_dominated_path()


@pytest.fixture(scope="module")
def kink_path():
    return kink_prone_path()


@pytest.fixture(scope="module")
def kink_records(kink_path):
    return detect_kinks(kink_path, grid=101)


@pytest.fixture(scope="module")
def still_path():
    mdp = ring_mdp(8, 0.1, 0.9, 3.0, 1.5, (0.5, 1.0, 0.7))
    return stationary_path(mdp, GroundMetric.ring(8))


class TestDensities:
    def test_stationary_zero(self, still_path):
        assert speed_density(still_path, 0.4) == 0.0
        assert curvature_density(still_path, 0.4) == 0.0

    def test_reward_only_linear_path_gamma_09(self):
        # v = ||dr||_inf / (1 - gamma) with no kernel drift
        path = kink_prone_path(gamma=0.9)
        assert speed_density(path, 0.3) == pytest.approx(10.0 * 0.4, abs=1e-12)

    def test_length_path_speed(self, length_path):
        assert speed_density(length_path, 0.7) == pytest.approx(1.2 / 0.05, abs=1e-9)

    def test_linear_path_curvature_density_is_cross_term_only(self, length_path):
        # second-order inputs vanish; only the first-order feedback term remains
        expected = 2.0 / 0.05**3 * 1.2
        assert curvature_density(length_path, 0.3) == pytest.approx(expected, rel=1e-12)

    def test_speed_dominates_analytic_derivative(self, length_path, curve_path):
        for path, taus in ((length_path, (0.1, 0.5, 0.9)), (curve_path, (0.2, 0.6))):
            for tau in taus:
                dq, bound = q_path_derivative(path, tau)
                assert np.abs(dq).max() <= bound + 1e-12
                assert bound == pytest.approx(speed_density(path, tau), abs=1e-12)

    def test_curvature_density_dominates_fd_acceleration(self, curve_path):
        # ||d^2 Q*/dtau^2|| estimated by second differences of exact solves
        h = 1e-3
        for tau in (0.15, 0.35, 0.65):
            qm = policy_iteration(curve_path.evaluate(tau - h))
            q0 = policy_iteration(curve_path.evaluate(tau))
            qp = policy_iteration(curve_path.evaluate(tau + h))
            accel = np.abs(qp - 2 * q0 + qm).max() / h**2
            assert accel <= curvature_density(curve_path, tau)


class TestPathIntegrals:
    def test_stationary(self, still_path):
        assert path_length(still_path) == 0.0
        assert curvature(still_path) == 0.0

    def test_reward_only_linear_value(self, length_path):
        assert path_length(length_path, 0.0, 1.0) == pytest.approx(1.2, abs=1e-12)
        assert path_length(length_path, 0.3, 0.7) == pytest.approx(0.48, abs=1e-12)

    def test_additivity(self, length_path, curve_path):
        for path in (length_path, curve_path):
            whole = path_length(path, 0.0, 1.0, grid=201)
            split = path_length(path, 0.0, 0.5, grid=101) + path_length(
                path, 0.5, 1.0, grid=101
            )
            assert split == pytest.approx(whole, abs=1e-10)

    def test_linear_curvature_below_tolerance(self, length_path):
        assert curvature(length_path, grid=101) < 1e-6

    def test_s_curve_exceeds_linear(self, length_path, curve_path):
        assert curvature(curve_path, grid=101) > curvature(length_path, grid=101)

    def test_speed_ramp_values(self, curve_path):
        # the speed rises 0.25x -> 1.75x, so |second derivative| integrates to
        # 1.5x the first-order drift; trapezoid quadrature of the parabolic
        # bend profile is ~0.25% low at this grid
        cv = curvature(curve_path, grid=101)
        pl = path_length(curve_path, grid=101)
        assert cv == pytest.approx(1.8, rel=3e-3)
        assert pl == pytest.approx(1.2, abs=1e-3)
        assert cv == pytest.approx(1.5 * pl, rel=3e-3)

    def test_parameter_errors(self, length_path):
        with pytest.raises(ValueError):
            path_length(length_path, 0.6, 0.4)
        with pytest.raises(ValueError):
            path_length(length_path, 0.0, 1.0, grid=1)


class TestGapProfile:
    def test_dominant_action_positive(self, length_path):
        gaps = gap_profile(length_path, 41)
        assert gaps.min() > 0.05

    def test_length_gap_scales_with_ramp(self, length_path):
        taus = np.linspace(0.0, 1.0, 21)
        gaps = gap_profile(length_path, taus)
        np.testing.assert_allclose(gaps, (1.0 + 1.2 * taus) * gaps[0], rtol=1e-8)

    def test_kink_profile_touches_zero(self, kink_path):
        gaps = gap_profile(kink_path, 201)  # grid includes tau = 0.5
        assert gaps.min() < 1e-10
        assert gaps[0] > 1e-2 and gaps[-1] > 1e-2

    def test_profile_continuity_bound(self, kink_path):
        taus = np.linspace(0.0, 1.0, 51)
        _, qs = solve_on_grid(kink_path, taus)
        gaps = gap_profile(kink_path, taus)
        for i in range(len(taus) - 1):
            drift = np.abs(qs[i + 1] - qs[i]).max()
            assert abs(gaps[i + 1] - gaps[i]) <= 2.0 * drift + 1e-12


class TestDetectKinks:
    def test_length_path_clean(self, length_path):
        assert detect_kinks(length_path, grid=101) == []

    def test_kink_path_single_record(self, kink_records):
        assert len(kink_records) == 1
        record = kink_records[0]
        assert record.tau_star == pytest.approx(0.5, abs=1e-4)
        assert record.window[0] < 0.5 < record.window[1]
        assert record.min_gap_in_window < 1e-8
        assert record.local_phi > 0

    def test_policy_switches_across_window(self, kink_path, kink_records):
        lo, hi = kink_records[0].window
        q_lo = policy_iteration(kink_path.evaluate(lo))
        q_hi = policy_iteration(kink_path.evaluate(hi))
        assert not np.array_equal(np.argmax(q_lo, axis=1), np.argmax(q_hi, axis=1))

    def test_two_crossings_disjoint_windows(self, kink_path):
        # tent-map reparameterization crosses alpha = 1/2 at tau = 0.25 and 0.75
        tent = MdpPath(
            evaluate=lambda t: kink_path.evaluate(1.0 - abs(1.0 - 2.0 * t)),
            metric=kink_path.metric,
            gamma=kink_path.gamma,
            family="custom",
            derivative_mode="central_fd",
        )
        records = detect_kinks(tent, grid=101)
        assert len(records) == 2
        assert records[0].tau_star == pytest.approx(0.25, abs=1e-3)
        assert records[1].tau_star == pytest.approx(0.75, abs=1e-3)
        assert records[0].window[1] <= records[1].window[0]

    def test_threshold_validation(self, length_path):
        with pytest.raises(ValueError):
            detect_kinks(length_path, grid=11, tie_threshold=0.0)


def _flat_kink(lo, hi, gap_value, tau_star=None):
    taus = np.linspace(lo, hi, 21)
    return KinkRecord(
        tau_star=tau_star if tau_star is not None else (lo + hi) / 2.0,
        window=(lo, hi),
        min_gap_in_window=gap_value,
        local_phi=0.0,
        local_taus=taus,
        local_gaps=np.full(21, gap_value),
        phi_delta=1e-3,
    )


class TestKinkPenalty:
    def test_no_kinks(self):
        assert kink_penalty([], delta=1e-3) == 0.0

    def test_flat_zero_gap_window(self):
        # g == 0 over width 0.2 with floor delta: Phi = 0.2 / delta
        record = _flat_kink(0.4, 0.6, 0.0)
        assert kink_penalty([record], delta=0.01) == pytest.approx(20.0, rel=1e-12)

    def test_monotone_in_delta(self, kink_records):
        values = [kink_penalty(kink_records, delta=d) for d in (1e-3, 1e-2, 1e-1)]
        assert values[0] >= values[1] >= values[2]
        assert values[-1] > 0

    def test_overlap_rejected(self):
        a = _flat_kink(0.3, 0.5, 0.0)
        b = _flat_kink(0.45, 0.7, 0.0)
        with pytest.raises(ValueError, match="overlap"):
            kink_penalty([a, b], delta=1e-2)

    def test_profile_fallback(self):
        record = KinkRecord(
            tau_star=0.5,
            window=(0.4, 0.6),
            min_gap_in_window=0.0,
            local_phi=0.0,
            local_taus=None,
            local_gaps=None,
            phi_delta=1e-3,
        )
        taus = np.linspace(0.0, 1.0, 101)
        gaps = np.zeros(101)
        assert kink_penalty([record], (taus, gaps), delta=0.01) == pytest.approx(20.0)

    def test_delta_required(self):
        with pytest.raises(ValueError):
            kink_penalty([], delta=0.0)


class TestQPathDerivative:
    def test_stationary_zero(self, still_path):
        dq, bound = q_path_derivative(still_path, 0.5)
        assert not np.any(dq)
        assert bound == 0.0

    def test_length_path_closed_form(self, length_path):
        # Q*_tau = (1 + 1.2 tau) Q*_0, so dQ*/dtau = 1.2 Q*_0 at every tau
        q0 = policy_iteration(length_path.evaluate(0.0))
        for tau in (0.1, 0.5, 0.9):
            dq, _ = q_path_derivative(length_path, tau)
            np.testing.assert_allclose(dq, 1.2 * q0, atol=1e-8)

    def test_matches_fd_oracle(self, curve_path):
        # h small enough that the FD tail Q''' h^2 / 6 clears 1e-6 even at the
        # ramp probe 0.45, where s''' = 112.5 amplifies the third derivative
        h = 2e-5
        for tau in (0.2, 0.45, 0.8):
            dq, _ = q_path_derivative(curve_path, tau)
            fd = fd_q_star_derivative(curve_path, tau, h)
            assert np.abs(dq - fd).max() <= max(1e-6, 10 * h**2)

    def test_kink_is_non_regular(self, kink_path, kink_records):
        with pytest.raises(NonRegularPointError):
            q_path_derivative(kink_path, 0.5)
        # inside the window but away from the exact tie: window check fires
        lo, hi = kink_records[0].window
        inside = (lo + kink_records[0].tau_star) / 2.0
        with pytest.raises(NonRegularPointError):
            q_path_derivative(kink_path, inside, kinks=kink_records)


class TestPathValueBound:
    def test_stationary_zero(self, still_path):
        bound, parts = path_value_bound(still_path, 0.0, 1.0, grid=21)
        assert bound == 0.0
        assert parts == {"pl_term": 0.0, "curv_term": 0.0, "phi_term": 0.0}

    def test_length_path_parts(self, length_path):
        bound, parts = path_value_bound(length_path, 0.0, 1.0, grid=51)
        assert parts["phi_term"] == 0.0
        assert parts["curv_term"] < 1e-6 * 0.05**-3
        assert parts["pl_term"] == pytest.approx(1.2 / 0.05**2, rel=1e-12)
        assert bound == pytest.approx(parts["pl_term"], rel=1e-9)

    @pytest.mark.parametrize("fixture", ["length_path", "curve_path", "kink_path"])
    def test_dominance_all_pairs(self, fixture, request):
        path = request.getfixturevalue(fixture)
        summary = geometry_summary(path, grid=41)
        bounds = bound_matrix(path, summary)
        _, qs = solve_on_grid(path, summary.grid)
        stacked = np.stack([q.ravel() for q in qs])
        true = np.abs(stacked[None, :, :] - stacked[:, None, :]).max(axis=2)
        assert np.all(true <= bounds + 1e-9)

    def test_bound_matrix_matches_direct_evaluation(self, curve_path):
        summary = geometry_summary(curve_path, grid=41)
        bounds = bound_matrix(curve_path, summary)
        i, j = 7, 29
        direct, _ = path_value_bound(
            curve_path,
            summary.grid[i],
            summary.grid[j],
            kinks=summary.kinks,
            delta=summary.constants["delta"],
            quad_taus=summary.grid[i : j + 1],
        )
        assert direct == pytest.approx(bounds[i, j], rel=1e-12)

    @pytest.mark.parametrize("fixture", ["length_path", "curve_path", "kink_path"])
    def test_term_matrices_sum_to_bound_matrix(self, fixture, request):
        path = request.getfixturevalue(fixture)
        summary = geometry_summary(path, grid=41)
        bounds = bound_matrix(path, summary)
        terms = bound_term_matrices(path, summary)
        assert set(terms) == {"pl_term", "curv_term", "phi_term"}
        total = terms["pl_term"] + terms["curv_term"] + terms["phi_term"]
        np.testing.assert_array_equal(total, bounds)
        for mat in terms.values():
            assert mat.shape == bounds.shape
            assert np.all(mat >= 0.0)
            np.testing.assert_array_equal(mat, mat.T)

    def test_kink_pair_includes_phi(self, kink_path, kink_records):
        bound, parts = path_value_bound(kink_path, 0.2, 0.8, grid=61, kinks=kink_records)
        assert parts["phi_term"] > 0
        lo_only, parts_lo = path_value_bound(
            kink_path, 0.2, kink_records[0].window[0], grid=61, kinks=kink_records
        )
        assert parts_lo["phi_term"] == 0.0
        assert lo_only < bound


class TestTubes:
    def test_stationary_full_component(self, still_path):
        tube = tube_first_order(still_path, 0.3, eps=0.5, grid=51)
        assert tube.interval == (0.0, 1.0)

    def test_zero_budget_degenerate(self, length_path):
        tube = tube_first_order(length_path, 0.5, eps=0.0, grid=51)
        assert tube.interval == (0.5, 0.5)

    def test_constant_speed_radius(self, length_path):
        # v = 24 everywhere: eps = 1.21 reaches exactly +-0.05 on a 201 grid
        tube = tube_first_order(length_path, 0.5, eps=1.21, grid=201)
        assert tube.interval[0] == pytest.approx(0.45, abs=1e-12)
        assert tube.interval[1] == pytest.approx(0.55, abs=1e-12)

    def test_coverage_audit(self, length_path, curve_path):
        for path, tau0, eps in ((length_path, 0.5, 1.21), (curve_path, 0.3, 2.0)):
            tube = tube_first_order(path, tau0, eps, grid=101)
            q0 = policy_iteration(path.evaluate(tau0))
            for tau in np.linspace(tube.interval[0], tube.interval[1], 17):
                q = policy_iteration(path.evaluate(float(tau)))
                assert np.abs(q - q0).max() <= eps

    def test_second_order_subset_and_strict(self, length_path, curve_path):
        # the curvature density keeps a feedback term even on linear ramps, so
        # the second-order tube is contained (here strictly) in both regimes
        for path, tau0, eps in ((length_path, 0.5, 1.21), (curve_path, 0.3, 2.0)):
            first = tube_first_order(path, tau0, eps, grid=201)
            second = tube_second_order(path, tau0, eps, grid=201)
            assert first.interval[0] <= second.interval[0] <= tau0
            assert tau0 <= second.interval[1] <= first.interval[1]
            assert second.interval != first.interval

    def test_second_order_coverage(self, curve_path):
        tube = tube_second_order(curve_path, 0.3, 2.0, grid=101)
        q0 = policy_iteration(curve_path.evaluate(0.3))
        for tau in np.linspace(tube.interval[0], tube.interval[1], 17):
            q = policy_iteration(curve_path.evaluate(float(tau)))
            assert np.abs(q - q0).max() <= 2.0

    def test_tube_stops_at_kink_window(self, kink_path, kink_records):
        tube = tube_first_order(kink_path, 0.2, eps=100.0, grid=101, kinks=kink_records)
        assert tube.interval[0] == 0.0
        assert tube.interval[1] <= kink_records[0].window[0] + 1e-12

    def test_non_regular_anchor(self, kink_path, kink_records):
        with pytest.raises(NonRegularPointError):
            tube_first_order(kink_path, 0.5, 0.1, kinks=kink_records)

    def test_negative_eps_rejected(self, length_path):
        with pytest.raises(ValueError):
            tube_first_order(length_path, 0.5, -0.1)


class TestGapSafeRegion:
    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_small_budget_region_is_tube(self, length_path):
        result = gap_safe_region(length_path, 0.5, eps=0.1, grid=101)
        assert isinstance(result, GapSafeResult)
        assert len(result.measured) == 1
        assert result.measured[0] == result.tube.interval

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_kink_window_excluded(self, kink_path, kink_records):
        result = gap_safe_region(
            kink_path, 0.2, eps=1.0, xi=0.01, grid=101, kinks=kink_records
        )
        lo, hi = kink_records[0].window
        for a, b in result.measured:
            assert b <= lo + 1e-12 or a >= hi - 1e-12

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_certificate_inside_measured(self, length_path, curve_path, kink_path):
        for path, tau0 in ((length_path, 0.5), (curve_path, 0.4), (kink_path, 0.15)):
            result = gap_safe_region(path, tau0, eps=0.5, grid=101)
            for c_lo, c_hi in result.certificate_only:
                assert any(
                    m_lo <= c_lo + 1e-12 and c_hi <= m_hi + 1e-12
                    for m_lo, m_hi in result.measured
                )

    def test_warns_when_anchor_gap_insufficient(self, kink_path, kink_records):
        with pytest.warns(UserWarning, match="anchor gap"):
            gap_safe_region(
                kink_path, 0.2, eps=5.0, xi=0.05, grid=51, kinks=kink_records
            )


class TestGeometrySummary:
    def test_summary_invariants(self, kink_path):
        summary = geometry_summary(kink_path, grid=101)
        assert isinstance(summary, GeometrySummary)
        assert summary.PL >= 0 and summary.Curv >= 0 and summary.Phi > 0
        assert len(summary.kinks) == 1
        for key in ("C_mix", "L_s", "delta", "xi", "kink_drift_cap"):
            assert key in summary.constants
        assert summary.constants["delta"] == pytest.approx(default_delta(kink_path))
        assert summary.constants["kink_drift_cap"] == pytest.approx(
            kink_drift_cap(kink_path)
        )

    def test_quadrature_consistency_enforced(self, length_path):
        summary = geometry_summary(length_path, grid=41)
        with pytest.raises(ValueError, match="quadrature"):
            GeometrySummary(
                grid=summary.grid,
                pl_density=summary.pl_density,
                curv_density=summary.curv_density,
                gap_profile=summary.gap_profile,
                PL=summary.PL + 1e-6,
                Curv=summary.Curv,
                kinks=summary.kinks,
                Phi=summary.Phi,
                constants=summary.constants,
            )

    def test_workers_match_sequential(self, length_path):
        taus = np.linspace(0.0, 1.0, 21)
        _, seq = solve_on_grid(length_path, taus, workers=1)
        _, par = solve_on_grid(length_path, taus, workers=4)
        for a, b in zip(seq, par):
            np.testing.assert_array_equal(a, b)


def _reward_linear_family(n=8, gamma=0.9):
    base = ring_mdp(n, 0.1, gamma, 2.0, 1.5, (0.5, 1.0, 0.7))
    bump2 = ring_mdp(n, 0.1, gamma, 5.0, 1.5, (0.2, 0.6, 0.4))

    def evaluate(theta):
        from htmdp.mdp import FiniteMdp

        r = (1.0 + theta[0]) * base.r + theta[1] * bump2.r
        return FiniteMdp(p=base.p, r=r, gamma=gamma)

    return ParamFamily(evaluate=evaluate, theta_dim=2, metric=GroundMetric.ring(n))


class TestMultiParameter:
    def test_zero_direction(self):
        family = _reward_linear_family()
        out = jacobian_vector_product(family, np.zeros(2), np.zeros(2))
        assert not np.any(out)

    def test_single_parameter_reduces_to_path_derivative(self, length_path):
        family = ParamFamily(
            evaluate=lambda th: length_path.evaluate(float(th[0])),
            theta_dim=1,
            metric=length_path.metric,
        )
        jvp = jacobian_vector_product(family, np.array([0.4]), np.array([1.0]))
        dq, _ = q_path_derivative(length_path, 0.4)
        np.testing.assert_allclose(jvp, dq, atol=1e-7)

    def test_matches_fd_oracle(self):
        family = _reward_linear_family()
        rng = np.random.default_rng(5)
        theta = np.array([0.1, -0.05])
        h = 1e-4
        for _ in range(3):
            u = rng.normal(size=2)
            jvp = jacobian_vector_product(family, theta, u)
            hi = policy_iteration(family.evaluate(theta + h * u))
            lo = policy_iteration(family.evaluate(theta - h * u))
            fd = (hi - lo) / (2.0 * h)
            assert np.abs(jvp - fd).max() <= max(1e-6, 10 * h**2)

    def test_pullback_stationary_zero(self):
        mdp = ring_mdp(6, 0.1, 0.9, 2.0, 1.5, (0.5, 1.0, 0.7))
        family = ParamFamily(
            evaluate=lambda th: mdp, theta_dim=2, metric=GroundMetric.ring(6)
        )
        g = pullback_metric(family, np.zeros(2))
        np.testing.assert_allclose(g, np.zeros((2, 2)), atol=1e-20)

    def test_pullback_quadratic_form_identity(self):
        family = _reward_linear_family()
        theta = np.array([0.05, 0.1])
        g = pullback_metric(family, theta)
        assert np.linalg.eigvalsh(g).min() >= -1e-8
        rng = np.random.default_rng(11)
        for _ in range(3):
            dtheta = rng.normal(size=2)
            jd = jacobian_vector_product(family, theta, dtheta)
            assert float(dtheta @ g @ dtheta) == pytest.approx(
                float(np.sum(jd * jd)), rel=1e-6, abs=1e-10
            )

    def test_param_geometry_bundle(self):
        family = _reward_linear_family()
        geo = param_geometry(family, np.zeros(2))
        assert isinstance(geo, ParamGeometry)
        probe = geo.jacobian_probe(np.array([1.0, 0.0]))
        assert probe.shape == (8, 3)

    def test_ellipsoid_membership(self):
        g = np.array([[4.0, 0.0], [0.0, 1.0]])
        assert ellipsoid_contains(g, np.zeros(2), 1.0)
        boundary = np.array([0.5, 0.0])  # quadratic form exactly 1
        assert ellipsoid_contains(g, boundary, 1.0)
        assert not ellipsoid_contains(g, 2.0 * boundary, 1.0)
        with pytest.raises(ValueError):
            ellipsoid_contains(g, boundary, 0.0)

    def test_ellipsoid_first_order_audit(self):
        # policy is locally constant, so Q* is affine in these reward params and
        # accepted steps obey the budget exactly (W = identity, Frobenius norm)
        family = _reward_linear_family()
        theta = np.array([0.1, 0.0])
        g = pullback_metric(family, theta)
        q0 = policy_iteration(family.evaluate(theta))
        eps = 0.05
        rng = np.random.default_rng(3)
        for _ in range(5):
            step = rng.normal(size=2)
            step *= 0.9 * eps / np.sqrt(step @ g @ step)
            assert ellipsoid_contains(g, step, eps)
            q1 = policy_iteration(family.evaluate(theta + step))
            assert np.sqrt(np.sum((q1 - q0) ** 2)) <= eps + 50.0 * step @ step

    def test_cone_no_active_constraints(self):
        family = _reward_linear_family()
        far = lambda th, q: 10.0  # never active
        assert feasible_cone(family, np.zeros(2), [far], 1e-6, np.array([1.0, 1.0]))
        assert feasible_cone(family, np.zeros(2), [far], 1e-6, np.array([-1.0, -1.0]))

    def test_cone_linear_constraint(self):
        family = _reward_linear_family()
        h = lambda th, q: th[0]  # active at theta0 = 0
        theta = np.zeros(2)
        assert feasible_cone(family, theta, [h], 1e-9, np.array([1.0, 0.0]))
        assert not feasible_cone(family, theta, [h], 1e-9, np.array([-1.0, 0.0]))
        # orthogonal direction: gradient inner product is 0, both signs accepted
        assert feasible_cone(family, theta, [h], 1e-9, np.array([0.0, 1.0]))
        assert feasible_cone(family, theta, [h], 1e-9, np.array([0.0, -1.0]))

    def test_cone_value_constraint_audit(self):
        # active constraint on total value: u raising values is accepted and a
        # small step along it does not decrease H to first order
        family = _reward_linear_family()
        theta = np.zeros(2)
        q_star = policy_iteration(family.evaluate(theta))
        c = float(q_star.sum())
        h = lambda th, q: float(np.sum(q)) - c  # H(theta) = 0: active
        up = np.array([1.0, 0.0])  # scaling rewards up raises every Q value
        assert feasible_cone(family, theta, [h], 1e-8, up)
        assert not feasible_cone(family, theta, [h], 1e-8, -up)
        step = 1e-4 * up
        q1 = policy_iteration(family.evaluate(theta + step))
        assert float(np.sum(q1)) - c >= -1e-10

    def test_non_regular_theta(self):
        # two identical actions everywhere: the gap is identically zero
        base = ring_mdp(6, 0.1, 0.9, 2.0, 1.5, (0.5, 0.5, 0.5))

        def evaluate(theta):
            from htmdp.mdp import FiniteMdp

            return FiniteMdp(p=base.p, r=(1.0 + theta[0]) * base.r, gamma=0.9)

        family = ParamFamily(evaluate=evaluate, theta_dim=1, metric=GroundMetric.ring(6))
        with pytest.raises(NonRegularPointError):
            jacobian_vector_product(family, np.zeros(1), np.ones(1))


class TestMixingAlongPath:
    def test_scale_override(self, length_path):
        override = MdpPath(
            evaluate=length_path.evaluate,
            metric=length_path.metric,
            gamma=length_path.gamma,
            family="length",
            derivative_mode="central_fd",
            scale_l_s=3.0,
        )
        assert path_mixing(override).l_s == 3.0
        assert path_mixing(length_path).l_s == path_mixing(length_path).c_mix

    def test_mixing_cached(self, curve_path):
        first = path_mixing(curve_path)
        assert path_mixing(curve_path) is first
