"""Closed-loop engine tests: accounting, determinism, detectors, metrics, ingestion."""

import numpy as np
import pytest

from rtplab.attacks import AttackSpec
from rtplab.controller import ControllerConfig
from rtplab.errors import IngestionError
from rtplab.models import (
    BaselineTrace,
    CeoDemand,
    ConsumerPopulation,
    LinearSupply,
    calibrate_demand_scale,
)
from rtplab.sim import (
    SimConfig,
    convergence_probability,
    default_feeder_rating,
    feeder_events,
    load_baseline_trace,
    mean_marginal_ratio,
    run,
    settled_at_end,
    stabilized_probability,
    trend_ratio,
    volatility,
)
from rtplab.stability import boundary_curve

SUP = LinearSupply(p=152.0, q=4503.0)
DEM = calibrate_demand_scale(SUP, 2000.0, 20.0, -0.8)


def base_config(**kw):
    defaults = dict(
        supplier=SUP,
        demand=DEM,
        controller=ControllerConfig(eta=0.5, mode="adaptive", lambda_min=1.0, lambda_max=200.0),
        attack=AttackSpec(kind="none"),
        baseline=2000.0,
        lambda0=21.0,
        horizon=50,
        lambda_star=20.0,
    )
    defaults.update(kw)
    return SimConfig(**defaults)


class TestRun:
    def test_two_period_convergence(self):
        trace = run(base_config(horizon=10))
        assert abs(trace.lam[2] - 20.0) < 1e-3
        assert abs(trace.lam[3] - 20.0) < 1e-6
        assert abs(trace.error[-1]) < 1e-9
        assert trace.converged_at is not None

    def test_determinism(self):
        cfg = base_config(
            demand=None, horizon=40,
            attack=AttackSpec(kind="delay", rho=0.6, tau=3, start_k=5),
        )
        rng = np.random.default_rng(0)
        pop_scale = rng.uniform(1, 10, 200)
        pop_eps = rng.uniform(-0.9, -0.1, 200)
        pop = ConsumerPopulation(scale=pop_scale, elasticity=pop_eps)
        cfg_a = base_config(demand=pop, horizon=40, seed=5,
                            attack=AttackSpec(kind="delay", rho=0.6, tau=3, start_k=5))
        cfg_b = base_config(demand=pop, horizon=40, seed=5,
                            attack=AttackSpec(kind="delay", rho=0.6, tau=3, start_k=5))
        ta, tb = run(cfg_a), run(cfg_b)
        assert np.array_equal(ta.lam, tb.lam)
        assert np.array_equal(ta.error, tb.error)
        assert np.array_equal(ta.demand_compromised, tb.demand_compromised)

    def test_accounting_identity(self):
        trace = run(base_config(
            horizon=60, attack=AttackSpec(kind="scaling", rho=0.7, gamma=0.6, start_k=10)
        ))
        total = trace.baseline + trace.demand_honest + trace.demand_compromised
        assert np.array_equal(total, trace.demand_total)
        assert np.array_equal(trace.error, trace.supply_scheduled - trace.demand_total)

    def test_price_bounds_hold(self):
        cfg = base_config(
            controller=ControllerConfig(eta=0.9, mode="adaptive", lambda_min=5.0, lambda_max=40.0),
            attack=AttackSpec(kind="scaling", rho=1.0, gamma=0.1, start_k=0),
            horizon=200, lambda0=21.0,
        )
        trace = run(cfg)
        assert np.all(trace.lam >= 5.0)
        assert np.all(trace.lam <= 40.0)

    def test_matches_explicit_recursion_in_fixed_mode(self):
        cfg = base_config(
            controller=ControllerConfig(
                eta=0.3, mode="fixed", lambda_o=20.0, lambda_min=1.0, lambda_max=200.0
            ),
            horizon=40,
        )
        trace = run(cfg)
        denom = SUP.slope(20.0) - DEM.slope(20.0)
        lam = 21.0
        for k in range(len(trace) - 1):
            e = SUP.quantity(lam) - (2000.0 + DEM.quantity(lam))
            assert trace.lam[k] == pytest.approx(lam, abs=1e-9)
            assert trace.error[k] == pytest.approx(e, abs=1e-9)
            lam = lam - 2 * 0.3 * e / denom

    def test_population_and_aggregate_agree_for_homogeneous(self):
        n = 50
        pop = ConsumerPopulation(
            scale=np.full(n, DEM.scale / n), elasticity=np.full(n, -0.8)
        )
        spec = AttackSpec(kind="scaling", rho=0.5, gamma=0.6, start_k=8)
        ta = run(base_config(horizon=40, attack=spec))
        tp = run(base_config(demand=pop, horizon=40, attack=spec, seed=3))
        # rho = 0.5 of identical consumers = the aggregate 0.5 share exactly
        assert np.allclose(ta.lam, tp.lam, rtol=1e-10)
        assert np.allclose(ta.demand_total, tp.demand_total, rtol=1e-10)

    def test_auto_attack_start_after_convergence(self):
        trace = run(base_config(
            horizon=80, attack=AttackSpec(kind="delay", rho=1.0, tau=2, start_k=None)
        ))
        assert trace.converged_at is not None
        assert trace.attack_start == trace.converged_at + 1

    def test_domain_error_carries_period_index(self):
        # price pinned at a bound below the supply intercept price won't occur;
        # force a failure via an attacked price of zero through gamma tiny and
        # lambda_min below machine resolution is not possible, so check the
        # config guard instead
        with pytest.raises(ValueError):
            base_config(horizon=0)
        with pytest.raises(ValueError):
            base_config(lambda0=0.5)  # outside [lambda_min, lambda_max]

    def test_trace_shorter_than_horizon_rejected(self):
        trace = BaselineTrace(values=np.full(10, 2000.0), period_hours=0.5)
        with pytest.raises(ValueError):
            base_config(baseline=trace, horizon=11)


class TestVolatility:
    def test_converged_run_is_quiet(self):
        trace = run(base_config(horizon=60))
        assert volatility(trace) < 1e-3 * SUP.quantity(20.0)

    def test_window_starts_at_attack(self):
        trace = run(base_config(
            horizon=120, attack=AttackSpec(kind="scaling", rho=1.0, gamma=0.5, start_k=30)
        ))
        assert volatility(trace) == pytest.approx(float(np.std(trace.error[30:])), rel=1e-12)

    def test_empty_window_errors(self):
        trace = run(base_config(horizon=20))
        with pytest.raises(ValueError):
            volatility(trace, attack_start=20)

    def test_scaling_severity_monotone(self):
        # volatility grows as the price cut deepens and as more meters are hit
        def sigma(rho, gamma):
            spec = AttackSpec(kind="scaling", rho=rho, gamma=gamma, start_k=None)
            return volatility(run(base_config(horizon=400, attack=spec)))

        sig_gamma = [sigma(1.0, g) for g in (0.2, 0.4, 0.6, 0.8, 1.0)]
        assert all(a >= b - 1e-9 for a, b in zip(sig_gamma, sig_gamma[1:]))
        sig_rho = [sigma(r, 0.4) for r in (0.25, 0.5, 0.75, 1.0)]
        assert all(b >= a - 1e-9 for a, b in zip(sig_rho, sig_rho[1:]))

    def test_delay_low_compromise_stays_quiet(self):
        # launch late enough that the stale buffer holds converged prices
        for rho in (0.25, 0.4, 0.5):
            for tau in (1, 8, 24):
                spec = AttackSpec(kind="delay", rho=rho, tau=tau, start_k=60)
                trace = run(base_config(horizon=300, attack=spec))
                assert volatility(trace) < 1e-3 * SUP.quantity(20.0)


class TestAnalyticalAgreement:
    def test_convergence_iff_inside_delay_boundary(self):
        # straddle the tau=3 boundary in eta, excluding a 2% band around it
        h20 = 1.4586842105263162
        eta_bar = boundary_curve("delay", 1.0, [h20], tau=3).samples[0][1]
        for frac in (0.85, 0.92, 0.98, 1.02, 1.08, 1.15):
            eta = eta_bar * frac
            cfg = base_config(
                controller=ControllerConfig(eta=eta, mode="adaptive",
                                            lambda_min=1.0, lambda_max=200.0),
                attack=AttackSpec(kind="delay", rho=1.0, tau=3, start_k=None),
                horizon=600,
            )
            trace = run(cfg)
            mean_h = mean_marginal_ratio(trace)
            predicted_stable = eta < boundary_curve(
                "delay", 1.0, [mean_h], tau=3
            ).samples[0][1]
            observed_stable = trend_ratio(trace) < 1.0
            assert observed_stable == predicted_stable, f"frac={frac}"


class TestFeederEvents:
    def make_trace(self, demand):
        cfg = base_config(horizon=len(demand))
        trace = run(cfg)
        trace.demand_total = np.asarray(demand, dtype=float)
        return trace

    def test_overload_percentage(self):
        trace = self.make_trace([10.0] * 48)
        days = feeder_events(trace, rating=8.0, periods_per_day=48)
        assert days == [(0, 1.0, pytest.approx(25.0, abs=1e-12))]

    def test_frequency_ratio(self):
        demand = [10.0] * 12 + [5.0] * 36
        days = feeder_events(self.make_trace(demand), rating=8.0, periods_per_day=48)
        assert days[0][1] == pytest.approx(12 / 48, abs=1e-15)

    def test_benign_run_with_headroom_rating_has_no_events(self):
        trace = run(base_config(horizon=96))
        rating = default_feeder_rating(trace)
        assert rating == pytest.approx(1.25 * trace.demand_total.max(), rel=1e-12)
        for _, freq, over in feeder_events(trace, rating, periods_per_day=48):
            assert freq == 0.0 and over == 0.0

    def test_rating_validation(self):
        trace = run(base_config(horizon=10))
        with pytest.raises(ValueError):
            feeder_events(trace, rating=0.0)


class TestConvergenceProbability:
    CFG = ControllerConfig(mode="direct", lambda_min=1.0, lambda_max=100.0)

    def test_heavy_baseline_low_price_diverges(self):
        prob = convergence_probability(
            SUP, 4000.0, -0.8, 10.0, controller=self.CFG, n_initial=51, max_iter=300
        )
        assert prob <= 0.05

    def test_zero_baseline_sharp_cells(self):
        lo = convergence_probability(SUP, 0.0, -0.8, 10.0, controller=self.CFG,
                                     n_initial=51, max_iter=300)
        hi = convergence_probability(SUP, 0.0, -0.2, 50.0, controller=self.CFG,
                                     n_initial=51, max_iter=300)
        assert lo <= 0.05
        assert hi >= 0.95

    def test_stabilized_law_always_converges(self):
        for lam_star, eps in ((10.0, -0.8), (50.0, -0.4), (90.0, -0.6)):
            prob = stabilized_probability(
                SUP, 0.0, eps, lam_star, eta=0.5, controller=self.CFG,
                n_initial=21, max_iter=200,
            )
            assert prob == 1.0

    def test_calibration_failure_propagates(self):
        from rtplab.errors import CalibrationError

        with pytest.raises(CalibrationError):
            convergence_probability(SUP, 5000.0, -0.8, 1.0, controller=self.CFG)


def write_trace(path, values, start="2013-03-01T00:00", step_minutes=30):
    import datetime as dt

    t0 = dt.datetime.fromisoformat(start)
    lines = ["timestamp,value"]
    for k, v in enumerate(values):
        lines.append(f"{(t0 + dt.timedelta(minutes=step_minutes * k)).isoformat()},{v}")
    path.write_text("\n".join(lines) + "\n")


class TestLoadBaselineTrace:
    def test_constant_scaling(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace(path, [1.0] * 8)
        trace = load_baseline_trace(path, per_house_scale=0.4, house_count=1405)
        assert np.allclose(trace.values, 562.0)
        assert trace.period_hours == pytest.approx(0.5)

    def test_per_house_range_round_trip(self, tmp_path):
        path = tmp_path / "t.csv"
        vals = 0.276 + (0.488 - 0.276) * 0.5 * (1 - np.cos(np.linspace(0, 2 * np.pi, 49)))
        write_trace(path, vals)
        trace = load_baseline_trace(path, per_house_scale=1.0, house_count=1405)
        lo, hi = trace.per_house_range
        assert lo == pytest.approx(0.276, abs=1e-12)
        assert hi == pytest.approx(0.488, abs=1e-12)

    def test_gap_detected_with_row_number(self, tmp_path):
        path = tmp_path / "t.csv"
        text = (
            "timestamp,value\n"
            "2013-03-01T00:00,1.0\n"
            "2013-03-01T00:30,1.0\n"
            "2013-03-01T01:30,1.0\n"  # one period missing
        )
        path.write_text(text)
        with pytest.raises(IngestionError) as exc:
            load_baseline_trace(path)
        assert exc.value.row == 4

    def test_malformed_value(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("timestamp,value\n2013-03-01T00:00,oops\n2013-03-01T00:30,1\n")
        with pytest.raises(IngestionError) as exc:
            load_baseline_trace(path)
        assert exc.value.row == 2

    def test_period_mismatch(self, tmp_path):
        path = tmp_path / "t.csv"
        write_trace(path, [1.0, 1.0, 1.0], step_minutes=60)
        with pytest.raises(IngestionError):
            load_baseline_trace(path, expected_period_hours=0.5)

    def test_header_required(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time,v\n2013-03-01T00:00,1\n")
        with pytest.raises(IngestionError):
            load_baseline_trace(path)


class TestRunClassifiers:
    def test_settled_flag(self):
        assert settled_at_end(run(base_config(horizon=40)))
        cfg = base_config(
            horizon=120,
            controller=ControllerConfig(eta=0.8, mode="adaptive",
                                        lambda_min=1.0, lambda_max=200.0),
            attack=AttackSpec(kind="scaling", rho=1.0, gamma=0.57, start_k=0),
        )
        assert not settled_at_end(run(cfg))

    def test_trend_ratio_needs_window(self):
        trace = run(base_config(horizon=10))
        with pytest.raises(ValueError):
            trend_ratio(trace, start=8)
