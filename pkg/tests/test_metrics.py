import math
from dataclasses import replace

import numpy as np
import pytest

from clocksync.config import DisturbanceSpec, benchmark_config
from clocksync.ensemble import EnsembleState
from clocksync.errors import CertificateMismatch, InsufficientTransient
from clocksync.metrics import (
    distance_to_attractor,
    domain_bound_violations,
    envelope_fit,
    lyapunov_monitor,
    lyapunov_values,
    nu_sync_detect,
    timer_interval_violations,
)
from clocksync.simulator import simulate

from conftest import bench_params


def make_xi(z_parts, timers):
    dis, sw, de, hw = z_parts
    return EnsembleState(disagreement=np.asarray(dis, dtype=float),
                         sw_err=np.asarray(sw, dtype=float),
                         drift_err=np.asarray(de, dtype=float),
                         hw_err=np.asarray(hw, dtype=float),
                         timers=np.asarray(timers, dtype=float))


def with_dist(traj, dist):
    """Clone a trajectory with a synthetic distance series (fitting tests)."""
    return replace(traj, dist=np.asarray(dist, dtype=float))


@pytest.fixture(scope="module")
def short_run(bench12):
    cfg = bench12["cfg"]
    cfg = replace(cfg, sim=replace(cfg.sim, t_end=8.0, seed=7))
    return simulate(cfg, cert=bench12["cert"])


class TestDistance:
    def test_zero_on_attractor(self):
        xi = make_xi(([0.0], [0, 0], [0, 0], [0, 0]), [0.03, 0.05])
        assert distance_to_attractor(xi) == 0.0

    def test_single_entry(self):
        xi = make_xi(([0.0], [3.0, 0], [0, 0], [0, 0]), [0.03, 0.05])
        assert distance_to_attractor(xi) == 3.0

    def test_matches_brute_force_over_timer_grid(self):
        # distance only counts the error coordinates: the timer block can
        # always be matched inside its box, so a brute-force minimum over a
        # timer grid containing the state's own timers equals ||z||
        rng = np.random.default_rng(0)
        timer_hi = np.full(3, 0.1)
        grid = np.linspace(0.0, 0.1, 21)  # includes 0.05 etc.
        for _ in range(20):
            z = rng.normal(0, 1, 11)
            timers = grid[rng.integers(0, 21, size=3)]
            xi = make_xi((z[:2], z[2:5], z[5:8], z[8:11]), timers)
            per_dim = [np.min((timers[k] - grid) ** 2) for k in range(3)]
            brute = math.sqrt(float(z @ z) + sum(per_dim))
            assert abs(distance_to_attractor(xi) - brute) <= 1e-9


class TestLyapunovMonitor:
    def test_logged_v_matches_dense_recomputation(self, bench12, short_run):
        v = lyapunov_values(short_run, bench12["cert"])
        rel = np.abs(v - short_run.lyap) / (1.0 + np.abs(v))
        assert rel.max() <= 1e-12

    def test_clean_run_has_zero_violations(self, bench12, short_run):
        rep = lyapunov_monitor(short_run, bench12["cert"], bench12["gc"])
        assert rep.lyap_jump_violations == 0
        assert rep.lyap_flow_violations == 0
        assert rep.envelope_ok
        assert rep.max_timer_interval_violations == 0
        assert rep.domain_bound_violations == 0
        assert rep.n_jumps == int(short_run.j[-1])

    def test_decoupled_gains_violate_flow_decay(self, bench12):
        # negative control: with the coupling gain effectively removed the
        # disagreement does not decay, so the certified per-interval decay
        # from the benchmark certificate must be violated
        cfg = bench12["cfg"]
        cfg = replace(cfg, agents=replace(cfg.agents, k_u=1e-9),
                      sim=replace(cfg.sim, t_end=20.0, seed=3),
                      disturbance=DisturbanceSpec(model="zero"))
        traj = simulate(cfg)
        rep = lyapunov_monitor(traj, bench12["cert"], bench12["gc"])
        assert rep.lyap_flow_violations > 0

    def test_dimension_mismatch(self, bench12):
        cfg = replace(benchmark_config(1, t_end=0.5),
                      graph=replace(benchmark_config().graph, n=5, kind="ring"))
        traj = simulate(cfg)
        with pytest.raises(CertificateMismatch):
            lyapunov_monitor(traj, bench12["cert"], bench12["gc"])


class TestDomainAndTimerChecks:
    def test_zero_violations_on_simulated_run(self, short_run):
        assert timer_interval_violations(short_run) == 0
        assert domain_bound_violations(short_run) == 0

    def test_domain_bound_catches_corrupted_record(self, short_run):
        bad = replace(short_run, j=short_run.j + 10_000)
        assert domain_bound_violations(bad) > 0


class TestNuSyncDetect:
    def test_agreement_throughout_returns_zero(self, bench12, short_run):
        assert nu_sync_detect(short_run, nu=1e9) == 0.0

    def test_unachievable_tolerance_returns_none(self, short_run):
        floor = short_run.edge_gap[-1]
        assert nu_sync_detect(short_run, nu=max(floor / 10, 1e-300)) is None

    def test_threshold_crossing_time(self, short_run):
        nu = 0.06
        t_sync = nu_sync_detect(short_run, nu)
        assert t_sync is not None
        hybrid = short_run.t + short_run.j
        after = hybrid >= t_sync
        assert np.all(short_run.edge_gap[after] <= nu)
        before = int(np.flatnonzero(hybrid < t_sync)[-1])
        assert short_run.edge_gap[before] > nu

    def test_rejects_nonpositive_nu(self, short_run):
        with pytest.raises(ValueError):
            nu_sync_detect(short_run, 0.0)


class TestEnvelopeFit:
    def test_pure_exponential_recovered(self, short_run):
        t = short_run.t
        traj = with_dist(short_run, np.exp(-2.0 * t))
        assert envelope_fit(traj) == pytest.approx(-2.0, abs=1e-6)

    def test_constant_input(self, short_run):
        traj = with_dist(short_run, np.full(short_run.n_samples, 0.5))
        assert envelope_fit(traj) == pytest.approx(0.0, abs=1e-9)

    def test_insufficient_transient(self, short_run):
        # everything below the floor except a handful of samples
        d = np.full(short_run.n_samples, 1e-15)
        d[:5] = 1.0
        with pytest.raises(InsufficientTransient):
            envelope_fit(with_dist(short_run, d))

    def test_threshold_masks_noise_floor(self, short_run):
        t = short_run.t
        clean = np.exp(-1.5 * t)
        noisy = np.maximum(clean, 1e-6)
        slope = envelope_fit(with_dist(short_run, noisy), kappa2=1e-5)
        assert slope == pytest.approx(-1.5, rel=1e-3)
