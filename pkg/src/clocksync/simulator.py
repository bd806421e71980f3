"""Deterministic hybrid integrator for the synchronized-clocks ensemble.

Flows are integrated on the raw state vector y = (hw, sw, ref, drift_est,
hw_est, timer), which is linear with piecewise-constant input: disturbances
are held for one step (zero-order hold) and steps are truncated so the
integrator lands exactly on timer zero-crossings (the timer rate is
constant within a step, so the crossing prediction is exact). Jumps are
then applied one agent at a time in ascending index order, each advancing
the jump counter. All randomness flows from per-purpose streams spawned
off the master seed, so a run is a pure function of its config.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentParams, TimerResetRule
from .certificate import Certificate, SystemTiming, p2_entries
from .config import SimConfig, validate_config, _per_agent
from .ensemble import build_flow_matrix
from .errors import ConfigError, NumericalBlowup, ZenoGuard
from .graphs import Graph, SpectralData, build_graph, spectral_basis

BLOWUP_LIMIT = 1e12
ZENO_LIMIT_FACTOR = 10  # tripwire: > 10*N jumps at one continuous time


@dataclass(frozen=True)
class DisturbanceModel:
    """Realization of the bounded per-agent disturbances.

    kind zero|constant|sinusoid|piecewise; amplitude is a per-agent bound
    respected by every sample. Piecewise draws are pure functions of
    (seed, window index), so samples are reproducible out of order.
    """

    kind: str
    amplitude: np.ndarray
    signs: np.ndarray | None = None
    freqs: np.ndarray | None = None
    phases: np.ndarray | None = None
    hold_time: float = 0.5
    seed: int = 0


def disturbance_sample(model: DisturbanceModel, p: int, t: float) -> float:
    """Disturbance of agent p (1-based) at time t; |d_p| <= amplitude_p."""
    return float(_disturbance_all(model, t)[p - 1])


def _disturbance_all(model: DisturbanceModel, t: float) -> np.ndarray:
    if model.kind == "zero":
        return np.zeros_like(model.amplitude)
    if model.kind == "constant":
        return model.amplitude * model.signs
    if model.kind == "sinusoid":
        return model.amplitude * np.sin(2.0 * math.pi * model.freqs * t + model.phases)
    if model.kind == "piecewise":
        window = int(t // model.hold_time)
        rng = np.random.default_rng(np.random.SeedSequence((model.seed, window)))
        return rng.uniform(-model.amplitude, model.amplitude)
    raise ValueError(f"unknown disturbance kind {model.kind!r}")


class _PiecewiseCache:
    """Buffered sampler: reuses one output array, caches piecewise windows."""

    def __init__(self, model: DisturbanceModel):
        self.model = model
        self.window = -1
        self.value = np.zeros_like(model.amplitude)
        self._buf = np.zeros_like(model.amplitude)
        self._two_pi_f = (2.0 * math.pi * model.freqs
                          if model.freqs is not None else None)

    def at(self, t: float) -> np.ndarray:
        m = self.model
        if m.kind == "sinusoid":
            buf = self._buf
            np.multiply(self._two_pi_f, t, out=buf)
            buf += m.phases
            np.sin(buf, out=buf)
            buf *= m.amplitude
            return buf
        if m.kind == "piecewise":
            w = int(t // m.hold_time)
            if w != self.window:
                self.window = w
                self.value = _disturbance_all(m, t)
            return self.value
        return _disturbance_all(m, t)


@dataclass
class Trajectory:
    """Logged hybrid arc: step samples, jump samples, and the event list."""

    config: SimConfig
    graph: Graph
    sd: SpectralData
    params: list                    # AgentParams per agent
    t: np.ndarray                   # (M,)
    j: np.ndarray                   # (M,) int
    hw_time: np.ndarray             # (M, N)
    sw_time: np.ndarray
    ref_time: np.ndarray
    drift_est: np.ndarray
    hw_time_est: np.ndarray
    timer: np.ndarray
    u: np.ndarray                   # (M, N) control input at each sample
    d: np.ndarray                   # (M, N) held disturbance at each sample
    z: np.ndarray                   # (M, 4N-1)
    lyap: np.ndarray                # (M,) V values; NaN without a certificate
    eta_norm: np.ndarray            # (M,)
    dist: np.ndarray                # (M,) distance to the synchronized set
    edge_gap: np.ndarray            # (M,) largest software-time gap over edges
    ev_t: np.ndarray                # (E,)
    ev_j: np.ndarray                # (E,) jump counter AFTER the event
    ev_agent: np.ndarray            # (E,) 1-based
    ev_broadcast: np.ndarray        # (E,)
    ev_reset: np.ndarray            # (E,)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class RunSummary:
    seed: int
    final_eta_norm: float
    final_dist: float
    max_event_interval: float
    min_event_interval: float
    n_jumps: int
    lyap_jump_violations: int | None = None
    lyap_flow_violations: int | None = None


def agent_params_from_config(cfg: SimConfig, drifts: np.ndarray) -> list:
    a = cfg.agents
    return [
        AgentParams(
            drift=float(drifts[i]),
            noise_bound=a.noise_bound,
            timer_rate=a.timer_rate,
            timer_lo=a.timer_lo,
            timer_hi=a.timer_hi,
            k_a=a.k_a,
            k_theta=a.k_theta,
            k_u=a.k_u,
            drift_target=a.drift_target,
        )
        for i in range(cfg.graph.n)
    ]


def build_graph_from_spec(spec) -> Graph:
    if spec.edges is not None:
        return build_graph(spec.n, edges=spec.edges)
    return build_graph(spec.n, kind=spec.kind, seed=spec.seed, p=spec.p)


def _draw_initial_state(cfg: SimConfig, rng: np.random.Generator):
    """Initial raw vectors plus the true drifts, honoring explicit overrides.

    Draw order is fixed (drift, hw, sw, timer) so explicit overrides of one
    field do not shift the streams of the others.
    """
    n = cfg.graph.n
    a, ini = cfg.agents, cfg.init
    if a.drift is not None:
        drift = _per_agent(a.drift, n, "[agents].drift")
    else:
        drift = rng.uniform(a.drift_range[0], a.drift_range[1], n)
    hw = (_per_agent(ini.hw_time, n, "[init].hw_time") if ini.hw_time is not None
          else rng.uniform(ini.hw_time_range[0], ini.hw_time_range[1], n))
    sw = (_per_agent(ini.sw_time, n, "[init].sw_time") if ini.sw_time is not None
          else rng.uniform(ini.sw_time_range[0], ini.sw_time_range[1], n))
    tau = (_per_agent(ini.timer, n, "[init].timer") if ini.timer is not None
           else rng.uniform(a.timer_lo, a.timer_hi, n))
    ref = (_per_agent(ini.ref_time, n, "[init].ref_time")
           if ini.ref_time is not None else sw.copy())
    hw_est = (_per_agent(ini.hw_time_est, n, "[init].hw_time_est")
              if ini.hw_time_est is not None else hw.copy())
    drift_est = (_per_agent(ini.drift_est, n, "[init].drift_est")
                 if ini.drift_est is not None else np.full(n, a.drift_target))
    if np.any(drift <= a.noise_bound):
        raise ConfigError("[agents].drift_range: drew a drift <= noise_bound")
    return drift, np.concatenate([hw, sw, ref, drift_est, hw_est, tau])


def _build_disturbance(cfg: SimConfig, rng: np.random.Generator,
                       seed: int) -> DisturbanceModel:
    n = cfg.graph.n
    d = cfg.disturbance
    amp = (np.full(n, cfg.agents.noise_bound) if d.amplitude is None
           else _per_agent(d.amplitude, n, "[disturbance].amplitude"))
    if d.model == "zero":
        return DisturbanceModel(kind="zero", amplitude=np.zeros(n))
    if d.model == "constant":
        signs = (np.ones(n) if d.signs is None
                 else np.sign(_per_agent(d.signs, n, "[disturbance].signs")))
        return DisturbanceModel(kind="constant", amplitude=amp, signs=signs)
    if d.model == "sinusoid":
        freqs = (_per_agent(d.freqs, n, "[disturbance].freqs") if d.freqs is not None
                 else rng.uniform(d.freq_range[0], d.freq_range[1], n))
        phases = (_per_agent(d.phases, n, "[disturbance].phases") if d.phases is not None
                  else rng.uniform(0.0, 2.0 * math.pi, n))
        return DisturbanceModel(kind="sinusoid", amplitude=amp, freqs=freqs,
                                phases=phases)
    return DisturbanceModel(kind="piecewise", amplitude=amp,
                            hold_time=d.hold_time, seed=seed)


def _linear_system(cfg: SimConfig, g: Graph, drift: np.ndarray):
    """Raw-state flow y' = A y + c_base + inject(d) on blocks
    (hw, sw, ref, drift_est, hw_est, timer)."""
    n = g.n
    a = cfg.agents
    lap = g.laplacian()
    eye = np.eye(n)
    A = np.zeros((6 * n, 6 * n))
    HW, SW, RF, DE, HE, TM = (slice(k * n, (k + 1) * n) for k in range(6))
    A[SW, RF] = -a.k_u * lap
    A[SW, DE] = -eye
    A[DE, HW] = a.k_a * eye
    A[DE, HE] = -a.k_a * eye
    A[HE, HW] = a.k_theta * eye
    A[HE, DE] = eye
    A[HE, HE] = -a.k_theta * eye
    c_base = np.concatenate([
        drift,
        drift + a.drift_target,
        np.full(n, a.drift_target),
        np.zeros(n),
        np.zeros(n),
        np.full(n, -a.timer_rate),
    ])
    return A, c_base


def _rk4_maps(A: np.ndarray, dt: float):
    """Affine maps of one classical 4-stage step on y' = A y + c:
    y+ = PHI y + PSI c (the scheme's quartic/cubic Taylor polynomials)."""
    eye = np.eye(A.shape[0])
    A2 = A @ A
    A3 = A2 @ A
    A4 = A3 @ A
    phi = eye + dt * A + (dt ** 2 / 2.0) * A2 + (dt ** 3 / 6.0) * A3 \
        + (dt ** 4 / 24.0) * A4
    psi = dt * eye + (dt ** 2 / 2.0) * A + (dt ** 3 / 6.0) * A2 \
        + (dt ** 4 / 24.0) * A3
    return phi, psi


def simulate(cfg: SimConfig, cert: Certificate | None = None) -> Trajectory:
    """Run one hybrid arc to t_end. Deterministic for a fixed master seed."""
    validate_config(cfg)
    g = build_graph_from_spec(cfg.graph)
    sd = spectral_basis(g)
    n = g.n
    run = cfg.sim

    master = np.random.SeedSequence(run.seed)
    ss_init, ss_dist, ss_reset = master.spawn(3)
    init_rng = np.random.default_rng(ss_init)
    drift, y = _draw_initial_state(cfg, init_rng)
    params = agent_params_from_config(cfg, drift)
    model = _build_disturbance(cfg, np.random.default_rng(ss_dist),
                               seed=run.seed)
    sampler = _PiecewiseCache(model)
    reset_rngs = [np.random.default_rng(s) for s in ss_reset.spawn(n)]
    reset_rule = TimerResetRule(kind=run.reset_rule, fixed_value=run.fixed_reset)

    A, c_base = _linear_system(cfg, g, drift)
    phi_h, psi_h = _rk4_maps(A, run.h)
    c = c_base.copy()
    rate = cfg.agents.timer_rate
    tol = run.event_tol
    t_end = run.t_end
    h = run.h
    tau_view = y[5 * n:]
    y_next = np.empty_like(y)
    kbuf = np.empty_like(y)
    dbuf = np.empty(n)

    log_t, log_j, log_y, log_d = [0.0], [0], [y.copy()], [sampler.at(0.0).copy()]
    ev_t, ev_j, ev_agent, ev_broadcast, ev_reset = [], [], [], [], []

    t = 0.0
    j = 0
    since_log = 0
    since_blowup_check = 0
    jumps_at_t = 0
    last_jump_t = -1.0

    def log(d_now):
        log_t.append(t)
        log_j.append(j)
        log_y.append(y.copy())
        log_d.append(d_now.copy())

    while t < t_end - 1e-12:
        d_now = sampler.at(t)
        np.add(c_base[:n], d_now, out=c[:n])
        np.add(c_base[n:2 * n], d_now, out=c[n:2 * n])
        np.add(c_base[5 * n:], d_now, out=c[5 * n:])
        # Timer rate is constant within the step: crossing prediction exact.
        np.subtract(rate, d_now, out=dbuf)
        np.divide(tau_view, dbuf, out=dbuf)
        dt_event = dbuf.min()
        dt = min(h, t_end - t, dt_event)
        if dt == h:
            np.dot(phi_h, y, out=y_next)
            np.dot(psi_h, c, out=kbuf)
            y_next += kbuf
            y, y_next = y_next, y
        else:
            k1 = A @ y + c
            k2 = A @ (y + (0.5 * dt) * k1) + c
            k3 = A @ (y + (0.5 * dt) * k2) + c
            k4 = A @ (y + dt * k3) + c
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tau_view = y[5 * n:]
        t += dt
        since_blowup_check += 1
        if since_blowup_check >= 64:
            since_blowup_check = 0
            if np.max(np.abs(y)) > BLOWUP_LIMIT:
                raise NumericalBlowup(
                    f"state magnitude exceeded {BLOWUP_LIMIT:g} at t={t}")

        # Landed on a predicted crossing iff the event bound was binding.
        if dt == dt_event:
            expired = np.flatnonzero(tau_view <= tol)
            np.maximum(tau_view, 0.0, out=tau_view)  # clamp landing roundoff
            log(d_now)  # pre-jump record
            if t == last_jump_t:
                jumps_at_t += expired.size
            else:
                jumps_at_t, last_jump_t = expired.size, t
            if jumps_at_t > ZENO_LIMIT_FACTOR * n:
                raise ZenoGuard(f"{jumps_at_t} jumps at t={t}")
            for idx in expired:  # ascending agent order
                y[2 * n + idx] = y[n + idx]  # reference snaps to live sw clock
                tau_view[idx] = reset_rule.draw(params[idx], reset_rngs[idx])
                j += 1
                ev_t.append(t)
                ev_j.append(j)
                ev_agent.append(int(idx) + 1)
                ev_broadcast.append(float(y[n + idx]))
                ev_reset.append(float(tau_view[idx]))
                log(d_now)  # post-jump record
            since_log = 0
        else:
            since_log += 1
            if since_log >= run.log_every:
                log(d_now)
                since_log = 0

    if np.max(np.abs(y)) > BLOWUP_LIMIT:
        raise NumericalBlowup(f"state magnitude exceeded {BLOWUP_LIMIT:g} at t={t}")
    if since_log > 0 or not math.isclose(log_t[-1], t):
        log(sampler.at(t))

    return _assemble_trajectory(cfg, g, sd, params, drift, cert,
                                log_t, log_j, log_y, log_d,
                                ev_t, ev_j, ev_agent, ev_broadcast, ev_reset)


def _assemble_trajectory(cfg, g, sd, params, drift, cert,
                         log_t, log_j, log_y, log_d,
                         ev_t, ev_j, ev_agent, ev_broadcast, ev_reset) -> Trajectory:
    """Vectorized post-pass: derive controls, error coordinates, norms."""
    n = g.n
    Y = np.vstack(log_y)
    D = np.vstack(log_d)
    hw, sw, ref = Y[:, :n], Y[:, n:2 * n], Y[:, 2 * n:3 * n]
    de, he, tm = Y[:, 3 * n:4 * n], Y[:, 4 * n:5 * n], Y[:, 5 * n:]
    a = cfg.agents
    lap = sd.laplacian
    u = a.drift_target - de - a.k_u * (ref @ lap)  # lap symmetric
    disagreement = sw @ sd.V
    z = np.concatenate([disagreement, sw - ref, drift[None, :] - de, hw - he],
                       axis=1)
    eta_norm = np.sqrt(np.einsum("ij,ij->i", disagreement, disagreement))
    dist = np.sqrt(np.einsum("ij,ij->i", z, z))
    ea = g.edge_array()
    edge_gap = np.abs(sw[:, ea[:, 0] - 1] - sw[:, ea[:, 1] - 1]).max(axis=1)
    if cert is not None:
        # Block-wise quadratic form (the monitor recomputes via dense P(tau)).
        e1 = disagreement
        lyap = (np.einsum("ij,ij->i", e1 @ cert.P1, e1)
                + np.sum(p2_entries(cert, None, tm) * (sw - ref) ** 2, axis=1)
                + np.einsum("ij,ij->i",
                            np.hstack([drift[None, :] - de, hw - he]) @ cert.P3,
                            np.hstack([drift[None, :] - de, hw - he])))
    else:
        lyap = np.full(Y.shape[0], np.nan)
    return Trajectory(
        config=cfg, graph=g, sd=sd, params=params,
        t=np.asarray(log_t), j=np.asarray(log_j, dtype=np.int64),
        hw_time=hw, sw_time=sw, ref_time=ref, drift_est=de, hw_time_est=he,
        timer=tm, u=u, d=D, z=z, lyap=lyap, eta_norm=eta_norm, dist=dist,
        edge_gap=edge_gap,
        ev_t=np.asarray(ev_t), ev_j=np.asarray(ev_j, dtype=np.int64),
        ev_agent=np.asarray(ev_agent, dtype=np.int64),
        ev_broadcast=np.asarray(ev_broadcast), ev_reset=np.asarray(ev_reset),
    )


def event_intervals(traj: Trajectory) -> list:
    """Per-agent arrays of gaps between consecutive broadcast times."""
    out = []
    for p in range(1, traj.n + 1):
        times = traj.ev_t[traj.ev_agent == p]
        out.append(np.diff(times) if times.size > 1 else np.array([]))
    return out


def run_batch(cfg: SimConfig, n_runs: int, seeds=None,
              cert: Certificate | None = None, monitor=None) -> list:
    """Independent seeded runs -> summaries, in run-index order.

    monitor, when given, is called as monitor(traj) and must return an
    object with lyap_jump_violations / lyap_flow_violations counts.
    """
    if seeds is None:
        seeds = [cfg.sim.seed + i for i in range(n_runs)]
    if len(seeds) != n_runs:
        raise ConfigError(f"expected {n_runs} seeds, got {len(seeds)}")
    out = []
    for i, seed in enumerate(seeds):
        try:
            traj = simulate(cfg.with_seed(int(seed)), cert=cert)
            intervals = np.concatenate(
                [iv for iv in event_intervals(traj) if iv.size] or [np.array([])])
            jump_v = flow_v = None
            if monitor is not None:
                rep = monitor(traj)
                jump_v = rep.lyap_jump_violations
                flow_v = rep.lyap_flow_violations
            out.append(RunSummary(
                seed=int(seed),
                final_eta_norm=float(traj.eta_norm[-1]),
                final_dist=float(traj.dist[-1]),
                max_event_interval=float(intervals.max()) if intervals.size else math.nan,
                min_event_interval=float(intervals.min()) if intervals.size else math.nan,
                n_jumps=int(traj.j[-1]),
                lyap_jump_violations=jump_v,
                lyap_flow_violations=flow_v,
            ))
        except Exception as exc:
            raise type(exc)(f"run {i} (seed {seed}): {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# CSV export (17 significant digits so reruns are byte-identical)

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Long format: one row per agent per sample."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", "agent", "theta", "vartheta", "vartheta_hat",
                    "a_hat", "theta_hat", "tau", "u", "d"])
        for i in range(traj.n_samples):
            t_s, j_s = _fmt(traj.t[i]), str(int(traj.j[i]))
            for p in range(traj.n):
                w.writerow([t_s, j_s, str(p + 1),
                            _fmt(traj.hw_time[i, p]), _fmt(traj.sw_time[i, p]),
                            _fmt(traj.ref_time[i, p]), _fmt(traj.drift_est[i, p]),
                            _fmt(traj.hw_time_est[i, p]), _fmt(traj.timer[i, p]),
                            _fmt(traj.u[i, p]), _fmt(traj.d[i, p])])


def write_metrics_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", "eta_norm", "dist_A", "uniform_norm", "V"])
        for i in range(traj.n_samples):
            w.writerow([_fmt(traj.t[i]), str(int(traj.j[i])),
                        _fmt(traj.eta_norm[i]), _fmt(traj.dist[i]),
                        _fmt(traj.edge_gap[i]), _fmt(traj.lyap[i])])


def write_events_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", "agent", "broadcast_value", "tau_reset"])
        for i in range(traj.ev_t.shape[0]):
            w.writerow([_fmt(traj.ev_t[i]), str(int(traj.ev_j[i])),
                        str(int(traj.ev_agent[i])), _fmt(traj.ev_broadcast[i]),
                        _fmt(traj.ev_reset[i])])
