"""Post-hoc trajectory verification: distances, decay monitoring, sync times.

Everything here re-derives its quantities from the logged raw trajectory,
independently of how the simulator produced them, so the checks double as
cross-implementation oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certificate import Certificate, EnvelopeConstants, p_of_tau
from .ensemble import EnsembleState
from .errors import CertificateMismatch, InsufficientTransient
from .simulator import Trajectory, event_intervals


@dataclass(frozen=True)
class VerificationReport:
    lyap_jump_violations: int
    lyap_flow_violations: int
    envelope_ok: bool
    nu_sync_time_observed: float | None
    max_timer_interval_violations: int
    domain_bound_violations: int
    n_flow_intervals: int
    n_jumps: int


def distance_to_attractor(xi: EnsembleState) -> float:
    """Distance to the synchronized set: the norm of the error coordinates."""
    return float(np.linalg.norm(xi.z))


def lyapunov_values(traj: Trajectory, cert: Certificate) -> np.ndarray:
    """V along the trajectory via the dense P(tau) assembly.

    Deliberately a separate code path from the simulator's block-wise
    logging; the two must agree to rounding.
    """
    if cert.n != traj.n:
        raise CertificateMismatch(
            f"certificate for n={cert.n}, trajectory has n={traj.n}")
    out = np.empty(traj.n_samples)
    for i in range(traj.n_samples):
        p = p_of_tau(cert, traj.timer[i])
        out[i] = traj.z[i] @ p @ traj.z[i]
    return out


def timer_interval_violations(traj: Trajectory, slack: float = 1e-12) -> int:
    """Inter-broadcast gaps outside [lo/(rate+bound), hi/(rate-bound)]."""
    count = 0
    for p, gaps in enumerate(event_intervals(traj)):
        pp = traj.params[p]
        lo = pp.timer_lo / (pp.timer_rate + pp.noise_bound)
        hi = pp.timer_hi / (pp.timer_rate - pp.noise_bound)
        count += int(np.sum((gaps < lo - slack) | (gaps > hi + slack)))
    return count


def domain_bound_violations(traj: Trajectory, slack: float = 1e-9) -> int:
    """Hybrid-domain inequality violations over all logged records.

    Each agent jumps at least once per hi/(rate-bound) seconds and at most
    once per lo/(rate+bound) seconds, so over the whole ensemble

        (j/N - 1) * T_min / b_max  <=  t  <=  (j/N + 1) * T_max / b_min.

    (The one-per-agent slack term appears on both sides; dropping it on the
    right would be violated by any record before the first jump.)
    """
    t_min = min(p.timer_lo for p in traj.params)
    t_max = max(p.timer_hi for p in traj.params)
    b_min = min(p.timer_rate - p.noise_bound for p in traj.params)
    b_max = max(p.timer_rate + p.noise_bound for p in traj.params)
    n = traj.n
    jn = traj.j / n
    lower = (jn - 1.0) * t_min / b_max
    upper = (jn + 1.0) * t_max / b_min
    return int(np.sum((traj.t < lower - slack) | (traj.t > upper + slack)))


def _flow_segments(traj: Trajectory):
    """(first, last) record indices of each maximal constant-j stretch."""
    boundaries = np.flatnonzero(np.diff(traj.j) != 0)
    starts = np.concatenate([[0], boundaries + 1])
    ends = np.concatenate([boundaries, [traj.n_samples - 1]])
    return starts, ends


def lyapunov_monitor(traj: Trajectory, cert: Certificate,
                     gc: EnvelopeConstants, nu: float | None = None,
                     jump_slack: float = 1e-12) -> VerificationReport:
    """Check every certified inequality along one trajectory.

    Jumps must not increase V (within jump_slack). Over each flow interval
    [t_a, t_b] between consecutive jumps,
        V(t_b) <= V(t_a) exp(-mu_bar (t_b - t_a)) + p_norm_hi
                  * delta_max^2 / (mu_bar kappa) + 1e-9 (1 + V(t_a)).
    Every sample must sit inside the squared decay envelope
        dist^2 <= kappa1^2 dist0^2 exp(-2 alpha (t+j)) + kappa2^2.
    """
    v = lyapunov_values(traj, cert)
    if nu is None:
        nu = traj.config.certificate.nu

    jump_viol = 0
    n_jumps = 0
    dj = np.diff(traj.j)
    for i in np.flatnonzero(dj > 0):
        n_jumps += 1
        if v[i + 1] - v[i] > jump_slack:
            jump_viol += 1

    flow_viol = 0
    floor = gc.p_norm_hi * gc.delta_max ** 2 / (gc.mu_bar * gc.kappa)
    starts, ends = _flow_segments(traj)
    for a, b in zip(starts, ends):
        if b <= a:
            continue
        dt = traj.t[b] - traj.t[a]
        bound = v[a] * math.exp(-gc.mu_bar * dt) + floor + 1e-9 * (1.0 + v[a])
        if v[b] > bound:
            flow_viol += 1

    d0 = traj.dist[0]
    envelope = (gc.kappa1 ** 2 * d0 ** 2
                * np.exp(-2.0 * gc.alpha * (traj.t + traj.j))
                + gc.kappa2 ** 2)
    env_viol = int(np.sum(traj.dist ** 2 > envelope * (1.0 + 1e-9) + 1e-15))

    return VerificationReport(
        lyap_jump_violations=jump_viol,
        lyap_flow_violations=flow_viol,
        envelope_ok=(env_viol == 0),
        nu_sync_time_observed=nu_sync_detect(traj, nu),
        max_timer_interval_violations=timer_interval_violations(traj),
        domain_bound_violations=domain_bound_violations(traj),
        n_flow_intervals=len(starts),
        n_jumps=n_jumps,
    )


def nu_sync_detect(traj: Trajectory, nu: float):
    """Smallest logged t+j from which every edge gap stays within nu.

    None when the gap still exceeds nu at the final logged sample
    (within-horizon reading of "thereafter").
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    over = np.flatnonzero(traj.edge_gap > nu)
    if over.size == 0:
        return float(traj.t[0] + traj.j[0])
    last = int(over[-1])
    if last == traj.n_samples - 1:
        return None
    return float(traj.t[last + 1] + traj.j[last + 1])


def envelope_fit(traj: Trajectory, kappa2: float = 0.0,
                 floor: float = 1e-12) -> float:
    """Least-squares exponential rate of the transient decay.

    Fits log(dist) against t on samples with dist above max(10*kappa2,
    floor); the floor guards the late-time rounding plateau. Returns the
    slope (1/s); raises InsufficientTransient below 10 qualifying samples.
    """
    thresh = max(10.0 * kappa2, floor)
    mask = traj.dist > thresh
    if int(mask.sum()) < 10:
        raise InsufficientTransient(
            f"only {int(mask.sum())} samples above threshold {thresh:g}")
    t = traj.t[mask]
    y = np.log(traj.dist[mask])
    slope, _ = np.polyfit(t, y, 1)
    return float(slope)
