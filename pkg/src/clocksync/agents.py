"""Single-agent view: clocks, timer, drift estimator, controller, broadcasts.

Each agent runs a free hardware clock, a steerable software clock, a
countdown timer that triggers broadcasts, a shared-rate reference copy of
its own software time (reset to the live value at each broadcast), and a
two-state observer that reconstructs the unknown hardware drift. The
ensemble/simulator modules drive many of these in stacked form; this module
is the per-agent ground truth they are cross-checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DisturbanceOutOfBound,
    MissingNeighborSample,
    NotExpired,
)


@dataclass(frozen=True)
class AgentParams:
    """Physical and tuning constants of one agent.

    drift: true hardware clock rate (unknown to the controller).
    noise_bound: disturbance magnitude bound, 0 <= noise_bound < drift.
    timer_rate: nominal countdown rate, > noise_bound.
    timer_lo/timer_hi: reset window 0 < timer_lo <= timer_hi.
    k_a, k_theta: estimator gains; k_u: coupling gain; all > 0.
    drift_target: common desired software clock rate, > 0.
    """

    drift: float
    noise_bound: float
    timer_rate: float
    timer_lo: float
    timer_hi: float
    k_a: float
    k_theta: float
    k_u: float
    drift_target: float

    def __post_init__(self):
        if not 0.0 <= self.noise_bound < self.drift:
            raise ValueError(
                f"need 0 <= noise_bound < drift, got {self.noise_bound}, {self.drift}")
        if self.timer_rate <= self.noise_bound:
            raise ValueError("timer_rate must exceed noise_bound")
        if not 0.0 < self.timer_lo <= self.timer_hi:
            raise ValueError("need 0 < timer_lo <= timer_hi")
        # k_u = 0 is a valid (decoupled) configuration; the rest must be > 0.
        if min(self.k_a, self.k_theta, self.drift_target) <= 0.0 or self.k_u < 0.0:
            raise ValueError("estimator gains and drift_target must be positive, k_u >= 0")


@dataclass
class AgentState:
    """Mutable per-agent state.

    neighbor_refs maps a neighbor index to the local copy of that
    neighbor's reference time. Copies advance at the known common rate
    between broadcasts, so the snapshot here is only valid at the instant
    it was taken.
    """

    hw_time: float
    sw_time: float
    ref_time: float
    drift_est: float
    hw_time_est: float
    timer: float
    neighbor_refs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AgentFlow:
    """Time derivatives of one agent's continuous states."""

    hw_time: float
    sw_time: float
    ref_time: float
    drift_est: float
    hw_time_est: float
    timer: float


@dataclass(frozen=True)
class TimerResetRule:
    """Reset draw for an expired timer: fixed value or uniform over the window."""

    kind: str = "uniform"  # "uniform" | "fixed"
    fixed_value: float | None = None

    def draw(self, params: AgentParams, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            v = params.timer_hi if self.fixed_value is None else self.fixed_value
            if not params.timer_lo <= v <= params.timer_hi:
                raise ValueError(f"fixed reset {v} outside [{params.timer_lo}, {params.timer_hi}]")
            return float(v)
        if self.kind == "uniform":
            return float(rng.uniform(params.timer_lo, params.timer_hi))
        raise ValueError(f"unknown reset rule {self.kind!r}")


def controller_input(st: AgentState, params: AgentParams, neighbors) -> float:
    """Steering input: drift correction plus coupling on reference-time gaps.

    u = drift_target - drift_est + k_u * sum_q (ref_q - ref_p).
    Pure; raises MissingNeighborSample if a neighbor has no stored copy.
    """
    acc = 0.0
    for q in neighbors:
        if q not in st.neighbor_refs:
            raise MissingNeighborSample(f"no reference value from neighbor {q}")
        acc += st.neighbor_refs[q] - st.ref_time
    return params.drift_target - st.drift_est + params.k_u * acc


def agent_flow(st: AgentState, params: AgentParams, u: float, d: float) -> AgentFlow:
    """Continuous dynamics of one agent under input u and disturbance d.

    The single scalar d perturbs the hardware clock, the software clock,
    and the timer alike: all software-side rates inherit the hardware
    perturbation.
    """
    if abs(d) > params.noise_bound:
        raise DisturbanceOutOfBound(
            f"|d|={abs(d)} exceeds bound {params.noise_bound}")
    innov = st.hw_time - st.hw_time_est
    return AgentFlow(
        hw_time=params.drift + d,
        sw_time=params.drift + d + u,
        ref_time=params.drift_target,
        drift_est=params.k_a * innov,
        hw_time_est=st.drift_est + params.k_theta * innov,
        timer=-params.timer_rate + d,
    )


def on_timer_expiry(st: AgentState, params: AgentParams,
                    reset_rule: TimerResetRule, rng: np.random.Generator,
                    tol: float = 1e-9):
    """Broadcast event: reset own reference to the live software time.

    Returns (new_timer, broadcast_value). Mutates st: ref_time snaps to
    sw_time and the timer is redrawn from [timer_lo, timer_hi]. Delivery
    of broadcast_value into the neighbors' neighbor_refs is the caller's
    job (zero-delay, simultaneous).
    """
    if st.timer > tol:
        raise NotExpired(f"timer={st.timer} still above tolerance {tol}")
    st.ref_time = st.sw_time
    new_timer = reset_rule.draw(params, rng)
    st.timer = new_timer
    return new_timer, st.sw_time
