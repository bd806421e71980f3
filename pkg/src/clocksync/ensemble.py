"""Closed-loop ensemble in stacked error coordinates.

State is xi = (disagreement, sw_err, drift_err, hw_err, timers) with
z = (disagreement, sw_err, drift_err, hw_err) of dimension 4N-1:

  disagreement = V^T sw_times           (N-1 consensus-error coordinates)
  sw_err       = sw_times - ref_times   (gap to the broadcast references)
  drift_err    = drifts - drift_ests
  hw_err       = hw_times - hw_ests

Flows are linear, z' = F z + noise stack, with the timers counting down
independently. A jump fires when some timer hits zero: that agent's
sw_err component resets to zero (reference snaps to the live clock), its
timer is redrawn, everything else is untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .agents import AgentParams, AgentState, TimerResetRule
from .errors import DimensionMismatch, DisturbanceOutOfBound, NotInJumpSet
from .graphs import SpectralData


@dataclass(frozen=True)
class EnsembleState:
    """Stacked hybrid state with hybrid time (t, j)."""

    disagreement: np.ndarray  # (N-1,)
    sw_err: np.ndarray        # (N,)
    drift_err: np.ndarray     # (N,)
    hw_err: np.ndarray        # (N,)
    timers: np.ndarray        # (N,)
    t: float = 0.0
    j: int = 0

    @property
    def n(self) -> int:
        return self.sw_err.shape[0]

    @property
    def z(self) -> np.ndarray:
        """Error coordinates, dimension 4N-1."""
        return np.concatenate(
            [self.disagreement, self.sw_err, self.drift_err, self.hw_err])


@dataclass(frozen=True)
class FlowMatrix:
    """The (4N-1)x(4N-1) linear flow matrix in z coordinates, with gains."""

    F: np.ndarray
    k_u: float
    k_a: float
    k_theta: float

    @property
    def n(self) -> int:
        return (self.F.shape[0] + 1) // 4


def build_flow_matrix(sd: SpectralData, k_u: float, k_a: float,
                      k_theta: float) -> FlowMatrix:
    """Assemble F block-by-block from the spectral data and gains.

    Block rows/cols ordered (disagreement, sw_err, drift_err, hw_err):

        [ -k_u D     k_u D V^T   V^T    0      ]
        [ -k_u V D   k_u L       I      0      ]
        [  0          0          0     -k_a I  ]
        [  0          0          I     -k_th I ]
    """
    if k_u < 0.0 or min(k_a, k_theta) <= 0.0:
        raise ValueError("need k_u >= 0 and positive estimator gains")
    n = sd.n
    m = 4 * n - 1
    f = np.zeros((m, m))
    s0 = slice(0, n - 1)
    s1 = slice(n - 1, 2 * n - 1)
    s2 = slice(2 * n - 1, 3 * n - 1)
    s3 = slice(3 * n - 1, 4 * n - 1)
    f[s0, s0] = -k_u * sd.D
    f[s0, s1] = k_u * sd.D @ sd.V.T
    f[s0, s2] = sd.V.T
    f[s1, s0] = -k_u * sd.V @ sd.D
    f[s1, s1] = k_u * sd.laplacian
    f[s1, s2] = np.eye(n)
    f[s2, s3] = -k_a * np.eye(n)
    f[s3, s2] = np.eye(n)
    f[s3, s3] = -k_theta * np.eye(n)
    return FlowMatrix(F=f, k_u=k_u, k_a=k_a, k_theta=k_theta)


def stack_disturbance(sd: SpectralData, d: np.ndarray) -> np.ndarray:
    """Per-agent disturbances stacked into z-space: (V^T d, d, 0, d)."""
    d = np.asarray(d, dtype=float)
    if d.shape != (sd.n,):
        raise DimensionMismatch(f"d has shape {d.shape}, expected ({sd.n},)")
    return np.concatenate([sd.V.T @ d, d, np.zeros(sd.n), d])


@dataclass(frozen=True)
class EnsembleFlow:
    z_dot: np.ndarray
    timers_dot: np.ndarray


def ensemble_flow(xi: EnsembleState, fm: FlowMatrix, sd: SpectralData,
                  timer_rates: np.ndarray, d: np.ndarray,
                  noise_bounds: np.ndarray) -> EnsembleFlow:
    """Stacked flow: z' = F z + (V^T d, d, 0, d); timer' = -rate + d."""
    d = np.asarray(d, dtype=float)
    if np.any(np.abs(d) > np.asarray(noise_bounds) + 1e-15):
        raise DisturbanceOutOfBound("a disturbance component exceeds its bound")
    z_dot = fm.F @ xi.z + stack_disturbance(sd, d)
    return EnsembleFlow(z_dot=z_dot, timers_dot=-np.asarray(timer_rates) + d)


def jump_set_agents(xi: EnsembleState, tol: float) -> list:
    """1-based indices of agents whose timer has reached zero, ascending."""
    return [int(p) + 1 for p in np.flatnonzero(xi.timers <= tol)]


def apply_jump(xi: EnsembleState, p: int, params: AgentParams,
               reset_rule: TimerResetRule, rng: np.random.Generator,
               tol: float = 1e-9) -> EnsembleState:
    """Jump of agent p (1-based): zero its sw_err, redraw its timer, j += 1.

    Disagreement, drift_err, hw_err and every other agent's components are
    untouched; continuous time does not advance.
    """
    if p not in jump_set_agents(xi, tol):
        raise NotInJumpSet(f"agent {p} has timer {xi.timers[p - 1]} > {tol}")
    sw_err = xi.sw_err.copy()
    sw_err[p - 1] = 0.0
    timers = xi.timers.copy()
    timers[p - 1] = reset_rule.draw(params, rng)
    return replace(xi, sw_err=sw_err, timers=timers, j=xi.j + 1)


@dataclass(frozen=True)
class AgentErrorView:
    """One agent's slice of the error coordinates (plus its timer)."""

    sw_err: float
    drift_err: float
    hw_err: float
    timer: float


def pack(states, params_list, sd: SpectralData, t: float = 0.0,
         j: int = 0) -> EnsembleState:
    """Stack per-agent raw states into ensemble error coordinates.

    The disagreement block is computed from the raw software times (it has
    no per-agent decomposition); raw clock values themselves are not
    recoverable from the result.
    """
    if len(states) != sd.n or len(params_list) != sd.n:
        raise DimensionMismatch(
            f"got {len(states)} states / {len(params_list)} params for n={sd.n}")
    sw = np.array([s.sw_time for s in states])
    return EnsembleState(
        disagreement=sd.V.T @ sw,
        sw_err=sw - np.array([s.ref_time for s in states]),
        drift_err=np.array([pp.drift for pp in params_list])
        - np.array([s.drift_est for s in states]),
        hw_err=np.array([s.hw_time for s in states])
        - np.array([s.hw_time_est for s in states]),
        timers=np.array([s.timer for s in states], dtype=float),
        t=t,
        j=j,
    )


def unpack(xi: EnsembleState) -> list:
    """Per-agent error views (inverse of pack on the per-agent coordinates)."""
    return [
        AgentErrorView(
            sw_err=float(xi.sw_err[i]),
            drift_err=float(xi.drift_err[i]),
            hw_err=float(xi.hw_err[i]),
            timer=float(xi.timers[i]),
        )
        for i in range(xi.n)
    ]


def pack_agent_states(raw: dict, sd: SpectralData) -> EnsembleState:
    """Variant of pack on stacked raw arrays (simulator's native layout).

    raw maps the keys hw_time, sw_time, ref_time, drift, drift_est,
    hw_time_est, timer to (N,) arrays.
    """
    sw = np.asarray(raw["sw_time"], dtype=float)
    if sw.shape != (sd.n,):
        raise DimensionMismatch(f"sw_time has shape {sw.shape}")
    return EnsembleState(
        disagreement=sd.V.T @ sw,
        sw_err=sw - np.asarray(raw["ref_time"], dtype=float),
        drift_err=np.asarray(raw["drift"], dtype=float)
        - np.asarray(raw["drift_est"], dtype=float),
        hw_err=np.asarray(raw["hw_time"], dtype=float)
        - np.asarray(raw["hw_time_est"], dtype=float),
        timers=np.asarray(raw["timer"], dtype=float),
        t=float(raw.get("t", 0.0)),
        j=int(raw.get("j", 0)),
    )
