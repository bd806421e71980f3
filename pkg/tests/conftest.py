import hypothesis
import numpy as np
import pytest

from clocksync.agents import AgentParams
from clocksync.certificate import (
    SystemTiming,
    envelope_constants,
    search_certificate,
)
from clocksync.config import benchmark_config
from clocksync.ensemble import build_flow_matrix
from clocksync.graphs import build_graph, spectral_basis
from clocksync.simulator import agent_params_from_config, build_graph_from_spec

hypothesis.settings.register_profile(
    "suite", max_examples=25, deadline=None, derandomize=True)
hypothesis.settings.load_profile("suite")

BENCH_GAINS = dict(k_u=0.72, k_a=4.2, k_theta=3.0)


def bench_params(n, drift=1.0):
    return [
        AgentParams(drift=drift, noise_bound=2e-5, timer_rate=1.0,
                    timer_lo=0.05, timer_hi=0.1, k_a=4.2, k_theta=3.0,
                    k_u=0.72, drift_target=1.0)
        for _ in range(n)
    ]


def random_connected_graph(rng, n=None, kinds=("path", "ring", "complete",
                                               "random-connected")):
    if n is None:
        n = int(rng.integers(2, 11))
    kind = kinds[int(rng.integers(0, len(kinds)))]
    return build_graph(n, kind=kind, seed=int(rng.integers(0, 2 ** 31)), p=0.4)


@pytest.fixture(scope="session")
def path2():
    g = build_graph(2, kind="path")
    sd = spectral_basis(g)
    fm = build_flow_matrix(sd, **BENCH_GAINS)
    timing = SystemTiming.from_params(bench_params(2))
    return g, sd, fm, timing


@pytest.fixture(scope="session")
def bench12():
    """The pinned 12-agent benchmark system with its certificate."""
    cfg = benchmark_config()
    g = build_graph_from_spec(cfg.graph)
    sd = spectral_basis(g)
    fm = build_flow_matrix(sd, **BENCH_GAINS)
    params = agent_params_from_config(cfg, np.full(g.n, 1.0))
    timing = SystemTiming.from_params(params)
    result = search_certificate(fm, sd, timing, sigma=cfg.certificate.sigma,
                                budget=cfg.certificate.budget,
                                seed=cfg.certificate.seed, grid_size=1000)
    assert result.feasible
    gc = envelope_constants(result.report, result.certificate, timing, sd)
    return dict(cfg=cfg, g=g, sd=sd, fm=fm, params=params, timing=timing,
                result=result, cert=result.certificate, report=result.report,
                gc=gc)
