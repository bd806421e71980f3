"""Operator entry point: certify / simulate / verify / reproduce / batch.

Exit codes are a stable contract: 0 success (and feasible where relevant),
1 configuration error, 2 infeasible certificate, 3 numerical blowup.
All floating-point output is written with 17 significant digits, so a rerun
with the same seed is byte-identical (the manifest's wall-clock runtime is
the one intentional exception).
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import (
    SystemTiming,
    envelope_constants,
    search_certificate,
    sync_time,
)
from .config import SimConfig, benchmark_config, load_config, validate_config
from .ensemble import build_flow_matrix
from .errors import ConfigError, NumericalBlowup
from .graphs import spectral_basis
from .metrics import lyapunov_monitor
from .simulator import (
    Trajectory,
    agent_params_from_config,
    build_graph_from_spec,
    run_batch,
    simulate,
    write_events_csv,
    write_metrics_csv,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3


# ---------------------------------------------------------------------------
# Minimal TOML emission (same dialect the config reader accepts)

def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if x != x:
            return "nan"
        if x in (float("inf"), float("-inf")):
            return "inf" if x > 0 else "-inf"
        s = f"{x:.17g}"
        return s if any(c in s for c in ".eE") or "nan" in s or "inf" in s else s + ".0"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, np.ndarray):
        return _toml_scalar(v.tolist())
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def write_toml(path, sections: dict) -> None:
    lines = []
    for section, table in sections.items():
        lines.append(f"[{section}]")
        for key, value in table.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_scalar(value)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def _config_sections(cfg: SimConfig) -> dict:
    d = cfg.to_dict()
    return {name: {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in table.items() if v is not None}
            for name, table in d.items()}


# ---------------------------------------------------------------------------
# Pipeline pieces

def _certify_pipeline(cfg: SimConfig):
    g = build_graph_from_spec(cfg.graph)
    sd = spectral_basis(g)
    a = cfg.agents
    fm = build_flow_matrix(sd, a.k_u, a.k_a, a.k_theta)
    params = agent_params_from_config(cfg, np.full(g.n, a.drift_target))
    timing = SystemTiming.from_params(params)
    cs = cfg.certificate
    result = search_certificate(fm, sd, timing, sigma=cs.sigma,
                                budget=cs.budget, seed=cs.seed,
                                grid_size=cs.grid_size)
    gc = None
    if result.feasible:
        gc = envelope_constants(result.report, result.certificate, timing, sd,
                                epsilon=cs.epsilon,
                                kappa_fraction=cs.kappa_fraction)
    return g, sd, fm, timing, result, gc


def _certificate_sections(cfg, g, sd, result, gc) -> dict:
    rep = result.report
    cert = result.certificate
    sections = {
        "graph": {
            "n": g.n,
            "edges": [list(e) for e in sorted(g.edges)],
            "fiedler": sd.fiedler,
        },
        "report": {
            "feasible": rep.feasible,
            "mu": rep.mu,
            "alpha1": rep.alpha1,
            "alpha2": rep.alpha2,
            "corollary_check": rep.corollary_check,
            "sampled_min_margin": rep.sampled_min_margin,
            "worst_tau": rep.worst_tau,
        },
        "certificate": {
            "sigma": cert.sigma,
            "P2_weights": cert.P2_weights,
            "P1": cert.P1,
            "P3": cert.P3,
        },
    }
    if gc is not None:
        sections["envelope"] = {
            "kappa": gc.kappa,
            "mu_bar": gc.mu_bar,
            "epsilon": gc.epsilon,
            "kappa1": gc.kappa1,
            "kappa2": gc.kappa2,
            "alpha": gc.alpha,
            "delta_max": gc.delta_max,
            "delta_max_is_bound": gc.delta_max_is_bound,
            "p_norm_hi": gc.p_norm_hi,
            "t_min": gc.t_min,
            "t_max": gc.t_max,
            "b_min": gc.b_min,
            "b_max": gc.b_max,
            "nu": cfg.certificate.nu,
        }
    return sections


def _verification_sections(rep, gc, nu, traj) -> dict:
    d0 = float(traj.dist[0])
    t_bound = sync_time(gc, nu, d0) if gc is not None else None
    return {
        "verification": {
            "lyap_jump_violations": rep.lyap_jump_violations,
            "lyap_flow_violations": rep.lyap_flow_violations,
            "envelope_ok": rep.envelope_ok,
            "nu": nu,
            "nu_sync_time_observed": rep.nu_sync_time_observed,
            "nu_sync_time_bound": t_bound,
            "initial_distance": d0,
            "final_distance": float(traj.dist[-1]),
            "final_eta_norm": float(traj.eta_norm[-1]),
            "max_timer_interval_violations": rep.max_timer_interval_violations,
            "domain_bound_violations": rep.domain_bound_violations,
            "n_jumps": rep.n_jumps,
        }
    }


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_wide_csv(path, header, t, j, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(t.shape[0]):
            w.writerow([_fmt(t[i]), str(int(j[i]))]
                       + [_fmt(v) for v in matrix[i]])


def write_figure_csvs(traj: Trajectory, out: Path, nu: float) -> list:
    """Per-figure data extracts from one reproduction trajectory."""
    n = traj.n
    agents = [str(p) for p in range(1, n + 1)]
    paths = []

    def emit(name, header, matrix, mask=None):
        path = out / name
        t, j = traj.t, traj.j
        if mask is not None:
            t, j, matrix = t[mask], j[mask], matrix[mask]
        _write_wide_csv(path, header, t, j, matrix)
        paths.append(path)

    emit("fig1_software_times.csv",
         ["t", "j"] + [f"vartheta_{p}" for p in agents], traj.sw_time)
    drifts = np.array([pp.drift for pp in traj.params])
    emit("fig2_drifts.csv",
         ["t", "j"] + [f"vartheta_dot_{p}" for p in agents],
         drifts[None, :] + traj.d + traj.u)
    emit("fig3_drift_errors.csv",
         ["t", "j"] + [f"a_tilde_{p}" for p in agents],
         traj.z[:, 2 * n - 1:3 * n - 1])
    emit("fig4_hw_errors.csv",
         ["t", "j"] + [f"theta_tilde_{p}" for p in agents],
         traj.z[:, 3 * n - 1:])
    fig5 = np.column_stack([traj.eta_norm, traj.dist,
                            np.full(traj.n_samples, nu)])
    emit("fig5_convergence.csv", ["t", "j", "eta_norm", "dist_A", "nu"], fig5)
    window = (traj.t >= 120.0) & (traj.t <= 120.5)
    emit("fig6_timers.csv", ["t", "j"] + [f"tau_{p}" for p in agents],
         traj.timer, mask=window)
    return paths


def _write_manifest(out: Path, cfg: SimConfig, paths: list, t0: float,
                    extra: dict | None = None) -> None:
    run_table = {
        "tool_version": __version__,
        "master_seed": cfg.sim.seed,
        "graph_seed": cfg.graph.seed,
        "certificate_seed": cfg.certificate.seed,
        "artifacts": [p.name for p in paths],
        "runtime_seconds": time.perf_counter() - t0,
    }
    if extra:
        run_table.update(extra)
    sections = {"run": run_table}
    sections.update({f"config_{k}": v for k, v in _config_sections(cfg).items()})
    write_toml(out / "manifest.toml", sections)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_certify(cfg: SimConfig, out: Path) -> int:
    t0 = time.perf_counter()
    g, sd, fm, timing, result, gc = _certify_pipeline(cfg)
    path = out / "certificate_report.toml"
    write_toml(path, _certificate_sections(cfg, g, sd, result, gc))
    rep = result.report
    print(f"certificate: feasible={rep.feasible} mu={rep.mu:.6g} "
          f"alpha1={rep.alpha1:.6g} alpha2={rep.alpha2:.6g} "
          f"corollary_check={rep.corollary_check}")
    if gc is not None:
        print(f"envelope: kappa2={gc.kappa2:.6g} alpha={gc.alpha:.6g} "
              f"delta_max={gc.delta_max:.6g}")
    _write_manifest(out, cfg, [path], t0)
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def _write_run_csvs(traj: Trajectory, out: Path) -> list:
    paths = [out / "trajectory.csv", out / "metrics.csv", out / "events.csv"]
    write_trajectory_csv(traj, paths[0])
    write_metrics_csv(traj, paths[1])
    write_events_csv(traj, paths[2])
    return paths


def cmd_simulate(cfg: SimConfig, out: Path) -> int:
    t0 = time.perf_counter()
    traj = simulate(cfg)
    paths = _write_run_csvs(traj, out)
    print(f"simulate: t_end={traj.t[-1]:.6g} jumps={int(traj.j[-1])} "
          f"final_dist={traj.dist[-1]:.6g} final_eta={traj.eta_norm[-1]:.6g}")
    _write_manifest(out, cfg, paths, t0)
    return EXIT_OK


def cmd_verify(cfg: SimConfig, out: Path) -> int:
    t0 = time.perf_counter()
    g, sd, fm, timing, result, gc = _certify_pipeline(cfg)
    cert_path = out / "certificate_report.toml"
    write_toml(cert_path, _certificate_sections(cfg, g, sd, result, gc))
    if not result.feasible:
        print(f"certificate infeasible (best margin "
              f"{result.report.sampled_min_margin:.6g}); not simulating")
        _write_manifest(out, cfg, [cert_path], t0)
        return EXIT_INFEASIBLE
    traj = simulate(cfg, cert=result.certificate)
    rep = lyapunov_monitor(traj, result.certificate, gc,
                           nu=cfg.certificate.nu)
    paths = [cert_path] + _write_run_csvs(traj, out)
    ver_path = out / "verification_report.toml"
    write_toml(ver_path, _verification_sections(rep, gc, cfg.certificate.nu, traj))
    paths.append(ver_path)
    print(f"verify: jump_violations={rep.lyap_jump_violations} "
          f"flow_violations={rep.lyap_flow_violations} "
          f"envelope_ok={rep.envelope_ok} "
          f"sync_observed={rep.nu_sync_time_observed} "
          f"timer_violations={rep.max_timer_interval_violations} "
          f"domain_violations={rep.domain_bound_violations}")
    _write_manifest(out, cfg, paths, t0)
    return EXIT_OK


def cmd_reproduce(seed: int, out: Path) -> int:
    """Full benchmark pipeline: certify, simulate, verify, figure data.

    The horizon runs to 120.5 s so the final half-second timer window
    (figure 6) exists; end-of-run criteria are read at t >= 120 s.
    """
    t0 = time.perf_counter()
    cfg = benchmark_config(seed=seed, t_end=120.5, log_every=100)
    g, sd, fm, timing, result, gc = _certify_pipeline(cfg)
    cert_path = out / "certificate_report.toml"
    write_toml(cert_path, _certificate_sections(cfg, g, sd, result, gc))
    if not result.feasible:
        print("certificate infeasible; aborting reproduction")
        _write_manifest(out, cfg, [cert_path], t0)
        return EXIT_INFEASIBLE
    traj = simulate(cfg, cert=result.certificate)
    rep = lyapunov_monitor(traj, result.certificate, gc, nu=cfg.certificate.nu)
    paths = [cert_path] + _write_run_csvs(traj, out)
    ver_path = out / "verification_report.toml"
    write_toml(ver_path, _verification_sections(rep, gc, cfg.certificate.nu, traj))
    paths.append(ver_path)
    paths.extend(write_figure_csvs(traj, out, nu=cfg.certificate.nu))
    config_path = out / "config.toml"
    write_toml(config_path, _config_sections(cfg))
    paths.append(config_path)
    tail = traj.t >= 120.0
    print(f"reproduce: seed={seed} final_eta={traj.eta_norm[-1]:.6g} "
          f"max_eta_after_120s={traj.eta_norm[tail].max():.6g} "
          f"sync_observed={rep.nu_sync_time_observed} "
          f"violations={rep.lyap_jump_violations + rep.lyap_flow_violations}")
    _write_manifest(out, cfg, paths, t0)
    return EXIT_OK


def cmd_batch(cfg: SimConfig, runs: int, seed: int | None, out: Path) -> int:
    t0 = time.perf_counter()
    if seed is not None:
        cfg = cfg.with_seed(seed)
    g, sd, fm, timing, result, gc = _certify_pipeline(cfg)
    cert = result.certificate if result.feasible else None
    monitor = None
    if cert is not None:
        monitor = lambda tr: lyapunov_monitor(tr, cert, gc, nu=cfg.certificate.nu)
    summaries = run_batch(cfg, runs, cert=cert, monitor=monitor)
    path = out / "batch_summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "final_eta_norm", "final_dist",
                    "max_event_interval", "min_event_interval", "n_jumps",
                    "lyap_jump_violations", "lyap_flow_violations"])
        for s in summaries:
            w.writerow([s.seed, _fmt(s.final_eta_norm), _fmt(s.final_dist),
                        _fmt(s.max_event_interval), _fmt(s.min_event_interval),
                        s.n_jumps,
                        "" if s.lyap_jump_violations is None else s.lyap_jump_violations,
                        "" if s.lyap_flow_violations is None else s.lyap_flow_violations])
    worst_eta = max(s.final_eta_norm for s in summaries)
    print(f"batch: {runs} runs, worst final_eta={worst_eta:.6g}, "
          f"feasible_certificate={result.feasible}")
    _write_manifest(out, cfg, [path], t0)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="clocksync",
        description="Decentralized clock-sync simulator and certificate engine")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("certify", "simulate", "verify", "reproduce", "batch"):
        sp = sub.add_parser(name)
        if name != "reproduce":
            sp.add_argument("--config", type=Path, default=None,
                            help="TOML config (benchmark defaults if omitted)")
        sp.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (created if missing)")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed override")
        if name == "batch":
            sp.add_argument("--runs", type=int, default=20)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "reproduce":
            return cmd_reproduce(args.seed if args.seed is not None else 42, out)
        cfg = load_config(args.config) if args.config else benchmark_config()
        validate_config(cfg)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "certify":
            return cmd_certify(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out)
        if args.command == "batch":
            return cmd_batch(cfg, args.runs, args.seed, out)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
