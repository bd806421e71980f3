"""Six-figure rendering pipeline over the reproduction CSV exports.

Each figure is a pure function of (CSV bytes, figure spec): the same input
always yields the same plotted series. Figures consume only the CSV files
written by the simulator CLI; there is no shared in-memory state with it.

Figure kinds:
  1  software-defined times, with beginning and end insets
  2  software clock rates, dashed unit-reference line, second-half inset
  3  hardware drift estimation errors, second-half inset
  4  hardware clock estimation errors, second-half inset
  5  disagreement norm and distance to the synchronized set, log y-axis,
     dashed tolerance reference
  6  timer sawtooths over the final half second [120, 120.5]
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class MissingColumn(Exception):
    """A required CSV column is absent; the message names it."""


@dataclass(frozen=True)
class Window:
    t0: float
    t1: float


@dataclass(frozen=True)
class FigureSpec:
    csv_path: Path
    kind: int
    out_path: Path
    insets: tuple = ()   # Window overrides; defaults depend on kind

    def __post_init__(self):
        if self.kind not in range(1, 7):
            raise ValueError(f"figure kind must be 1..6, got {self.kind}")


CSV_NAMES = {
    1: "fig1_software_times.csv",
    2: "fig2_drifts.csv",
    3: "fig3_drift_errors.csv",
    4: "fig4_hw_errors.csv",
    5: "fig5_convergence.csv",
    6: "fig6_timers.csv",
}

_SERIES_PREFIX = {
    1: "vartheta_",
    2: "vartheta_dot_",
    3: "a_tilde_",
    4: "theta_tilde_",
    6: "tau_",
}

_TITLES = {
    1: ("software-defined times", "time (s)"),
    2: ("software clock rates", "rate (s/s)"),
    3: ("drift estimation errors", "error (s/s)"),
    4: ("hardware clock estimation errors", "error (s)"),
    5: ("convergence", ""),
    6: ("timer values", "timer (s)"),
}


def load_csv(path) -> dict:
    """Columns by name. Raises MissingColumn if t or j is absent."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = data.reshape(0, len(header))
    cols = {name: data[:, i] for i, name in enumerate(header)}
    for required in ("t", "j"):
        if required not in cols:
            raise MissingColumn(f"{path.name}: missing column {required!r}")
    return cols


def _agent_matrix(cols: dict, prefix: str, path_name: str):
    names = sorted((k for k in cols if k.startswith(prefix)),
                   key=lambda k: int(k[len(prefix):]))
    if not names:
        raise MissingColumn(f"{path_name}: no columns with prefix {prefix!r}")
    return np.column_stack([cols[k] for k in names]), names


def _plot_agents(ax, t, matrix, labels, legend=True):
    for k in range(matrix.shape[1]):
        ax.plot(t, matrix[:, k], lw=0.8, label=labels[k])
    if legend and 1 < matrix.shape[1] <= 12:
        ax.legend(fontsize=5, ncol=3, loc="best")


def _add_inset(ax, t, matrix, window: Window, bounds) -> bool:
    mask = (t >= window.t0) & (t <= window.t1)
    if not np.any(mask):
        print(f"diagnostic: inset window [{window.t0}, {window.t1}] "
              "contains no samples; skipped", file=sys.stderr)
        return False
    sub = ax.inset_axes(bounds)
    for k in range(matrix.shape[1]):
        sub.plot(t[mask], matrix[mask, k], lw=0.7)
    sub.set_xlim(window.t0, window.t1)
    sub.tick_params(labelsize=5)
    return True


def build_figure(spec: FigureSpec):
    """Assemble the matplotlib figure for one spec (no file output)."""
    cols = load_csv(spec.csv_path)
    t = cols["t"]
    name = Path(spec.csv_path).name
    fig, ax = plt.subplots(figsize=(7.2, 4.2), dpi=120)
    title, ylabel = _TITLES[spec.kind]
    t_lo = float(t[0]) if t.size else 0.0
    t_hi = float(t[-1]) if t.size else 0.0

    if spec.kind == 5:
        for col in ("eta_norm", "dist_A"):
            if col not in cols:
                raise MissingColumn(f"{name}: missing column {col!r}")
        ax.plot(t, cols["dist_A"], color="tab:blue", lw=0.9,
                label="distance to sync set")
        ax.plot(t, cols["eta_norm"], color="m", lw=0.9,
                label="disagreement norm")
        nu = float(cols["nu"][0]) if "nu" in cols and cols["nu"].size else 0.06
        ax.axhline(nu, color="red", ls="--", lw=1.0,
                   label=f"tolerance {nu:g}")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    elif spec.kind == 6:
        matrix, names = _agent_matrix(cols, _SERIES_PREFIX[6], name)
        _plot_agents(ax, t, matrix, names, legend=False)
        ax.set_xlim(120.0, 120.5)
    else:
        matrix, names = _agent_matrix(cols, _SERIES_PREFIX[spec.kind], name)
        _plot_agents(ax, t, matrix, names)
        if spec.kind == 2:
            ax.axhline(1.0, color="black", ls="--", lw=1.0)
        insets = spec.insets
        if not insets:
            if spec.kind == 1:
                insets = (Window(t_lo, min(t_lo + 5.0, t_hi)),
                          Window(max(t_hi - 0.5, t_lo), t_hi))
            else:
                # main view shows the beginning; inset the second half
                ax.set_xlim(t_lo, t_lo + min(10.0, t_hi - t_lo))
                insets = (Window((t_lo + t_hi) / 2.0, t_hi),)
        bounds_cycle = ([0.08, 0.55, 0.34, 0.38], [0.58, 0.12, 0.36, 0.38])
        for i, w in enumerate(insets):
            _add_inset(ax, t, matrix, w, bounds_cycle[i % 2])

    ax.set_title(title, fontsize=10)
    ax.set_xlabel("t (s)")
    if ylabel:
        ax.set_ylabel(ylabel)
    return fig


def render(spec: FigureSpec) -> Path:
    """Render one figure to its output path."""
    fig = build_figure(spec)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out


def render_all(src_dir, img_dir) -> list:
    src, img = Path(src_dir), Path(img_dir)
    out = []
    for kind in range(1, 7):
        spec = FigureSpec(csv_path=src / CSV_NAMES[kind], kind=kind,
                          out_path=img / f"fig{kind}.png")
        out.append(render(spec))
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print("usage: render_figures <reproduce-out-dir> <img-dir>",
              file=sys.stderr)
        return 2
    try:
        paths = render_all(argv[0], argv[1])
    except (FileNotFoundError, MissingColumn) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
