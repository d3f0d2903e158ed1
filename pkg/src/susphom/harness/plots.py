"""Deterministic SVG figures from result tables.

Figures avoid pyplot state and use a fixed SVG hash salt, no date stamp and
text kept as text, so identical tables give byte-identical files.
"""

import os

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from ..errors import ConfigError
from .stats import linear_fit, loglog_slope

STYLE = {
    "svg.hashsalt": "susphom",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.8, 3.4),
    "figure.dpi": 100,
    "path.simplify": False,
}


def _column(rows, key):
    return np.array([float(r[key]) for r in rows])


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def _loglog_panel(ax, x, series, xlabel, ylabel):
    """Log-log scatter of each ``(label, y, yerr)`` with its fitted slope."""
    for label, y, err in series:
        ok = (x > 0) & (np.abs(y) > 0)
        if ok.sum() == 0:
            continue
        ax.errorbar(x[ok], np.abs(y[ok]), yerr=None if err is None else err[ok], fmt="o", label=None)
        if ok.sum() >= 2:
            fit = loglog_slope(x[ok], y[ok])
            xs = np.geomspace(x[ok].min(), x[ok].max(), 32)
            ax.plot(xs, np.exp(fit["intercept"]) * xs ** fit["slope"], "-",
                    label=f"{label}: slope {fit['slope']:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if ax.get_legend_handles_labels()[1]:
        ax.legend(frameon=False)


def plot_einstein(record, path):
    rows = [r for r in record.tables.get("groups", []) if float(r["phi_mean"]) > 0]
    if not rows:
        raise ConfigError("no data: einstein record has no non-empty volume fractions")
    phi, ratio, se = (_column(rows, k) for k in ("phi_mean", "ratio_mean", "ratio_se"))
    fig = Figure()
    ax = fig.subplots()
    ax.errorbar(phi, ratio, yerr=se, fmt="o", label="excess / volume fraction")
    if len(rows) >= 2:
        fit = linear_fit(phi, ratio)
        xs = np.linspace(0.0, phi.max(), 32)
        ax.plot(xs, fit["intercept"] + fit["slope"] * xs, "-",
                label=f"fit: dilute slope {fit['intercept']:.4f}")
    ax.axhline(2.5, color="0.5", lw=0.8, ls="--", label="2.5")
    ax.set_xlabel("volume fraction")
    ax.set_ylabel("excess viscosity / volume fraction")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_dilation(record, path):
    rows = record.tables.get("means", [])
    if not rows:
        raise ConfigError("no data: dilation record has no means")
    ell = _column(rows, "ell")
    fig = Figure()
    ax = fig.subplots()
    series = [(f"B{j}", _column(rows, f"B{j}_mean"), _column(rows, f"B{j}_se")) for j in (1, 2)]
    _loglog_panel(ax, ell, series, "dilation factor", "|cluster coefficient|")
    return _save(fig, path)


def plot_example26(record, path):
    rows = [r for r in record.tables.get("intensities", []) if r.get("status") == "ok"]
    if not rows:
        raise ConfigError("no data: example26 record has no intensity estimates")
    fig = Figure()
    ax = fig.subplots()
    for order in sorted({int(r["order"]) for r in rows}):
        sub = [r for r in rows if int(r["order"]) == order]
        lam = _column(sub, "lam")
        _loglog_panel(ax, lam, [(f"order {order}", _column(sub, "estimate"), _column(sub, "stderr"))],
                      "intensity", "many-point intensity")
    return _save(fig, path)


def plot_convergence(record, path):
    rows = record.tables.get("differences", [])
    if not rows:
        raise ConfigError("no data: convergence record has no differences")
    L = _column(rows, "L")
    fig = Figure()
    ax = fig.subplots()
    _loglog_panel(ax, L, [("Cauchy difference", _column(rows, "difference"), _column(rows, "stderr"))],
                  "period L", "|reading(L) - reading(2L)|")
    return _save(fig, path)


def plot_bernoulli(record, path):
    rows = record.tables.get("averages", [])
    if not rows:
        raise ConfigError("no data: bernoulli record has no averages")
    fig = Figure()
    ax = fig.subplots()
    for cfg in sorted({int(r["config"]) for r in rows}):
        sub = [r for r in rows if int(r["config"]) == cfg]
        p = _column(sub, "p")
        ax.errorbar(p, _column(sub, "average") - 1.0, yerr=_column(sub, "stderr"), fmt="o")
        ax.plot(p, _column(sub, "polynomial") - 1.0, "-", color="0.3", lw=0.8)
    ax.set_xlabel("retention probability p")
    ax.set_ylabel("Bernoulli average - 1")
    return _save(fig, path)


def plot_bg(record, path):
    rows = [r for r in record.tables.get("values", []) if r.get("model") == "separated"]
    rows = [r for r in rows if r.get("gap_without_point_term") not in (None, "")]
    if not rows:
        raise ConfigError("no data: bg record has no separated-model rows")
    ell = _column(rows, "ell")
    fig = Figure()
    ax = fig.subplots()
    _loglog_panel(ax, ell, [("full - leading - point term", _column(rows, "gap_without_point_term"), None)],
                  "separation scale", "relative gap")
    return _save(fig, path)


PLOTTERS = {
    "einstein": plot_einstein,
    "dilation": plot_dilation,
    "example26": plot_example26,
    "convergence": plot_convergence,
    "bernoulli": plot_bernoulli,
    "bg": plot_bg,
}


def emit_plots(records, out_dir):
    """One SVG per plottable record, named ``<kind>.svg``; returns the paths."""
    records = list(records)
    if not records:
        raise ConfigError("no data: no records to plot")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    with matplotlib.rc_context(STYLE):
        for rec in records:
            plotter = PLOTTERS.get(rec.kind)
            if plotter is None:
                continue
            if not any(rec.tables.values()):
                raise ConfigError(f"no data: {rec.kind} record has empty tables")
            paths.append(plotter(rec, os.path.join(out_dir, f"{rec.kind}.svg")))
    return paths
