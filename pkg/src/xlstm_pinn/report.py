"""Error metrics, result tables and figures.

Figures are SVG with heatmaps embedded as fixed-width rasters.  Every writer
pins the SVG id salt and drops the date stamp, so equal inputs give equal
bytes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

LOSS_FLOOR = 1e-18
RASTER_WIDTH = 512
COLORMAP = "viridis"
ERROR_COLORMAP = "magma"
MODEL_ORDER = ("xlstm", "baseline")
COLUMNS = ("problem", "model", "grid", "MSE", "RMSE", "MAE", "MaxAE")

_SVG_RC = {"svg.hashsalt": "xlstm-pinn", "svg.fonttype": "none", "path.simplify": False}


class NonFiniteFieldError(FloatingPointError):
    """A predicted field holds NaN/inf; the message names the first bad point."""


@dataclass(frozen=True)
class MetricRecord:
    MSE: float
    RMSE: float
    MAE: float
    MaxAE: float
    grid: str = ""
    model: str = ""
    problem: str = ""

    def values(self) -> tuple:
        return (self.MSE, self.RMSE, self.MAE, self.MaxAE)


def metrics(predicted, reference, grid=None, model: str = "", problem: str = "") -> MetricRecord:
    """MSE, RMSE, MAE and MaxAE of ``predicted - reference`` over a grid.

    ``grid`` may be a :class:`~xlstm_pinn.problems.Grid` (used to name the
    offending coordinate of a non-finite prediction), a string description,
    or None.
    """
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    if predicted.size == 0:
        raise ValueError("metrics need a nonempty grid")
    if predicted.shape != reference.shape:
        raise ValueError(f"prediction shape {predicted.shape} != reference shape {reference.shape}")
    points = getattr(grid, "points", None)
    bad = np.nonzero(~np.isfinite(predicted))[0]
    if bad.size:
        i = int(bad[0])
        where = f" at {tuple(float(v) for v in points[i])}" if points is not None else ""
        raise NonFiniteFieldError(f"non-finite prediction {predicted[i]} at grid point {i}{where}")
    if not np.all(np.isfinite(reference)):
        raise ValueError("reference field is not finite on the grid")
    diff = np.abs(predicted - reference)
    mse = float(np.mean(diff * diff))
    desc = getattr(grid, "description", grid if isinstance(grid, str) else "")
    return MetricRecord(mse, math.sqrt(mse), float(np.mean(diff)), float(np.max(diff)), desc, model, problem)


# --- tables ----------------------------------------------------------------------


def _sorted(records) -> list:
    problems = list(dict.fromkeys(r.problem for r in records))

    def key(r):
        rank = MODEL_ORDER.index(r.model) if r.model in MODEL_ORDER else len(MODEL_ORDER)
        return (problems.index(r.problem), rank)

    return sorted(records, key=key)


def emit_table(records) -> tuple:
    """``(csv_text, text_view)`` for a list of MetricRecords, xLSTM rows first.

    The CSV stores 17 significant digits, enough to round-trip any float64;
    the text view uses three-significant-figure scientific notation.
    """
    rows = _sorted(list(records))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in rows:
        writer.writerow([r.problem, r.model, r.grid] + [f"{v:.17g}" for v in r.values()])
    head = f"{'problem':<14} {'model':<9} " + " ".join(f"{c:>9}" for c in COLUMNS[3:]) + "  grid"
    lines = [head]
    for r in rows:
        lines.append(f"{r.problem:<14} {r.model:<9} " + " ".join(f"{v:>9.2e}" for v in r.values())
                     + f"  {r.grid}")
    return buf.getvalue(), "\n".join(lines) + "\n"


def parse_table(csv_text: str) -> list:
    reader = csv.DictReader(io.StringIO(csv_text))
    return [
        MetricRecord(float(row["MSE"]), float(row["RMSE"]), float(row["MAE"]), float(row["MaxAE"]),
                     row["grid"], row["model"], row["problem"])
        for row in reader
    ]


def write_table(records, path) -> str:
    csv_text, text = emit_table(records)
    Path(path).write_text(csv_text)
    return text


# --- figures -------------------------------------------------------------------------


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def log_view(totals) -> np.ndarray:
    """Copy of ``totals`` clamped at ``LOSS_FLOOR`` for a log axis."""
    return np.maximum(np.asarray(totals, dtype=np.float64), LOSS_FLOOR)


def plot_loss(histories: dict, path) -> None:
    """Total loss against iteration, linear and log views, one line per run.

    ``histories`` maps a label to a 1-D sequence of totals; the log view
    clamps values at ``LOSS_FLOOR`` for display only.
    """
    fig = Figure(figsize=(8, 3.2))
    ax_lin, ax_log = fig.subplots(1, 2)
    for label, totals in histories.items():
        totals = np.asarray(totals, dtype=np.float64)
        it = np.arange(1, len(totals) + 1)
        ax_lin.plot(it, totals, label=label, lw=1.0)
        ax_log.plot(it, log_view(totals), label=label, lw=1.0)
    ax_log.set_yscale("log")
    for ax, title in ((ax_lin, "loss (linear)"), (ax_log, "loss (log)")):
        ax.set_xlabel("iteration")
        ax.set_title(title)
        ax.legend(loc="upper right")
    fig.tight_layout()
    _save(fig, path)


def _raster(values, shape, mask=None, width: int = RASTER_WIDTH):
    """Reshape to the grid raster and resample (nearest) to ``width`` columns."""
    img = np.asarray(values, dtype=np.float64).reshape(shape)
    if mask is not None:
        img = np.where(np.asarray(mask).reshape(shape), img, np.nan)
    ny, nx = img.shape
    height = max(1, int(round(width * ny / nx)))
    rows = np.minimum((np.arange(height) * ny) // height, ny - 1)
    cols = np.minimum((np.arange(width) * nx) // width, nx - 1)
    return np.ma.masked_invalid(img[np.ix_(rows, cols)])


def plot_fields(grid, solution, predictions: dict, path, extent=None, labels=("x", "y")) -> None:
    """Solution / prediction / |error| heatmaps, one row per model."""
    n = len(predictions)
    fig = Figure(figsize=(11, 3.2 * n))
    axes = np.atleast_2d(fig.subplots(n, 3, squeeze=False))
    if extent is None:
        pts = np.asarray(grid.points)
        extent = (pts[:, 0].min(), pts[:, 0].max(), pts[:, 1].min(), pts[:, 1].max())
    sol = _raster(solution, grid.shape, grid.mask)
    vmin, vmax = float(sol.min()), float(sol.max())
    for row, (name, pred) in zip(axes, predictions.items()):
        panels = (
            (sol, "solution", COLORMAP, (vmin, vmax)),
            (_raster(pred, grid.shape, grid.mask), f"{name} prediction", COLORMAP, (vmin, vmax)),
            (_raster(np.abs(np.asarray(pred) - np.asarray(solution)), grid.shape, grid.mask),
             f"{name} |error|", ERROR_COLORMAP, (None, None)),
        )
        for ax, (img, title, cmap, (lo, hi)) in zip(row, panels):
            im = ax.imshow(img, origin="lower", extent=extent, cmap=cmap, vmin=lo, vmax=hi,
                           interpolation="nearest", aspect="auto")
            ax.set_title(title)
            ax.set_xlabel(labels[0])
            ax.set_ylabel(labels[1])
            fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(fig, path)


def plot_spectrum(report, path) -> None:
    """E_T, G and tau against |k| with one-sd bands and k* markers."""
    ks = np.asarray(report.ks)
    fig = Figure(figsize=(12, 3.4))
    ax_e, ax_g, ax_t = fig.subplots(1, 3)
    colors = {"xlstm": "tab:blue", "baseline": "tab:orange"}
    for tag in ("xlstm", "baseline"):
        e = np.asarray(report.errors[tag])
        mean, sd = np.nanmean(e, axis=1), np.nanstd(e, axis=1)
        ax_e.plot(ks, mean, color=colors[tag], label=tag, marker="o", ms=3)
        ax_e.fill_between(ks, np.maximum(mean - sd, LOSS_FLOOR), mean + sd, color=colors[tag], alpha=0.2)
        tau = np.asarray(report.tau[tag], dtype=np.float64)
        shown = np.where(np.isfinite(tau), tau, report.budget)
        t_mean, t_sd = shown.mean(axis=1), shown.std(axis=1)
        ax_t.plot(ks, t_mean, color=colors[tag], label=tag, marker="o", ms=3)
        ax_t.fill_between(ks, t_mean - t_sd, t_mean + t_sd, color=colors[tag], alpha=0.2)
        k_star = report.k_star(tag)
        for ax in (ax_e, ax_t):
            ax.axvline(k_star, color=colors[tag], ls="--", lw=1.0)
    ax_e.set_yscale("log")
    ax_e.set_title("endpoint error E_T")
    g_mean, g_sd = report.gain_mean_sd()
    ax_g.plot(ks, g_mean, color="k", marker="o", ms=3)
    ax_g.fill_between(ks, g_mean - g_sd, g_mean + g_sd, color="k", alpha=0.15)
    ax_g.axhline(1.0, color="grey", lw=0.8)
    ax_g.set_title("gain G = E_base / E_xlstm")
    ax_t.axhline(report.budget, color="grey", lw=0.8, ls=":")
    ax_t.set_title("iterations to threshold (capped at budget)")
    for ax in (ax_e, ax_g, ax_t):
        ax.set_xlabel("|k|")
    ax_e.legend()
    ax_t.legend()
    fig.tight_layout()
    _save(fig, path)


def spectral_table(report) -> str:
    """Per-k CSV of the benchmark with 17 significant digits."""
    rows = report.rows()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not rows:
        return ""
    fields = list(rows[0])
    writer.writerow(fields + ["k_star_xlstm", "k_star_baseline"])
    k_x, k_b = report.k_star("xlstm"), report.k_star("baseline")
    for row in rows:
        writer.writerow([_fmt(row[f]) for f in fields] + [_fmt(k_x), _fmt(k_b)])
    return buf.getvalue()


def probe_table(probe) -> str:
    rows = probe.rows()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    fields = ["k", "lam_base", "lam_xlstm", "ratio", "rho_B", "alpha", "bound", "degenerate"]
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row[f]) for f in fields])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return f"{float(v):.17g}"
