"""Report figures (matplotlib, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "plot_series",
    "plot_decay",
    "plot_duality",
    "plot_singular_values",
    "plot_entry_times",
]

STYLE = {
    "figure.figsize": (5.0, 3.5),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_series(path, x, series: dict, xlabel: str, ylabel: str, log: bool = False, title: str | None = None) -> Path:
    """Several named series against a common abscissa."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, y in series.items():
            ax.plot(x, y, marker=".", label=name)
        if log:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        return _save(fig, path)


def plot_decay(path, d, gamma: float, C: float, window, label: str = "d_k", title: str | None = None) -> Path:
    """A positive series on a log axis with its fitted ``C exp(-gamma k)``."""
    d = np.asarray(d, dtype=float)
    k = np.arange(len(d))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        pos = d > 0
        ax.semilogy(k[pos], d[pos], "o-", ms=3, label=label)
        if np.isfinite(gamma) and np.isfinite(C):
            kk = np.arange(window[0], window[1] + 1)
            ax.semilogy(kk, C * np.exp(-gamma * kk), "--", label=f"fit, gamma = {gamma:.3g}")
        ax.axvspan(window[0], window[1], color="0.9", zorder=0)
        ax.set_xlabel("step k")
        ax.set_ylabel(label)
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def plot_duality(path, dts, residuals) -> Path:
    """Duality residuals against ``dt`` (one cloud per step size) with a slope-2 guide."""
    dts = np.asarray(dts, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for dt, r in zip(dts, residuals):
            ax.loglog(np.full(r.shape, dt), r, "k.", alpha=0.5)
        ax.loglog(dts, residuals.max(axis=1), "o-", label="max over pairs")
        ref = residuals.max(axis=1)[0] * (dts / dts[0]) ** 2
        ax.loglog(dts, ref, ":", label="slope 2")
        ax.set_xlabel("dt")
        ax.set_ylabel("relative residual")
        ax.legend()
        return _save(fig, path)


def plot_singular_values(path, sv) -> Path:
    sv = np.asarray(sv, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(1, len(sv) + 1), sv, "o-", ms=3)
        ax.set_xlabel("index")
        ax.set_ylabel("singular value")
        return _save(fig, path)


def plot_entry_times(path, norms: list, ball: float, radii) -> Path:
    """H1 norm histories of the dissipativity runs against the ball radius."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for R, series in zip(radii, norms):
            ax.semilogy(np.arange(len(series)), series, "o-", ms=3, label=f"R = {R:g}")
        ax.axhline(ball, color="k", ls="--", label="ball")
        ax.set_xlabel("step k")
        ax.set_ylabel("deviation H1 norm")
        ax.legend()
        return _save(fig, path)
