"""Figure rendering for experiment and quantile reports.

Renders from the already-emitted result objects, so the statistical
modules stay free of plotting concerns.  All functions write files and
return the written path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .pivotal import QuantileTable
from .simharness import ExperimentResult

_STYLE = {
    "figure.figsize": (6.0, 3.8),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def rejection_figure(result: ExperimentResult, path: str | Path) -> Path:
    """Rejection probability vs threshold, with +-2 SE band and level line."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        d = np.asarray(result.deltas)
        p = np.asarray(result.rejection)
        se = np.asarray(result.se)
        order = np.argsort(d)
        d, p, se = d[order], p[order], se[order]
        ax.plot(d, p, "o-", color="tab:blue", label="rejection rate")
        ax.fill_between(d, p - 2 * se, p + 2 * se, color="tab:blue", alpha=0.2)
        ax.axhline(result.alpha, linestyle="--", color="gray", label=f"level {result.alpha}")
        ax.set_xlabel(r"threshold $\Delta$")
        ax.set_ylabel("empirical rejection probability")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False)
        slope = result.spec.get("slope", result.spec.get("sample1", {}).get("slope", "?"))
        ax.set_title(f"{slope}, {result.runs} runs")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def pivotal_figure(draws: np.ndarray, table: QuantileTable, path: str | Path) -> Path:
    """Histogram of pivotal draws with the tabulated quantiles marked."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        draws = np.asarray(draws)
        clip = np.quantile(np.abs(draws), 0.995)
        ax.hist(np.clip(draws, -clip, clip), bins=120, density=True, color="tab:gray")
        for level, value in sorted(table.quantiles.items()):
            ax.axvline(value, linestyle="--", label=f"{level:.2f}: {value:.2f}")
        ax.set_xlabel("pivotal ratio")
        ax.set_ylabel("density")
        cfg = table.config
        ax.set_title(rf"$\nu_0$={cfg.nu0:g}, Q={cfg.Q}, {cfg.n_paths} paths")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path
