"""Tests for figure rendering (files only, no display backend)."""

import numpy as np

from relslope.figures import pivotal_figure, rejection_figure
from relslope.pivotal import PivotalConfig, draw_pivotal, quantiles
from relslope.simharness import ExperimentResult


def test_rejection_figure_written(tmp_path):
    result = ExperimentResult(
        deltas=np.array([0.2, 0.6, 1.0]),
        rejection=np.array([0.9, 0.3, 0.04]),
        se=np.array([0.02, 0.03, 0.01]),
        runs=200,
        failures=0,
        spec={"slope": "S2", "predictor": "iid", "n": 100},
        alpha=0.05,
        mean_T=1.5,
    )
    out = rejection_figure(result, tmp_path / "rej.png")
    assert out.exists() and out.stat().st_size > 1000


def test_pivotal_figure_written(tmp_path):
    cfg = PivotalConfig(n_paths=2000, n_steps=512, seed=6)
    draws = draw_pivotal(cfg)
    table = quantiles(draws, (0.9, 0.95), cfg)
    out = pivotal_figure(draws, table, tmp_path / "piv.png")
    assert out.exists() and out.stat().st_size > 1000
