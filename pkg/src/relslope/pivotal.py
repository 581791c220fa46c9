"""Monte-Carlo simulation of the pivotal self-normalized ratio.

The limiting ratio is B(1) divided by the square root of
Q^-1 (1 - nu0) * sum_q |nu_q B(nu_q) - nu_q^2 B(1)|^2, with B a standard
Brownian motion and nu_q = nu0 + q (1 - nu0) / Q.  Its distribution is
free of nuisance parameters, so simulated quantiles calibrate every test
in the package.  Paths are generated with a counter-based generator
(Philox) in fixed-size blocks, which makes draws bitwise reproducible
and independent of any parallel execution layout.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

DEFAULT_LEVELS = (0.90, 0.95, 0.99)

_BLOCK_PATHS = 2048
_DENOM_FLOOR = 1e-300


@dataclass(frozen=True)
class PivotalConfig:
    """Simulation settings for the pivotal ratio."""

    nu0: float = 0.5
    Q: int = 25
    n_paths: int = 10_000
    n_steps: int = 2048
    seed: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.nu0 < 1.0:
            raise ContractError(f"nu0 must lie in (0, 1), got {self.nu0}")
        if self.Q < 1:
            raise ContractError("Q must be a positive integer")
        if self.n_steps < 512:
            raise ContractError("n_steps must be at least 512")
        if self.n_paths < 1000:
            raise ContractError("n_paths must be at least 1000")

    @property
    def fractions(self) -> np.ndarray:
        nu = self.nu0 + np.arange(1, self.Q + 1) * (1.0 - self.nu0) / self.Q
        nu[-1] = 1.0
        return nu

    def cache_key(self) -> str:
        return (
            f"pivot_nu{self.nu0:.12g}_Q{self.Q}_paths{self.n_paths}"
            f"_steps{self.n_steps}_seed{self.seed}"
        )

    def to_dict(self) -> dict:
        return {
            "nu0": self.nu0,
            "Q": self.Q,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """Simulated quantiles of the pivotal ratio, with provenance."""

    config: PivotalConfig
    quantiles: dict[float, float]
    n_redraws: int = 0
    draws: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        levels = sorted(self.quantiles)
        values = [self.quantiles[a] for a in levels]
        if np.any(np.diff(values) < 0):
            raise ContractError("quantiles must be nondecreasing in the level")

    def quantile(self, level: float) -> float:
        try:
            return self.quantiles[level]
        except KeyError:
            raise ContractError(
                f"level {level} not present; available: {sorted(self.quantiles)}"
            ) from None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "quantiles": {f"{a:.12g}": v for a, v in sorted(self.quantiles.items())},
            "n_redraws": self.n_redraws,
        }


def _ratio_from_block(increments: np.ndarray, config: PivotalConfig) -> np.ndarray:
    paths = np.cumsum(increments, axis=1)
    b_one = paths[:, -1]
    # left-point lookup: B(nu) read at the nearest grid point <= nu
    idx = np.floor(config.fractions * config.n_steps).astype(int)
    b_nu = np.where(idx[None, :] > 0, paths[:, np.maximum(idx, 1) - 1], 0.0)
    nu = config.fractions
    dev = nu[None, :] * b_nu - (nu**2)[None, :] * b_one[:, None]
    denom_sq = (1.0 - config.nu0) / config.Q * np.sum(dev**2, axis=1)
    return b_one / np.sqrt(denom_sq), denom_sq


def draw_pivotal(config: PivotalConfig) -> np.ndarray:
    """Simulate n_paths draws of the pivotal ratio, deterministic in the seed."""
    draws, n_redraws = _draw_pivotal_counted(config)
    return draws


def _draw_pivotal_counted(config: PivotalConfig) -> tuple[np.ndarray, int]:
    scale = 1.0 / np.sqrt(config.n_steps)
    out = np.empty(config.n_paths)
    n_redraws = 0
    pos = 0
    block_index = 0
    while pos < config.n_paths:
        take = min(_BLOCK_PATHS, config.n_paths - pos)
        rng = np.random.Generator(np.random.Philox(key=config.seed).jumped(block_index))
        increments = scale * rng.standard_normal((take, config.n_steps))
        ratios, denom_sq = _ratio_from_block(increments, config)
        bad = denom_sq < _DENOM_FLOOR
        while np.any(bad):
            # probability-zero event: redraw degenerate paths from the same block stream
            n_redraws += int(np.count_nonzero(bad))
            redraw = scale * rng.standard_normal((int(np.count_nonzero(bad)), config.n_steps))
            new_ratios, new_denom = _ratio_from_block(redraw, config)
            ratios[bad] = new_ratios
            denom_sq[bad] = new_denom
            bad = denom_sq < _DENOM_FLOOR
        out[pos : pos + take] = ratios
        pos += take
        block_index += 1
    return out, n_redraws


def empirical_quantile(draws: np.ndarray, level: float) -> float:
    """Order statistic at position ceil(level * n) (1-based)."""
    draws = np.asarray(draws, dtype=float).ravel()
    if draws.size == 0:
        raise ContractError("no draws")
    if not 0.0 < level < 1.0:
        raise ContractError(f"level must lie in (0, 1), got {level}")
    k = int(np.ceil(level * draws.size))
    return float(np.sort(draws)[k - 1])


def quantiles(
    draws: np.ndarray,
    levels: tuple[float, ...] = DEFAULT_LEVELS,
    config: PivotalConfig | None = None,
    keep_draws: bool = False,
) -> QuantileTable:
    """Empirical quantiles of the draws at the requested levels."""
    table = {float(a): empirical_quantile(draws, a) for a in levels}
    return QuantileTable(
        config=config if config is not None else PivotalConfig(),
        quantiles=table,
        draws=np.sort(np.asarray(draws, dtype=float).ravel()) if keep_draws else None,
    )


def simulate_table(
    config: PivotalConfig,
    levels: tuple[float, ...] = DEFAULT_LEVELS,
    keep_draws: bool = False,
) -> QuantileTable:
    draws, n_redraws = _draw_pivotal_counted(config)
    table = quantiles(draws, levels, config, keep_draws)
    return QuantileTable(config, table.quantiles, n_redraws, table.draws)


# ---------------------------------------------------------------------------
# On-disk quantile cache
# ---------------------------------------------------------------------------


def _cache_file(config: PivotalConfig, cache_path: str | Path) -> Path:
    return Path(cache_path) / (config.cache_key() + ".json")


def _load_cached_draws(config: PivotalConfig, cache_path: str | Path) -> np.ndarray | None:
    path = _cache_file(config, cache_path)
    if not path.exists():
        return None
    try:
        payload = json.loads(path.read_text())
        if payload["config"] != config.to_dict():
            raise ValueError("cache key mismatch")
        draws = np.asarray(payload["draws"], dtype=float)
        if draws.size != config.n_paths or not np.all(np.isfinite(draws)):
            raise ValueError("cached draws malformed")
        return draws
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        warnings.warn(f"discarding corrupt pivotal cache {path}: {exc}", stacklevel=2)
        return None


def cached_draws(config: PivotalConfig, cache_path: str | Path) -> np.ndarray:
    """Sorted pivotal draws for the config, simulated and cached on miss."""
    draws = _load_cached_draws(config, cache_path)
    if draws is not None:
        return draws
    draws = np.sort(draw_pivotal(config))
    path = _cache_file(config, cache_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"config": config.to_dict(), "draws": draws.tolist()}
    path.write_text(json.dumps(payload))
    return draws


def cached_quantile(config: PivotalConfig, level: float, cache_path: str | Path) -> float:
    """Quantile served from the on-disk cache keyed by the full config."""
    return empirical_quantile(cached_draws(config, cache_path), level)


def cached_table(
    config: PivotalConfig,
    levels: tuple[float, ...],
    cache_path: str | Path | None,
) -> QuantileTable:
    """Quantile table backed by the cache (or simulated directly if no cache)."""
    if cache_path is None:
        return simulate_table(config, levels)
    draws = cached_draws(config, cache_path)
    return quantiles(draws, levels, config)
