"""Discretized functions on [0, 1] and [0, 1]^2 with trapezoid quadrature.

Curves are immutable value objects: a uniform grid plus sampled values.
All inner products are composite trapezoid rules on the grid, so they
reduce to fixed weighted dot products.  The module also provides the
cosine basis, least-squares Fourier projection of raw observations onto
the standard grid, and CSV ingestion/serialization of curve samples.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ContractError

DEFAULT_GRID_SIZE = 101

# 17 significant digits round-trips IEEE doubles through text.
_FLOAT_FMT = "%.17g"


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, 1], endpoints included."""

    n_points: int = DEFAULT_GRID_SIZE

    def __post_init__(self) -> None:
        if self.n_points < 9:
            raise ContractError(f"grid needs at least 9 points, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return 1.0 / (self.n_points - 1)

    @cached_property
    def points(self) -> np.ndarray:
        return _readonly(np.linspace(0.0, 1.0, self.n_points))

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return _readonly(w)


@dataclass(frozen=True, eq=False)
class Curve:
    """Function on [0, 1] sampled on a uniform grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _readonly(np.asarray(self.values, dtype=float).ravel())
        if values.size != self.grid.n_points:
            raise ContractError(
                f"curve has {values.size} values for a {self.grid.n_points}-point grid"
            )
        if not np.all(np.isfinite(values)):
            raise ContractError("curve values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, fn, grid: Grid | None = None) -> "Curve":
        grid = grid or Grid()
        return cls(grid, fn(grid.points))


@dataclass(frozen=True, eq=False)
class Curve2D:
    """Function on [0, 1]^2 sampled on a tensor grid (rows: s, columns: t)."""

    grid_s: Grid
    grid_t: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = _readonly(np.asarray(self.values, dtype=float))
        if values.shape != (self.grid_s.n_points, self.grid_t.n_points):
            raise ContractError(
                f"value matrix {values.shape} does not match grids "
                f"({self.grid_s.n_points}, {self.grid_t.n_points})"
            )
        if not np.all(np.isfinite(values)):
            raise ContractError("curve values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, fn, grid_s: Grid | None = None, grid_t: Grid | None = None) -> "Curve2D":
        grid_s = grid_s or Grid()
        grid_t = grid_t or grid_s
        ss, tt = np.meshgrid(grid_s.points, grid_t.points, indexing="ij")
        return cls(grid_s, grid_t, fn(ss, tt))


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Finite collection of basis curves sharing one grid."""

    grid: Grid
    functions: tuple[Curve, ...]
    kind: str
    second_derivatives: tuple[Curve, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("galerkin_spline", "fourier", "cosine"):
            raise ContractError(f"unknown basis kind {self.kind!r}")
        for f in self.functions:
            if f.grid != self.grid:
                raise ContractError("basis functions must share the basis grid")
        if self.second_derivatives is not None and len(self.second_derivatives) != len(
            self.functions
        ):
            raise ContractError("second_derivatives must match functions in length")

    def __len__(self) -> int:
        return len(self.functions)

    def value_matrix(self) -> np.ndarray:
        """Basis values stacked as an (n_points, n_functions) matrix."""
        return np.column_stack([f.values for f in self.functions])


def _check_same_grid(f: Curve, g: Curve) -> None:
    if f.grid != g.grid:
        raise ContractError(
            f"grid mismatch: {f.grid.n_points} vs {g.grid.n_points} points"
        )


def inner_l2(f: Curve, g: Curve) -> float:
    """Trapezoid approximation of the L^2 inner product of two curves."""
    _check_same_grid(f, g)
    return float(np.dot(f.grid.trapezoid_weights * f.values, g.values))


def norm_l2_sq(f: Curve) -> float:
    return inner_l2(f, f)


def inner_l2_2d(f: Curve2D, g: Curve2D) -> float:
    """Tensor-trapezoid approximation of the L^2 inner product on [0, 1]^2."""
    if f.grid_s != g.grid_s or f.grid_t != g.grid_t:
        raise ContractError("grid mismatch between surfaces")
    ws = f.grid_s.trapezoid_weights
    wt = f.grid_t.trapezoid_weights
    return float(ws @ (f.values * g.values) @ wt)


def norm_l2_sq_2d(f: Curve2D) -> float:
    return inner_l2_2d(f, f)


def empirical_covariance(sample: list[Curve]) -> Curve2D:
    """Empirical covariance kernel (1/n) * sum (X_i - mean)(s) (X_i - mean)(t)."""
    if not sample:
        raise ContractError("empirical covariance needs a non-empty sample")
    grid = sample[0].grid
    for x in sample[1:]:
        _check_same_grid(sample[0], x)
    data = np.stack([x.values for x in sample])
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / len(sample)
    cov = 0.5 * (cov + cov.T)
    return Curve2D(grid, grid, cov)


def curve_matrix(sample: list[Curve]) -> np.ndarray:
    """Sample values stacked as an (n, n_points) matrix (common grid required)."""
    if not sample:
        raise ContractError("empty curve sample")
    for x in sample[1:]:
        _check_same_grid(sample[0], x)
    return np.stack([x.values for x in sample])


def cosine_basis(grid: Grid, size: int) -> BasisSet:
    """Orthonormal cosine basis: 1, sqrt(2) cos(pi t), sqrt(2) cos(2 pi t), ..."""
    if size < 1:
        raise ContractError("basis size must be positive")
    t = grid.points
    funcs = [Curve(grid, np.ones_like(t))]
    d2 = [Curve(grid, np.zeros_like(t))]
    for ell in range(2, size + 1):
        freq = (ell - 1) * np.pi
        funcs.append(Curve(grid, np.sqrt(2.0) * np.cos(freq * t)))
        d2.append(Curve(grid, -np.sqrt(2.0) * freq**2 * np.cos(freq * t)))
    return BasisSet(grid, tuple(funcs), "cosine", tuple(d2))


def _fourier_design(times: np.ndarray, n_basis: int) -> np.ndarray:
    cols = [np.ones_like(times)]
    for k in range(1, (n_basis - 1) // 2 + 1):
        cols.append(np.sqrt(2.0) * np.cos(2.0 * np.pi * k * times))
        cols.append(np.sqrt(2.0) * np.sin(2.0 * np.pi * k * times))
    return np.column_stack(cols)


def fourier_project(
    times: np.ndarray,
    raw: np.ndarray,
    n_basis: int,
    grid: Grid | None = None,
) -> Curve:
    """Least-squares projection of raw observations onto a Fourier basis.

    The observations ``raw`` live at arbitrary ``times`` in [0, 1]; the
    returned curve is the fitted Fourier expansion re-evaluated on ``grid``.
    """
    grid = grid or Grid()
    times = np.asarray(times, dtype=float).ravel()
    raw = np.asarray(raw, dtype=float).ravel()
    if times.size != raw.size:
        raise ContractError("times and raw observations differ in length")
    if n_basis < 1 or n_basis % 2 == 0:
        raise ContractError("n_basis must be a positive odd integer")
    if raw.size < n_basis:
        raise ContractError(
            f"need at least n_basis={n_basis} observations, got {raw.size}"
        )
    design = _fourier_design(times, n_basis)
    coef, _, rank, _ = np.linalg.lstsq(design, raw, rcond=None)
    if rank < n_basis:
        raise ContractError(
            f"design is rank deficient ({rank} < {n_basis}); "
            "too few distinct observation times"
        )
    return Curve(grid, _fourier_design(grid.points, n_basis) @ coef)


# ---------------------------------------------------------------------------
# CSV ingestion and serialization
# ---------------------------------------------------------------------------


def _parse_row(row: list[str], path: str, index: int) -> np.ndarray:
    try:
        return np.array([float(cell) for cell in row], dtype=float)
    except ValueError as exc:
        raise ContractError(f"{path}: non-numeric cell in row {index}: {exc}") from exc


def _grid_from_header(header: np.ndarray) -> Grid:
    grid = Grid(header.size)
    if not np.allclose(header, grid.points, atol=1e-9):
        raise ContractError("header coordinates are not a uniform grid on [0, 1]")
    return grid


def read_curves_csv(path: str | Path, grid: Grid | None = None) -> list[Curve]:
    """Read curves from CSV: rows are observations, columns are grid values.

    An optional header row carrying the grid coordinates is detected by its
    first cell failing to parse as a number, or by an exact match with the
    uniform grid.  If ``grid`` is omitted it is inferred from the header or
    from the column count.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ContractError(f"{path}: empty file")

    header: np.ndarray | None = None
    try:
        first = _parse_row(rows[0], str(path), 0)
    except ContractError:
        first = None
    if first is None:
        # non-numeric header row (labels); coordinates unknown
        rows = rows[1:]
        if not rows:
            raise ContractError(f"{path}: no data rows")
    elif len(rows) > 1 and first.size >= 9:
        # a numeric first row equal to the uniform grid is a coordinate header
        if np.allclose(first, Grid(first.size).points, atol=1e-9):
            header, rows = first, rows[1:]

    n_cols = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise ContractError(
                f"{path}: ragged row {i}: expected {n_cols} cells, got {len(row)}"
            )
    data = np.stack([_parse_row(row, str(path), i) for i, row in enumerate(rows)])

    if grid is None:
        grid = _grid_from_header(header) if header is not None else Grid(n_cols)
    if n_cols != grid.n_points:
        raise ContractError(
            f"{path}: {n_cols} columns do not match the {grid.n_points}-point grid"
        )
    return [Curve(grid, row) for row in data]


def write_curves_csv(path: str | Path, curves: list[Curve], header: bool = True) -> None:
    if not curves:
        raise ContractError("no curves to write")
    grid = curves[0].grid
    for c in curves[1:]:
        _check_same_grid(curves[0], c)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([_FLOAT_FMT % p for p in grid.points])
        for c in curves:
            writer.writerow([_FLOAT_FMT % v for v in c.values])
    write_metadata(path, {"n_points": grid.n_points, "kind": "curves"})


def read_scalars_csv(path: str | Path) -> np.ndarray:
    """Read a one-column CSV of scalar responses (optional non-numeric header)."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ContractError(f"{path}: empty file")
    start = 0
    try:
        float(rows[0][0])
    except ValueError:
        start = 1
    values = []
    for i, row in enumerate(rows[start:]):
        if len(row) != 1:
            raise ContractError(f"{path}: expected one column, row {i} has {len(row)}")
        values.append(_parse_row(row, str(path), i)[0])
    if not values:
        raise ContractError(f"{path}: no data rows")
    return np.array(values)


def write_scalars_csv(path: str | Path, values: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        for v in np.asarray(values, dtype=float).ravel():
            writer.writerow([_FLOAT_FMT % v])


def read_curve2d_csv(path: str | Path) -> Curve2D:
    """Read one surface: first row holds t coordinates, first column holds s."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if len(rows) < 2:
        raise ContractError(f"{path}: surface file needs a header row and data rows")
    t_coords = _parse_row(rows[0][1:], str(path), 0)
    s_coords = []
    data = []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != t_coords.size + 1:
            raise ContractError(f"{path}: ragged row {i}")
        parsed = _parse_row(row, str(path), i)
        s_coords.append(parsed[0])
        data.append(parsed[1:])
    grid_s = _grid_from_header(np.array(s_coords))
    grid_t = _grid_from_header(t_coords)
    return Curve2D(grid_s, grid_t, np.stack(data))


def write_curve2d_csv(path: str | Path, surface: Curve2D) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + [_FLOAT_FMT % t for t in surface.grid_t.points])
        for s, row in zip(surface.grid_s.points, surface.values):
            writer.writerow([_FLOAT_FMT % s] + [_FLOAT_FMT % v for v in row])
    write_metadata(
        path,
        {
            "n_points_s": surface.grid_s.n_points,
            "n_points_t": surface.grid_t.n_points,
            "kind": "curve2d",
        },
    )


def write_metadata(data_path: str | Path, meta: dict) -> None:
    """Write a JSON sidecar describing a CSV data file."""
    sidecar = Path(str(data_path) + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_metadata(data_path: str | Path) -> dict | None:
    sidecar = Path(str(data_path) + ".meta.json")
    if not sidecar.exists():
        return None
    return json.loads(sidecar.read_text())
