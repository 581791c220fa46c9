"""Simultaneous diagonalization of covariance and roughness forms.

Solves the empirical integro-differential eigenproblems that produce the
truncated basis used by the penalized estimators.  The discretization is
a Galerkin weak form in a cubic B-spline space: with basis {psi_j}, the
covariance form V(x, w) = integral C(s, t) x(s) w(t) and the roughness
form J(x, w) = integral x'' w'' (shifted variants for the functional
response) become symmetric matrices, and the generalized symmetric
eigenproblem J b = rho V b yields eigenfunctions orthonormal under V and
diagonal under J.  The weak form leaves the boundary unconstrained, so
the variationally natural free-end conditions hold automatically.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline

from .errors import ContractError, NumericalError
from .funcspace import BasisSet, Curve, Curve2D, Grid, cosine_basis

DEFAULT_GALERKIN_DIM = 40

# V-modes below this fraction of trace(V) are null directions of the
# empirical covariance and would produce spurious near-infinite rhos.
_V_RANK_RTOL = 1e-10

_SPLINE_DEGREE = 3


def default_truncation(n: int) -> int:
    """Default number of eigenpairs: min(20, n // 4), at least 1."""
    return max(1, min(20, n // 4))


@lru_cache(maxsize=8)
def _spline_design(n_points: int, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cubic B-spline basis values and first/second derivatives on the grid.

    Clamped uniform knots on [0, 1]; returns (B0, B1, B2), each of shape
    (n_points, dim).
    """
    k = _SPLINE_DEGREE
    if dim < k + 2:
        raise ContractError(f"galerkin_dim must be at least {k + 2}, got {dim}")
    interior = np.linspace(0.0, 1.0, dim - k + 1)[1:-1]
    knots = np.r_[np.zeros(k + 1), interior, np.ones(k + 1)]
    spl = BSpline(knots, np.eye(dim), k)
    x = Grid(n_points).points
    b0 = spl(x)
    b1 = spl.derivative(1)(x)
    b2 = spl.derivative(2)(x)
    for b in (b0, b1, b2):
        b.setflags(write=False)
    return b0, b1, b2


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Truncated eigenpairs (rho_k, phi_k), V-orthonormal and J-diagonal.

    ``basis`` holds the eigenfunctions on the standard grid; ``basis_d1``
    and ``basis_d2`` their first and second derivatives, exact within the
    spline space, so quadrature checks of the J-form need no numerical
    differentiation.
    """

    basis: tuple[Curve, ...]
    basis_d1: tuple[Curve, ...]
    basis_d2: tuple[Curve, ...]
    rhos: np.ndarray
    r: int
    metric: Curve2D
    sobolev_order: int = 2
    frequency_shift: int = 0  # (ell - 1) of the shifted roughness form

    def __post_init__(self) -> None:
        rhos = np.asarray(self.rhos, dtype=float)
        rhos.setflags(write=False)
        object.__setattr__(self, "rhos", rhos)
        if len(self.basis) != self.r or rhos.size != self.r:
            raise ContractError("eigen system size mismatch")
        if np.any(np.diff(rhos) < -1e-12):
            raise ContractError("eigenvalues must be sorted ascending")

    @property
    def grid(self) -> Grid:
        return self.basis[0].grid

    def value_matrix(self) -> np.ndarray:
        return np.column_stack([f.values for f in self.basis])


@dataclass(frozen=True, eq=False)
class TensorEigenSystem:
    """Per-frequency eigen systems for the functional-response problem.

    ``systems[ell-1]`` solves the roughness form shifted by frequency
    (ell - 1) * pi; the tensor eigenfunctions are x_{k ell} (x) eta_ell
    with eta the cosine basis.
    """

    systems: tuple[EigenSystem, ...]
    eta: BasisSet
    r: int

    def __post_init__(self) -> None:
        if len(self.systems) != self.r or len(self.eta) != self.r:
            raise ContractError("tensor eigen system size mismatch")

    @property
    def grid(self) -> Grid:
        return self.systems[0].grid


def _check_covariance(cov: Curve2D) -> None:
    if cov.grid_s != cov.grid_t:
        raise ContractError("covariance kernel must live on a square grid")
    scale = max(1.0, float(np.max(np.abs(cov.values))))
    if np.max(np.abs(cov.values - cov.values.T)) > 1e-8 * scale:
        raise ContractError("covariance kernel is not symmetric")


def _solve_weak_form(
    cov: Curve2D,
    r: int,
    galerkin_dim: int,
    shift: int,
) -> EigenSystem:
    grid = cov.grid_s
    b0, b1, b2 = _spline_design(grid.n_points, galerkin_dim)
    w = grid.trapezoid_weights

    wb0 = w[:, None] * b0
    v_mat = wb0.T @ cov.values @ wb0
    v_mat = 0.5 * (v_mat + v_mat.T)

    c = (shift * np.pi) ** 2
    j_mat = b2.T @ (w[:, None] * b2)
    if shift:
        j_mat = j_mat + 2.0 * c * (b1.T @ (w[:, None] * b1)) + c**2 * (b0.T @ wb0)
    j_mat = 0.5 * (j_mat + j_mat.T)

    # Spectral filtering of the rank-deficient covariance form.
    v_eigvals, v_eigvecs = np.linalg.eigh(v_mat)
    keep = v_eigvals > _V_RANK_RTOL * max(np.trace(v_mat), np.finfo(float).tiny)
    n_keep = int(np.count_nonzero(keep))
    if n_keep < r:
        raise NumericalError(
            f"covariance form supports only {n_keep} eigenpairs but r={r} were "
            "requested; use a larger sample or a smaller truncation"
        )
    s = v_eigvecs[:, keep] / np.sqrt(v_eigvals[keep])

    reduced = s.T @ j_mat @ s
    reduced = 0.5 * (reduced + reduced.T)
    rhos, y = np.linalg.eigh(reduced)

    rhos = rhos[:r].copy()
    coeffs = s @ y[:, :r]

    tol = 1e-8 * max(1.0, float(np.max(np.abs(rhos))))
    if np.any(rhos < -tol):
        raise NumericalError("roughness form produced a negative eigenvalue")
    rhos[rhos < 0] = 0.0

    phi = b0 @ coeffs
    phi_d1 = b1 @ coeffs
    phi_d2 = b2 @ coeffs

    # Fixed sign convention: positive integral, falling back to the first
    # nonzero coefficient when the integral is numerically zero.
    integrals = w @ phi
    for k in range(r):
        sign = np.sign(integrals[k]) if abs(integrals[k]) > 1e-9 else 0.0
        if sign == 0.0:
            nonzero = coeffs[np.abs(coeffs[:, k]) > 1e-12, k]
            sign = np.sign(nonzero[0]) if nonzero.size else 1.0
        if sign < 0:
            phi[:, k] *= -1.0
            phi_d1[:, k] *= -1.0
            phi_d2[:, k] *= -1.0

    return EigenSystem(
        basis=tuple(Curve(grid, phi[:, k]) for k in range(r)),
        basis_d1=tuple(Curve(grid, phi_d1[:, k]) for k in range(r)),
        basis_d2=tuple(Curve(grid, phi_d2[:, k]) for k in range(r)),
        rhos=rhos,
        r=r,
        metric=cov,
        frequency_shift=shift,
    )


def solve_eigen_scalar(
    cov: Curve2D,
    r: int,
    galerkin_dim: int = DEFAULT_GALERKIN_DIM,
    m: int = 2,
) -> EigenSystem:
    """Eigenpairs of rho * integral C(s, t) phi(t) dt = phi'''' in weak form.

    Returns the r smallest nonnegative eigenvalues with V-orthonormal
    eigenfunctions.  Only Sobolev order m = 2 is supported.
    """
    if m != 2:
        raise ContractError("only sobolev order m=2 is implemented")
    if r < 1:
        raise ContractError("truncation level r must be positive")
    _check_covariance(cov)
    return _solve_weak_form(cov, r, galerkin_dim, shift=0)


def solve_eigen_functional(
    cov: Curve2D,
    r: int,
    galerkin_dim: int = DEFAULT_GALERKIN_DIM,
    m: int = 2,
) -> TensorEigenSystem:
    """Per-frequency eigenpairs for the functional-response penalty.

    For each ell = 1..r the roughness form gains the shift terms
    2 ((ell-1) pi)^2 * integral x' w' + ((ell-1) pi)^4 * integral x w,
    and the same generalized eigenproblem is solved against the
    covariance form.
    """
    if m != 2:
        raise ContractError("only sobolev order m=2 is implemented")
    if r < 1:
        raise ContractError("truncation level r must be positive")
    _check_covariance(cov)
    systems = []
    for ell in range(1, r + 1):
        try:
            systems.append(_solve_weak_form(cov, r, galerkin_dim, shift=ell - 1))
        except NumericalError as exc:
            raise NumericalError(f"frequency ell={ell}: {exc}") from exc
    return TensorEigenSystem(
        systems=tuple(systems),
        eta=cosine_basis(cov.grid_s, r),
        r=r,
    )


def gram_l2(sys: EigenSystem) -> np.ndarray:
    """L^2 Gram matrix of the eigenbasis by quadrature (symmetric PSD)."""
    phi = sys.value_matrix()
    w = sys.grid.trapezoid_weights
    gram = phi.T @ (w[:, None] * phi)
    return 0.5 * (gram + gram.T)


def gram_l2_tensor(tsys: TensorEigenSystem) -> tuple[np.ndarray, ...]:
    """Per-frequency L^2 Gram matrices of the x-bases."""
    return tuple(gram_l2(s) for s in tsys.systems)


# ---------------------------------------------------------------------------
# CSV bundle serialization (for caching eigen systems across CLI runs)
# ---------------------------------------------------------------------------


def save_eigensystem(sys: EigenSystem, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "eigenvalues.csv", sys.rhos, fmt="%.17g", delimiter=",")
    for name, curves in (
        ("basis.csv", sys.basis),
        ("basis_d1.csv", sys.basis_d1),
        ("basis_d2.csv", sys.basis_d2),
    ):
        np.savetxt(
            directory / name,
            np.stack([c.values for c in curves]),
            fmt="%.17g",
            delimiter=",",
        )
    np.savetxt(directory / "metric.csv", sys.metric.values, fmt="%.17g", delimiter=",")
    (directory / "meta.json").write_text(
        json.dumps(
            {
                "n_points": sys.grid.n_points,
                "r": sys.r,
                "sobolev_order": sys.sobolev_order,
                "frequency_shift": sys.frequency_shift,
            },
            sort_keys=True,
        )
        + "\n"
    )


def load_eigensystem(directory: str | Path) -> EigenSystem:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    grid = Grid(meta["n_points"])
    rhos = np.atleast_1d(np.loadtxt(directory / "eigenvalues.csv", delimiter=","))

    def load_curves(name: str) -> tuple[Curve, ...]:
        data = np.atleast_2d(np.loadtxt(directory / name, delimiter=","))
        return tuple(Curve(grid, row) for row in data)

    metric = Curve2D(grid, grid, np.loadtxt(directory / "metric.csv", delimiter=","))
    return EigenSystem(
        basis=load_curves("basis.csv"),
        basis_d1=load_curves("basis_d1.csv"),
        basis_d2=load_curves("basis_d2.csv"),
        rhos=rhos,
        r=meta["r"],
        metric=metric,
        sobolev_order=meta["sobolev_order"],
        frequency_shift=meta["frequency_shift"],
    )
