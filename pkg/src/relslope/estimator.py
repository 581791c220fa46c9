"""Sequential ridge estimation of the slope function over sample fractions.

For each fraction nu_q the slope estimate solves a ridge problem in the
truncated eigenbasis: b_q = (Omega_q' Omega_q + n_q * lambda * Lambda)^-1
Omega_q' Y_q, where Omega_q collects inner products of the first n_q
predictor curves with the eigenfunctions and Lambda is the diagonal of
eigenvalues.  The regularization parameter is selected by a modified GCV
score summed over all fractions.  The functional-response variant solves
one such system per cosine frequency.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import ContractError, NumericalError
from .funcspace import Curve, Curve2D, curve_matrix
from .eigensys import EigenSystem, TensorEigenSystem, gram_l2, gram_l2_tensor

_COND_LIMIT = 1e14
_RESIDUAL_RTOL = 1e-8


def default_lambda_grid(n: int, size: int = 30) -> np.ndarray:
    """Log-spaced candidate regularization parameters, scaled by 1/n."""
    return np.logspace(-8.0, 2.0, size) / n


@dataclass(frozen=True)
class FractionScheme:
    """Nested sample fractions nu_q = nu0 + q (1 - nu0) / Q, q = 1..Q."""

    n: int
    nu0: float = 0.5
    Q: int = 25

    def __post_init__(self) -> None:
        if not 0.0 < self.nu0 < 1.0:
            raise ContractError(f"nu0 must lie in (0, 1), got {self.nu0}")
        if self.Q < 1:
            raise ContractError("Q must be a positive integer")
        if self.n < 1:
            raise ContractError("sample size must be positive")

    @cached_property
    def fractions(self) -> np.ndarray:
        nu = self.nu0 + np.arange(1, self.Q + 1) * (1.0 - self.nu0) / self.Q
        nu[-1] = 1.0
        nu.setflags(write=False)
        return nu

    @cached_property
    def sizes(self) -> np.ndarray:
        sizes = np.floor(self.n * self.fractions).astype(int)
        sizes[-1] = self.n
        sizes.setflags(write=False)
        return sizes

    def matches(self, other: "FractionScheme") -> bool:
        """Same fraction set (nu0, Q); sample sizes may differ."""
        return self.nu0 == other.nu0 and self.Q == other.Q


@dataclass(frozen=True, eq=False)
class DesignScalar:
    """Eigenbasis design for one response: Omega (n x r), rhos (r), Y (n)."""

    omega: np.ndarray
    rhos: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega, dtype=float)
        rhos = np.asarray(self.rhos, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if omega.ndim != 2 or omega.shape[0] != y.size or omega.shape[1] != rhos.size:
            raise ContractError("design dimensions are inconsistent")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(y))):
            raise ContractError("design contains non-finite values")
        if np.any(rhos < 0):
            raise ContractError("eigenvalues must be nonnegative")
        for name, arr in (("omega", omega), ("rhos", rhos), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def r(self) -> int:
        return self.rhos.size


@dataclass(frozen=True, eq=False)
class SequentialFit:
    """Ridge coefficients b_q per fraction, with the L^2 Gram of the basis."""

    coeffs: np.ndarray  # (Q, r)
    lam: float
    scheme: FractionScheme
    gram: np.ndarray  # (r, r)

    def coefficient(self, q: int) -> np.ndarray:
        """Coefficient vector at fraction q (1-based, q = Q is the full fit)."""
        if not 1 <= q <= self.scheme.Q:
            raise ContractError(f"fraction index {q} outside 1..{self.scheme.Q}")
        return self.coeffs[q - 1]

    @property
    def norms_sq(self) -> np.ndarray:
        """d_q = b_q' Gram b_q for every fraction."""
        return np.einsum("qi,ij,qj->q", self.coeffs, self.gram, self.coeffs)


@dataclass(frozen=True, eq=False)
class SequentialFitFunctional:
    """Per-(fraction, frequency) ridge coefficients for functional responses."""

    coeffs: np.ndarray  # (Q, L, r)
    lam: float
    scheme: FractionScheme
    grams: tuple[np.ndarray, ...]  # per-frequency L^2 Grams of the x-bases

    def coefficient(self, q: int, ell: int) -> np.ndarray:
        if not 1 <= q <= self.scheme.Q:
            raise ContractError(f"fraction index {q} outside 1..{self.scheme.Q}")
        if not 1 <= ell <= self.coeffs.shape[1]:
            raise ContractError(f"frequency index {ell} outside 1..{self.coeffs.shape[1]}")
        return self.coeffs[q - 1, ell - 1]

    @property
    def norms_sq(self) -> np.ndarray:
        """d_q = sum_ell b_{q,ell}' Gram_ell b_{q,ell}."""
        gram_stack = np.stack(self.grams)
        return np.einsum("qli,lij,qlj->q", self.coeffs, gram_stack, self.coeffs)


def build_design_scalar(X: list[Curve], y: np.ndarray, sys: EigenSystem) -> DesignScalar:
    """Quadrature design: omega_ik = <X_i, phi_k>, rhos from the eigen system."""
    y = np.asarray(y, dtype=float).ravel()
    if len(X) != y.size:
        raise ContractError(f"{len(X)} curves but {y.size} responses")
    data = curve_matrix(X)
    if X[0].grid != sys.grid:
        raise ContractError("curves and eigen system live on different grids")
    w = sys.grid.trapezoid_weights
    omega = data @ (w[:, None] * sys.value_matrix())
    return DesignScalar(omega, sys.rhos, y)


def build_design_functional(
    X: list[Curve], Y: list[Curve], tsys: TensorEigenSystem
) -> list[DesignScalar]:
    """Per-frequency designs: responses projected on the cosine basis."""
    if len(X) != len(Y):
        raise ContractError(f"{len(X)} predictors but {len(Y)} responses")
    x_mat = curve_matrix(X)
    y_mat = curve_matrix(Y)
    if X[0].grid != tsys.grid or Y[0].grid != tsys.grid:
        raise ContractError("curves and eigen system live on different grids")
    w = tsys.grid.trapezoid_weights
    y_proj = y_mat @ (w[:, None] * tsys.eta.value_matrix())  # (n, L)
    designs = []
    for ell, sub in enumerate(tsys.systems):
        omega = x_mat @ (w[:, None] * sub.value_matrix())
        designs.append(DesignScalar(omega, sub.rhos, y_proj[:, ell]))
    return designs


def _cumulative_normal_parts(design: DesignScalar, sizes: np.ndarray):
    """A_q = Omega_q' Omega_q, c_q = Omega_q' Y_q, yy_q = |Y_q|^2 per fraction."""
    if sizes[-1] > design.n:
        raise ContractError(
            f"scheme expects {sizes[-1]} observations, design has {design.n}"
        )
    omega, y = design.omega, design.y
    a_list, c_list, yy_list = [], [], []
    prev = 0
    a = np.zeros((design.r, design.r))
    c = np.zeros(design.r)
    yy = 0.0
    for nq in sizes:
        block = omega[prev:nq]
        a = a + block.T @ block
        c = c + block.T @ y[prev:nq]
        yy += float(y[prev:nq] @ y[prev:nq])
        a_list.append(a.copy())
        c_list.append(c.copy())
        yy_list.append(yy)
        prev = nq
    return np.stack(a_list), np.stack(c_list), np.array(yy_list)


def _solve_ridge(a: np.ndarray, penalty: np.ndarray, c: np.ndarray, q: int) -> np.ndarray:
    """Solve (A + penalty) b = c by SPD factorization with pseudo-inverse fallback."""
    k = a + np.diag(penalty)
    try:
        if np.linalg.cond(k) > _COND_LIMIT:
            raise np.linalg.LinAlgError("ill conditioned")
        b = scipy.linalg.cho_solve(scipy.linalg.cho_factor(k), c)
    except np.linalg.LinAlgError:
        b, *_ = np.linalg.lstsq(k, c, rcond=None)
    residual = np.linalg.norm(k @ b - c)
    if residual > _RESIDUAL_RTOL * (1.0 + np.linalg.norm(c)):
        raise NumericalError(
            f"normal equations unsolved at fraction q={q} (residual {residual:.2e}); "
            "the system is singular"
        )
    return b


def ridge_path_scalar(
    design: DesignScalar,
    lam: float,
    scheme: FractionScheme,
    gram: np.ndarray | None = None,
) -> SequentialFit:
    """Closed-form ridge solution for every nested fraction."""
    if lam <= 0:
        raise ContractError("lambda must be positive")
    if scheme.sizes[0] < design.r + 1:
        raise ContractError(
            f"first fraction holds {scheme.sizes[0]} observations; "
            f"need at least r+1={design.r + 1}"
        )
    a_all, c_all, _ = _cumulative_normal_parts(design, scheme.sizes)
    coeffs = np.empty((scheme.Q, design.r))
    for i, nq in enumerate(scheme.sizes):
        coeffs[i] = _solve_ridge(a_all[i], nq * lam * design.rhos, c_all[i], i + 1)
    return SequentialFit(coeffs, float(lam), scheme, gram)


def ridge_path_functional(
    designs: list[DesignScalar],
    lam: float,
    scheme: FractionScheme,
    grams: tuple[np.ndarray, ...],
) -> SequentialFitFunctional:
    """Per-frequency ridge paths; the objective decouples over frequencies."""
    if lam <= 0:
        raise ContractError("lambda must be positive")
    if len(designs) != len(grams):
        raise ContractError("one Gram matrix per frequency is required")
    r = designs[0].r
    if scheme.sizes[0] < r + 1:
        raise ContractError(
            f"first fraction holds {scheme.sizes[0]} observations; "
            f"need at least r+1={r + 1}"
        )
    coeffs = np.empty((scheme.Q, len(designs), r))
    for ell, design in enumerate(designs):
        a_all, c_all, _ = _cumulative_normal_parts(design, scheme.sizes)
        for i, nq in enumerate(scheme.sizes):
            try:
                coeffs[i, ell] = _solve_ridge(
                    a_all[i], nq * lam * design.rhos, c_all[i], i + 1
                )
            except NumericalError as exc:
                raise NumericalError(f"frequency ell={ell + 1}: {exc}") from exc
    return SequentialFitFunctional(coeffs, float(lam), scheme, grams)


def _gcv_components(parts, rhos: np.ndarray, sizes: np.ndarray, lam: float):
    """Per-fraction residual sums of squares and hat-matrix traces at lambda.

    Everything stays in the r-dimensional coefficient space:
    RSS_q = |Y_q|^2 - 2 b' c_q + b' A_q b and tr H_q = tr{(A_q + n_q
    lambda Lambda)^-1 A_q}.  Solves are batched over fractions; a
    singular batch falls back to per-fraction NaN marking.
    """
    a_all, c_all, yy_all = parts
    k_stack = a_all + (lam * sizes)[:, None, None] * np.diag(rhos)[None, :, :]
    rhs = np.concatenate([c_all[:, :, None], a_all], axis=2)
    try:
        sol = np.linalg.solve(k_stack, rhs)
    except np.linalg.LinAlgError:
        rss = np.full(sizes.size, np.nan)
        traces = np.full(sizes.size, np.nan)
        for i in range(sizes.size):
            try:
                sol_i = np.linalg.solve(k_stack[i], rhs[i])
            except np.linalg.LinAlgError:
                continue
            b = sol_i[:, 0]
            traces[i] = np.trace(sol_i[:, 1:])
            rss[i] = yy_all[i] - 2.0 * b @ c_all[i] + b @ a_all[i] @ b
        return rss, traces
    b = sol[:, :, 0]
    traces = np.trace(sol[:, :, 1:], axis1=1, axis2=2)
    rss = yy_all - 2.0 * np.einsum("qi,qi->q", b, c_all) + np.einsum(
        "qi,qij,qj->q", b, a_all, b
    )
    return rss, traces


def _gcv_scores(
    designs: list[DesignScalar], scheme: FractionScheme, lambda_grid: np.ndarray
) -> np.ndarray:
    """Modified GCV: sum over fractions of n_q^-1 RSS_q / (1 - tr H_q / n_q)^2.

    For functional responses the residuals and traces are summed over the
    frequency designs before forming the score.
    """
    sizes = scheme.sizes.astype(float)
    parts = [_cumulative_normal_parts(d, scheme.sizes) for d in designs]
    scores = np.empty(lambda_grid.size)
    for j, lam in enumerate(lambda_grid):
        rss = np.zeros(scheme.Q)
        tr = np.zeros(scheme.Q)
        for design, part in zip(designs, parts):
            rss_d, tr_d = _gcv_components(part, design.rhos, sizes, float(lam))
            rss += rss_d
            tr += tr_d
        # effective dof at or beyond the subsample size is degenerate:
        # the denominator vanishes at tr = n_q and the score formula is
        # meaningless past it, so such lambdas are excluded from the argmin
        if np.any(tr >= sizes):
            scores[j] = np.inf
            continue
        denom = (1.0 - tr / sizes) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            per_q = rss / sizes / denom
        if np.any(~np.isfinite(per_q)):
            scores[j] = np.inf
        else:
            scores[j] = float(np.sum(per_q))
    return scores


def _select_from_scores(lambda_grid: np.ndarray, scores: np.ndarray) -> float:
    if not np.any(np.isfinite(scores)):
        raise NumericalError("GCV score is degenerate for every candidate lambda")
    return float(lambda_grid[int(np.argmin(scores))])


def _check_lambda_grid(lambda_grid: np.ndarray) -> np.ndarray:
    lambda_grid = np.asarray(lambda_grid, dtype=float).ravel()
    if lambda_grid.size == 0:
        raise ContractError("lambda grid is empty")
    if np.any(lambda_grid < 0) or np.any(np.diff(lambda_grid) < 0):
        raise ContractError("lambda grid must be nonnegative and sorted ascending")
    return lambda_grid


def gcv_select_scalar(
    design: DesignScalar,
    scheme: FractionScheme,
    gram: np.ndarray | None = None,
    lambda_grid: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Grid minimizer of the modified GCV score (ties break to smaller lambda)."""
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(scheme.n)
    lambda_grid = _check_lambda_grid(lambda_grid)
    scores = _gcv_scores([design], scheme, lambda_grid)
    return _select_from_scores(lambda_grid, scores), scores


def gcv_select_functional(
    designs: list[DesignScalar],
    scheme: FractionScheme,
    lambda_grid: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """GCV with residuals and hat traces summed over frequency blocks."""
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(scheme.n)
    lambda_grid = _check_lambda_grid(lambda_grid)
    scores = _gcv_scores(designs, scheme, lambda_grid)
    return _select_from_scores(lambda_grid, scores), scores


def evaluate_estimate(fit: SequentialFit, sys: EigenSystem, q: int) -> Curve:
    """Slope estimate at fraction q as a grid curve: sum_k b_{k,q} phi_k."""
    b = fit.coefficient(q)
    return Curve(sys.grid, sys.value_matrix() @ b)


def evaluate_estimate_functional(
    fit: SequentialFitFunctional, tsys: TensorEigenSystem, q: int
) -> Curve2D:
    """Surface estimate at fraction q: sum_ell (b_ell' x_ell)(s) eta_ell(t)."""
    if not 1 <= q <= fit.scheme.Q:
        raise ContractError(f"fraction index {q} outside 1..{fit.scheme.Q}")
    grid = tsys.grid
    values = np.zeros((grid.n_points, grid.n_points))
    for ell, sub in enumerate(tsys.systems):
        g_ell = sub.value_matrix() @ fit.coeffs[q - 1, ell]
        values += np.outer(g_ell, tsys.eta.functions[ell].values)
    return Curve2D(grid, grid, values)


def export_coefficients_csv(fit: SequentialFit | SequentialFitFunctional, path) -> None:
    """Dump per-fraction ridge coefficients to CSV (debugging aid)."""
    with open(path, "w") as fh:
        if isinstance(fit, SequentialFit):
            fh.write("q," + ",".join(f"b{k + 1}" for k in range(fit.coeffs.shape[1])) + "\n")
            for q, row in enumerate(fit.coeffs, start=1):
                fh.write(f"{q}," + ",".join("%.17g" % v for v in row) + "\n")
        else:
            fh.write(
                "q,ell," + ",".join(f"b{k + 1}" for k in range(fit.coeffs.shape[2])) + "\n"
            )
            for q in range(fit.coeffs.shape[0]):
                for ell in range(fit.coeffs.shape[1]):
                    fh.write(
                        f"{q + 1},{ell + 1},"
                        + ",".join("%.17g" % v for v in fit.coeffs[q, ell])
                        + "\n"
                    )


def fit_scalar(
    X: list[Curve],
    y: np.ndarray,
    sys: EigenSystem,
    scheme: FractionScheme,
    lam: float | None = None,
    lambda_grid: np.ndarray | None = None,
) -> SequentialFit:
    """Design + (optional) GCV + ridge path in one step."""
    design = build_design_scalar(X, y, sys)
    gram = gram_l2(sys)
    if lam is None:
        lam, _ = gcv_select_scalar(design, scheme, gram, lambda_grid)
    return ridge_path_scalar(design, lam, scheme, gram)


def fit_functional(
    X: list[Curve],
    Y: list[Curve],
    tsys: TensorEigenSystem,
    scheme: FractionScheme,
    lam: float | None = None,
    lambda_grid: np.ndarray | None = None,
) -> SequentialFitFunctional:
    """Functional-response analogue of fit_scalar."""
    designs = build_design_functional(X, Y, tsys)
    grams = gram_l2_tensor(tsys)
    if lam is None:
        lam, _ = gcv_select_functional(designs, scheme, lambda_grid)
    return ridge_path_functional(designs, lam, scheme, grams)
