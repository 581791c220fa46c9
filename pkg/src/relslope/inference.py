"""Self-normalized statistics, test decisions, and confidence intervals.

Every test reduces to the same pair: T, the squared L^2 norm of the
full-sample estimate (of a slope, a shifted slope, or a two-sample
difference), and V, the self-normalizer built from the spread of the
per-fraction norms d_q around d_Q.  The null "norm <= Delta" is rejected
when T > quantile * V + Delta, with the quantile simulated from the
pivotal ratio, so no nuisance parameter is ever estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ContractError
from .eigensys import EigenSystem, TensorEigenSystem
from .estimator import (
    FractionScheme,
    SequentialFit,
    SequentialFitFunctional,
    evaluate_estimate,
    evaluate_estimate_functional,
)
from .funcspace import Curve, Curve2D, norm_l2_sq, norm_l2_sq_2d
from .pivotal import QuantileTable


@dataclass(frozen=True, eq=False)
class TestStatistics:
    """T = d_Q and the self-normalizer V, with per-fraction norms retained."""

    __test__ = False  # not a pytest class

    T: float
    V: float
    norms_sq: np.ndarray
    scheme: FractionScheme

    @classmethod
    def from_norms(cls, norms_sq: np.ndarray, scheme: FractionScheme) -> "TestStatistics":
        norms_sq = np.asarray(norms_sq, dtype=float)
        if norms_sq.size != scheme.Q:
            raise ContractError(
                f"{norms_sq.size} fraction norms for a Q={scheme.Q} scheme"
            )
        t = float(norms_sq[-1])
        nu = scheme.fractions
        v_sq = (1.0 - scheme.nu0) / scheme.Q * float(
            np.sum(nu**4 * (norms_sq - t) ** 2)
        )
        return cls(T=t, V=float(np.sqrt(v_sq)), norms_sq=norms_sq, scheme=scheme)


def stats_one_sample_scalar(fit: SequentialFit, gram: np.ndarray | None = None) -> TestStatistics:
    """Statistics for the null that the slope's squared norm is small."""
    gram = fit.gram if gram is None else gram
    norms = np.einsum("qi,ij,qj->q", fit.coeffs, gram, fit.coeffs)
    return TestStatistics.from_norms(norms, fit.scheme)


def stats_location(
    fit: SequentialFit,
    sys: EigenSystem,
    beta_star: Curve,
    gram: np.ndarray | None = None,
) -> TestStatistics:
    """Statistics for distance to a hypothesized slope beta_star."""
    if beta_star.grid != sys.grid:
        raise ContractError("beta_star is not on the estimation grid")
    norms = np.empty(fit.scheme.Q)
    for q in range(1, fit.scheme.Q + 1):
        diff = evaluate_estimate(fit, sys, q).values - beta_star.values
        norms[q - 1] = norm_l2_sq(Curve(sys.grid, diff))
    return TestStatistics.from_norms(norms, fit.scheme)


def stats_two_sample(
    fit1: SequentialFit,
    fit2: SequentialFit,
    sys1: EigenSystem,
    sys2: EigenSystem,
) -> TestStatistics:
    """Statistics for the difference between two independently fitted slopes.

    The two eigenbases differ, so difference curves are formed pointwise
    on the common grid before taking norms.
    """
    if not fit1.scheme.matches(fit2.scheme):
        raise ContractError("the two fits use different fraction schemes")
    if sys1.grid != sys2.grid:
        raise ContractError("the two samples live on different grids")
    norms = np.empty(fit1.scheme.Q)
    for q in range(1, fit1.scheme.Q + 1):
        diff = (
            evaluate_estimate(fit1, sys1, q).values
            - evaluate_estimate(fit2, sys2, q).values
        )
        norms[q - 1] = norm_l2_sq(Curve(sys1.grid, diff))
    return TestStatistics.from_norms(norms, fit1.scheme)


def stats_functional(
    fit: SequentialFitFunctional, grams: tuple[np.ndarray, ...] | None = None
) -> TestStatistics:
    """Functional-response statistics; the square applies after the ell-sum."""
    grams = fit.grams if grams is None else grams
    gram_stack = np.stack(grams)
    norms = np.einsum("qli,lij,qlj->q", fit.coeffs, gram_stack, fit.coeffs)
    return TestStatistics.from_norms(norms, fit.scheme)


def stats_location_functional(
    fit: SequentialFitFunctional,
    tsys: TensorEigenSystem,
    beta_star: Curve2D,
) -> TestStatistics:
    """Functional analogue of stats_location for a hypothesized surface."""
    if beta_star.grid_s != tsys.grid or beta_star.grid_t != tsys.grid:
        raise ContractError("beta_star is not on the estimation grid")
    norms = np.empty(fit.scheme.Q)
    for q in range(1, fit.scheme.Q + 1):
        est = evaluate_estimate_functional(fit, tsys, q)
        diff = Curve2D(est.grid_s, est.grid_t, est.values - beta_star.values)
        norms[q - 1] = norm_l2_sq_2d(diff)
    return TestStatistics.from_norms(norms, fit.scheme)


@dataclass(frozen=True, eq=False)
class TestReport:
    """Complete record of one test decision, serializable to JSON."""

    __test__ = False  # not a pytest class

    statistics: TestStatistics
    delta: float
    alpha: float
    quantile: float
    reject: bool
    pivotal_config: dict
    lambda_used: float | None = None
    one_sided_upper: float | None = None
    two_sided: tuple[float, float] | None = None
    largest_rejected_delta: float | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        """Aligned human-readable rendering of the decision."""
        scheme = self.statistics.scheme
        rows = [
            ("statistic T", f"{self.statistics.T:.6g}"),
            ("normalizer V", f"{self.statistics.V:.6g}"),
            ("threshold delta", f"{self.delta:.6g}"),
            ("level alpha", f"{self.alpha:.6g}"),
            ("quantile", f"{self.quantile:.6g}"),
            ("decision", "reject" if self.reject else "no rejection"),
            ("lambda", "n/a" if self.lambda_used is None else f"{self.lambda_used:.6g}"),
            ("scheme", f"n={scheme.n}, nu0={scheme.nu0:g}, Q={scheme.Q}"),
            ("pivotal seed", str(self.pivotal_config.get("seed"))),
        ]
        if self.one_sided_upper is not None:
            rows.append(("one-sided CI", f"[0, {self.one_sided_upper:.6g}]"))
        if self.two_sided is not None:
            rows.append(("two-sided CI", f"({self.two_sided[0]:.6g}, {self.two_sided[1]:.6g}]"))
        if self.largest_rejected_delta is not None:
            rows.append(("largest rejected delta", f"{self.largest_rejected_delta:.6g}"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)

    def to_dict(self) -> dict:
        scheme = self.statistics.scheme
        out = {
            "T": self.statistics.T,
            "V": self.statistics.V,
            "delta": self.delta,
            "alpha": self.alpha,
            "quantile": self.quantile,
            "reject": self.reject,
            "lambda": self.lambda_used,
            "scheme": {"n": scheme.n, "nu0": scheme.nu0, "Q": scheme.Q},
            "fraction_norms_sq": [float(v) for v in self.statistics.norms_sq],
            "pivotal": self.pivotal_config,
            "confidence_intervals": {
                "one_sided": [0.0, self.one_sided_upper]
                if self.one_sided_upper is not None
                else None,
                "two_sided": list(self.two_sided) if self.two_sided is not None else None,
            },
            "largest_rejected_delta": self.largest_rejected_delta,
            "seed": self.seed,
            "version": __version__,
        }
        out.update(self.extra)
        return out


def decide(
    stats: TestStatistics,
    delta: float,
    alpha: float,
    qtable: QuantileTable,
    lambda_used: float | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> TestReport:
    """Reject the null iff T > quantile(1 - alpha) * V + delta."""
    if delta < 0:
        raise ContractError("delta must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")
    q = qtable.quantile(1.0 - alpha)
    reject = stats.T > q * stats.V + delta
    one_sided, two_sided = None, None
    try:
        one_sided, two_sided = confidence_intervals(stats, alpha, qtable)
    except ContractError:
        one_sided = (0.0, stats.T + q * stats.V)
    return TestReport(
        statistics=stats,
        delta=float(delta),
        alpha=float(alpha),
        quantile=float(q),
        reject=bool(reject),
        pivotal_config=qtable.config.to_dict(),
        lambda_used=lambda_used,
        one_sided_upper=one_sided[1],
        two_sided=two_sided,
        largest_rejected_delta=largest_rejected_delta(stats, alpha, qtable),
        seed=seed,
        extra=extra or {},
    )


def confidence_intervals(
    stats: TestStatistics, alpha: float, qtable: QuantileTable
) -> tuple[tuple[float, float], tuple[float, float]]:
    """One-sided [0, T + q_{1-a} V] and two-sided
    (max{0, T - q_{1-a/2} V}, T + q_{1-a/2} V] intervals for the squared norm."""
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")
    q_one = qtable.quantile(1.0 - alpha)
    q_two = qtable.quantile(1.0 - alpha / 2.0)
    one_sided = (0.0, stats.T + q_one * stats.V)
    two_sided = (max(0.0, stats.T - q_two * stats.V), stats.T + q_two * stats.V)
    return one_sided, two_sided


def largest_rejected_delta(
    stats: TestStatistics, alpha: float, qtable: QuantileTable
) -> float:
    """Largest threshold still rejected at level alpha: max{0, T - q V}."""
    q = qtable.quantile(1.0 - alpha)
    return max(0.0, stats.T - q * stats.V)
