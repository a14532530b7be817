"""
Bayes factors against the null model under the robust parameter prior.

Given g, the coefficient prior is a g-prior whose Bayes factor depends on the
data only through (n, k, R^2):

    log BF(g) = ((n-1-k)/2) log(1+g) - ((n-1)/2) log(1 + g (1-R^2))

g has the shifted-Pareto density

    pi(g) = a [rho (b+n)]^a (g+b)^-(a+1),   g > L = rho (b+n) - b,

and the robust Bayes factor is the integral of BF(g) against pi(g).
"""

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from exceptions import (ContractError, DomainError, PerfectFitError,
                        QuadratureError, ValidationError)
from model_space import SufficientStats


ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class RobustHyper:
    """Hyperparameters of the mixing density of g, bound to a sample size n."""

    a: float
    b: float
    rho: float
    n: int

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValidationError(f"a must be positive, got {self.a}", flag="--a")
        if not (self.b > 0 and math.isfinite(self.b)):
            raise ValidationError(f"b must be positive, got {self.b}", flag="--b")
        if self.n < 1:
            raise ValidationError(f"sample size must be positive, got {self.n}")
        if not self.rho >= self.b / (self.b + self.n):
            raise ValidationError(
                f"rho={self.rho} is below b/(b+n)={self.b / (self.b + self.n):.6g}", flag="--rho")

    @classmethod
    def recommended(cls, n: int, d: int, a: float = 0.5, b: float = 1.0,
                    rho: Optional[float] = None) -> "RobustHyper":
        """a = 1/2, b = 1, rho = 1/(d+1) unless overridden."""
        return cls(a=a, b=b, rho=1.0 / (d + 1) if rho is None else rho, n=n)

    def with_n(self, n: int) -> "RobustHyper":
        return replace(self, n=n)

    @property
    def scale(self) -> float:
        """rho (b + n)."""
        return self.rho * (self.b + self.n)

    @property
    def lower_bound(self) -> float:
        """Support lower bound L = rho (b + n) - b."""
        return self.scale - self.b


@dataclass(frozen=True)
class QuadratureConfig:
    nodes: int = 201
    refine: bool = True
    rtol: float = 1e-10
    max_halvings: int = 12

    def __post_init__(self):
        if self.nodes < 15:
            raise ValidationError(f"quadrature needs at least 15 nodes, got {self.nodes}")
        if not self.rtol > 0:
            raise ValidationError(f"rtol must be positive, got {self.rtol}")
        if self.max_halvings < 1:
            raise ValidationError(f"max_halvings must be at least 1, got {self.max_halvings}")


def g_log_density(g: ArrayLike, h: RobustHyper) -> ArrayLike:
    """log pi(g); -inf below the support bound."""
    g = np.asarray(g, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        values = math.log(h.a) + h.a * math.log(h.scale) - (h.a + 1.0) * np.log(g + h.b)
    values = np.where(g >= h.lower_bound, values, -np.inf)
    return float(values) if values.ndim == 0 else values


def g_cdf(g: ArrayLike, h: RobustHyper) -> ArrayLike:
    """F(g) = 1 - [rho (b+n) / (g+b)]^a on the support, 0 below it."""
    g = np.asarray(g, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        values = -np.expm1(h.a * (math.log(h.scale) - np.log(g + h.b)))
    values = np.where(g >= h.lower_bound, values, 0.0)
    return float(values) if values.ndim == 0 else values


def sample_g(u: ArrayLike, h: RobustHyper) -> ArrayLike:
    """
    Inverse-CDF draw of g: g = rho (b+n) u^(-1/a) - b, so that F(g) = 1 - u.

    Args:
        u: Uniform variate(s) in (0, 1]; u = 1 maps to the support bound
        h: Hyperparameters

    Returns:
        g with the same shape as u
    """
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)) or np.any(u > 1):
        raise DomainError("uniform variate must lie in (0, 1)")
    values = h.scale * np.exp(-np.log(u) / h.a) - h.b
    return float(values) if values.ndim == 0 else values


def _check_r2(r2: np.ndarray):
    if np.any(r2 < 0) or np.any(~np.isfinite(r2)):
        raise ContractError("R^2 must be finite and non-negative")
    if np.any(r2 >= 1.0):
        raise PerfectFitError("R^2 = 1: the Bayes factor against the null model is unbounded")


def _conditional_from_log_g(n: int, k: ArrayLike, log1m_r2: ArrayLike, log_g: ArrayLike) -> ArrayLike:
    # log(1+g) and log(1+g(1-R^2)) from log g, overflow-free
    log1p_g = np.logaddexp(0.0, log_g)
    log1p_shrunk = np.logaddexp(0.0, log_g + log1m_r2)
    return 0.5 * (n - 1 - k) * log1p_g - 0.5 * (n - 1) * log1p_shrunk


def conditional_log_bf(stats: SufficientStats, g: ArrayLike) -> ArrayLike:
    """
    log Bayes factor of the model against the null model for a fixed g.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise DomainError("g must be non-negative")
    if stats.k == 0:
        values = np.zeros_like(g)
    else:
        values = (0.5 * (stats.n - 1 - stats.k) * np.log1p(g)
                  - 0.5 * (stats.n - 1) * np.log1p(g * (1.0 - stats.r2)))
    return float(values) if values.ndim == 0 else values


@lru_cache(maxsize=64)
def _composite_rule(nodes: int, panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and log weights on [0, 1] split into equal panels."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    offsets = np.arange(panels, dtype=float)[:, None] / panels
    s = (offsets + (x[None, :] + 1.0) / (2.0 * panels)).ravel()
    log_w = np.tile(np.log(w / (2.0 * panels)), panels)
    s.setflags(write=False)
    log_w.setflags(write=False)
    return s, log_w


def _log_g_at(s: np.ndarray, h: RobustHyper) -> np.ndarray:
    # g(s) = rho(b+n) s^(-1/a) - b, kept in the log domain
    log_t = math.log(h.scale) - np.log(s) / h.a
    return log_t + np.log1p(-h.b * np.exp(-log_t))


def _log_integral(n: int, k: np.ndarray, log1m_r2: np.ndarray, h: RobustHyper,
                  nodes: int, panels: int) -> np.ndarray:
    s, log_w = _composite_rule(nodes, panels)
    log_g = _log_g_at(s, h)
    integrand = _conditional_from_log_g(n, k[:, None], log1m_r2[:, None], log_g[None, :])
    return logsumexp(integrand + log_w[None, :], axis=1)


def robust_log_bf_batch(n: int, sizes: np.ndarray, r2: np.ndarray, h: RobustHyper,
                        q: QuadratureConfig = QuadratureConfig()) -> np.ndarray:
    """
    Robust log Bayes factors for many models sharing the same n.

    Substituting s = [rho (b+n) / (g+b)]^a (the survival function of g) turns
    the integral into the unweighted integral over s in (0, 1] of
    exp(log BF(g(s))); for a = 1/2 this is t = s^2 with t = rho(b+n)/(g+b).
    The integrand is smooth on [0, 1] and is integrated with composite
    Gauss-Legendre, halving the panels until successive estimates agree to rtol.

    Args:
        n: Sample size
        sizes: Model sizes k
        r2: Coefficients of determination
        h: Robust prior hyperparameters (must be bound to n)
        q: Quadrature configuration

    Returns:
        Array of log Bayes factors; exactly 0 for size-0 models
    """
    if h.n != n:
        raise ContractError(f"hyperparameters are bound to n={h.n} but the data have n={n}")
    sizes = np.asarray(sizes, dtype=float).ravel()
    r2 = np.asarray(r2, dtype=float).ravel()
    if sizes.shape != r2.shape:
        raise ContractError("sizes and R^2 arrays must have the same length")

    result = np.zeros(sizes.shape[0], dtype=float)
    active = np.flatnonzero(sizes > 0)
    if active.size == 0:
        return result
    _check_r2(r2[active])

    k = sizes[active]
    log1m_r2 = np.log1p(-r2[active])

    estimate = _log_integral(n, k, log1m_r2, h, q.nodes, 1)
    if not q.refine:
        result[active] = estimate
        return result

    pending = np.arange(active.size)
    for halving in range(1, q.max_halvings + 1):
        refined = _log_integral(n, k[pending], log1m_r2[pending], h, q.nodes, 2 ** halving)
        converged = np.abs(np.expm1(refined - estimate[pending])) <= q.rtol
        previous = estimate[pending].copy()
        estimate[pending] = refined
        if np.all(converged):
            result[active] = estimate
            return result
        last_previous = previous[~converged]
        pending = pending[~converged]

    first = int(active[pending[0]])
    raise QuadratureError(
        f"quadrature did not converge after {q.max_halvings} halvings",
        estimates=(float(last_previous[0]), float(estimate[pending[0]])),
        model_index=first)


def robust_log_bf(stats: SufficientStats, h: RobustHyper,
                  q: QuadratureConfig = QuadratureConfig()) -> float:
    """Robust log Bayes factor of one model against the null model."""
    return float(robust_log_bf_batch(stats.n, np.array([stats.k]), np.array([stats.r2]), h, q)[0])
