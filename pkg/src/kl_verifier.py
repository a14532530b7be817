"""
KL divergence between normal linear regression models sharing a precision phi.

For models with mean vectors mu_p = Xp beta_p and mu_q = Xq beta_q,

    KL(p || q) = (phi / 2) ||mu_p - mu_q||^2.

Minimising over beta_q gives the least-squares projection of mu_p on the
column space of Xq; the minimum is (phi / 2) ||(I - P_q) mu_p||^2, which is
zero whenever mu_p lies in that column space. The verifier checks these
facts on random instances.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_triangular

from exceptions import ContractError, SingularDesignError, ValidationError
from logger import PipelineLogger
from model_space import RANK_TOLERANCE, Gamma


ZERO_TOLERANCE = 1e-8
ZERO_TOLERANCE_LABEL = "1e-8"
PAIRINGS = ("any", "nested")


def _check_full_rank(Xt: np.ndarray, what: str):
    Q, R = np.linalg.qr(Xt)
    column_norms = np.linalg.norm(Xt, axis=0)
    if Xt.shape[0] < Xt.shape[1] or np.any(
            np.abs(np.diag(R)) <= RANK_TOLERANCE * np.maximum(column_norms, 1e-300)):
        raise SingularDesignError(f"{what} does not have full column rank")
    return Q, R


@dataclass(frozen=True)
class RegressionSpec:
    """
    A normal linear regression with an intercept-augmented design.

    Xt holds the all-ones column first, then the selected covariates;
    beta_t holds the intercept first.
    """

    Xt: np.ndarray
    beta_t: np.ndarray
    phi: float

    def __post_init__(self):
        Xt = np.asarray(self.Xt, dtype=float)
        beta_t = np.asarray(self.beta_t, dtype=float).ravel()
        if Xt.ndim != 2 or Xt.shape[1] != beta_t.shape[0]:
            raise ContractError(f"design shape {Xt.shape} does not match {beta_t.shape[0]} coefficients")
        if not self.phi > 0:
            raise ValidationError(f"precision phi must be positive, got {self.phi}")
        _check_full_rank(Xt, "regression design")
        object.__setattr__(self, "Xt", Xt)
        object.__setattr__(self, "beta_t", beta_t)
        object.__setattr__(self, "phi", float(self.phi))

    @property
    def n(self) -> int:
        return self.Xt.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.Xt @ self.beta_t


def augmented_design(X: np.ndarray, gamma: Gamma) -> np.ndarray:
    """[1, X_gamma]."""
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X[:, list(gamma.included)]])


def kl_divergence(p: RegressionSpec, q: RegressionSpec) -> float:
    """KL(p || q) for two regressions with common precision."""
    if p.n != q.n:
        raise ContractError(f"models are defined on different sample sizes ({p.n} vs {q.n})")
    if p.phi != q.phi:
        raise ContractError(f"models must share the precision phi ({p.phi} vs {q.phi})")
    difference = p.mean - q.mean
    return 0.5 * p.phi * float(difference @ difference)


def kl_gradient(p: RegressionSpec, Xq: np.ndarray, beta_q: np.ndarray) -> np.ndarray:
    """Gradient of KL(p || q) in beta_q: phi Xq^T (Xq beta_q - mu_p)."""
    Xq = np.asarray(Xq, dtype=float)
    return p.phi * Xq.T @ (Xq @ np.asarray(beta_q, dtype=float) - p.mean)


def finite_difference_gradient(p: RegressionSpec, Xq: np.ndarray, beta_q: np.ndarray,
                               step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of KL(p || q) in beta_q."""
    Xq = np.asarray(Xq, dtype=float)
    beta_q = np.asarray(beta_q, dtype=float)
    gradient = np.empty_like(beta_q)
    for j in range(beta_q.shape[0]):
        shift = np.zeros_like(beta_q)
        shift[j] = step
        upper = kl_divergence(p, RegressionSpec(Xq, beta_q + shift, p.phi))
        lower = kl_divergence(p, RegressionSpec(Xq, beta_q - shift, p.phi))
        gradient[j] = (upper - lower) / (2.0 * step)
    return gradient


def kl_minimizer(p: RegressionSpec, Xq: np.ndarray) -> np.ndarray:
    """
    Coefficients of the second model closest to p in KL divergence.

    Args:
        p: Reference model
        Xq: n x (k'+1) intercept-augmented design of the second model

    Returns:
        (Xq^T Xq)^-1 Xq^T mu_p, computed through a QR factorisation

    Raises:
        SingularDesignError: Xq^T Xq is not invertible
    """
    Xq = np.asarray(Xq, dtype=float)
    if Xq.ndim != 2 or Xq.shape[0] != p.n:
        raise ContractError(f"second design has shape {Xq.shape}, expected {p.n} rows")
    Q, R = _check_full_rank(Xq, "second design")
    return solve_triangular(R, Q.T @ p.mean)


def min_kl(p: RegressionSpec, Xq: np.ndarray) -> float:
    """KL divergence from p to the closest model over Xq."""
    beta = kl_minimizer(p, Xq)
    return kl_divergence(p, RegressionSpec(Xq, beta, p.phi))


def projection_residual(p: RegressionSpec, Xq: np.ndarray) -> float:
    """(phi / 2) ||(I - P_q) mu_p||^2."""
    Q, _ = _check_full_rank(np.asarray(Xq, dtype=float), "second design")
    mu = p.mean
    residual = mu - Q @ (Q.T @ mu)
    return 0.5 * p.phi * float(residual @ residual)


@dataclass
class KLTrial:
    index: int
    gamma_p: Gamma
    gamma_q: Gamma
    in_span: bool
    min_kl: Optional[float] = None
    residual: Optional[float] = None
    gradient_norm: Optional[float] = None
    hypothesis_violation: bool = False
    failure: str = ""


@dataclass
class KLVerificationReport:
    trials: int
    pairing: str
    zero_minimum: int = 0
    outside_span: int = 0
    hypothesis_violations: int = 0
    failures: List[str] = field(default_factory=list)
    max_gradient_norm: float = 0.0
    max_residual_gap: float = 0.0
    records: List[KLTrial] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary_line(self) -> str:
        checked = self.trials - self.hypothesis_violations
        line = f"{self.zero_minimum}/{checked} min-KL < {ZERO_TOLERANCE_LABEL}"
        if self.outside_span:
            line += f" ({self.outside_span} outside the span, minimum equals the projection residual)"
        if self.hypothesis_violations:
            line += f"; {self.hypothesis_violations} hypothesis violation(s)"
        if self.failures:
            line += f"; {len(self.failures)} FAILED"
        return line


class KLVerifier:
    """
    Checks the minimum-KL property of regression models on random instances.
    """

    def __init__(self, pipeline_logger: PipelineLogger):
        self.pipeline_logger = pipeline_logger
        self.logger = pipeline_logger.logger

    def _draw_pair(self, rng: np.random.Generator, d: int, pairing: str):
        p_mask = rng.random(d) < 0.5
        if pairing == "nested":
            q_mask = p_mask | (rng.random(d) < 0.5)
        else:
            q_mask = rng.random(d) < 0.5
        return (Gamma(tuple(np.flatnonzero(p_mask)), d),
                Gamma(tuple(np.flatnonzero(q_mask)), d))

    def run_trial(self, index: int, n: int, d: int, seed: int, pairing: str,
                  rank_deficient: bool = False) -> KLTrial:
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        X = rng.standard_normal((n, d))
        gamma_p, gamma_q = self._draw_pair(rng, d, pairing)
        beta_p = rng.standard_normal(gamma_p.size + 1)
        phi = float(rng.uniform(0.5, 2.0))

        p = RegressionSpec(augmented_design(X, gamma_p), beta_p, phi)
        Xq = augmented_design(X, gamma_q)
        if rank_deficient:
            Xq = np.column_stack([Xq, Xq[:, -1]])

        in_span = set(gamma_p.included) <= set(gamma_q.included) or Xq.shape[1] >= n
        trial = KLTrial(index=index, gamma_p=gamma_p, gamma_q=gamma_q, in_span=in_span)

        try:
            beta_q = kl_minimizer(p, Xq)
        except SingularDesignError:
            trial.hypothesis_violation = True
            return trial

        trial.min_kl = kl_divergence(p, RegressionSpec(Xq, beta_q, phi))
        trial.residual = projection_residual(p, Xq)
        gradient = kl_gradient(p, Xq, beta_q)
        trial.gradient_norm = float(np.linalg.norm(gradient))

        scale = max(1.0, phi * np.linalg.norm(Xq) * np.linalg.norm(p.mean))
        if trial.gradient_norm > ZERO_TOLERANCE * scale:
            trial.failure = f"trial {index}: gradient norm {trial.gradient_norm:.3e} at the minimiser"
        elif abs(trial.min_kl - trial.residual) > ZERO_TOLERANCE * max(1.0, trial.residual):
            trial.failure = f"trial {index}: minimum {trial.min_kl:.6e} != residual {trial.residual:.6e}"
        elif in_span and trial.min_kl >= ZERO_TOLERANCE:
            trial.failure = f"trial {index}: mean lies in the span but minimum is {trial.min_kl:.3e}"
        return trial

    def verify(self, trials: int = 200, n: int = 20, d: int = 6, seed: int = 0,
               pairing: str = "nested", inject_rank_deficient: int = 0) -> KLVerificationReport:
        """
        Run the verification suite.

        Args:
            trials: Number of random instances
            n: Observations per instance
            d: Candidate covariates per instance
            seed: Base seed; trial i uses the substream (seed, i)
            pairing: 'any' draws the two models independently, 'nested' makes the
                second a superset of the first
            inject_rank_deficient: Extra trials whose second design has a repeated column

        Returns:
            KLVerificationReport
        """
        if pairing not in PAIRINGS:
            raise ValidationError(f"pairing must be one of {PAIRINGS}, got '{pairing}'", flag="--pairing")
        if trials < 1:
            raise ValidationError(f"trials must be positive, got {trials}", flag="--trials")
        if n <= d + 1:
            raise ValidationError(f"need n > d + 1, got n={n}, d={d}", flag="--n")

        self.pipeline_logger.log_stage_start("KL Verification", f"{trials} trials, n={n}, d={d}, pairing={pairing}")
        report = KLVerificationReport(trials=trials + inject_rank_deficient, pairing=pairing)
        for index in range(trials + inject_rank_deficient):
            trial = self.run_trial(index, n, d, seed, pairing, rank_deficient=index >= trials)
            report.records.append(trial)

            if trial.hypothesis_violation:
                report.hypothesis_violations += 1
                self.logger.debug(f"Trial {index}: second design is rank deficient, skipped")
                continue
            if trial.min_kl < ZERO_TOLERANCE:
                report.zero_minimum += 1
            if not trial.in_span:
                report.outside_span += 1
            report.max_gradient_norm = max(report.max_gradient_norm, trial.gradient_norm)
            report.max_residual_gap = max(report.max_residual_gap, abs(trial.min_kl - trial.residual))
            if trial.failure:
                report.failures.append(trial.failure)
                self.pipeline_logger.log_warning(trial.failure, "KL Verification")

        self.pipeline_logger.log_stage_complete("KL Verification", {
            "zero_minimum": report.zero_minimum,
            "outside_span": report.outside_span,
            "failures": len(report.failures),
        })
        return report
