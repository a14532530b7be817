"""
Frequentist simulation study of the model-size posterior.

Each replicate draws a design, a true model, coefficients from the robust
prior and a response; the model-size posterior under every model prior is
then scored by the coverage of its 95% credible interval and the squared
error of its mean and median.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from exceptions import ContractError, LossPriorError, SingularDesignError, ValidationError
from logger import PipelineLogger
from marginal_likelihood import QuadratureConfig, RobustHyper, robust_log_bf_batch, sample_g
from model_priors import PriorSpec
from model_space import RANK_TOLERANCE, Gamma, enumerate_models, fit_all_submodels
from posterior_engine import SizePosterior, posterior_from_scores, size_posterior


GRID_SAMPLE_SIZES = (30, 50, 100)
GRID_COVARIATES = (3, 5, 10, 15)
GRID_OMEGAS = (0.15, 0.50, 0.75)

DESK_REPLICATES = 2000
FULL_SCALE_REPLICATES = 100_000

RESULT_COLUMNS = ['n', 'd', 'omega', 'prior', 'coverage', 'mse_mean', 'mse_median',
                  'se_coverage', 'se_mse_mean', 'se_mse_median']


def default_priors() -> List[PriorSpec]:
    return [PriorSpec.uniform(), PriorSpec.scott_berger(), PriorSpec.loss(1.0)]


@dataclass(frozen=True)
class SimCase:
    n: int
    d: int
    omega: float
    replicates: int = DESK_REPLICATES
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError(f"d must be at least 1, got {self.d}", flag="--d")
        if self.n <= self.d + 1:
            raise ValidationError(f"need n > d + 1, got n={self.n}, d={self.d}", flag="--n")
        if not 0 < self.omega < 1:
            raise ValidationError(f"omega must lie in (0, 1), got {self.omega}", flag="--omega")
        if self.replicates < 1:
            raise ValidationError(f"replicates must be positive, got {self.replicates}", flag="--reps")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}", flag="--seed")

    @property
    def label(self) -> str:
        return f"n={self.n},d={self.d},omega={self.omega:g}"

    def entropy(self, rep_index: int) -> List[int]:
        """Seed material of one replicate's random substream."""
        return [self.seed, self.n, self.d, int(round(self.omega * 10000)), rep_index]


def standard_grid(replicates: int = DESK_REPLICATES, seed: int = 0) -> List[SimCase]:
    """All 36 cases, ordered by n, then d, then omega."""
    return [SimCase(n, d, omega, replicates, seed)
            for n in GRID_SAMPLE_SIZES for d in GRID_COVARIATES for omega in GRID_OMEGAS]


@dataclass(frozen=True)
class Replicate:
    X: np.ndarray
    y: np.ndarray
    gamma: Gamma
    g: float
    beta: np.ndarray


def _draw_coefficients(rng: np.random.Generator, X: np.ndarray, gamma: Gamma, g: float) -> np.ndarray:
    # beta ~ N(0, g (Xc^T Xc)^-1): with Xc = QR, R^-1 z has covariance (R^T R)^-1
    Xc = X[:, list(gamma.included)]
    Xc = Xc - Xc.mean(axis=0)
    _, R = np.linalg.qr(Xc)
    floor = RANK_TOLERANCE * np.maximum(np.linalg.norm(Xc, axis=0), 1e-300)
    if np.any(np.abs(np.diag(R)) <= floor):
        raise SingularDesignError("simulated design is rank deficient", gamma=gamma)
    z = rng.standard_normal(gamma.size)
    return np.sqrt(g) * solve_triangular(R, z)


def generate_replicate(case: SimCase, rep_index: int, h: RobustHyper) -> Replicate:
    """
    Draw one synthetic regression problem.

    The draw depends only on (seed, n, d, omega, rep_index), so replicates
    can be generated in any order and on any thread.

    Args:
        case: Simulation case
        rep_index: Replicate index in [0, replicates)
        h: Robust prior hyperparameters used to draw g

    Returns:
        Replicate with design, response, true model, g and coefficients
    """
    if not 0 <= rep_index < case.replicates:
        raise ContractError(f"replicate index {rep_index} outside [0, {case.replicates})")
    rng = np.random.default_rng(np.random.SeedSequence(case.entropy(rep_index)))

    X = rng.standard_normal((case.n, case.d))
    gamma = Gamma(tuple(np.flatnonzero(rng.random(case.d) < case.omega)), case.d)
    g = float(sample_g(1.0 - rng.random(), h))

    beta = np.zeros(0)
    if gamma.size:
        try:
            beta = _draw_coefficients(rng, X, gamma, g)
        except SingularDesignError:
            # one fresh design, then give up
            X = rng.standard_normal((case.n, case.d))
            beta = _draw_coefficients(rng, X, gamma, g)

    y = X[:, list(gamma.included)] @ beta + rng.standard_normal(case.n)
    return Replicate(X=X, y=y, gamma=gamma, g=g, beta=beta)


@dataclass(frozen=True)
class PriorMetrics:
    prior: PriorSpec
    coverage: float
    mse_mean: float
    mse_median: float
    se_coverage: float
    se_mse_mean: float
    se_mse_median: float


@dataclass
class SimResult:
    case: SimCase
    metrics: List[PriorMetrics] = field(default_factory=list)

    def for_prior(self, spec: PriorSpec) -> PriorMetrics:
        for metrics in self.metrics:
            if metrics.prior == spec:
                return metrics
        raise KeyError(spec.label)


def _standard_error(values: np.ndarray) -> float:
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.shape[0]))


def summarize_replicates(case: SimCase, priors: Sequence[PriorSpec], covered: np.ndarray,
                         sq_err_mean: np.ndarray, sq_err_median: np.ndarray) -> SimResult:
    """Average per-replicate indicators (rows = replicates, columns = priors)."""
    result = SimResult(case=case)
    for column, spec in enumerate(priors):
        result.metrics.append(PriorMetrics(
            prior=spec,
            coverage=float(np.mean(covered[:, column])),
            mse_mean=float(np.mean(sq_err_mean[:, column])),
            mse_median=float(np.mean(sq_err_median[:, column])),
            se_coverage=_standard_error(covered[:, column]),
            se_mse_mean=_standard_error(sq_err_mean[:, column]),
            se_mse_median=_standard_error(sq_err_median[:, column]),
        ))
    return result


SizeScorer = Callable[[Replicate, Sequence[PriorSpec]], List[SizePosterior]]


class SimulationHarness:
    """
    Runs simulation cases and collects coverage and MSE metrics.
    """

    def __init__(self, pipeline_logger: PipelineLogger, quadrature: QuadratureConfig = QuadratureConfig(),
                 threads: int = 1):
        """
        Initialize the simulation harness.

        Args:
            pipeline_logger: Main pipeline logger
            quadrature: Quadrature configuration for the Bayes factors
            threads: Worker threads; results do not depend on this value
        """
        self.pipeline_logger = pipeline_logger
        self.logger = pipeline_logger.logger
        self.quadrature = quadrature
        self.threads = max(1, int(threads))
        self._models_cache: Dict[int, List[Gamma]] = {}

    def _models(self, d: int) -> List[Gamma]:
        if d not in self._models_cache:
            self._models_cache[d] = enumerate_models(d)
        return self._models_cache[d]

    def score_replicate(self, replicate: Replicate, priors: Sequence[PriorSpec],
                        h: RobustHyper) -> List[SizePosterior]:
        """Size posterior of one replicate under each prior; Bayes factors are shared."""
        fits = fit_all_submodels(replicate.X, replicate.y)
        log_bf = robust_log_bf_batch(fits.n, fits.sizes, fits.r2, h, self.quadrature)
        models = self._models(fits.d)
        return [size_posterior(posterior_from_scores(fits.d, fits.sizes, log_bf, spec, models=models))
                for spec in priors]

    def run_case(self, case: SimCase, h: Optional[RobustHyper] = None,
                 priors: Optional[Sequence[PriorSpec]] = None,
                 scorer: Optional[SizeScorer] = None) -> SimResult:
        """
        Run every replicate of a case.

        Args:
            case: Simulation case
            h: Robust prior hyperparameters (default: recommended for the case)
            priors: Model priors to compare (default: uniform, Scott-Berger, loss c=1)
            scorer: Replacement for the posterior computation, mapping a replicate
                to one size posterior per prior

        Returns:
            SimResult with one PriorMetrics per prior
        """
        h = h if h is not None else RobustHyper.recommended(case.n, case.d)
        if h.n != case.n:
            raise ContractError(f"hyperparameters are bound to n={h.n} but the case has n={case.n}")
        priors = list(priors) if priors is not None else default_priors()
        score = scorer if scorer is not None else (lambda rep, specs: self.score_replicate(rep, specs, h))

        self.pipeline_logger.log_stage_start("Simulation", f"{case.label}, {case.replicates:,} replicates")
        start_time = time.time()

        def run_one(rep_index: int):
            try:
                replicate = generate_replicate(case, rep_index, h)
                truth = replicate.gamma.size
                sizes = score(replicate, priors)
                return ([truth >= sp.ci95[0] and truth <= sp.ci95[1] for sp in sizes],
                        [(sp.mean - truth) ** 2 for sp in sizes],
                        [float(sp.median - truth) ** 2 for sp in sizes])
            except LossPriorError as error:
                raise error.add_context(case=case.label, replicate=rep_index)

        try:
            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as executor:
                    rows = list(executor.map(run_one, range(case.replicates)))
            else:
                rows = [run_one(rep_index) for rep_index in range(case.replicates)]
        except Exception as e:
            self.pipeline_logger.log_error(e, case.label, "Simulation")
            raise

        covered = np.array([row[0] for row in rows], dtype=float)
        sq_err_mean = np.array([row[1] for row in rows], dtype=float)
        sq_err_median = np.array([row[2] for row in rows], dtype=float)
        result = summarize_replicates(case, priors, covered, sq_err_mean, sq_err_median)

        duration = time.time() - start_time
        self.pipeline_logger.log_performance("simulation_case", duration * 1000, {
            "case": case.label,
            "replicates": case.replicates,
        })
        self.pipeline_logger.log_stage_complete("Simulation", {
            metrics.prior.label: f"coverage {metrics.coverage:.3f}, MSE mean {metrics.mse_mean:.3f}"
            for metrics in result.metrics
        })
        return result

    def run_grid(self, cases: Sequence[SimCase], priors: Optional[Sequence[PriorSpec]] = None,
                 a: float = 0.5, b: float = 1.0, rho: Optional[float] = None) -> List[SimResult]:
        """
        Run a sequence of cases, each with hyperparameters recommended for its (n, d).

        Returns:
            SimResults in the order of `cases`
        """
        self.logger.info(f"Running simulation grid of {len(cases)} case(s)")
        results = []
        for number, case in enumerate(cases, start=1):
            self.logger.info(f"Case {number}/{len(cases)}: {case.label}")
            h = RobustHyper.recommended(case.n, case.d, a=a, b=b, rho=rho)
            results.append(self.run_case(case, h, priors))
        return results


def results_frame(results: Sequence[SimResult]) -> pd.DataFrame:
    """Summary metrics: one row per (case, prior)."""
    rows = []
    for result in results:
        for metrics in result.metrics:
            rows.append({
                'n': result.case.n,
                'd': result.case.d,
                'omega': result.case.omega,
                'prior': metrics.prior.label,
                'coverage': metrics.coverage,
                'mse_mean': metrics.mse_mean,
                'mse_median': metrics.mse_median,
                'se_coverage': metrics.se_coverage,
                'se_mse_mean': metrics.se_mse_mean,
                'se_mse_median': metrics.se_mse_median,
            })
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def figure_series(results: Sequence[SimResult]) -> pd.DataFrame:
    """MSE of the posterior mean per case and prior, indexed by case position."""
    rows = []
    for index, result in enumerate(results, start=1):
        for metrics in result.metrics:
            rows.append({
                'case_index': index,
                'case': result.case.label,
                'prior': metrics.prior.label,
                'mse_mean': metrics.mse_mean,
                'se_mse_mean': metrics.se_mse_mean,
            })
    return pd.DataFrame(rows, columns=['case_index', 'case', 'prior', 'mse_mean', 'se_mse_mean'])
