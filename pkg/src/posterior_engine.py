"""
Posterior engine for exact-enumeration variable selection.
Scores every model of the space, normalises the posterior and derives the
reported summaries: inclusion probabilities, HPM, MPM and the model-size
posterior.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from exceptions import LossPriorError
from logger import PipelineLogger
from marginal_likelihood import QuadratureConfig, RobustHyper, robust_log_bf_batch
from model_priors import PriorSpec, log_prior_by_size
from model_space import (MAX_COVARIATES, Gamma, SubmodelFits, enumerate_models,
                         fit_all_submodels, inclusion_matrix)


# Models per Bayes factor work unit when scoring with several threads
SCORING_CHUNK = 2048


@dataclass(frozen=True)
class ModelPosterior:
    """Normalised posterior over the 2^d models, in enumeration order."""

    d: int
    models: List[Gamma]
    sizes: np.ndarray
    log_bf: np.ndarray
    log_prior: np.ndarray
    log_post: np.ndarray
    prior: Optional[PriorSpec] = None

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_post)


@dataclass(frozen=True)
class SizePosterior:
    pmf: np.ndarray
    mean: float
    median: int
    sd: float
    ci95: Tuple[int, int]


@dataclass(frozen=True)
class PosteriorSummary:
    inclusion: np.ndarray
    hpm: Gamma
    hpm_prob: float
    mpm: Gamma
    size: SizePosterior


def normalize_log_posterior(log_bf: np.ndarray, log_prior: np.ndarray) -> np.ndarray:
    """log_post = log_bf + log_prior - logsumexp(log_bf + log_prior), in enumeration order."""
    joint = np.asarray(log_bf, dtype=float) + np.asarray(log_prior, dtype=float)
    return joint - logsumexp(joint)


def posterior_from_scores(d: int, sizes: np.ndarray, log_bf: np.ndarray, spec: PriorSpec,
                          models: Optional[List[Gamma]] = None) -> ModelPosterior:
    """Combine per-model log Bayes factors with a model prior."""
    log_prior = np.asarray(log_prior_by_size(spec, d, sizes), dtype=float)
    return ModelPosterior(
        d=d,
        models=models if models is not None else enumerate_models(d),
        sizes=np.asarray(sizes),
        log_bf=np.asarray(log_bf, dtype=float),
        log_prior=log_prior,
        log_post=normalize_log_posterior(log_bf, log_prior),
        prior=spec,
    )


def inclusion_probabilities(mp: ModelPosterior) -> np.ndarray:
    """omega_j = sum of posterior mass over models containing covariate j."""
    if mp.d == 0:
        return np.zeros(0)
    weights = mp.probabilities[:, None] * inclusion_matrix(mp.d)
    return np.clip(weights.sum(axis=0), 0.0, 1.0)


def hpm(mp: ModelPosterior) -> Tuple[Gamma, float]:
    """
    Highest posterior probability model.

    Ties go to the smallest model, then to the lowest enumeration index.
    """
    best = np.max(mp.log_post)
    candidates = np.flatnonzero(mp.log_post == best)
    order = np.lexsort((candidates, mp.sizes[candidates]))
    index = int(candidates[order[0]])
    return mp.models[index], float(np.exp(mp.log_post[index]))


def mpm(mp: ModelPosterior, inclusion: np.ndarray) -> Gamma:
    """Median probability model: covariates with inclusion probability >= 1/2."""
    return Gamma(tuple(int(j) for j in np.flatnonzero(np.asarray(inclusion) >= 0.5)), mp.d)


def _cdf_quantile(cdf: np.ndarray, level: float) -> int:
    # smallest k with CDF(k) >= level, tolerant to rounding in the running sum
    return int(np.flatnonzero(cdf >= level - 1e-12)[0])


def size_posterior(mp: ModelPosterior) -> SizePosterior:
    """Posterior distribution of the model size with its summaries."""
    pmf = np.bincount(mp.sizes, weights=mp.probabilities, minlength=mp.d + 1)
    pmf = pmf / pmf.sum()
    support = np.arange(mp.d + 1)
    mean = float(support @ pmf)
    variance = max(float((support ** 2) @ pmf) - mean ** 2, 0.0)
    cdf = np.cumsum(pmf)
    return SizePosterior(
        pmf=pmf,
        mean=mean,
        median=_cdf_quantile(cdf, 0.5),
        sd=float(np.sqrt(variance)),
        ci95=(_cdf_quantile(cdf, 0.025), _cdf_quantile(cdf, 0.975)),
    )


def summarize(mp: ModelPosterior) -> PosteriorSummary:
    inclusion = inclusion_probabilities(mp)
    best, best_prob = hpm(mp)
    return PosteriorSummary(
        inclusion=inclusion,
        hpm=best,
        hpm_prob=best_prob,
        mpm=mpm(mp, inclusion),
        size=size_posterior(mp),
    )


def score_models(fits: SubmodelFits, h: RobustHyper, q: QuadratureConfig,
                 threads: int = 1) -> np.ndarray:
    """
    Robust log Bayes factor of every model against the null model.

    Work is split into fixed chunks; each model's value does not depend on
    the chunking, so the result is identical for any thread count.
    """
    total = fits.sizes.shape[0]
    if threads <= 1 or total <= SCORING_CHUNK:
        return robust_log_bf_batch(fits.n, fits.sizes, fits.r2, h, q)

    starts = list(range(0, total, SCORING_CHUNK))

    def score(start: int) -> np.ndarray:
        stop = start + SCORING_CHUNK
        try:
            return robust_log_bf_batch(fits.n, fits.sizes[start:stop], fits.r2[start:stop], h, q)
        except LossPriorError as error:
            if "model_index" in error.context:
                error.context["model_index"] += start
            raise

    with ThreadPoolExecutor(max_workers=threads) as executor:
        chunks = list(executor.map(score, starts))
    return np.concatenate(chunks)


def _tag_with_gamma(error: LossPriorError, d: int) -> LossPriorError:
    if "model_index" in error.context and "gamma" not in error.context:
        error.add_context(gamma=Gamma.from_mask(int(error.context["model_index"]), d))
    return error


def compute_posterior(X: np.ndarray, y: np.ndarray, spec: PriorSpec, h: RobustHyper,
                      q: QuadratureConfig = QuadratureConfig(), threads: int = 1,
                      max_covariates: int = MAX_COVARIATES) -> ModelPosterior:
    """
    Posterior over all 2^d models for one prior.

    Args:
        X: n x d design matrix
        y: Response vector
        spec: Model prior
        h: Robust prior hyperparameters bound to n
        q: Quadrature configuration
        threads: Worker threads for Bayes factor scoring

    Returns:
        ModelPosterior
    """
    fits = fit_all_submodels(X, y, max_covariates=max_covariates)
    try:
        log_bf = score_models(fits, h, q, threads)
    except LossPriorError as error:
        raise _tag_with_gamma(error, fits.d)
    return posterior_from_scores(fits.d, fits.sizes, log_bf, spec)


class PosteriorEngine:
    """
    Runs the enumeration analysis of one dataset under several model priors.
    """

    def __init__(self, pipeline_logger: PipelineLogger, quadrature: QuadratureConfig = QuadratureConfig(),
                 threads: int = 1):
        """
        Initialize the posterior engine.

        Args:
            pipeline_logger: Main pipeline logger
            quadrature: Quadrature configuration for the Bayes factors
            threads: Worker threads for Bayes factor scoring
        """
        self.pipeline_logger = pipeline_logger
        self.quadrature = quadrature
        self.threads = max(1, int(threads))

    def score(self, X: np.ndarray, y: np.ndarray, h: RobustHyper) -> Tuple[SubmodelFits, np.ndarray]:
        """
        Fit every submodel and compute its robust log Bayes factor.

        Returns:
            Tuple of (fits, log Bayes factors in enumeration order)
        """
        n, d = np.shape(X)
        self.pipeline_logger.log_stage_start("Model Scoring", f"{1 << d:,} models, n={n}, d={d}")
        try:
            start_time = time.time()
            fits = fit_all_submodels(X, y)
            self.pipeline_logger.log_performance("fit_all_submodels", (time.time() - start_time) * 1000,
                                                 {"models": 1 << d})
            try:
                log_bf = score_models(fits, h, self.quadrature, self.threads)
            except LossPriorError as error:
                raise _tag_with_gamma(error, d)

            self.pipeline_logger.log_stage_complete("Model Scoring", {
                "models": 1 << d,
                "max_log_bf": f"{np.max(log_bf):.3f}",
            })
            return fits, log_bf

        except Exception as e:
            self.pipeline_logger.log_error(e, "Model scoring failed", "Model Scoring")
            raise

    def analyze(self, X: np.ndarray, y: np.ndarray, priors: Sequence[PriorSpec],
                h: RobustHyper) -> Dict[PriorSpec, Tuple[ModelPosterior, PosteriorSummary]]:
        """
        Posterior and summaries under each prior; Bayes factors are computed once.

        Args:
            X: n x d design matrix
            y: Response vector
            priors: Model priors to compare
            h: Robust prior hyperparameters

        Returns:
            Dictionary mapping each prior to (posterior, summary)
        """
        fits, log_bf = self.score(X, y, h)
        models = enumerate_models(fits.d)

        results = {}
        for spec in priors:
            mp = posterior_from_scores(fits.d, fits.sizes, log_bf, spec, models=models)
            summary = summarize(mp)
            results[spec] = (mp, summary)
            self.pipeline_logger.logger.info(
                f"{spec.label}: mean size {summary.size.mean:.2f}, "
                f"HPM {summary.hpm.label()} (p={summary.hpm_prob:.3f}), MPM {summary.mpm.label()}")
        return results
