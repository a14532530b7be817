"""
Subsampling robustness study.
Repeats the enumeration analysis on random row subsets of a dataset and
collects the posterior mean model size and the inclusion probabilities of
every replicate, together with histogram and box-plot summaries.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import (DegenerateResponseError, LossPriorError, SingularDesignError,
                        ValidationError)
from logger import PipelineLogger
from marginal_likelihood import QuadratureConfig, RobustHyper, robust_log_bf_batch
from model_priors import PriorSpec
from model_space import enumerate_models, fit_all_submodels
from posterior_engine import inclusion_probabilities, posterior_from_scores, size_posterior


HISTOGRAM_BIN_WIDTH = 0.25
WHISKER_IQR = 1.5


def default_priors(c_values: Sequence[float] = (0.5, 1.0, 1.5, 2.0)) -> List[PriorSpec]:
    return [PriorSpec.uniform(), PriorSpec.scott_berger()] + [PriorSpec.loss(c) for c in c_values]


@dataclass(frozen=True)
class RobustnessConfig:
    subsample_fraction: float = 0.85
    replicates: int = 500
    priors: Tuple[PriorSpec, ...] = field(default_factory=lambda: tuple(default_priors()))
    seed: int = 0
    subsample_size: Optional[int] = None
    max_redraws: int = 10

    def __post_init__(self):
        if not 0 < self.subsample_fraction <= 1:
            raise ValidationError(f"subsample fraction must lie in (0, 1], got {self.subsample_fraction}",
                                  flag="--frac")
        if self.replicates < 1:
            raise ValidationError(f"replicates must be positive, got {self.replicates}", flag="--reps")
        if not self.priors:
            raise ValidationError("at least one prior is required", flag="--c-list")
        if self.seed < 0:
            raise ValidationError(f"seed must be non-negative, got {self.seed}", flag="--seed")
        object.__setattr__(self, "priors", tuple(self.priors))

    def size_for(self, n: int, d: int) -> int:
        """Subsample size for a dataset with n rows and d covariates."""
        size = self.subsample_size if self.subsample_size is not None else int(round(self.subsample_fraction * n))
        if size > n:
            raise ValidationError(f"subsample size {size} exceeds the {n} available rows", flag="--size")
        if size <= d + 1:
            raise ValidationError(f"subsample size {size} must exceed d + 1 = {d + 1}", flag="--size")
        return size


def draw_subsample(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Sorted row indices of a subsample drawn without replacement."""
    return np.sort(rng.choice(n, size=size, replace=False))


@dataclass
class RobustnessRecords:
    """Per-replicate records plus the full-data reference analysis."""

    records: pd.DataFrame
    reference: pd.DataFrame
    subsamples: List[np.ndarray]
    subsample_size: int
    d: int
    covariate_names: List[str]


def _inclusion_columns(d: int) -> List[str]:
    return [f"omega_{j + 1}" for j in range(d)]


class RobustnessAnalyzer:
    """
    Runs the subsampling study for a dataset under several model priors.
    """

    def __init__(self, pipeline_logger: PipelineLogger, quadrature: QuadratureConfig = QuadratureConfig(),
                 threads: int = 1):
        """
        Initialize the robustness analyzer.

        Args:
            pipeline_logger: Main pipeline logger
            quadrature: Quadrature configuration for the Bayes factors
            threads: Worker threads; results do not depend on this value
        """
        self.pipeline_logger = pipeline_logger
        self.logger = pipeline_logger.logger
        self.quadrature = quadrature
        self.threads = max(1, int(threads))

    def _analyze(self, X: np.ndarray, y: np.ndarray, priors: Sequence[PriorSpec], h: RobustHyper,
                 models) -> List[Tuple[float, np.ndarray]]:
        fits = fit_all_submodels(X, y)
        log_bf = robust_log_bf_batch(fits.n, fits.sizes, fits.r2, h, self.quadrature)
        results = []
        for spec in priors:
            mp = posterior_from_scores(fits.d, fits.sizes, log_bf, spec, models=models)
            results.append((size_posterior(mp).mean, inclusion_probabilities(mp)))
        return results

    def _run_replicate(self, rep_index: int, X: np.ndarray, y: np.ndarray, cfg: RobustnessConfig,
                       size: int, h: RobustHyper, models):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, rep_index]))
        for attempt in range(cfg.max_redraws + 1):
            rows = draw_subsample(rng, X.shape[0], size)
            try:
                return rows, self._analyze(X[rows], y[rows], cfg.priors, h, models)
            except (SingularDesignError, DegenerateResponseError) as error:
                self.logger.debug(f"Replicate {rep_index}: subsample rejected ({error}), attempt {attempt + 1}")
        raise SingularDesignError(
            f"no usable subsample in {cfg.max_redraws + 1} draws ({cfg.max_redraws} redraws)", replicate=rep_index)

    def run_robustness(self, X: np.ndarray, y: np.ndarray, cfg: RobustnessConfig, h: RobustHyper,
                       covariate_names: Optional[Sequence[str]] = None) -> RobustnessRecords:
        """
        Repeat the analysis on random subsamples.

        Args:
            X: n x d design matrix of the full dataset
            y: Response vector
            cfg: Robustness configuration
            h: Robust prior hyperparameters for the full dataset; rebound to the
                subsample size for each replicate
            covariate_names: Optional covariate labels

        Returns:
            RobustnessRecords
        """
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        size = cfg.size_for(n, d)
        h_sub = h.with_n(size)
        models = enumerate_models(d)
        names = list(covariate_names) if covariate_names is not None else [f"x{j + 1}" for j in range(d)]

        self.pipeline_logger.log_stage_start(
            "Robustness", f"{cfg.replicates} subsamples of size {size} from n={n}, {len(cfg.priors)} priors")
        start_time = time.time()

        try:
            reference = self._analyze(X, y, cfg.priors, h, models)

            def run_one(rep_index: int):
                try:
                    return self._run_replicate(rep_index, X, y, cfg, size, h_sub, models)
                except LossPriorError as error:
                    raise error.add_context(replicate=rep_index)

            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as executor:
                    outcomes = list(executor.map(run_one, range(cfg.replicates)))
            else:
                outcomes = [run_one(rep_index) for rep_index in range(cfg.replicates)]

        except Exception as e:
            self.pipeline_logger.log_error(e, "Subsampling study failed", "Robustness")
            raise

        inclusion_columns = _inclusion_columns(d)
        record_rows = []
        for rep_index, (_, analyses) in enumerate(outcomes):
            for spec, (mean_size, inclusion) in zip(cfg.priors, analyses):
                row = {'replicate': rep_index, 'prior': spec.kind.value,
                       'c': spec.c if spec.c is not None else np.nan,
                       'mean_size': mean_size}
                row.update(zip(inclusion_columns, inclusion.tolist()))
                record_rows.append(row)
        records = pd.DataFrame(record_rows, columns=['replicate', 'prior', 'c', 'mean_size'] + inclusion_columns)

        reference_rows = []
        for spec, (mean_size, inclusion) in zip(cfg.priors, reference):
            row = {'prior': spec.kind.value, 'c': spec.c if spec.c is not None else np.nan,
                   'mean_size': mean_size}
            row.update(zip(inclusion_columns, inclusion.tolist()))
            reference_rows.append(row)
        reference_frame = pd.DataFrame(reference_rows, columns=['prior', 'c', 'mean_size'] + inclusion_columns)

        self.pipeline_logger.log_performance("robustness", (time.time() - start_time) * 1000,
                                             {"replicates": cfg.replicates, "subsample_size": size})
        self.pipeline_logger.log_stage_complete("Robustness", {"records": len(records)})

        return RobustnessRecords(records=records, reference=reference_frame,
                                 subsamples=[subsample for subsample, _ in outcomes],
                                 subsample_size=size, d=d, covariate_names=names)


def prior_key(frame: pd.DataFrame) -> pd.Series:
    """Label combining prior kind and c, e.g. 'loss(c=1)'."""
    return frame.apply(
        lambda row: row['prior'] if pd.isna(row['c']) else f"{row['prior']}(c={row['c']:g})", axis=1)


def five_number_summary(values: np.ndarray) -> dict:
    """(min, Q1, median, Q3, max) with Tukey whiskers at 1.5 IQR."""
    values = np.asarray(values, dtype=float)
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    inside = values[(values >= q1 - WHISKER_IQR * iqr) & (values <= q3 + WHISKER_IQR * iqr)]
    return {
        'min': float(values.min()),
        'q1': float(q1),
        'median': float(median),
        'q3': float(q3),
        'max': float(values.max()),
        'whisker_low': float(inside.min()),
        'whisker_high': float(inside.max()),
        'outliers': int(values.shape[0] - inside.shape[0]),
    }


def summarize_robustness(result: RobustnessRecords) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Histogram of the posterior mean size and box-plot summaries of the
    inclusion probabilities, per prior.

    Returns:
        Tuple of (histogram frame, box-plot frame)
    """
    records = result.records.copy()
    if records.empty:
        raise ValidationError("no robustness records to summarize")
    records['label'] = prior_key(records)
    edges = np.arange(0.0, result.d + HISTOGRAM_BIN_WIDTH / 2, HISTOGRAM_BIN_WIDTH)

    histogram_rows = []
    box_rows = []
    for label, group in records.groupby('label', sort=False):
        counts, _ = np.histogram(np.clip(group["mean_size"].to_numpy(), 0.0, result.d), bins=edges)
        for left, right, count in zip(edges[:-1], edges[1:], counts):
            histogram_rows.append({'prior': label, 'bin_left': left, 'bin_right': right, 'count': int(count)})

        for j, name in enumerate(result.covariate_names):
            summary = five_number_summary(group[f"omega_{j + 1}"].to_numpy())
            box_rows.append({'prior': label, 'covariate': name, **summary})

    return pd.DataFrame(histogram_rows), pd.DataFrame(box_rows)
