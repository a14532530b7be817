#!/usr/bin/env python3
"""
Main pipeline runner for exact-enumeration Bayesian variable selection.
"""

import sys
import os
import argparse
from datetime import datetime
from pathlib import Path
from typing import List, Optional

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

import pandas as pd

from src import __version__
from logger import setup_logging
from exceptions import LossPriorError, NumericalError, ValidationError
from data_loader import BUILTIN_DATASETS, Dataset, DatasetLoader
from marginal_likelihood import RobustHyper
from model_priors import PriorSpec, prior_curve
from posterior_engine import PosteriorEngine
from kl_verifier import PAIRINGS, KLVerifier
from simulation_harness import (DESK_REPLICATES, FULL_SCALE_REPLICATES, SimCase, SimulationHarness,
                                figure_series, standard_grid, results_frame)
from robustness_analyzer import (RobustnessAnalyzer, RobustnessConfig, default_priors,
                                 summarize_robustness)
from results_writer import (OutputEnvelope, ResultsWriter, inclusion_table, size_pmf_table,
                            summary_table, top_models_table)


# Flags that change how a run executes but not what it computes
RUN_ONLY_FLAGS = {'threads', 'log_dir', 'log_level', 'inject_rank_deficient'}

DEFAULT_C_LIST = "0.5,1.0,1.5,2.0"


def parse_c_list(text: str) -> List[float]:
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse c list '{text}'", flag="--c-list")
    if not values:
        raise ValidationError("c list is empty", flag="--c-list")
    return values


class VariableSelectionPipeline:
    """
    Runs one CLI command: analysis, comparison, simulation, robustness,
    prior curve or KL verification.
    """

    def __init__(self, config: dict):
        """
        Initialize the pipeline.

        Args:
            config: Configuration dictionary built from the command line
        """
        self.config = config
        self.command = config['command']
        self.run_id = f"{self.command.replace('-', '_')}_{datetime.now().strftime('%Y%m%d_%H%M%S')}"

        self.pipeline_logger = setup_logging(self.run_id, config.get('log_dir', 'logs'),
                                             console_level=config.get('log_level', 'INFO'))
        self.logger = self.pipeline_logger.logger
        self.threads = max(1, int(config.get('threads', 1)))
        self.writer = ResultsWriter(self.pipeline_logger)

        self.logger.info(f"Pipeline initialized with run ID: {self.run_id}")

    def run(self) -> int:
        """
        Run the configured command.

        Returns:
            Process exit code: 0 on success, 2 on validation errors,
            3 on numerical failures, 1 on anything unexpected
        """
        handlers = {
            'analyze': self.analyze,
            'compare': self.compare,
            'simulate': self.simulate,
            'robustness': self.robustness,
            'prior-curve': self.prior_curve,
            'verify-kl': self.verify_kl,
        }
        try:
            self.logger.debug(f"Configuration: {self.config}")
            handlers[self.command]()
            self.pipeline_logger.log_run_complete(self.command)
            return 0

        except LossPriorError as e:
            self.pipeline_logger.log_error(e, f"Command '{self.command}' failed", self.command)
            print(f"error: {e}", file=sys.stderr)
            return e.exit_code

        except Exception as e:
            self.pipeline_logger.log_error(e, f"Unexpected failure in '{self.command}'", self.command)
            print(f"unexpected error: {e}", file=sys.stderr)
            return 1

    def _envelope(self, seeds: Optional[List[int]] = None, checksum: Optional[str] = None) -> OutputEnvelope:
        arguments = {key: value for key, value in self.config.items() if key not in RUN_ONLY_FLAGS}
        return OutputEnvelope(command=self.command, arguments=arguments, seeds=seeds or [],
                              dataset_checksum=checksum, tool_version=__version__)

    def _load_dataset(self) -> Dataset:
        loader = DatasetLoader(self.pipeline_logger)
        builtin = self.config.get('builtin')
        data_file = self.config.get('data')
        if bool(builtin) == bool(data_file):
            raise ValidationError("exactly one of --data and --builtin is required", flag="--data")

        if builtin:
            dataset = loader.builtin(builtin, self.config.get('variant'))
            response = self.config.get('response')
            if response and response != dataset.response_name:
                raise ValidationError(f"builtin '{builtin}' has response '{dataset.response_name}'",
                                      flag="--response")
        else:
            if not self.config.get('response'):
                raise ValidationError("--response is required with --data", flag="--response")
            dataset = loader.load_csv(data_file, self.config['response'],
                                      transform=self.config.get('transform', 'none'))

        self.logger.info(f"Dataset '{dataset.name}': n={dataset.n}, d={dataset.d}, "
                         f"log transform: {dataset.transform_log}")
        return dataset

    def _hyper(self, dataset: Dataset) -> RobustHyper:
        return RobustHyper.recommended(dataset.n, dataset.d, a=self.config.get('a', 0.5),
                                       b=self.config.get('b', 1.0), rho=self.config.get('rho'))

    def _single_prior(self) -> PriorSpec:
        kind = self.config.get('prior', 'loss')
        c = self.config.get('c')
        if kind == "loss":
            return PriorSpec.loss(1.0 if c is None else c)
        return PriorSpec(kind, c)

    def _comparison_priors(self) -> List[PriorSpec]:
        return default_priors(parse_c_list(self.config.get('c_list', DEFAULT_C_LIST)))

    def analyze(self):
        """Posterior summaries of one dataset under one model prior."""
        dataset = self._load_dataset()
        spec = self._single_prior()
        engine = PosteriorEngine(self.pipeline_logger, threads=self.threads)
        results = engine.analyze(dataset.X, dataset.y, [spec], self._hyper(dataset))

        tables = {
            'summary': summary_table(results),
            'inclusion': inclusion_table(results, dataset.covariate_names),
            'top_models': top_models_table(results, dataset.covariate_names, self.config.get('top', 20)),
            'size_pmf': size_pmf_table(results),
        }
        fmt = self.config.get('out', 'json')
        default_output = f"output/analyze_{dataset.name}" + (".json" if fmt == 'json' else "")
        output = Path(self.config.get('output') or default_output)
        self.writer.write_results(tables, self._envelope(checksum=dataset.checksum), output, fmt)

        _, summary = results[spec]
        self.logger.info(f"{spec.label}: mean size {summary.size.mean:.2f}, median {summary.size.median}, "
                         f"95% CI {summary.size.ci95}, HPM size {summary.hpm.size}, MPM size {summary.mpm.size}")

    def compare(self):
        """Comparison tables over uniform, Scott-Berger and loss priors on a c grid."""
        dataset = self._load_dataset()
        priors = self._comparison_priors()
        engine = PosteriorEngine(self.pipeline_logger, threads=self.threads)
        results = engine.analyze(dataset.X, dataset.y, priors, self._hyper(dataset))

        tables = {
            'summary': summary_table(results),
            'inclusion': inclusion_table(results, dataset.covariate_names),
            'size_pmf': size_pmf_table(results),
        }
        fmt = self.config.get('out', 'csv')
        default_output = f"output/compare_{dataset.name}" + (".json" if fmt == 'json' else "")
        output = Path(self.config.get('output') or default_output)
        self.writer.write_results(tables, self._envelope(checksum=dataset.checksum), output, fmt)

    def simulate(self):
        """Coverage and MSE of the size posterior on synthetic data."""
        seed = self.config.get('seed', 0)
        replicates = FULL_SCALE_REPLICATES if self.config.get('full_scale') else self.config.get('reps', DESK_REPLICATES)

        if self.config.get('grid'):
            cases = standard_grid(replicates, seed)
        else:
            missing = [flag for flag in ('n', 'd', 'omega') if self.config.get(flag) is None]
            if missing:
                raise ValidationError(f"--{missing[0]} is required without --grid", flag=f"--{missing[0]}")
            cases = [SimCase(self.config['n'], self.config['d'], self.config['omega'], replicates, seed)]

        harness = SimulationHarness(self.pipeline_logger, threads=self.threads)
        results = harness.run_grid(cases, a=self.config.get('a', 0.5), b=self.config.get('b', 1.0),
                                   rho=self.config.get('rho'))
        tables = {
            'simulation': results_frame(results),
            'figure_series': figure_series(results),
        }
        output = Path(self.config.get('out_dir') or "output/simulate")
        self.writer.write_tables(tables, self._envelope(seeds=[seed]), output)

    def robustness(self):
        """Repeated analysis on random subsamples."""
        dataset = self._load_dataset()
        fraction = self.config.get('frac')
        size = self.config.get('size')
        if size is None and fraction is None:
            size = dataset.robustness_size
        cfg = RobustnessConfig(
            subsample_fraction=fraction if fraction is not None else 0.85,
            replicates=self.config.get('reps', 500),
            priors=tuple(self._comparison_priors()),
            seed=self.config.get('seed', 0),
            subsample_size=size,
        )

        analyzer = RobustnessAnalyzer(self.pipeline_logger, threads=self.threads)
        result = analyzer.run_robustness(dataset.X, dataset.y, cfg, self._hyper(dataset),
                                         covariate_names=dataset.covariate_names)
        histogram, boxplots = summarize_robustness(result)
        subsamples = pd.DataFrame({
            'replicate': range(len(result.subsamples)),
            'rows': [" ".join(str(int(row)) for row in rows) for rows in result.subsamples],
        })
        tables = {
            'records': result.records,
            'reference': result.reference,
            'histogram': histogram,
            'boxplots': boxplots,
            'subsamples': subsamples,
        }
        output = Path(self.config.get('out_dir') or f"output/robustness_{dataset.name}")
        self.writer.write_tables(tables, self._envelope(seeds=[cfg.seed], checksum=dataset.checksum), output)
        self.logger.info(f"{cfg.replicates} subsamples of size {result.subsample_size} analysed")

    def prior_curve(self):
        """Per-model log prior mass by model size for the three priors."""
        d = self.config.get('d', 30)
        frames = [prior_curve(spec, d) for spec in
                  (PriorSpec.uniform(), PriorSpec.scott_berger(), PriorSpec.loss(self.config.get('c', 1.0)))]
        output = Path(self.config.get('out_path') or f"output/prior_curve_d{d}.csv")
        self.writer.write_table(pd.concat(frames, ignore_index=True), output)

    def verify_kl(self):
        """Minimum-KL verification on random regression pairs."""
        verifier = KLVerifier(self.pipeline_logger)
        report = verifier.verify(
            trials=self.config.get('trials', 200),
            n=self.config.get('n', 20),
            d=self.config.get('d', 6),
            seed=self.config.get('seed', 0),
            pairing=self.config.get('pairing', 'nested'),
            inject_rank_deficient=self.config.get('inject_rank_deficient', 0),
        )
        print(report.summary_line())

        if self.config.get('out_path'):
            envelope = self._envelope(seeds=[self.config.get('seed', 0)])
            envelope.payload = {
                'trials': report.trials,
                'zero_minimum': report.zero_minimum,
                'outside_span': report.outside_span,
                'hypothesis_violations': report.hypothesis_violations,
                'failures': report.failures,
                'max_gradient_norm': report.max_gradient_norm,
                'max_residual_gap': report.max_residual_gap,
            }
            self.writer.write_json(envelope, Path(self.config['out_path']))

        if not report.passed:
            raise NumericalError(f"KL verification failed in {len(report.failures)} trial(s)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--threads', type=int, default=1,
                        help='Worker threads (results do not depend on this)')
    common.add_argument('--log-dir', default='logs',
                        help='Directory for run log files')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Console log level')

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument('--data', help='Path to a CSV dataset')
    data.add_argument('--builtin', choices=sorted(BUILTIN_DATASETS), help='Packaged dataset')
    data.add_argument('--response', help='Response column (required with --data)')
    data.add_argument('--transform', choices=['none', 'log-all'], default='none',
                      help='Transform applied to a --data file')
    data.add_argument('--variant', choices=['log', 'raw'],
                      help='Variant of a packaged dataset (default: registered transform)')

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument('--a', type=float, default=0.5, help='Robust prior a')
    hyper.add_argument('--b', type=float, default=1.0, help='Robust prior b')
    hyper.add_argument('--rho', type=float, default=None, help='Robust prior rho (default 1/(d+1))')

    parser = argparse.ArgumentParser(description='Exact-enumeration Bayesian variable selection')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    analyze = commands.add_parser('analyze', parents=[common, data, hyper],
                                  help='Posterior summaries under one model prior')
    analyze.add_argument('--prior', choices=['uniform', 'sb', 'scott-berger', 'loss'], default='loss')
    analyze.add_argument('--c', type=float, default=None, help='Loss prior constant (default 1.0)')
    analyze.add_argument('--top', type=int, default=20, help='Number of top models to report')
    analyze.add_argument('--out', choices=['json', 'csv'], default='json', help='Output format')
    analyze.add_argument('--output', help='Output file (json) or directory (csv)')

    compare = commands.add_parser('compare', parents=[common, data, hyper],
                                  help='Compare uniform, Scott-Berger and loss priors')
    compare.add_argument('--c-list', default=DEFAULT_C_LIST, help='Comma-separated loss prior constants')
    compare.add_argument('--out', choices=['json', 'csv'], default='csv', help='Output format')
    compare.add_argument('--output', help='Output file (json) or directory (csv)')

    simulate = commands.add_parser('simulate', parents=[common, hyper],
                                   help='Simulation study of the model-size posterior')
    simulate.add_argument('--n', type=int, help='Sample size')
    simulate.add_argument('--d', type=int, help='Number of covariates')
    simulate.add_argument('--omega', type=float, help='Inclusion probability of the true model')
    simulate.add_argument('--reps', type=int, default=DESK_REPLICATES, help='Replicates per case')
    simulate.add_argument('--seed', type=int, default=0)
    simulate.add_argument('--grid', action='store_true', help='Run all 36 grid cases')
    simulate.add_argument('--full-scale', action='store_true',
                          help=f'{FULL_SCALE_REPLICATES:,} replicates per case')
    simulate.add_argument('--out', dest='out_dir', help='Output directory')

    robustness = commands.add_parser('robustness', parents=[common, data, hyper],
                                      help='Subsampling robustness study')
    robustness.add_argument('--frac', type=float, default=None, help='Subsample fraction (default 0.85)')
    robustness.add_argument('--size', type=int, default=None, help='Explicit subsample size')
    robustness.add_argument('--reps', type=int, default=500)
    robustness.add_argument('--c-list', default=DEFAULT_C_LIST)
    robustness.add_argument('--seed', type=int, default=0)
    robustness.add_argument('--out', dest='out_dir', help='Output directory')

    curve = commands.add_parser('prior-curve', parents=[common], help='Log prior mass by model size')
    curve.add_argument('--d', type=int, default=30)
    curve.add_argument('--c', type=float, default=1.0)
    curve.add_argument('--out', dest='out_path', help='Output CSV file')

    verify = commands.add_parser('verify-kl', parents=[common], help='Minimum-KL verification suite')
    verify.add_argument('--trials', type=int, default=200)
    verify.add_argument('--n', type=int, default=20)
    verify.add_argument('--d', type=int, default=6)
    verify.add_argument('--seed', type=int, default=0)
    verify.add_argument('--pairing', choices=list(PAIRINGS), default='nested',
                        help="'nested' makes the second model a superset of the first; 'any' draws both independently")
    verify.add_argument('--out', dest='out_path', help='Optional JSON report')
    verify.add_argument('--inject-rank-deficient', type=int, default=0, help=argparse.SUPPRESS)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)

    # Create configuration
    config = vars(args)

    pipeline = VariableSelectionPipeline(config)
    return pipeline.run()


if __name__ == "__main__":
    sys.exit(main())
