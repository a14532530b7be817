"""
Result tables and output files for the variable selection pipeline.

Every output carries an envelope (tool version, command echo, seeds and
dataset checksum) and no timestamps, so reruns produce identical bytes.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import ValidationError
from logger import PipelineLogger
from model_priors import PriorSpec
from posterior_engine import ModelPosterior, PosteriorSummary


OUTPUT_FORMATS = ("json", "csv")
ENVELOPE_FILE = "envelope.json"

Results = Mapping[PriorSpec, Tuple[ModelPosterior, PosteriorSummary]]


@dataclass
class OutputEnvelope:
    command: str
    arguments: Dict[str, Any]
    seeds: List[int] = field(default_factory=list)
    dataset_checksum: Optional[str] = None
    payload: Any = None
    tool: str = "lossprior"
    tool_version: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, NaN to None."""
    if isinstance(value, dict):
        return {str(key): _clean(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(item) for item in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def frame_records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return _clean(frame.to_dict(orient="records"))


def _prior_c(spec: PriorSpec) -> float:
    return spec.c if spec.c is not None else np.nan


def summary_table(results: Results) -> pd.DataFrame:
    """Size-posterior summaries with HPM/MPM, one row per prior."""
    rows = []
    for spec, (_, summary) in results.items():
        rows.append({
            'prior': spec.kind.value,
            'c': _prior_c(spec),
            'mean': summary.size.mean,
            'median': summary.size.median,
            'sd': summary.size.sd,
            'ci_low': summary.size.ci95[0],
            'ci_high': summary.size.ci95[1],
            'hpm_size': summary.hpm.size,
            'hpm_prob': summary.hpm_prob,
            'mpm_size': summary.mpm.size,
            'hpm': summary.hpm.label(),
            'mpm': summary.mpm.label(),
        })
    return pd.DataFrame(rows)


def inclusion_table(results: Results, names: Sequence[str]) -> pd.DataFrame:
    """Posterior inclusion probabilities with HPM membership markers."""
    rows = []
    for spec, (_, summary) in results.items():
        for j, name in enumerate(names):
            rows.append({
                'prior': spec.kind.value,
                'c': _prior_c(spec),
                'covariate': name,
                'inclusion': float(summary.inclusion[j]),
                'in_hpm': j in summary.hpm,
                'in_mpm': j in summary.mpm,
            })
    return pd.DataFrame(rows)


def size_pmf_table(results: Results) -> pd.DataFrame:
    rows = []
    for spec, (_, summary) in results.items():
        for k, probability in enumerate(summary.size.pmf):
            rows.append({'prior': spec.kind.value, 'c': _prior_c(spec), 'k': k,
                         'probability': float(probability)})
    return pd.DataFrame(rows)


def top_models_table(results: Results, names: Sequence[str], top: int = 20) -> pd.DataFrame:
    """
    The `top` most probable models per prior.

    Models are ranked by posterior probability; ties go to the smaller
    model and then to the lower enumeration index.
    """
    if top < 1:
        raise ValidationError(f"--top must be positive, got {top}", flag="--top")
    rows = []
    for spec, (mp, _) in results.items():
        order = np.lexsort((np.arange(mp.log_post.shape[0]), mp.sizes, -mp.log_post))[:top]
        for rank, index in enumerate(order, start=1):
            rows.append({
                'prior': spec.kind.value,
                'c': _prior_c(spec),
                'rank': rank,
                'model': mp.models[index].label(names),
                'size': int(mp.sizes[index]),
                'log_bf': float(mp.log_bf[index]),
                'log_prior': float(mp.log_prior[index]),
                'posterior': float(np.exp(mp.log_post[index])),
            })
    return pd.DataFrame(rows)


class ResultsWriter:
    """
    Writes result tables as CSV files or as one JSON document.
    """

    def __init__(self, pipeline_logger: PipelineLogger):
        """
        Initialize the results writer.

        Args:
            pipeline_logger: Main pipeline logger
        """
        self.pipeline_logger = pipeline_logger
        self.logger = pipeline_logger.logger

    def write_json(self, envelope: OutputEnvelope, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(_clean(envelope.to_dict()), indent=2, allow_nan=False)
        path.write_text(text + "\n", encoding="utf-8")
        self.logger.info(f"Results written to {path}")
        return path

    def write_table(self, frame: pd.DataFrame, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
        self.logger.info(f"Table written to {path} ({len(frame)} rows)")
        return path

    def write_tables(self, tables: Dict[str, pd.DataFrame], envelope: OutputEnvelope,
                     directory: Path) -> List[Path]:
        """One CSV per table plus an envelope listing them."""
        directory = Path(directory)
        paths = [self.write_table(frame, directory / f"{name}.csv") for name, frame in tables.items()]
        envelope.payload = {"tables": [path.name for path in paths]}
        paths.append(self.write_json(envelope, directory / ENVELOPE_FILE))
        return paths

    def write_results(self, tables: Dict[str, pd.DataFrame], envelope: OutputEnvelope,
                      output: Path, fmt: str = "json") -> List[Path]:
        """
        Write tables in the requested format.

        Args:
            tables: Named result tables
            envelope: Output envelope; its payload is filled here
            output: JSON file path, or directory for CSV output
            fmt: 'json' or 'csv'

        Returns:
            List of written paths
        """
        if fmt not in OUTPUT_FORMATS:
            raise ValidationError(f"unknown output format '{fmt}'", flag="--out")
        try:
            if fmt == "csv":
                return self.write_tables(tables, envelope, output)
            envelope.payload = {name: frame_records(frame) for name, frame in tables.items()}
            return [self.write_json(envelope, output)]
        except Exception as e:
            self.pipeline_logger.log_error(e, f"Failed to write results to {output}", "Output")
            raise
