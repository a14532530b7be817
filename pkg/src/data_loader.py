"""
Data loader for the variable selection pipeline.
Handles loading and validation of regression datasets from CSV files and
the registry of packaged datasets.
"""

import hashlib
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from exceptions import (CellParseError, DataError, DuplicateHeaderError, IntegrityError,
                        MissingHeaderError, NonPositiveValueError, RankDeficiencyError,
                        ValidationError)
from logger import PipelineLogger


DATA_DIR_ENV = "LOSSPRIOR_DATA_DIR"
MANIFEST_NAME = "MANIFEST"
TRANSFORMS = ("none", "log-all")


@dataclass(frozen=True)
class Dataset:
    """
    A regression dataset: response y and covariates X (columns in header order).
    """

    name: str
    y: np.ndarray
    X: np.ndarray
    covariate_names: List[str]
    response_name: str
    transform_log: bool = False
    source: str = ""
    checksum: str = ""
    robustness_size: Optional[int] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def reorder(self, names: Sequence[str]) -> "Dataset":
        """Same dataset with the covariates in the given order."""
        if sorted(names) != sorted(self.covariate_names):
            raise ValidationError("reordering must name every covariate exactly once")
        positions = [self.covariate_names.index(name) for name in names]
        return replace(self, X=self.X[:, positions], covariate_names=list(names))


@dataclass(frozen=True)
class BuiltinSpec:
    filename: str
    response: str
    rows: int
    columns: int
    transform: str = "none"
    keep_raw: tuple = ()
    robustness_size: Optional[int] = None


BUILTIN_DATASETS: Dict[str, BuiltinSpec] = {
    "hald": BuiltinSpec(
        filename="hald.csv",
        response="heat",
        rows=13,
        columns=5,
        robustness_size=10,
    ),
    # raw values by default; the log variant keeps the 0/1 Southern-state indicator untransformed
    "uscrime": BuiltinSpec(
        filename="uscrime.csv",
        response="crime_rate",
        rows=47,
        columns=16,
        keep_raw=("Indicator variable for a Southern state",),
        robustness_size=40,
    ),
}


def data_directory() -> Path:
    """Packaged data directory, overridable through LOSSPRIOR_DATA_DIR."""
    override = os.environ.get(DATA_DIR_ENV)
    if override:
        return Path(override)
    return Path(__file__).resolve().parent.parent / "data"


def file_checksum(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_manifest(directory: Path) -> Dict[str, dict]:
    """Parse 'file rows columns sha256' lines."""
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise IntegrityError(f"data manifest not found at {manifest_path}")
    entries = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise IntegrityError(f"malformed manifest line: '{line}'")
        entries[parts[0]] = {"rows": int(parts[1]), "columns": int(parts[2]), "sha256": parts[3]}
    return entries


def _parse_float_frame(body: pd.DataFrame, header: List[str]) -> np.ndarray:
    values = np.empty(body.shape, dtype=float)
    for position, column in enumerate(header):
        raw = body.iloc[:, position]
        stripped = raw.where(raw.isna(), raw.astype(str).str.strip())
        parsed = pd.to_numeric(stripped, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            row = int(bad[0]) + 1
            cell = raw.iloc[bad[0]]
            shown = "" if pd.isna(cell) else str(cell)
            raise CellParseError(f"cannot parse '{shown}' as a finite number", row=row, column=column)
        values[:, position] = parsed
    return values


class DatasetLoader:
    """
    Loads regression datasets from CSV and validates them.
    """

    def __init__(self, pipeline_logger: PipelineLogger):
        """
        Initialize the dataset loader.

        Args:
            pipeline_logger: Main pipeline logger
        """
        self.pipeline_logger = pipeline_logger
        self.logger = pipeline_logger.logger

    def load_csv(self, path: str, response_column: str, transform: str = "none",
                 keep_raw: Sequence[str] = (), name: Optional[str] = None) -> Dataset:
        """
        Load a dataset from a CSV file with a header row.

        Args:
            path: Path to the CSV file
            response_column: Header of the response column
            transform: 'none' or 'log-all' (natural log of every column)
            keep_raw: Columns left untransformed under 'log-all'
            name: Dataset label (defaults to the file stem)

        Returns:
            Dataset with covariates in header order
        """
        path = Path(path)
        if transform not in TRANSFORMS:
            raise ValidationError(f"unknown transform '{transform}', expected one of {TRANSFORMS}",
                                  flag="--transform")

        self.pipeline_logger.log_stage_start("Data Loading", f"Loading dataset from {path}")
        try:
            if not path.exists():
                raise DataError(f"data file not found: {path}")

            try:
                frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                                    skip_blank_lines=True, encoding="utf-8")
            except pd.errors.EmptyDataError:
                raise MissingHeaderError(f"{path} is empty; a header row is required")
            except pd.errors.ParserError as e:
                raise DataError(f"{path} is not a well-formed CSV file: {e}")

            header = [str(cell).strip() for cell in frame.iloc[0].tolist()]
            self._check_header(header, response_column, path)

            X_all = _parse_float_frame(frame.iloc[1:].reset_index(drop=True), header)
            if transform == "log-all":
                X_all = self._log_transform(X_all, header, keep_raw)

            response_index = header.index(response_column)
            covariate_names = [column for column in header if column != response_column]
            covariate_index = [header.index(column) for column in covariate_names]
            y = X_all[:, response_index].copy()
            X = X_all[:, covariate_index].copy()

            self._check_design(X, path)

            dataset = Dataset(
                name=name or path.stem,
                y=y,
                X=X,
                covariate_names=covariate_names,
                response_name=response_column,
                transform_log=transform == "log-all",
                source=str(path),
                checksum=file_checksum(path),
            )

            self.pipeline_logger.log_stage_complete("Data Loading", {
                "observations": dataset.n,
                "covariates": dataset.d,
                "transform": transform,
            })
            return dataset

        except Exception as e:
            self.pipeline_logger.log_error(e, f"Failed to load dataset from {path}", "Data Loading")
            raise

    def _check_header(self, header: List[str], response_column: str, path: Path):
        if any(cell == "" for cell in header):
            raise MissingHeaderError(f"{path} has an empty header cell")
        numeric = pd.to_numeric(pd.Series(header), errors="coerce")
        if numeric.notna().all():
            raise MissingHeaderError(f"{path} has no header row (first row is numeric)")
        duplicated = sorted({column for column in header if header.count(column) > 1})
        if duplicated:
            raise DuplicateHeaderError(f"duplicate column name(s): {', '.join(duplicated)}")
        if response_column not in header:
            raise MissingHeaderError(f"response column '{response_column}' not found in {path}",
                                     flag="--response")

    def _log_transform(self, values: np.ndarray, header: List[str], keep_raw: Sequence[str]) -> np.ndarray:
        unknown = [column for column in keep_raw if column not in header]
        if unknown:
            raise ValidationError(f"unknown column(s) kept raw: {', '.join(unknown)}")
        transformed = values.copy()
        for position, column in enumerate(header):
            if column in keep_raw:
                continue
            bad = np.flatnonzero(values[:, position] <= 0)
            if bad.size:
                raise NonPositiveValueError(
                    f"log transform needs strictly positive values, found {values[bad[0], position]}",
                    row=int(bad[0]) + 1, column=column)
            transformed[:, position] = np.log(values[:, position])
        return transformed

    def _check_design(self, X: np.ndarray, path: Path):
        n, d = X.shape
        if n <= d + 1:
            raise DataError(f"{path} has n={n} observations for d={d} covariates; need n > d + 1")
        rank = np.linalg.matrix_rank(X - X.mean(axis=0))
        if rank < d:
            raise RankDeficiencyError(f"covariates of {path} are rank deficient (rank {rank} < {d})")

    def builtin(self, name: str, variant: Optional[str] = None) -> Dataset:
        """
        Load a packaged dataset after checking it against the manifest.

        Args:
            name: 'uscrime' or 'hald'
            variant: 'log' or 'raw'; defaults to the registered transform

        Returns:
            Dataset carrying the published robustness subsample size
        """
        key = name.strip().lower()
        if key not in BUILTIN_DATASETS:
            raise ValidationError(f"unknown builtin dataset '{name}', expected one of "
                                  f"{sorted(BUILTIN_DATASETS)}", flag="--builtin")
        spec = BUILTIN_DATASETS[key]
        if variant is None:
            transform = spec.transform
        elif variant in ("log", "raw"):
            transform = "log-all" if variant == "log" else "none"
        else:
            raise ValidationError(f"unknown variant '{variant}', expected 'log' or 'raw'", flag="--variant")

        directory = data_directory()
        self.verify_packaged(directory, spec)
        dataset = self.load_csv(directory / spec.filename, spec.response, transform=transform,
                                keep_raw=spec.keep_raw, name=key)
        return replace(dataset, robustness_size=spec.robustness_size)

    def verify_packaged(self, directory: Path, spec: BuiltinSpec):
        """Check a packaged file against its manifest entry."""
        path = directory / spec.filename
        expected = f"expected {spec.rows} rows x {spec.columns} columns"
        if not path.exists():
            raise IntegrityError(f"packaged file {path} is missing ({expected})")
        entry = read_manifest(directory).get(spec.filename)
        if entry is None:
            raise IntegrityError(f"{spec.filename} is not listed in the data manifest ({expected})")
        if (entry["rows"], entry["columns"]) != (spec.rows, spec.columns):
            raise IntegrityError(f"manifest lists {entry['rows']} x {entry['columns']} for "
                                 f"{spec.filename} ({expected})")
        if file_checksum(path) != entry["sha256"]:
            raise IntegrityError(f"checksum mismatch for {path} ({expected})")
        self.logger.debug(f"Verified {spec.filename} against the manifest")

    def write_csv(self, dataset: Dataset, path: str) -> Path:
        """
        Write a dataset back to CSV (covariates in order, response last).

        Values are written with round-trip precision, so load_csv with
        transform 'none' reproduces X and y exactly.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(dataset.X, columns=dataset.covariate_names)
        frame[dataset.response_name] = dataset.y
        frame.to_csv(path, index=False, lineterminator="\n")
        self.logger.info(f"Wrote {dataset.n} rows to {path}")
        return path
