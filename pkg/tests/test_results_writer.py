"""
Tests for result tables and output files.
"""

import json

import numpy as np
import pandas as pd
import pytest

from exceptions import ValidationError
from marginal_likelihood import RobustHyper
from model_priors import PriorSpec
from posterior_engine import PosteriorEngine
from results_writer import (ENVELOPE_FILE, OutputEnvelope, ResultsWriter, inclusion_table,
                            size_pmf_table, summary_table, top_models_table)


@pytest.fixture
def results(pipeline_logger, hald):
    engine = PosteriorEngine(pipeline_logger)
    return engine.analyze(hald.X, hald.y, [PriorSpec.uniform(), PriorSpec.loss(1.0)],
                          RobustHyper.recommended(n=hald.n, d=hald.d))


@pytest.fixture
def tables(results, hald):
    return {
        'summary': summary_table(results),
        'inclusion': inclusion_table(results, hald.covariate_names),
        'top_models': top_models_table(results, hald.covariate_names, top=5),
        'size_pmf': size_pmf_table(results),
    }


@pytest.fixture
def writer(pipeline_logger):
    return ResultsWriter(pipeline_logger)


def envelope(hald):
    return OutputEnvelope(command="analyze", arguments={"builtin": "hald", "prior": "loss"},
                          dataset_checksum=hald.checksum, tool_version="1.0.0")


class TestTables:

    def test_summary_rows(self, tables):
        summary = tables['summary']
        assert list(summary['prior']) == ['uniform', 'loss']
        assert np.isnan(summary['c'][0]) and summary['c'][1] == 1.0
        assert list(summary['hpm_size']) == [2, 2]
        assert summary['hpm'][0] == "{0,1}"

    def test_inclusion_rows(self, tables, hald):
        inclusion = tables['inclusion']
        assert len(inclusion) == 2 * hald.d
        loss = inclusion[inclusion['prior'] == 'loss']
        assert list(loss['in_hpm']) == [True, True, False, False]
        assert list(loss['in_mpm']) == [True, True, False, False]

    def test_top_models_sorted(self, tables, hald):
        top = tables['top_models']
        for _, group in top.groupby('prior'):
            assert list(group['rank']) == [1, 2, 3, 4, 5]
            assert np.all(np.diff(group['posterior'].to_numpy()) <= 0)
        first = top[(top['prior'] == 'loss') & (top['rank'] == 1)]['model'].iloc[0]
        assert first == "Tricalcium aluminate + Tricalcium silicate"

    def test_top_must_be_positive(self, results, hald):
        with pytest.raises(ValidationError):
            top_models_table(results, hald.covariate_names, top=0)

    def test_size_pmf_sums_to_one(self, tables):
        totals = tables['size_pmf'].groupby('prior')['probability'].sum()
        np.testing.assert_allclose(totals.to_numpy(), 1.0, atol=1e-12)


class TestWriter:

    def test_json_document(self, writer, tables, hald, tmp_path):
        path = writer.write_results(tables, envelope(hald), tmp_path / "hald.json", fmt="json")[0]
        document = json.loads(path.read_text(encoding="utf-8"))
        assert document['tool'] == "lossprior"
        assert document['command'] == "analyze"
        assert document['dataset_checksum'] == hald.checksum
        assert set(document['payload']) == {'summary', 'inclusion', 'top_models', 'size_pmf'}
        assert document['payload']['summary'][0]['c'] is None
        assert "NaN" not in path.read_text(encoding="utf-8")

    def test_csv_matches_json(self, writer, tables, hald, tmp_path):
        json_path = writer.write_results(tables, envelope(hald), tmp_path / "hald.json", fmt="json")[0]
        paths = writer.write_results(tables, envelope(hald), tmp_path / "csv", fmt="csv")
        assert paths[-1].name == ENVELOPE_FILE
        assert {path.name for path in paths[:-1]} == {"summary.csv", "inclusion.csv", "top_models.csv",
                                                       "size_pmf.csv"}

        from_json = pd.DataFrame(json.loads(json_path.read_text(encoding="utf-8"))['payload']['inclusion'])
        from_csv = pd.read_csv(tmp_path / "csv" / "inclusion.csv")
        np.testing.assert_allclose(from_csv['inclusion'], from_json['inclusion'], rtol=1e-12)
        assert list(from_csv['covariate']) == list(from_json['covariate'])

        listing = json.loads((tmp_path / "csv" / ENVELOPE_FILE).read_text(encoding="utf-8"))
        assert listing['payload'] == {"tables": ["summary.csv", "inclusion.csv", "top_models.csv",
                                                 "size_pmf.csv"]}

    def test_rerun_is_byte_identical(self, writer, tables, hald, tmp_path):
        first = writer.write_results(tables, envelope(hald), tmp_path / "a.json")[0]
        second = writer.write_results(tables, envelope(hald), tmp_path / "b.json")[0]
        assert first.read_bytes() == second.read_bytes()

    def test_unknown_format(self, writer, tables, hald, tmp_path):
        with pytest.raises(ValidationError):
            writer.write_results(tables, envelope(hald), tmp_path / "out.xml", fmt="xml")
