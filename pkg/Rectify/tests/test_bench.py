import json
import os

import pandas as pd
import pytest

from src.bench import (CRITERIA, TABLE_COLUMNS, count_trials, load_bench_manifest, run_bench,
                       run_criterion, scaled_required, write_table)
from src.errors import InputError, MatrixFormatError, NoSolution


class TestTrialCounting:

    def test_scaled_required(self):
        assert scaled_required(18, 20, 20) == 18
        assert scaled_required(18, 10, 20) == 9
        assert scaled_required(18, 1, 20) == 1

    def test_errors_count_as_failures(self, stream):
        def trial(s, t):
            if t == 1:
                raise NoSolution("nothing here")
            return True, 'ok'

        count = count_trials(trial, stream, 3, 3)
        assert (count.passes, count.trials) == (2, 3)
        assert not count.ok
        assert count.notes == ["#1 NoSolution: nothing here"]


class TestCriteria:

    def test_registry_names(self):
        assert list(CRITERIA) == [f"AC-{i}" for i in range(1, 12)]
        assert all(c.smoke_trials <= c.default_trials for c in CRITERIA.values())

    def test_unknown_criterion(self, stream, settings):
        with pytest.raises(InputError):
            run_criterion('AC-99', stream, settings)

    def test_hardness_chain(self, stream, settings):
        result = run_criterion('AC-9', stream, settings, trials=4)
        assert result.passed, result.detail
        assert (result.passes, result.trials) == (4, 4)

    def test_cheap_property_checks(self, stream, settings):
        result = run_criterion('AC-10', stream, settings, trials=4)
        assert result.passed, result.detail

    def test_kappa_separation(self, stream, settings):
        assert run_criterion('AC-11', stream, settings, trials=2).passed

    def test_bench_table(self, stream, settings):
        table = run_bench(['AC-9', 'AC-11'], stream, settings, trials={'AC-9': 2, 'AC-11': 1}, threads=2)
        assert list(table.columns) == TABLE_COLUMNS
        assert table['criterion'].tolist() == ['AC-9', 'AC-11']
        assert table['passed'].all()

    @pytest.mark.slow
    @pytest.mark.parametrize("name", list(CRITERIA))
    def test_full_criterion(self, stream, settings, name):
        result = run_criterion(name, stream, settings)
        assert result.passed, result.detail


class TestManifest:

    def test_reads_criteria_and_trials(self, tmp_path):
        path = tmp_path / 'bench.json'
        path.write_text(json.dumps({'criteria': ['AC-1', 'AC-9'], 'trials': {'AC-9': '5'}}))
        assert load_bench_manifest(str(path)) == (['AC-1', 'AC-9'], {'AC-9': 5})

    def test_missing_and_malformed(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            load_bench_manifest(str(tmp_path / 'none.json'))
        bad = tmp_path / 'bad.json'
        bad.write_text('{criteria')
        with pytest.raises(MatrixFormatError):
            load_bench_manifest(str(bad))

    def test_unknown_names(self, tmp_path):
        path = tmp_path / 'bench.json'
        path.write_text(json.dumps({'criteria': ['AC-0']}))
        with pytest.raises(InputError):
            load_bench_manifest(str(path))


def test_write_table(tmp_path):
    table = pd.DataFrame([['AC-9', True, 2, 2, 2, '', 0.5]], columns=TABLE_COLUMNS)
    csv_path = write_table(table, str(tmp_path / 'out'))
    assert os.path.basename(csv_path) == 'bench.csv'
    assert pd.read_csv(csv_path)['criterion'].tolist() == ['AC-9']
    text = (tmp_path / 'out' / 'bench.txt').read_text()
    assert 'AC-9' in text and 'seconds' not in text
