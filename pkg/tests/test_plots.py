"""
Unit tests for plot export.
"""

import pytest
import numpy as np

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import RunConfig, RunLog, SelectorConfig, SkillMixError, SkillsGraph, make_skills
from src.plots import export_plots, loss_series
from src.selector import create_selector
from src.trainer import run_simulation

A = np.array([[1.0, 0.5], [0.0, 1.0]])


def simulated_log(kind):
    skills = make_skills(['a', 'b'])
    config = RunConfig(0.5, 3, 30, 1, 0, SelectorConfig(kind))
    return run_simulation(config, create_selector(config, SkillsGraph(skills, skills, A)), A, [1.0, 1.0])


class TestLossSeries:
    """Test cases for round-boundary loss series."""

    def test_series_starts_before_training(self):
        """Test the series holds T + 1 points beginning at the initial loss."""
        series = loss_series(simulated_log('stratified'), 1)
        assert len(series) == 4
        assert series[0] == 1.0
        assert all(b <= a for a, b in zip(series, series[1:]))

    def test_empty_log(self):
        """Test a log without rounds."""
        log = RunLog(config=RunConfig(0.5, 1, 1, 1, 0, SelectorConfig('stratified')))
        with pytest.raises(SkillMixError, match="no data"):
            loss_series(log, 0)


class TestExportPlots:
    """Test cases for writing plot files."""

    def test_files_written(self, tmp_path):
        """Test series CSVs, one loss chart per eval skill and one mixture chart per selector."""
        logs = {'skillit': simulated_log('skillit'), 'stratified': simulated_log('stratified')}
        written = export_plots(logs, tmp_path / 'plots', ['a', 'b'], ['a', 'b'])

        assert len(written['series']) == 4
        assert sorted(p.name for p in written['loss_plots']) == ['loss_a.svg', 'loss_b.svg']
        assert sorted(p.name for p in written['mixture_plots']) == ['mixture_skillit.svg', 'mixture_stratified.svg']
        for paths in written.values():
            assert all(p.exists() for p in paths)
        lines = (tmp_path / 'plots' / 'stratified.b.series.csv').read_text().splitlines()
        assert lines[0] == 'round,loss'
        assert lines[1] == '0,1.0'
        assert len(lines) == 5

    def test_svg_output_is_stable(self, tmp_path):
        """Test rendering the same logs twice gives identical files."""
        logs = {'stratified': simulated_log('stratified')}
        first = export_plots(logs, tmp_path / 'one', ['a', 'b'])
        second = export_plots(logs, tmp_path / 'two', ['a', 'b'])
        assert first['loss_plots'][0].read_bytes() == second['loss_plots'][0].read_bytes()

    def test_no_logs(self, tmp_path):
        """Test exporting nothing."""
        with pytest.raises(SkillMixError, match="no data"):
            export_plots({}, tmp_path)
