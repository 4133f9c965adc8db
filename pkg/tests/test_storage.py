"""
Unit tests for the file formats.
"""

import pytest
import json
import numpy as np

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core import (
    LossState,
    Mixture,
    RoundRecord,
    RunConfig,
    RunLog,
    Sample,
    SelectorConfig,
    Setting,
    SkillMixError,
    SkillsGraph,
    make_skills,
)
from src.recover import TrajectoryMatrix
from src.storage import (
    infer_setting,
    read_graph_csv,
    read_jsonl,
    read_runlog,
    read_samples,
    read_trajectories,
    runlog_to_jsonl,
    summary_to_csv,
    write_graph_csv,
    write_jsonl,
    write_runlog,
    write_samples,
    write_summary,
    write_trajectories,
)


class TestGraphCsv:
    """Test cases for adjacency CSV files."""

    def test_fine_tune_graph_from_names(self, tmp_path):
        """Test eval columns reuse the matching training skills and the setting is inferred."""
        train = make_skills(['a', 'b', 'c'])
        graph = SkillsGraph(train, (train[2],), [[0.5], [0.0], [1.0]], Setting.FINE_TUNE)
        path = tmp_path / 'graph.csv'
        write_graph_csv(path, graph)

        loaded = read_graph_csv(path)
        assert loaded.setting == Setting.FINE_TUNE
        assert loaded.eval_skills == (train[2],)
        np.testing.assert_array_equal(loaded.A, graph.A)

    def test_header_layout(self, tmp_path):
        """Test the first row names eval skills and the first column names train skills."""
        train = make_skills(['x', 'y'])
        path = tmp_path / 'graph.csv'
        write_graph_csv(path, SkillsGraph(train, train, np.eye(2)))
        lines = path.read_text().splitlines()
        assert lines[0] == ',x,y'
        assert lines[1] == 'x,1.0,0.0'

    def test_non_numeric_cell(self, tmp_path):
        """Test a malformed adjacency file."""
        path = tmp_path / 'graph.csv'
        path.write_text(",a\na,zero\n")
        with pytest.raises(SkillMixError):
            read_graph_csv(path)

    def test_infer_setting(self):
        """Test each setting is recognized from names."""
        assert infer_setting(['a', 'b'], ['a', 'b']) == Setting.CONTINUAL
        assert infer_setting(['a', 'b'], ['b']) == Setting.FINE_TUNE
        assert infer_setting(['a', 'b'], ['z']) == Setting.OUT_OF_DOMAIN
        with pytest.raises(SkillMixError):
            infer_setting(['a', 'b'], ['b', 'z'])


class TestSamples:
    """Test cases for skill dataset files."""

    def test_natural_skill_order(self, tmp_path):
        """Test skill indices follow the natural sort of their names."""
        path = tmp_path / 'data.jsonl'
        lines = [{'skill': name, 'input': 'i', 'output': 'o'} for name in ('depth_10', 'depth_2', 'depth_1')]
        path.write_text(''.join(json.dumps(line) + '\n' for line in lines))

        samples = read_samples(path)
        assert {s.skill.name: s.skill.index for s in samples} == {'depth_1': 0, 'depth_2': 1, 'depth_10': 2}

    def test_write_then_read(self, tmp_path):
        """Test samples written are read back in order."""
        skills = make_skills(['a', 'b'])
        samples = [Sample(skills[1], 'q', '1'), Sample(skills[0], 'r', '0')]
        path = tmp_path / 'data.jsonl'
        assert write_samples(path, samples) == 2
        assert read_samples(path, ['a', 'b']) == samples

    def test_unknown_skill_in_order(self, tmp_path):
        """Test a sample whose skill is not in the given order."""
        path = tmp_path / 'data.jsonl'
        path.write_text(json.dumps({'skill': 'z', 'input': 'i', 'output': 'o'}) + '\n')
        with pytest.raises(SkillMixError):
            read_samples(path, ['a'])

    def test_malformed_line(self, tmp_path):
        """Test a line missing a field."""
        path = tmp_path / 'data.jsonl'
        path.write_text(json.dumps({'skill': 'a'}) + '\n')
        with pytest.raises(SkillMixError, match=":1:"):
            read_samples(path)


class TestRunLogs:
    """Test cases for run log files."""

    def test_write_then_read(self, tmp_path):
        """Test a run log survives the JSON-lines format."""
        config = RunConfig(0.5, 2, 4, 1, 0, SelectorConfig('stratified'))
        log = RunLog(config)
        log.append(RoundRecord(1, Mixture((0.5, 0.5)), (1, 1), LossState((1.0, 2.0), 0), LossState((0.5, 1.5), 1)))
        log.append(RoundRecord(2, Mixture((0.25, 0.75)), (0, 2), LossState((0.5, 1.5), 1), LossState((0.4, 0.5), 2)))
        path = tmp_path / 'run.jsonl'
        write_runlog(path, log)

        loaded = read_runlog(path, config)
        assert loaded.rounds == log.rounds
        assert runlog_to_jsonl(loaded) == path.read_text()
        first = json.loads(path.read_text().splitlines()[0])
        assert sorted(first) == ['allocation', 'losses_after', 'losses_before', 'mixture', 'round']


class TestSummaries:
    """Test cases for summary CSV and generic JSON lines."""

    def test_summary_columns(self):
        """Test the long-format header and failed rows."""
        text = summary_to_csv([
            {'selector': 'skillit', 'status': 'ok', 'skill': 'a', 'final_loss': 0.25, 'mean_loss': 0.5},
            {'selector': 'random', 'status': 'failed', 'skill': '', 'final_loss': '', 'mean_loss': ''},
        ])
        assert text.splitlines() == [
            'selector,status,skill,final_loss,mean_loss',
            'skillit,ok,a,0.25,0.5',
            'random,failed,,,',
        ]

    def test_write_summary(self, tmp_path):
        """Test the summary file holds exactly the CSV text."""
        rows = [{'selector': 'skillit', 'status': 'ok', 'skill': 'average', 'final_loss': 0.125,
                 'mean_loss': 0.5}]
        path = tmp_path / 'summary.csv'
        write_summary(path, rows)
        assert path.read_bytes() == summary_to_csv(rows).encode('utf-8')

    def test_jsonl_round_trip(self, tmp_path):
        """Test generic JSON-lines records."""
        path = tmp_path / 'probes.jsonl'
        write_jsonl(path, [{'kind': 'single'}, {'kind': 'pair'}])
        assert read_jsonl(path) == [{'kind': 'single'}, {'kind': 'pair'}]


class TestTrajectories:
    """Test cases for trajectory matrix files."""

    def test_write_then_read(self, tmp_path):
        """Test header and rows survive, labels included."""
        traj = TrajectoryMatrix(('s0', 's1', 's2'), np.arange(12, dtype=float).reshape(3, 4), 2, 2,
                                np.array([0, 1, 1]))
        path = tmp_path / 'traj.txt'
        write_trajectories(path, traj)
        loaded = read_trajectories(path)
        assert loaded.samples == traj.samples
        assert (loaded.runs, loaded.checkpoints) == (2, 2)
        np.testing.assert_array_equal(loaded.features, traj.features)
        np.testing.assert_array_equal(loaded.true_labels, [0, 1, 1])

    def test_row_count_mismatch(self, tmp_path):
        """Test a header declaring more samples than rows."""
        path = tmp_path / 'traj.txt'
        path.write_text(json.dumps({'N': 2, 'R': 1, 'C': 1, 'samples': None, 'labels': None}) + '\n0.5\n')
        with pytest.raises(SkillMixError):
            read_trajectories(path)
