"""
Tests for the skillmix command line.
"""

import json
import numpy as np

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.cli import main
from src.recover import template_trajectories
from src.storage import read_graph_csv, read_samples, write_trajectories

SAMPLE_EXPERIMENT = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'sample_experiment.json')


class TestGenCommand:
    """Test cases for dataset generation."""

    def test_lego(self, tmp_path):
        """Test a LEGO file with its metadata sidecar."""
        out = tmp_path / 'lego.jsonl'
        assert main(['gen', 'lego', '--k', '3', '--count', '10', '--seed', '1', '--out', str(out)]) == 0
        samples = read_samples(out)
        assert len(samples) == 30
        meta = json.loads((tmp_path / 'lego.meta.json').read_text())
        assert meta['dataset'] == 'lego' and meta['k'] == 3 and meta['seed'] == 1

    def test_addition_split_by_skill(self, tmp_path):
        """Test one file per skill when splitting."""
        out = tmp_path / 'addition'
        assert main(['gen', 'addition', '--d', '3', '--count', '5', '--out', str(out), '--split-by-skill']) == 0
        assert sorted(p.name for p in out.glob('*.jsonl')) == ['digit_0.jsonl', 'digit_1.jsonl', 'digit_2.jsonl']
        assert len(read_samples(out / 'digit_1.jsonl')) == 5
        assert 'carry' in json.loads((out / 'dataset.meta.json').read_text())

    def test_same_seed_same_file(self, tmp_path):
        """Test generation is reproducible."""
        for name in ('a.jsonl', 'b.jsonl'):
            main(['gen', 'addition', '--d', '2', '--count', '4', '--seed', '9', '--out', str(tmp_path / name)])
        assert (tmp_path / 'a.jsonl').read_bytes() == (tmp_path / 'b.jsonl').read_bytes()

    def test_missing_required_value(self, tmp_path):
        """Test LEGO generation without --k."""
        assert main(['gen', 'lego', '--out', str(tmp_path / 'x.jsonl')]) == 1


class TestExperimentCommands:
    """Test cases for run, replay and plot."""

    def test_run_replay_plot(self, tmp_path, capsys):
        """Test a full experiment cycle from the command line."""
        out = tmp_path / 'exp'
        assert main(['--config', SAMPLE_EXPERIMENT, 'run', '--output-dir', str(out)]) == 0
        assert (out / 'summary.csv').exists()

        assert main(['replay', '--output-dir', str(out)]) == 0
        assert 'skillit: identical' in capsys.readouterr().out

        assert main(['plot', '--output-dir', str(out)]) == 0
        assert (out / 'plots' / 'loss_depth_1.svg').exists()
        assert (out / 'plots' / 'mixture_curriculum.svg').exists()

    def test_missing_seed(self, tmp_path):
        """Test a config without a seed is refused."""
        with open(SAMPLE_EXPERIMENT) as f:
            data = json.load(f)
        del data['seed']
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps(data))
        assert main(['--config', str(path), 'run', '--output-dir', str(tmp_path / 'out')]) == 1

    def test_unreadable_config(self, tmp_path):
        """Test a config file that is not JSON."""
        path = tmp_path / 'bad.json'
        path.write_text('{not json')
        assert main(['--config', str(path), 'run']) == 1


class TestLearnGraphCommand:
    """Test cases for graph learning from the command line."""

    def test_approx_writes_graph_and_run_log(self, tmp_path):
        """Test the adjacency CSV and probe log are written."""
        out, probes = tmp_path / 'graph.csv', tmp_path / 'probes.jsonl'
        code = main(['--config', SAMPLE_EXPERIMENT, 'learn-graph', 'approx', '--H', '20',
                     '--out', str(out), '--probes', str(probes)])
        assert code == 0
        graph = read_graph_csv(out)
        assert graph.A.shape == (3, 3)
        np.testing.assert_array_equal(np.diag(graph.A), np.ones(3))
        assert len(probes.read_text().splitlines()) == 3


class TestRecoverCommand:
    """Test cases for trajectory clustering from the command line."""

    def test_recover_reports_accuracy(self, tmp_path, capsys):
        """Test matched accuracy is printed and assignments are written."""
        templates = np.array([[0.0, 0.0, 0.0, 0.0], [5.0, 5.0, 5.0, 5.0], [0.0, 5.0, 0.0, 5.0]])
        labels = np.repeat(np.arange(3), 10)
        path = tmp_path / 'traj.csv'
        write_trajectories(path, template_trajectories(templates, labels, 2, 2, noise_sigma=0.0))

        out = tmp_path / 'clusters.csv'
        assert main(['recover', '--trajectories', str(path), '--k', '3', '--out', str(out)]) == 0
        assert 'matched_accuracy=1.000000' in capsys.readouterr().out
        lines = out.read_text().splitlines()
        assert lines[0] == 'sample,cluster'
        assert len(lines) == 31
