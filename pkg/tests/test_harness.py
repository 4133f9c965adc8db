"""
Integration tests for experiment orchestration.

Runs small simulated experiments end to end: config resolution, parallel
selector runs, failure isolation, persisted outputs and replay.
"""

import pytest
import json
import numpy as np
from unittest.mock import patch

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import Settings
from src.core import ConfigError, TrainerError
from src.harness import (
    ExperimentSpec,
    learn_graph,
    planted_prerequisite_matrix,
    replay_experiment,
    run_experiment,
)
from src.storage import read_graph_csv, read_jsonl
from src.trainer import run_rounds

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
SAMPLE_EXPERIMENT = os.path.join(TESTS_DIR, 'sample_experiment.json')
FAKE_TRAINER = os.path.join(TESTS_DIR, 'fake_trainer.py')
SETTINGS = Settings(max_workers=3)


def load_sample(**overrides):
    with open(SAMPLE_EXPERIMENT) as f:
        data = json.load(f)
    data.update(overrides)
    return data


class TestExperimentSpec:
    """Test cases for resolving experiment configs."""

    def test_selectors_inherit_top_level_values(self):
        """Test eta, T, n and w flow into every run."""
        spec = ExperimentSpec.from_dict(load_sample())
        assert [run.name for run in spec.runs] == ['skillit', 'stratified', 'random', 'no_graph', 'static',
                                                   'curriculum']
        assert all((run.eta, run.T, run.n, run.w, run.seed) == (0.5, 4, 400, 2, 7) for run in spec.runs)

    def test_preset_values(self):
        """Test a preset supplies defaults and preset options reach the random selector."""
        data = load_sample(preset='lego-pretrain', selectors=['random'])
        del data['eta'], data['T'], data['w']
        spec = ExperimentSpec.from_dict(data)
        run = spec.runs[0]
        assert (run.eta, run.T, run.w) == (0.5, 6, 3)
        assert run.selector.options['random_proportions'] == [1, 1, 1, 3, 5]

    def test_eta_sweep_expands(self):
        """Test a sweep entry becomes one labeled run per learning rate."""
        spec = ExperimentSpec.from_dict(load_sample(selectors=[{'kind': 'skillit', 'eta': 'sweep'}]))
        assert [run.name for run in spec.runs] == ['skillit_eta0.1', 'skillit_eta0.2', 'skillit_eta0.5',
                                                   'skillit_eta0.8']
        assert [run.eta for run in spec.runs] == [0.1, 0.2, 0.5, 0.8]

    def test_seed_required(self):
        """Test configs without a seed are refused."""
        data = load_sample()
        del data['seed']
        with pytest.raises(ConfigError, match="seed is required"):
            ExperimentSpec.from_dict(data)

    def test_duplicate_labels(self):
        """Test two runs with the same label."""
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict(load_sample(selectors=['skillit', 'skillit']))

    def test_unknown_graph_source(self):
        """Test an unsupported graph type."""
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict(load_sample(graph={'type': 'oracle'}))

    def test_missing_referenced_file(self, tmp_path):
        """Test a graph CSV path that does not exist."""
        with pytest.raises(ConfigError):
            ExperimentSpec.from_dict(load_sample(graph={'type': 'csv', 'path': str(tmp_path / 'none.csv')}))

    def test_to_dict_round_trip(self):
        """Test the resolved form rebuilds the same runs."""
        spec = ExperimentSpec.from_dict(load_sample())
        assert ExperimentSpec.from_dict(spec.to_dict()).runs == spec.runs


class TestRunExperiment:
    """Test cases for running and persisting experiments."""

    def test_outputs_written(self, tmp_path):
        """Test every selector run produces a run log and a summary."""
        spec = ExperimentSpec.from_dict(load_sample(output_dir=str(tmp_path)))
        result = run_experiment(spec, SETTINGS)

        assert not result.failures
        assert list(result.logs) == [run.name for run in spec.runs]
        for label, log in result.logs.items():
            assert len(log.rounds) == 4
            assert (tmp_path / f"{label}.runlog.jsonl").exists()
        for name in ('experiment.json', 'graph.csv', 'summary.csv'):
            assert (tmp_path / name).exists()
        np.testing.assert_array_equal(read_graph_csv(tmp_path / 'graph.csv').A, result.graph.A)
        averages = [row for row in result.summary if row['skill'] == 'average']
        assert len(averages) == 6

    def test_skillit_beats_stratified_on_chain(self, tmp_path):
        """Test the graph-aware selector ends with lower average loss than uniform sampling."""
        spec = ExperimentSpec.from_dict(load_sample(selectors=['skillit', 'stratified']))
        result = run_experiment(spec, SETTINGS)
        assert result.logs['skillit'].final_losses().average < result.logs['stratified'].final_losses().average

    def test_selectors_share_noise_stream(self, tmp_path):
        """Test every selector starts from the same noisy observation of the base model."""
        result = run_experiment(ExperimentSpec.from_dict(load_sample()), SETTINGS)
        starts = {log.rounds[0].losses_before.losses for log in result.logs.values()}
        assert len(starts) == 1
        assert starts.pop() != (1.0, 1.0, 1.0)

    def test_failed_run_is_isolated(self, tmp_path):
        """Test one failing selector run does not stop the others."""
        def flaky_run_rounds(config, selector, trainer, k, pools=None, flush=None):
            if config.name == 'stratified':
                raise TrainerError("trainer crashed")
            return run_rounds(config, selector, trainer, k, pools=pools, flush=flush)

        spec = ExperimentSpec.from_dict(load_sample(output_dir=str(tmp_path)))
        with patch('src.harness.run_rounds', side_effect=flaky_run_rounds):
            result = run_experiment(spec, SETTINGS)

        assert result.failures == {'stratified': 'trainer crashed'}
        assert 'stratified' not in result.logs and 'skillit' in result.logs
        failed_rows = [row for row in result.summary if row['selector'] == 'stratified']
        assert failed_rows == [{'selector': 'stratified', 'status': 'failed', 'skill': '',
                                'final_loss': '', 'mean_loss': ''}]

    def test_no_runs(self):
        """Test an experiment without selectors."""
        spec = ExperimentSpec.from_dict(load_sample(selectors=[]))
        with pytest.raises(ConfigError):
            run_experiment(spec, SETTINGS)

    def test_lego_dataset_pools(self, tmp_path):
        """Test generated pools are respected by allocation."""
        data = load_sample(
            dataset={'type': 'lego', 'k': 3, 'count_per_skill': 150, 'validation_per_skill': 20},
            train_skills=None, T=3, n=60, w=1, selectors=['skillit', 'random'],
        )
        result = run_experiment(ExperimentSpec.from_dict(data), SETTINGS)
        assert [s.name for s in result.graph.train_skills] == ['depth_1', 'depth_2', 'depth_3']
        for log in result.logs.values():
            assert [sum(r.allocation) for r in log.rounds] == [20, 20, 20]

    def test_external_trainer(self, tmp_path):
        """Test a run against an external training process."""
        data = {
            'name': 'external', 'seed': 1, 'train_skills': ['a', 'b'],
            'trainer': {'type': 'external', 'command': [sys.executable, FAKE_TRAINER, '--skills', 'a,b'],
                        'timeout': 10},
            'graph': {'type': 'identity'},
            'T': 2, 'n': 4, 'w': 1, 'selectors': ['stratified'],
        }
        result = run_experiment(ExperimentSpec.from_dict(data), SETTINGS)
        log = result.logs['stratified']
        assert log.rounds[-1].losses_after.losses == pytest.approx((0.75 ** 2, 0.75 ** 2))

    def test_learned_graph_source(self, tmp_path):
        """Test an experiment that learns its graph first and logs the probes."""
        data = load_sample(graph={'type': 'learn_approximate', 'H': 20}, selectors=['skillit'],
                           output_dir=str(tmp_path))
        data['trainer'] = dict(data['trainer'], noise_sigma=0.0)
        result = run_experiment(ExperimentSpec.from_dict(data), SETTINGS)
        np.testing.assert_array_equal(result.graph.A > 0, np.array(data['trainer']['A_true']) > 0)
        assert len(read_jsonl(tmp_path / 'probes.jsonl')) == 3


class TestReplay:
    """Test cases for re-executing persisted experiments."""

    def test_replay_is_byte_identical(self, tmp_path):
        """Test every run log regenerates exactly from experiment.json."""
        spec = ExperimentSpec.from_dict(load_sample(output_dir=str(tmp_path)))
        run_experiment(spec, SETTINGS)
        assert replay_experiment(tmp_path, SETTINGS) == {run.name: True for run in spec.runs}

    def test_replay_detects_tampering(self, tmp_path):
        """Test a modified run log is reported as different."""
        spec = ExperimentSpec.from_dict(load_sample(output_dir=str(tmp_path), selectors=['skillit']))
        run_experiment(spec, SETTINGS)
        path = tmp_path / 'skillit.runlog.jsonl'
        path.write_text(path.read_text().replace('"round": 1', '"round": 1 '))
        assert replay_experiment(tmp_path, SETTINGS) == {'skillit': False}


class TestGraphLearning:
    """Test cases for learning a graph through the harness."""

    def test_brute_force_via_harness(self):
        """Test the probe horizon option reaches the learner."""
        spec = ExperimentSpec.from_dict(load_sample(selectors=[]))
        spec.trainer['noise_sigma'] = 0.0
        result = learn_graph(spec, 'brute', {'H': 200}, SETTINGS)
        assert result.ok
        np.testing.assert_array_equal(result.graph.A, spec.trainer['A_true'])

    def test_unknown_method(self):
        """Test a method other than brute or approx."""
        spec = ExperimentSpec.from_dict(load_sample(selectors=[]))
        with pytest.raises(ConfigError):
            learn_graph(spec, 'exact', None, SETTINGS)

    def test_planted_matrix(self):
        """Test planted prerequisites are forward edges over a unit diagonal."""
        A = planted_prerequisite_matrix(6, np.random.default_rng(0))
        np.testing.assert_array_equal(np.diag(A), np.ones(6))
        assert np.all(np.tril(A, -1) == 0)
        assert set(np.unique(A)) <= {0.0, 0.5, 1.0}
