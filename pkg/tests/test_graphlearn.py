"""
Unit tests for skills-graph learning.
"""

import pytest
import numpy as np
from unittest.mock import patch

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src import graphlearn
from src.core import GraphError, Setting, SkillId, TrainerError, make_skills
from src.graphlearn import (
    GraphLearnConfig,
    learn_graph_approximate,
    learn_graph_bruteforce,
    threshold_crossing,
)
from src.trainer import SimDynamics, SimTrainer, sim_trainer_factory

# chain a -> b -> c
CHAIN = np.array([
    [1.0, 0.5, 0.0],
    [0.0, 1.0, 0.5],
    [0.0, 0.0, 1.0],
])


class FailingTrainer(SimTrainer):
    def step(self, allocation, mixture=None):
        raise TrainerError("probe crashed")


class TestThresholdCrossing:
    """Test cases for interpolated threshold crossings."""

    def test_geometric_decay_is_exact(self):
        """Test log-linear interpolation recovers the crossing of a geometric series."""
        losses = [0.5 ** s for s in range(10)]
        assert threshold_crossing(losses, 0.5 ** 3.5) == pytest.approx(3.5)

    def test_never_crosses(self):
        """Test a series that stays above the threshold."""
        assert threshold_crossing([1.0, 0.9, 0.8], 0.1) is None

    def test_already_below(self):
        """Test a series starting below the threshold."""
        assert threshold_crossing([0.001, 0.0005], 0.01) == 0.0

    def test_drop_to_zero(self):
        """Test a series that hits exactly zero."""
        assert threshold_crossing([1.0, 0.0], 0.01) == 1.0


class TestBruteForce:
    """Test cases for brute-force graph learning."""

    def setup_method(self):
        self.skills = make_skills(['a', 'b', 'c'])
        self.factory = sim_trainer_factory(SimDynamics(CHAIN, np.ones(3)), step_rate=0.05)

    def test_recovers_chain(self):
        """Test edges appear exactly where the pair run needs less target data."""
        result = learn_graph_bruteforce(self.skills, self.factory, GraphLearnConfig(H=200))
        assert result.ok
        np.testing.assert_array_equal(result.graph.A, [[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
        assert len(result.probes) == 3 + 6

    def test_delta_mode_counts_halved_target_data(self):
        """Test raw loss deltas draw no edges when the pair run sees half the target data."""
        cfg = GraphLearnConfig(H=50, compare_mode='delta')
        result = learn_graph_bruteforce(self.skills, self.factory, cfg)
        np.testing.assert_array_equal(result.graph.A, np.eye(3))

    def test_short_horizon_falls_back_to_delta(self):
        """Test probes that never reach the threshold use the loss-delta comparison."""
        result = learn_graph_bruteforce(self.skills, self.factory, GraphLearnConfig(H=20))
        assert all(probe.crossing is None for probe in result.probes)
        np.testing.assert_array_equal(result.graph.A, np.eye(3))

    def test_raw_delta_weights(self):
        """Test raw_delta diagonals hold the single-skill loss drop."""
        cfg = GraphLearnConfig(H=10, weight_scheme='raw_delta')
        result = learn_graph_bruteforce(self.skills, self.factory, cfg)
        assert result.graph.A[0, 0] == pytest.approx(1 - 0.95 ** 10)
        assert result.graph.A[2, 0] == 0.0

    def test_parallel_runs(self):
        """Test concurrent probes give the same graph."""
        serial = learn_graph_bruteforce(self.skills, self.factory, GraphLearnConfig(H=200))
        parallel = learn_graph_bruteforce(self.skills, self.factory, GraphLearnConfig(H=200, max_workers=4))
        np.testing.assert_array_equal(serial.graph.A, parallel.graph.A)

    def test_execution_order_does_not_matter(self):
        """Test running the planned trainings in reverse yields the same graph and log."""
        cfg = GraphLearnConfig(H=200)
        forward = learn_graph_bruteforce(self.skills, self.factory, cfg)
        planner = graphlearn._plan_bruteforce
        with patch('src.graphlearn._plan_bruteforce', side_effect=lambda *args: planner(*args)[::-1]):
            backward = learn_graph_bruteforce(self.skills, self.factory, cfg)
        np.testing.assert_array_equal(forward.graph.A, backward.graph.A)
        assert forward.probe_log() == backward.probe_log()

    def test_complete_graph_has_every_edge(self):
        """Test every off-diagonal edge is found when all skills transfer fully."""
        factory = sim_trainer_factory(SimDynamics(np.ones((3, 3)), np.ones(3)), step_rate=0.05)
        result = learn_graph_bruteforce(self.skills, factory, GraphLearnConfig(H=200))
        expected = np.full((3, 3), 0.5)
        np.fill_diagonal(expected, 1.0)
        np.testing.assert_array_equal(result.graph.A, expected)

    def test_fine_tune_eval_subset(self):
        """Test learning toward a single target skill."""
        result = learn_graph_bruteforce(self.skills, self._target_factory(), GraphLearnConfig(H=200),
                                        eval_skills=(self.skills[2],))
        assert result.graph.setting == Setting.FINE_TUNE
        np.testing.assert_array_equal(result.graph.A, [[0.0], [0.5], [1.0]])

    def test_failed_run_yields_no_graph(self):
        """Test any failed probe leaves the graph unset and is logged."""
        dynamics = SimDynamics(CHAIN, np.ones(3))
        result = learn_graph_bruteforce(self.skills, lambda: FailingTrainer(dynamics), GraphLearnConfig(H=5))
        assert result.graph is None
        assert not result.ok
        assert result.failed and all(probe.error == "probe crashed" for probe in result.failed)

    def test_eval_outside_train(self):
        """Test brute force refuses out-of-domain eval skills."""
        with pytest.raises(GraphError):
            learn_graph_bruteforce(self.skills, self.factory, GraphLearnConfig(H=5),
                                   eval_skills=(SkillId(0, 'z'),))

    def _target_factory(self):
        return sim_trainer_factory(SimDynamics(CHAIN[:, 2:], np.ones(1)), step_rate=0.05)


class TestApproximate:
    """Test cases for the one-probe-per-skill learner."""

    def setup_method(self):
        self.skills = make_skills(['a', 'b', 'c'])
        self.factory = sim_trainer_factory(SimDynamics(CHAIN, np.ones(3)), step_rate=0.05)

    def test_support_is_exact_on_noiseless_dynamics(self):
        """Test binary_half weights with a unit diagonal."""
        result = learn_graph_approximate(self.skills, self.skills, self.factory, GraphLearnConfig(H=20))
        np.testing.assert_array_equal(result.graph.A, [[1.0, 0.5, 0.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]])
        assert len(result.probes) == 3

    def test_out_of_domain(self):
        """Test learning toward skills never trained on."""
        evals = (SkillId(0, 'x'), SkillId(1, 'y'))
        dynamics = SimDynamics(np.array([[0.4, 0.0], [0.0, 0.0], [0.2, 0.3]]), np.ones(2))
        result = learn_graph_approximate(self.skills, evals, sim_trainer_factory(dynamics, 0.05),
                                         GraphLearnConfig(H=20, h=5))
        assert result.graph.setting == Setting.OUT_OF_DOMAIN
        np.testing.assert_array_equal(result.graph.A, [[0.5, 0.0], [0.0, 0.0], [0.5, 0.5]])
        assert all(probe.steps == 5 for probe in result.probes)

    def test_zero_steps_gives_zero_matrix(self):
        """Test h=0 probes observe no change."""
        result = learn_graph_approximate(self.skills, self.skills, self.factory, GraphLearnConfig(H=20, h=0))
        np.testing.assert_array_equal(result.graph.A, np.zeros((3, 3)))

    def test_raw_delta_single_edge(self):
        """Test raw_delta stores the loss drop caused by the one contributing skill."""
        evals = (SkillId(0, 'x'),)
        dynamics = SimDynamics(np.array([[0.0], [0.6], [0.0]]), np.ones(1))
        cfg = GraphLearnConfig(H=10, weight_scheme='raw_delta')
        result = learn_graph_approximate(self.skills, evals, sim_trainer_factory(dynamics, 0.05), cfg)
        assert result.graph.A[1, 0] == pytest.approx(1 - 0.97 ** 10)
        assert result.graph.A[0, 0] == 0.0

    def test_invalid_config(self):
        """Test h beyond H."""
        with pytest.raises(GraphError):
            GraphLearnConfig(H=10, h=11)
