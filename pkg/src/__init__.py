"""
skillmix

Skill-graph driven data mixture planning: learn which training skills help
which evaluation skills, then pick per-round sampling mixtures with online
mirror descent over the skills graph.
"""

__version__ = "0.1.0"
__author__ = "skillmix contributors"

# Public API
__all__ = [
    "SkillMixError",
    "SkillId",
    "SkillsGraph",
    "Mixture",
    "LossState",
    "RunConfig",
    "SelectorConfig",
    "RunLog",
    "normalize",
    "validate_graph",
    "allocate_samples",
    "SimDynamics",
    "SimTrainer",
    "ExternalTrainer",
    "run_rounds",
    "run_simulation",
    "create_selector",
    "learn_graph_bruteforce",
    "learn_graph_approximate",
    "cluster_trajectories",
    "matched_accuracy",
    "ExperimentSpec",
    "run_experiment",
    "replay_experiment",
]

from .allocation import allocate_samples
from .core import (
    LossState,
    Mixture,
    RunConfig,
    RunLog,
    SelectorConfig,
    SkillId,
    SkillMixError,
    SkillsGraph,
    normalize,
    validate_graph,
)
from .graphlearn import learn_graph_approximate, learn_graph_bruteforce
from .harness import ExperimentSpec, replay_experiment, run_experiment
from .recover import cluster_trajectories, matched_accuracy
from .selector import create_selector
from .trainer import ExternalTrainer, SimDynamics, SimTrainer, run_rounds, run_simulation
