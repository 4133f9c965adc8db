"""
Skill recovery from per-sample loss trajectories.

Each sample is described by its validation loss at every checkpoint of every
run; k-means over these vectors groups samples by skill, and matched accuracy
scores a clustering against known labels after the best cluster-to-label
bijection.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import pdist
from sklearn.cluster import KMeans
from sklearn.metrics.cluster import contingency_matrix
from sklearn.preprocessing import StandardScaler

from .core import LossState, Mixture, SkillMixError
from .trainer import SimDynamics, sim_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrajectoryMatrix:
    """
    N samples x (runs * checkpoints) loss features.

    Column ``r * checkpoints + c`` holds the loss at checkpoint c of run r.
    """
    samples: Tuple[str, ...]
    features: np.ndarray
    runs: int
    checkpoints: int
    true_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if self.runs < 1 or self.checkpoints < 1:
            raise SkillMixError(f"need runs >= 1 and checkpoints >= 1, got R={self.runs}, C={self.checkpoints}")
        if features.ndim != 2 or features.shape != (len(self.samples), self.runs * self.checkpoints):
            raise SkillMixError(
                f"features of shape {features.shape} do not match "
                f"{len(self.samples)} samples x {self.runs}*{self.checkpoints}"
            )
        if not np.all(np.isfinite(features)):
            raise SkillMixError("trajectory features have missing or non-finite entries")
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'samples', tuple(self.samples))
        if self.true_labels is not None:
            labels = np.asarray(self.true_labels, dtype=int)
            if labels.shape != (len(self.samples),):
                raise SkillMixError(f"{labels.size} labels for {len(self.samples)} samples")
            object.__setattr__(self, 'true_labels', labels)

    @property
    def n_samples(self) -> int:
        return len(self.samples)


def cluster_trajectories(traj: TrajectoryMatrix, k: int, seed: int = 0,
                         n_init: int = 10, zscore: bool = False) -> np.ndarray:
    """
    k-means (k-means++ seeding, ``n_init`` restarts, best inertia kept).

    Raises:
        SkillMixError: if k < 1 or k exceeds the number of samples
    """
    if k < 1:
        raise SkillMixError(f"k must be >= 1, got {k}")
    if k > traj.n_samples:
        raise SkillMixError(f"cannot form {k} clusters from {traj.n_samples} samples")
    features = StandardScaler().fit_transform(traj.features) if zscore else traj.features
    model = KMeans(n_clusters=k, init='k-means++', n_init=n_init, random_state=seed)
    assignment = model.fit_predict(features)
    logger.debug(f"k-means with k={k} over {traj.n_samples} samples, inertia {model.inertia_:.6g}")
    return assignment


def matched_accuracy(assignment: Sequence[int], true_labels: Sequence[int]) -> float:
    """Fraction of samples correct under the best cluster <-> label bijection."""
    predicted = np.asarray(assignment)
    truth = np.asarray(true_labels)
    if predicted.shape != truth.shape:
        raise SkillMixError(f"assignment has {predicted.size} entries, labels have {truth.size}")
    if predicted.size == 0:
        raise SkillMixError("cannot score an empty assignment")
    counts = contingency_matrix(truth, predicted)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / predicted.size)


def template_separation(templates: np.ndarray) -> float:
    """Smallest Euclidean distance between two templates."""
    return float(pdist(np.asarray(templates, dtype=float)).min())


def template_trajectories(templates: np.ndarray, labels: Sequence[int], runs: int, checkpoints: int,
                          noise_sigma: float, seed: int = 0) -> TrajectoryMatrix:
    """Each sample = its skill's template plus i.i.d. Gaussian noise."""
    templates = np.asarray(templates, dtype=float)
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(seed)
    features = templates[labels] + noise_sigma * rng.standard_normal((labels.size, templates.shape[1]))
    return TrajectoryMatrix(tuple(str(i) for i in range(labels.size)), features, runs, checkpoints, labels)


def simulate_trajectories(labels: Sequence[int], dynamics: SimDynamics, runs: int, checkpoints: int,
                          offset_sigma: float = 0.05, noise_sigma: float = 0.01,
                          step_rate: float = 0.1, seed: int = 0) -> TrajectoryMatrix:
    """
    Per-sample loss trajectories from simulated runs.

    Every run trains on a random Dirichlet mixture; a sample's loss at a
    checkpoint is its skill's latent loss plus a fixed per-sample offset plus
    observation noise.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= dynamics.m):
        raise SkillMixError(f"labels must index the {dynamics.m} eval skills")
    rng = np.random.default_rng(seed)
    offsets = offset_sigma * rng.standard_normal(labels.size)
    features = np.empty((labels.size, runs * checkpoints))

    for r in range(runs):
        mixture = Mixture(tuple(rng.dirichlet(np.ones(dynamics.k)).tolist()))
        state = LossState(tuple(dynamics.L0))
        for c in range(checkpoints):
            noise = noise_sigma * rng.standard_normal(labels.size)
            features[:, r * checkpoints + c] = state.as_array()[labels] + offsets + noise
            state = sim_step(state, mixture, dynamics.A_true, step_rate)

    return TrajectoryMatrix(tuple(str(i) for i in range(labels.size)), features, runs, checkpoints, labels)
