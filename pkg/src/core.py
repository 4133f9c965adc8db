"""
Domain types for skill-mixture planning.

This module holds the value types shared by every other module (skills,
samples, skill sets, skills graphs, mixtures, loss states, run configuration
and run logs), the exception hierarchy, and the two core operations:
normalizing weights onto the simplex and validating a skills graph.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

logger = logging.getLogger(__name__)

MIXTURE_SUM_TOLERANCE = 1e-9


class SkillMixError(Exception):
    """Base exception for skill-mixture planning errors."""
    pass


class DegenerateWeightsError(SkillMixError):
    """Raised when a weight vector cannot be normalized onto the simplex."""
    pass


class InvalidMixtureError(SkillMixError):
    """Raised when a vector violates the mixture invariants."""
    pass


class GraphError(SkillMixError):
    """Raised for malformed skills graphs or unusable edge sets."""
    pass


class GenerationError(SkillMixError):
    """Raised when a synthetic dataset request cannot be satisfied."""
    pass


class DynamicsError(SkillMixError):
    """Raised when simulated loss dynamics are invalid."""
    pass


class TrainerError(SkillMixError):
    """Raised when a trainer fails to step or report losses."""
    pass


class InsufficientDataError(SkillMixError):
    """Raised when sample pools cannot cover a round budget."""
    pass


class ConfigError(SkillMixError):
    """Raised for invalid run or experiment configuration."""
    pass


class SelectorError(SkillMixError):
    """Raised when a selector is used outside its preconditions."""
    pass


class Setting(str, Enum):
    """Relation between the evaluation and training skill sets."""
    CONTINUAL = "continual"
    FINE_TUNE = "fine_tune"
    OUT_OF_DOMAIN = "out_of_domain"


@dataclass(frozen=True)
class SkillId:
    """A skill's position in its skill set plus a readable label."""
    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise SkillMixError(f"skill index must be >= 0, got {self.index}")
        if not self.name:
            raise SkillMixError("skill name must be nonempty")


@dataclass(frozen=True)
class Sample:
    """One text sample labeled with the skill it exercises."""
    skill: SkillId
    input: str
    output: str

    def __post_init__(self):
        if not self.output:
            raise SkillMixError(f"sample for skill {self.skill.name} has empty output")

    def to_dict(self) -> Dict[str, str]:
        return {'skill': self.skill.name, 'input': self.input, 'output': self.output}


@dataclass(frozen=True)
class SkillSet:
    """
    Ordered collection of skills with per-skill training and validation pools.

    Pools are indexed like ``skills``. Training and validation pools of a skill
    must not share a sample (compared by input/output text).
    """
    skills: Tuple[SkillId, ...]
    pools: Tuple[Tuple[Sample, ...], ...]
    validation: Tuple[Tuple[Sample, ...], ...]

    def __post_init__(self):
        if not self.skills:
            raise SkillMixError("a skill set needs at least one skill")
        indices = [s.index for s in self.skills]
        if len(set(indices)) != len(indices):
            raise SkillMixError(f"duplicate skill indices: {indices}")
        if len(self.pools) != len(self.skills) or len(self.validation) != len(self.skills):
            raise SkillMixError("pools and validation must have one entry per skill")

        for skill, pool, held_out in zip(self.skills, self.pools, self.validation):
            for sample in (*pool, *held_out):
                if sample.skill != skill:
                    raise SkillMixError(
                        f"sample labeled {sample.skill.name} found in pool of {skill.name}"
                    )
            held_out_keys = {(s.input, s.output) for s in held_out}
            if any((s.input, s.output) in held_out_keys for s in pool):
                raise SkillMixError(
                    f"training and validation pools overlap for skill {skill.name}"
                )

    @property
    def k(self) -> int:
        return len(self.skills)

    def pool_sizes(self) -> Tuple[int, ...]:
        return tuple(len(pool) for pool in self.pools)

    def skill_by_name(self, name: str) -> SkillId:
        for skill in self.skills:
            if skill.name == name:
                return skill
        raise SkillMixError(f"unknown skill: {name}")


@dataclass(frozen=True, eq=False)
class SkillsGraph:
    """
    Weighted adjacency between k training skills and m evaluation skills.

    ``A[i, j]`` is the strength of the edge from training skill i to
    evaluation skill j. Negative inputs are clamped to zero at construction
    and the stored matrix is read-only.
    """
    train_skills: Tuple[SkillId, ...]
    eval_skills: Tuple[SkillId, ...]
    A: np.ndarray
    setting: Setting = Setting.CONTINUAL

    def __post_init__(self):
        matrix = np.array(self.A, dtype=float, copy=True)
        if matrix.ndim != 2:
            raise GraphError(f"adjacency matrix must be 2-D, got shape {matrix.shape}")
        if matrix.shape != (len(self.train_skills), len(self.eval_skills)):
            raise GraphError(
                f"adjacency shape {matrix.shape} does not match "
                f"{len(self.train_skills)} train x {len(self.eval_skills)} eval skills"
            )
        matrix = np.maximum(matrix, 0.0)
        matrix.setflags(write=False)
        object.__setattr__(self, 'A', matrix)
        object.__setattr__(self, 'train_skills', tuple(self.train_skills))
        object.__setattr__(self, 'eval_skills', tuple(self.eval_skills))
        object.__setattr__(self, 'setting', Setting(self.setting))

    @property
    def k(self) -> int:
        return len(self.train_skills)

    @property
    def m(self) -> int:
        return len(self.eval_skills)

    def eval_positions_in_train(self) -> List[Optional[int]]:
        """For each eval skill, its row index among the training skills (or None)."""
        positions = []
        for skill in self.eval_skills:
            positions.append(self.train_skills.index(skill) if skill in self.train_skills else None)
        return positions


@dataclass(frozen=True)
class Mixture:
    """A point on the (k-1)-simplex: per-skill sampling proportions."""
    p: Tuple[float, ...]

    def __post_init__(self):
        values = np.asarray(self.p, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise InvalidMixtureError("mixture must be a nonempty vector")
        if not np.all(np.isfinite(values)):
            raise InvalidMixtureError(f"mixture has non-finite entries: {self.p}")
        if np.any(values < 0):
            raise InvalidMixtureError(f"mixture has negative entries: {self.p}")
        if abs(values.sum() - 1.0) > MIXTURE_SUM_TOLERANCE:
            raise InvalidMixtureError(f"mixture sums to {values.sum()!r}, not 1")
        object.__setattr__(self, 'p', tuple(float(v) for v in values))

    @property
    def k(self) -> int:
        return len(self.p)

    def as_array(self) -> np.ndarray:
        return np.array(self.p, dtype=float)

    @classmethod
    def uniform(cls, k: int) -> 'Mixture':
        return normalize(np.ones(k))


@dataclass(frozen=True)
class LossState:
    """Validation losses over the evaluation skills at a round boundary."""
    losses: Tuple[float, ...]
    round: int = 0

    def __post_init__(self):
        values = np.asarray(self.losses, dtype=float)
        if values.ndim != 1:
            raise SkillMixError("losses must be a vector")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise SkillMixError(f"losses must be finite and nonnegative: {self.losses}")
        object.__setattr__(self, 'losses', tuple(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array(self.losses, dtype=float)

    @property
    def average(self) -> float:
        return float(np.mean(self.losses)) if self.losses else 0.0


SELECTOR_KINDS = (
    'random',
    'stratified',
    'skill_stratified',
    'curriculum',
    'anticurriculum',
    'skill_curriculum',
    'skill_anticurriculum',
    'skillit',
    'no_graph',
    'static',
)


@dataclass(frozen=True)
class SelectorConfig:
    """Selector kind plus kind-specific options (e.g. proportions, frac_previous)."""
    kind: str
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SELECTOR_KINDS:
            raise ConfigError(f"unknown selector kind {self.kind!r}; expected one of {SELECTOR_KINDS}")
        object.__setattr__(self, 'options', dict(self.options))

    @property
    def label(self) -> str:
        return str(self.options.get('label', self.kind))


@dataclass(frozen=True)
class RunConfig:
    """Inputs of one selection run: learning rate, rounds, budget, window, seed, selector."""
    eta: float
    T: int
    n: int
    w: int
    seed: int
    selector: SelectorConfig

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.n < self.T:
            raise ConfigError(f"budget n={self.n} must cover at least one sample per round (T={self.T})")
        if self.w < 1 or self.w > self.T:
            raise ConfigError(f"window w={self.w} must satisfy 1 <= w <= T={self.T}")

    @property
    def name(self) -> str:
        return self.selector.label

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eta': self.eta,
            'T': self.T,
            'n': self.n,
            'w': self.w,
            'seed': self.seed,
            'selector': {'kind': self.selector.kind, 'options': dict(self.selector.options)},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RunConfig':
        try:
            selector = data['selector']
            if isinstance(selector, str):
                selector = {'kind': selector}
            return cls(
                eta=float(data['eta']),
                T=int(data['T']),
                n=int(data['n']),
                w=int(data['w']),
                seed=int(data['seed']),
                selector=SelectorConfig(selector['kind'], selector.get('options', {})),
            )
        except KeyError as e:
            raise ConfigError(f"run config missing key {e}") from e


@dataclass(frozen=True)
class RoundRecord:
    """What happened in one round: mixture, allocation and losses around training."""
    round: int
    mixture: Mixture
    allocation: Tuple[int, ...]
    losses_before: LossState
    losses_after: LossState

    def to_dict(self) -> Dict[str, Any]:
        return {
            'round': self.round,
            'mixture': list(self.mixture.p),
            'allocation': list(self.allocation),
            'losses_before': list(self.losses_before.losses),
            'losses_after': list(self.losses_after.losses),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RoundRecord':
        t = int(data['round'])
        return cls(
            round=t,
            mixture=Mixture(tuple(data['mixture'])),
            allocation=tuple(int(c) for c in data['allocation']),
            losses_before=LossState(tuple(data['losses_before']), round=t - 1),
            losses_after=LossState(tuple(data['losses_after']), round=t),
        )


@dataclass
class RunLog:
    """Append-only record of a full selection run."""
    config: RunConfig
    rounds: List[RoundRecord] = field(default_factory=list)

    def append(self, record: RoundRecord) -> None:
        if self.rounds and record.round <= self.rounds[-1].round:
            raise SkillMixError(
                f"round {record.round} appended after round {self.rounds[-1].round}"
            )
        self.rounds.append(record)

    def final_losses(self) -> LossState:
        if not self.rounds:
            raise SkillMixError("run log has no rounds")
        return self.rounds[-1].losses_after

    def average_loss_per_round(self) -> List[float]:
        return [record.losses_after.average for record in self.rounds]

    def mixtures(self) -> np.ndarray:
        return np.array([record.mixture.p for record in self.rounds])


@dataclass
class GraphReport:
    """Outcome of validate_graph: every violated invariant, empty when ok."""
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def normalize(weights: Sequence[float]) -> Mixture:
    """
    Scale a nonnegative weight vector onto the simplex.

    Args:
        weights: length-k nonnegative, finite weights with a positive sum

    Returns:
        Mixture proportional to ``weights``

    Raises:
        DegenerateWeightsError: for all-zero, negative or non-finite input
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateWeightsError("degenerate weight vector")
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegenerateWeightsError("degenerate weight vector")
    return Mixture(tuple((w / total).tolist()))


def normalize_log(log_weights: Sequence[float]) -> Mixture:
    """Normalize weights given in log space (max-shifted softmax; -inf means zero weight)."""
    z = np.asarray(log_weights, dtype=float)
    if z.ndim != 1 or z.size == 0 or np.any(np.isnan(z)) or np.any(z == np.inf) or np.all(z == -np.inf):
        raise DegenerateWeightsError("degenerate weight vector")
    return Mixture(tuple(softmax(z).tolist()))


def validate_graph(graph: SkillsGraph) -> GraphReport:
    """
    Check a skills graph against the invariants of its setting.

    Never raises; every violation is reported.
    """
    report = GraphReport()
    train, evals = list(graph.train_skills), list(graph.eval_skills)

    if not train:
        report.violations.append("no training skills")
    if not evals:
        report.violations.append("no evaluation skills")
    if len(set(train)) != len(train):
        report.violations.append("duplicate training skills")
    if len(set(evals)) != len(evals):
        report.violations.append("duplicate evaluation skills")
    if not np.all(np.isfinite(graph.A)):
        report.violations.append("non-finite edge weights")
    elif np.any(graph.A < 0):
        report.violations.append("negative edge weights")

    train_set, eval_set = set(train), set(evals)
    if graph.setting == Setting.CONTINUAL:
        if evals != train:
            report.violations.append("continual setting requires eval skills == train skills")
    elif graph.setting == Setting.FINE_TUNE:
        if not eval_set <= train_set:
            report.violations.append("eval must be subset of train")
        elif eval_set == train_set:
            report.violations.append("eval must be strict subset")
    elif graph.setting == Setting.OUT_OF_DOMAIN:
        if train_set & eval_set:
            report.violations.append("train/eval overlap")

    if report.violations:
        logger.debug(f"Graph validation found {len(report.violations)} violation(s): {report.violations}")
    return report


def _off_diagonal_mask(graph: SkillsGraph) -> np.ndarray:
    mask = np.ones(graph.A.shape, dtype=bool)
    for j, position in enumerate(graph.eval_positions_in_train()):
        if position is not None:
            mask[position, j] = False
    return mask


def graph_density(graph: SkillsGraph) -> float:
    """Fraction of nonzero entries among edges between distinct skills."""
    mask = _off_diagonal_mask(graph)
    if not mask.any():
        return 0.0
    return float(np.count_nonzero(graph.A[mask] > 0) / mask.sum())


def classify_density(graph: SkillsGraph) -> str:
    """Label a graph complete, empty or intermediate (reporting only)."""
    density = graph_density(graph)
    if density >= 1.0:
        return 'complete'
    if density <= 0.0:
        return 'empty'
    return 'intermediate'


def identity_graph(train_skills: Sequence[SkillId],
                   eval_skills: Optional[Sequence[SkillId]] = None,
                   setting: Setting = Setting.CONTINUAL) -> SkillsGraph:
    """Graph where each skill only influences itself."""
    evals = tuple(eval_skills) if eval_skills is not None else tuple(train_skills)
    A = np.array([[1.0 if t == e else 0.0 for e in evals] for t in train_skills])
    return SkillsGraph(tuple(train_skills), evals, A.reshape(len(train_skills), len(evals)), setting)


def all_ones_graph(train_skills: Sequence[SkillId],
                   eval_skills: Optional[Sequence[SkillId]] = None,
                   setting: Setting = Setting.CONTINUAL) -> SkillsGraph:
    """Complete graph with unit weights."""
    evals = tuple(eval_skills) if eval_skills is not None else tuple(train_skills)
    return SkillsGraph(tuple(train_skills), evals, np.ones((len(train_skills), len(evals))), setting)


def make_skills(names: Sequence[str]) -> Tuple[SkillId, ...]:
    """SkillIds indexed by position."""
    return tuple(SkillId(i, name) for i, name in enumerate(names))
