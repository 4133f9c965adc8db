"""
Per-round mixture selection.

Skill-It keeps a window of recent validation losses and weights each
training skill by exp(eta * (row sum of A + sum over the window of A @ L)),
i.e. the softmax initialization times the accumulated loss-weighted edge
strengths. Baselines: random (imbalanced pooled draw), stratified,
skill-stratified, (anti)curriculum and skill-(anti)curriculum; ablations:
no_graph (identity A) and static (initialization held every round).
"""

import itertools
import logging
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from .config import SKILL_CURRICULUM_FRAC
from .core import (
    GraphError,
    InvalidMixtureError,
    LossState,
    Mixture,
    RunConfig,
    SelectorError,
    Setting,
    SkillsGraph,
    identity_graph,
    make_skills,
    normalize,
    normalize_log,
)
from .storage import resolve_eval_skills

logger = logging.getLogger(__name__)


# --- Skill-It ----------------------------------------------------------------

def skillit_init(graph: SkillsGraph, eta: float) -> Mixture:
    """Softmax of eta * row sums of A (diagonal included)."""
    return normalize_log(eta * graph.A.sum(axis=1))


@dataclass
class SkillItState:
    """Graph estimate, learning rate and the window of the last w observations."""
    graph: SkillsGraph
    eta: float
    w: int
    history: Optional[Deque[LossState]] = None
    round: int = 0

    def __post_init__(self):
        if self.w < 1:
            raise SelectorError(f"window must be >= 1, got {self.w}")
        self.history = deque(self.history or (), maxlen=self.w)

    def push(self, observed: LossState) -> None:
        losses = observed.as_array()
        if losses.size != self.graph.m:
            raise SelectorError(f"observed {losses.size} losses for {self.graph.m} eval skills")
        self.history.append(observed)
        self.round += 1

    def log_weights(self) -> np.ndarray:
        if not self.history:
            raise SelectorError("no observations yet; observe before the first update")
        # sum over the window only; older rounds have been evicted
        accumulated = np.sum([state.as_array() for state in self.history], axis=0)
        return self.eta * self.graph.A.sum(axis=1) + self.eta * (self.graph.A @ accumulated)

    def mixture(self) -> Mixture:
        return normalize_log(self.log_weights())


def skillit_update(state: SkillItState, observed: LossState) -> Mixture:
    """Push ``observed`` into the window and return the updated mixture."""
    state.push(observed)
    return state.mixture()


def proximal_oracle(p_prev: Mixture, gradient: Sequence[float], eta: float,
                    method: str = 'solver') -> Mixture:
    """
    argmin over the simplex of eta * <g, p> + KL(p || p_prev).

    ``method='solver'`` minimizes numerically with BFGS over a softmax
    parametrization; ``method='closed_form'`` returns p_prev * exp(-eta * g)
    normalized. Test oracle only.

    Raises:
        InvalidMixtureError: if p_prev has a zero entry (KL undefined)
    """
    prev = p_prev.as_array()
    g = np.asarray(gradient, dtype=float)
    if np.any(prev <= 0):
        raise InvalidMixtureError("p_prev must be strictly positive (KL undefined)")
    if g.shape != prev.shape:
        raise SelectorError(f"gradient of length {g.size} for a {prev.size}-skill mixture")
    log_prev = np.log(prev)

    # exponentiated-gradient step
    if method == 'closed_form':
        return normalize_log(log_prev - eta * g)
    if method != 'solver':
        raise SelectorError(f"unknown proximal method {method!r}")

    # optimize over logits so every iterate stays on the simplex
    def objective(z: np.ndarray) -> float:
        log_p = z - logsumexp(z)
        p = np.exp(log_p)
        return float(eta * g @ p + p @ (log_p - log_prev))

    def jacobian(z: np.ndarray) -> np.ndarray:
        log_p = z - logsumexp(z)
        p = np.exp(log_p)
        d = eta * g + log_p - log_prev + 1.0
        return p * (d - p @ d)

    result = minimize(objective, log_prev.copy(), jac=jacobian, method='BFGS',
                      options={'gtol': 1e-12, 'maxiter': 2000})
    if not result.success:
        logger.debug(f"Proximal solver stopped early: {result.message}")
    return Mixture(tuple(softmax(result.x).tolist()))


# --- stratified sampling -----------------------------------------------------

def stratified(k: int) -> Mixture:
    return Mixture.uniform(k)


def prerequisite_skills(graph: SkillsGraph) -> List[int]:
    """Training skills with a strictly positive edge into some eval skill."""
    return [i for i in range(graph.k) if np.any(graph.A[i] > 0)]


def skill_stratified(graph: SkillsGraph) -> Mixture:
    """
    Uniform over the relevant training skills.

    continual: all skills; fine_tune: prerequisites plus the eval skills;
    out_of_domain: prerequisites only.

    Raises:
        GraphError: out_of_domain graph with no positive entry
    """
    if graph.setting == Setting.CONTINUAL:
        return stratified(graph.k)
    relevant = set(prerequisite_skills(graph))
    # fine-tuning also trains on the targets themselves
    if graph.setting == Setting.FINE_TUNE:
        relevant |= {pos for pos in graph.eval_positions_in_train() if pos is not None}
    if not relevant:
        raise GraphError("no prerequisite edges; graph empty")
    weights = np.zeros(graph.k)
    weights[sorted(relevant)] = 1.0
    return normalize(weights)


# --- curriculum --------------------------------------------------------------

@dataclass(frozen=True)
class CurriculumState:
    """Per-skill difficulty scores and the pacing schedule."""
    scores: Tuple[float, ...]
    M: int
    H: int
    direction: str = 'curriculum'
    frac_previous: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)) or not self.scores:
            raise SelectorError(f"curriculum scores must be finite and nonempty: {self.scores}")
        if self.M < 1 or self.H < 1:
            raise SelectorError(f"curriculum needs M >= 1 and H >= 1, got M={self.M}, H={self.H}")
        if self.direction not in ('curriculum', 'anticurriculum'):
            raise SelectorError(f"unknown curriculum direction {self.direction!r}")
        if not 0.0 <= self.frac_previous <= 1.0:
            raise SelectorError(f"frac_previous must be in [0, 1], got {self.frac_previous}")

    def ranking(self) -> np.ndarray:
        scores = np.asarray(self.scores, dtype=float)
        keys = scores if self.direction == 'curriculum' else -scores
        return np.argsort(keys, kind='stable')


def curriculum_allocate(state: CurriculumState, step: int) -> Tuple[Tuple[int, ...], Mixture]:
    """
    Eligible skills and mixture at a training step.

    Epoch e = floor(step * M / H); the first ceil((e + 1) * k / M) ranked
    skills are eligible. With frac_previous > 0, that share of the mass goes
    uniformly to skills introduced in earlier epochs and the rest to the new ones.
    """
    k = len(state.scores)
    # clamp into the schedule
    step = min(max(int(step), 0), state.H - 1)
    epoch = step * state.M // state.H
    n_eligible = min(k, -(-(epoch + 1) * k // state.M))
    n_previous = min(n_eligible, -(-epoch * k // state.M))
    # ranked easiest first for curriculum, hardest first for anticurriculum
    order = state.ranking()
    eligible = order[:n_eligible]
    previous, new = order[:n_previous], order[n_previous:n_eligible]

    # split mass between earlier and newly unlocked skills
    weights = np.zeros(k)
    if state.frac_previous > 0 and len(previous) and len(new):
        weights[previous] = state.frac_previous / len(previous)
        weights[new] = (1.0 - state.frac_previous) / len(new)
    else:
        weights[eligible] = 1.0
    return tuple(sorted(int(i) for i in eligible)), normalize(weights)


# --- selector objects --------------------------------------------------------

class BaseSelector(ABC):
    """A mixture source for the round loop."""
    kind = 'base'

    @abstractmethod
    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        """Mixture for round ``round`` given the losses observed at its start."""

    def state_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind}


class StratifiedSelector(BaseSelector):
    kind = 'stratified'

    def __init__(self, k: int):
        self.k = k

    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        return stratified(self.k)


class SkillStratifiedSelector(BaseSelector):
    kind = 'skill_stratified'

    def __init__(self, graph: SkillsGraph):
        self.mixture = skill_stratified(graph)

    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        return self.mixture


class RandomSelector(BaseSelector):
    """
    Draws each round's samples from a pooled dataset with fixed skill proportions.

    The returned mixture is the empirical skill histogram of the draw.
    """
    kind = 'random'

    def __init__(self, proportions: Sequence[float], seed: int):
        self.proportions = normalize(proportions)
        self.seed = seed

    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        rng = np.random.default_rng([self.seed, round, 7])
        if budget <= 0:
            return self.proportions
        counts = rng.multinomial(budget, self.proportions.as_array())
        return normalize(counts)

    def state_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'proportions': list(self.proportions.p), 'seed': self.seed}


class CurriculumSelector(BaseSelector):
    """
    Skill-level (anti)curriculum paced over the run.

    Scores default to the losses observed at round 1. Round t maps to training
    step floor((t - 1) * H / T).
    """

    def __init__(self, T: int, M: int, H: int, direction: str = 'curriculum',
                 frac_previous: float = 0.0, scores: Optional[Sequence[float]] = None,
                 kind: Optional[str] = None):
        self.T, self.M, self.H = T, M, H
        self.direction = direction
        self.kind = kind or direction
        self.frac_previous = frac_previous
        self.state: Optional[CurriculumState] = None
        if scores is not None:
            self.state = CurriculumState(tuple(scores), M, H, direction, frac_previous)

    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        if self.state is None:
            self.state = CurriculumState(observed.losses, self.M, self.H, self.direction, self.frac_previous)
        step = (round - 1) * self.H // self.T
        eligible, mixture = curriculum_allocate(self.state, step)
        logger.debug(f"{self.kind} round {round}: step {step}, eligible skills {eligible}")
        return mixture

    def state_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind, 'T': self.T, 'M': self.M, 'H': self.H,
            'frac_previous': self.frac_previous,
            'scores': None if self.state is None else list(self.state.scores),
        }


class SkillItSelector(BaseSelector):
    """
    Online mirror descent over the training skills.

    Round 1 records the observation and returns the initialization; later
    rounds push the observation and recompute from the initialization.
    ``static=True`` holds the initialization for every round.
    """

    def __init__(self, graph: SkillsGraph, eta: float, w: int, static: bool = False, kind: str = 'skillit'):
        self.state = SkillItState(graph, eta, w)
        self.initial = skillit_init(graph, eta)
        self.static = static
        self.kind = kind

    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        if round <= 1 or self.static:
            self.state.push(observed)
            return self.initial
        return skillit_update(self.state, observed)

    def state_dict(self) -> Dict[str, Any]:
        graph = self.state.graph
        return {
            'kind': self.kind,
            'eta': self.state.eta,
            'w': self.state.w,
            'round': self.state.round,
            'static': self.static,
            'history': [list(s.losses) for s in self.state.history],
            'history_rounds': [s.round for s in self.state.history],
            'graph': {
                'train': [s.name for s in graph.train_skills],
                'eval': [s.name for s in graph.eval_skills],
                'A': graph.A.tolist(),
                'setting': graph.setting.value,
            },
        }

    @classmethod
    def from_state(cls, data: Mapping[str, Any]) -> 'SkillItSelector':
        """Rebuild a selector from ``state_dict()`` output."""
        try:
            graph_data = data['graph']
            train = make_skills(graph_data['train'])
            evals = resolve_eval_skills(train, graph_data['eval'])
            graph = SkillsGraph(train, evals, np.array(graph_data['A'], dtype=float), graph_data['setting'])
            selector = cls(graph, float(data['eta']), int(data['w']), bool(data.get('static', False)),
                           data.get('kind', 'skillit'))
            rounds = data.get('history_rounds') or [0] * len(data['history'])
            selector.state.history.extend(
                LossState(tuple(losses), round=r) for losses, r in zip(data['history'], rounds)
            )
            selector.state.round = int(data['round'])
        except (KeyError, TypeError) as e:
            raise SelectorError(f"invalid Skill-It state: {e}") from e
        return selector


# --- construction ------------------------------------------------------------

def create_selector(config: RunConfig, graph: SkillsGraph,
                    pool_sizes: Optional[Sequence[int]] = None) -> BaseSelector:
    """
    Build the selector named by ``config.selector``.

    Options read per kind: ``proportions`` (random), ``epochs``, ``steps``
    and ``frac_previous`` (curriculum kinds).
    """
    kind = config.selector.kind
    options = config.selector.options

    if kind == 'stratified':
        return StratifiedSelector(graph.k)
    if kind == 'skill_stratified':
        return SkillStratifiedSelector(graph)
    if kind == 'random':
        proportions = options.get('proportions') or options.get('random_proportions') or pool_sizes
        if proportions is None:
            proportions = [1.0] * graph.k
        if len(proportions) != graph.k:
            raise SelectorError(f"{len(proportions)} random proportions for {graph.k} skills")
        return RandomSelector(proportions, config.seed)
    if kind in ('curriculum', 'anticurriculum', 'skill_curriculum', 'skill_anticurriculum'):
        if graph.setting != Setting.CONTINUAL:
            raise SelectorError(f"{kind} needs the continual setting, got {graph.setting.value}")
        default_frac = SKILL_CURRICULUM_FRAC if kind.startswith('skill_') else 0.0
        return CurriculumSelector(
            T=config.T,
            M=int(options.get('epochs', options.get('curriculum_epochs', 5))),
            H=int(options.get('steps', config.n)),
            direction=kind.replace('skill_', ''),
            frac_previous=float(options.get('frac_previous', default_frac)),
            scores=options.get('scores'),
            kind=kind,
        )
    if kind == 'skillit':
        return SkillItSelector(graph, config.eta, config.w)
    if kind == 'no_graph':
        ablated = identity_graph(graph.train_skills, graph.eval_skills, graph.setting)
        return SkillItSelector(ablated, config.eta, config.w, kind='no_graph')
    if kind == 'static':
        return SkillItSelector(graph, config.eta, config.w, static=True, kind='static')
    raise SelectorError(f"no selector for kind {kind!r}")


# --- static-mixture oracle ---------------------------------------------------

def simplex_grid(k: int, resolution: float) -> np.ndarray:
    """All points of the simplex whose coordinates are multiples of ``resolution``."""
    steps = int(round(1.0 / resolution))
    points = []
    for bars in itertools.combinations(range(steps + k - 1), k - 1):
        edges = (-1,) + bars + (steps + k - 1,)
        points.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    return np.array(points, dtype=float) / steps


def best_static_mixture(A_true: np.ndarray, L0: Sequence[float], T: int,
                        resolution: float = 0.05) -> Tuple[Mixture, float]:
    """
    Grid-search the static mixture minimizing the average loss after T rounds.

    Returns:
        (best mixture, its average final loss); ties keep the first grid point
    """
    A = np.asarray(A_true, dtype=float)
    grid = simplex_grid(A.shape[0], resolution)
    # one row per grid point
    factors = np.clip(1.0 - grid @ A, 0.0, 1.0)
    averages = (np.asarray(L0, dtype=float) * factors ** T).mean(axis=1)
    best = int(np.argmin(averages))
    return normalize(grid[best]), float(averages[best])
