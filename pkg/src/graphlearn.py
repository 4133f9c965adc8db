"""
Learning the skills graph from loss observations.

Brute force trains a fresh model on each skill alone and on each ordered
pair of skills, and draws i -> j when adding skill i's data means less of
skill j's data is needed. The approximate learner trains on each training
skill alone and draws i -> j when that lowers the loss on j. Probes are
independent and run on a thread pool.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import GraphError, Setting, SkillId, SkillSet, SkillsGraph
from .trainer import TrainerFactory

logger = logging.getLogger(__name__)

WEIGHT_SCHEMES = ('binary_half', 'raw_delta')
COMPARE_MODES = ('steps_to_threshold', 'delta')

ProbeKey = Tuple[str, int, int]


@dataclass(frozen=True)
class GraphLearnConfig:
    """
    Attributes:
        H: training steps per brute-force probe
        h: steps per approximate probe (defaults to H)
        threshold_loss: loss level at which a skill counts as learned
        weight_scheme: 'binary_half' (edges 0.5, diagonal 1.0) or 'raw_delta'
        compare_mode: 'steps_to_threshold' or 'delta'
        batch_size: samples per training step
        max_workers: probes run concurrently
        tie_tolerance: absolute margin below which two measurements tie
    """
    H: int = 6000
    h: Optional[int] = None
    threshold_loss: float = 0.01
    weight_scheme: str = 'binary_half'
    compare_mode: str = 'steps_to_threshold'
    batch_size: int = 2
    max_workers: int = 1
    tie_tolerance: float = 1e-9

    def __post_init__(self):
        if self.H < 1:
            raise GraphError(f"H must be >= 1, got {self.H}")
        if self.h is not None and not 0 <= self.h <= self.H:
            raise GraphError(f"h must satisfy 0 <= h <= H, got h={self.h}, H={self.H}")
        if not self.threshold_loss > 0:
            raise GraphError(f"threshold_loss must be > 0, got {self.threshold_loss}")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise GraphError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.compare_mode not in COMPARE_MODES:
            raise GraphError(f"unknown compare mode {self.compare_mode!r}")
        if self.batch_size < 1:
            raise GraphError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def approx_steps(self) -> int:
        return self.H if self.h is None else self.h


@dataclass
class ProbeResult:
    """One probe run: which skills were trained, for how long, and the losses around it."""
    kind: str
    trained: Tuple[str, ...]
    steps: int
    tracked: Optional[str] = None
    losses_before: Tuple[float, ...] = ()
    losses_after: Tuple[float, ...] = ()
    crossing: Optional[float] = None
    status: str = 'ok'
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'trained': list(self.trained),
            'tracked': self.tracked,
            'steps': self.steps,
            'losses_before': list(self.losses_before),
            'losses_after': list(self.losses_after),
            'crossing': self.crossing,
            'status': self.status,
            'error': self.error,
        }


@dataclass
class GraphLearnResult:
    """Learned graph (None when any probe failed) plus the full probe log."""
    graph: Optional[SkillsGraph]
    probes: List[ProbeResult] = field(default_factory=list)

    @property
    def failed(self) -> List[ProbeResult]:
        return [probe for probe in self.probes if probe.status != 'ok']

    @property
    def ok(self) -> bool:
        return self.graph is not None

    def probe_log(self) -> List[Dict[str, Any]]:
        return [probe.to_dict() for probe in self.probes]


@dataclass(frozen=True)
class _ProbePlan:
    key: ProbeKey
    kind: str
    allocation: Tuple[int, ...]
    trained: Tuple[str, ...]
    steps: int
    tracked_position: Optional[int] = None
    tracked_name: Optional[str] = None


def threshold_crossing(losses: Sequence[float], threshold: float) -> Optional[float]:
    """
    Fractional step at which a loss series first reaches ``threshold``.

    ``losses[s]`` is the loss after s steps. The crossing is interpolated
    linearly in log-loss between the last step above and the first step at or
    below the threshold. Returns None if the threshold is never reached.
    """
    if not losses:
        return None
    if losses[0] <= threshold:
        return 0.0
    for s in range(1, len(losses)):
        if losses[s] <= threshold:
            above, below = losses[s - 1], losses[s]
            if below <= 0:
                return float(s)
            return (s - 1) + (math.log(above) - math.log(threshold)) / (math.log(above) - math.log(below))
    return None


def _execute_probe(plan: _ProbePlan, factory: TrainerFactory, threshold: float) -> ProbeResult:
    trainer = factory()
    try:
        before = trainer.observe()
        series = [before.losses[plan.tracked_position]] if plan.tracked_position is not None else []
        for _ in range(plan.steps):
            trainer.step(plan.allocation)
            if plan.tracked_position is not None:
                series.append(trainer.observe().losses[plan.tracked_position])
        after = trainer.observe()
    finally:
        trainer.close()
    crossing = threshold_crossing(series, threshold) if plan.tracked_position is not None else None
    return ProbeResult(plan.kind, plan.trained, plan.steps, plan.tracked_name,
                       before.losses, after.losses, crossing)


def run_probes(plans: Sequence[_ProbePlan], factory: TrainerFactory,
               cfg: GraphLearnConfig) -> Dict[ProbeKey, ProbeResult]:
    """Execute probes (concurrently when configured); results keyed by probe key."""
    results: Dict[ProbeKey, ProbeResult] = {}

    def record_failure(plan: _ProbePlan, e: Exception) -> None:
        logger.warning(f"Probe {plan.kind} {plan.trained} failed: {e}")
        results[plan.key] = ProbeResult(plan.kind, plan.trained, plan.steps, plan.tracked_name,
                                        status='failed', error=str(e))

    # Execute probes in parallel when configured
    if cfg.max_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as executor:
            future_to_plan = {
                executor.submit(_execute_probe, plan, factory, cfg.threshold_loss): plan
                for plan in plans
            }
            for future in as_completed(future_to_plan):
                plan = future_to_plan[future]
                try:
                    results[plan.key] = future.result()
                    logger.debug(f"Completed probe {plan.kind} {plan.trained}")
                except Exception as e:
                    record_failure(plan, e)
    else:
        # Run probes one by one
        for plan in plans:
            try:
                results[plan.key] = _execute_probe(plan, factory, cfg.threshold_loss)
                logger.debug(f"Completed probe {plan.kind} {plan.trained}")
            except Exception as e:
                record_failure(plan, e)
    return results


def _skills_of(skills: Union[SkillSet, Sequence[SkillId]]) -> Tuple[SkillId, ...]:
    return skills.skills if isinstance(skills, SkillSet) else tuple(skills)


def _single_allocation(k: int, position: int, batch: int) -> Tuple[int, ...]:
    counts = [0] * k
    counts[position] = batch
    return tuple(counts)


def _pair_allocation(k: int, i: int, j: int, batch: int) -> Tuple[int, ...]:
    """Balanced pair pool; the odd sample goes to j."""
    counts = [0] * k
    counts[j] += math.ceil(batch / 2)
    counts[i] += batch // 2
    return tuple(counts)


def _plan_bruteforce(train: Sequence[SkillId], evals: Sequence[SkillId],
                     positions: Sequence[int], cfg: GraphLearnConfig) -> List[_ProbePlan]:
    k, b = len(train), cfg.batch_size
    plans = []
    # One single-skill run per eval skill
    for j, (skill_j, pos_j) in enumerate(zip(evals, positions)):
        plans.append(_ProbePlan(('single', -1, j), 'single', _single_allocation(k, pos_j, b),
                                (skill_j.name,), cfg.H, j, skill_j.name))
    # One pair run per (train, eval) combination
    for i, skill_i in enumerate(train):
        for j, (skill_j, pos_j) in enumerate(zip(evals, positions)):
            if i == pos_j:
                continue
            plans.append(_ProbePlan(('pair', i, j), 'pair', _pair_allocation(k, i, pos_j, b),
                                    (skill_i.name, skill_j.name), cfg.H, j, skill_j.name))
    return plans


def _finish(graph: Optional[SkillsGraph], results: Dict[ProbeKey, ProbeResult], label: str,
            start_time: float) -> GraphLearnResult:
    probes = [results[key] for key in sorted(results)]
    failed = [probe for probe in probes if probe.status != 'ok']
    elapsed = time.time() - start_time
    if failed:
        logger.error(f"{label} graph learning: {len(failed)} of {len(probes)} probes failed")
        return GraphLearnResult(None, probes)
    logger.info(f"{label} graph learning finished {len(probes)} probes in {elapsed:.2f}s")
    return GraphLearnResult(graph, probes)


def learn_graph_bruteforce(skills: Union[SkillSet, Sequence[SkillId]],
                           factory: TrainerFactory,
                           cfg: GraphLearnConfig,
                           eval_skills: Optional[Sequence[SkillId]] = None) -> GraphLearnResult:
    """
    Learn edges by comparing single-skill and pair training runs.

    Args:
        skills: training skills (a SkillSet or its SkillIds)
        factory: returns a fresh base-model trainer observing ``eval_skills``
        cfg: probe horizon, threshold, weight scheme and compare mode
        eval_skills: evaluation skills, a subset of the training skills;
            defaults to all training skills (continual)

    Returns:
        GraphLearnResult; ``graph`` is None if any probe failed
    """
    train = _skills_of(skills)
    evals = tuple(eval_skills) if eval_skills is not None else train
    if not set(evals) <= set(train):
        raise GraphError("brute-force learning needs eval skills within the training skills")
    setting = Setting.CONTINUAL if evals == train else Setting.FINE_TUNE
    positions = [train.index(skill) for skill in evals]
    start_time = time.time()
    logger.info(f"Brute-force graph learning over {len(train)} train x {len(evals)} eval skills, H={cfg.H}")

    plans = _plan_bruteforce(train, evals, positions, cfg)
    results = run_probes(plans, factory, cfg)
    if any(result.status != 'ok' for result in results.values()):
        return _finish(None, results, 'Brute-force', start_time)

    # Compare each pair run against the single run of its target
    A = np.zeros((len(train), len(evals)))
    share_single = cfg.batch_size
    share_pair = math.ceil(cfg.batch_size / 2)
    for j, pos_j in enumerate(positions):
        single = results[('single', -1, j)]
        delta_single = single.losses_before[j] - single.losses_after[j]
        A[pos_j, j] = 1.0 if cfg.weight_scheme == 'binary_half' else max(0.0, delta_single)
        for i in range(len(train)):
            if i == pos_j:
                continue
            pair = results[('pair', i, j)]
            delta_pair = pair.losses_before[j] - pair.losses_after[j]
            # target-skill samples needed to reach the threshold
            if cfg.compare_mode == 'steps_to_threshold' and single.crossing is not None and pair.crossing is not None:
                has_edge = pair.crossing * share_pair < single.crossing * share_single - cfg.tie_tolerance
            else:
                has_edge = delta_pair > delta_single + cfg.tie_tolerance
            if has_edge:
                A[i, j] = 0.5 if cfg.weight_scheme == 'binary_half' else max(0.0, delta_pair - delta_single)

    graph = SkillsGraph(train, evals, A, setting)
    return _finish(graph, results, 'Brute-force', start_time)


def learn_graph_approximate(train_skills: Union[SkillSet, Sequence[SkillId]],
                            eval_skills: Sequence[SkillId],
                            factory: TrainerFactory,
                            cfg: GraphLearnConfig,
                            setting: Optional[Setting] = None) -> GraphLearnResult:
    """
    Learn edges from one probe per training skill.

    Trains on each training skill alone for ``cfg.approx_steps`` steps and
    sets A[i, j] from the loss change on eval skill j. Works in every setting,
    including out-of-domain, since no eval-skill data is trained on.
    """
    train = _skills_of(train_skills)
    evals = tuple(eval_skills)
    if setting is None:
        if evals == train:
            setting = Setting.CONTINUAL
        elif set(evals) < set(train):
            setting = Setting.FINE_TUNE
        else:
            setting = Setting.OUT_OF_DOMAIN
    steps = cfg.approx_steps
    start_time = time.time()
    logger.info(f"Approximate graph learning over {len(train)} train x {len(evals)} eval skills, h={steps}")

    # One run per training skill, scored on every eval skill
    plans = [
        _ProbePlan(('approx', i, -1), 'approx', _single_allocation(len(train), i, cfg.batch_size),
                   (skill.name,), steps)
        for i, skill in enumerate(train)
    ]
    results = run_probes(plans, factory, cfg)
    if any(result.status != 'ok' for result in results.values()):
        return _finish(None, results, 'Approximate', start_time)

    A = np.zeros((len(train), len(evals)))
    for i, skill in enumerate(train):
        probe = results[('approx', i, -1)]
        deltas = np.asarray(probe.losses_before) - np.asarray(probe.losses_after)
        for j, eval_skill in enumerate(evals):
            if cfg.weight_scheme == 'raw_delta':
                A[i, j] = max(0.0, deltas[j])
            # binary_half: unit self-edge, half weight elsewhere
            elif deltas[j] > cfg.tie_tolerance:
                A[i, j] = 1.0 if eval_skill == skill else 0.5

    graph = SkillsGraph(train, evals, A, setting)
    return _finish(graph, results, 'Approximate', start_time)
