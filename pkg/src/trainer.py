"""
Trainer contract and implementations.

A trainer consumes per-skill sample counts (``step``) and reports validation
losses over the evaluation skills (``observe``). ``SimTrainer`` evolves
losses with the multiplicative dynamics L_j <- L_j * (1 - A[:, j] . p);
``ExternalTrainer`` talks to a training process over JSON lines on
stdin/stdout. ``run_rounds`` drives any trainer with any selector.
"""

import json
import logging
import math
import subprocess
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Protocol, Sequence

import numpy as np

from .allocation import allocate_samples, round_budget
from .core import (
    DynamicsError,
    InvalidMixtureError,
    LossState,
    Mixture,
    RoundRecord,
    RunConfig,
    RunLog,
    SelectorError,
    SkillMixError,
    TrainerError,
)

logger = logging.getLogger(__name__)

OVERSHOOT_TOLERANCE = 1e-12


class Trainer(ABC):
    """Stateful training process: ``step`` is the only mutator of model state."""

    @abstractmethod
    def step(self, allocation: Sequence[int], mixture: Optional[Mixture] = None) -> None:
        """Train on the given per-skill sample counts; ``mixture`` is the round's requested proportions."""

    @abstractmethod
    def observe(self) -> LossState:
        """Validation losses over the eval skills at the current state."""

    @abstractmethod
    def reset(self) -> None:
        """Return to the base model."""

    def snapshot(self) -> Any:
        raise TrainerError(f"{type(self).__name__} does not support snapshot")

    def restore(self, state: Any) -> None:
        raise TrainerError(f"{type(self).__name__} does not support restore")

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


TrainerFactory = Callable[[], Trainer]


@dataclass(frozen=True, eq=False)
class SimDynamics:
    """
    Ground truth for the simulated trainer.

    Attributes:
        A_true: k x m matrix with entries in [0, 1]
        L0: initial losses over the m eval skills, finite and > 0
        noise_sigma: std of the multiplicative log-normal observation noise
        seed: seed of the observation-noise stream
    """
    A_true: np.ndarray
    L0: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        A = np.array(self.A_true, dtype=float, copy=True)
        L0 = np.array(self.L0, dtype=float, copy=True).reshape(-1)
        if A.ndim != 2:
            raise DynamicsError(f"A_true must be 2-D, got shape {A.shape}")
        if not np.all(np.isfinite(A)) or np.any(A < 0) or np.any(A > 1):
            raise DynamicsError("A_true entries must lie in [0, 1]")
        if L0.size != A.shape[1]:
            raise DynamicsError(f"L0 has {L0.size} entries for {A.shape[1]} eval skills")
        if not np.all(np.isfinite(L0)) or np.any(L0 <= 0):
            raise DynamicsError("initial losses must be finite and positive")
        if self.noise_sigma < 0:
            raise DynamicsError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        A.setflags(write=False)
        L0.setflags(write=False)
        object.__setattr__(self, 'A_true', A)
        object.__setattr__(self, 'L0', L0)

    @property
    def k(self) -> int:
        return self.A_true.shape[0]

    @property
    def m(self) -> int:
        return self.A_true.shape[1]

    @classmethod
    def from_matrix(cls, M: Any, L0: Any, noise_sigma: float = 0.0, seed: int = 0,
                    scale: str = 'global') -> 'SimDynamics':
        """
        Rescale an arbitrary nonnegative matrix into [0, 1].

        ``scale='global'`` divides by the largest entry; ``scale='column'``
        divides each column by its own maximum. All-zero columns stay zero.
        """
        A = np.maximum(np.asarray(M, dtype=float), 0.0)
        if scale == 'global':
            top = A.max() if A.size else 0.0
            if top > 0:
                A = A / top
        elif scale == 'column':
            tops = A.max(axis=0)
            A = np.divide(A, tops, out=np.zeros_like(A), where=tops > 0)
        else:
            raise DynamicsError(f"unknown scale mode {scale!r}")
        return cls(A, np.asarray(L0, dtype=float), noise_sigma, seed)


def sim_step(state: LossState, p: Mixture, A_true: np.ndarray, rate: float = 1.0) -> LossState:
    """
    One application of L'_j = L_j * (1 - rate * A[:, j] . p).

    A factor of 0 is absorbing: a loss that reaches 0 stays 0.

    Raises:
        DynamicsError: "dynamics overshoot" when rate * A[:, j] . p exceeds 1
    """
    A = np.asarray(A_true, dtype=float)
    weights = p.as_array()
    if weights.size != A.shape[0]:
        raise DynamicsError(f"mixture over {weights.size} skills for {A.shape[0]} training skills")
    drive = rate * (A.T @ weights)
    # a valid A keeps the drive within [0, 1]
    if np.any(drive > 1.0 + OVERSHOOT_TOLERANCE):
        raise DynamicsError("dynamics overshoot")
    factor = np.clip(1.0 - drive, 0.0, 1.0)
    return LossState(tuple(state.as_array() * factor), round=state.round + 1)


def closed_form_losses(A_true: np.ndarray, L0: Sequence[float], p: Mixture, rounds: int) -> np.ndarray:
    """Losses after ``rounds`` steps of a static mixture: L0_j * (1 - A[:, j] . p) ** rounds."""
    factor = np.clip(1.0 - np.asarray(A_true, dtype=float).T @ p.as_array(), 0.0, 1.0)
    return np.asarray(L0, dtype=float) * factor ** rounds


class SimTrainer(Trainer):
    """
    Trainer whose losses follow the multiplicative loss dynamics.

    Each ``step`` applies the dynamics with ``A_true`` scaled by
    ``step_rate`` to the round's mixture when one is given, otherwise to the
    counts / total of the allocation (graph-learning probes). A step with an
    empty allocation trains on nothing. The latent state is
    noiseless; ``observe`` adds log-normal noise from a stream keyed by
    (seed, step count), so repeated observations within a step agree.
    """

    def __init__(self, dynamics: SimDynamics, step_rate: float = 1.0):
        if not 0 < step_rate <= 1:
            raise DynamicsError(f"step_rate must be in (0, 1], got {step_rate}")
        self.dynamics = dynamics
        self.step_rate = step_rate
        self.reset()

    @property
    def steps(self) -> int:
        return self._state.round

    def latent(self) -> LossState:
        return self._state

    def step(self, allocation: Sequence[int], mixture: Optional[Mixture] = None) -> None:
        counts = np.asarray(allocation, dtype=float)
        if counts.size != self.dynamics.k:
            raise TrainerError(f"allocation over {counts.size} skills for {self.dynamics.k} training skills")
        if np.any(counts < 0):
            raise TrainerError(f"negative allocation: {list(allocation)}")
        total = counts.sum()
        if total == 0:
            # no data this round
            self._state = LossState(self._state.losses, round=self._state.round + 1)
            return
        if mixture is None:
            mixture = Mixture(tuple(counts / total))
        elif mixture.k != self.dynamics.k:
            raise TrainerError(f"mixture over {mixture.k} skills for {self.dynamics.k} training skills")
        self._state = sim_step(self._state, mixture, self.dynamics.A_true, self.step_rate)

    def observe(self) -> LossState:
        if self.dynamics.noise_sigma == 0:
            return self._state
        # stream keyed by step count, shared by every trainer with this seed
        rng = np.random.default_rng([self.dynamics.seed, self._state.round])
        noise = np.exp(self.dynamics.noise_sigma * rng.standard_normal(self.dynamics.m))
        return LossState(tuple(self._state.as_array() * noise), round=self._state.round)

    def reset(self) -> None:
        self._state = LossState(tuple(self.dynamics.L0), round=0)

    def snapshot(self) -> LossState:
        return self._state

    def restore(self, state: LossState) -> None:
        self._state = state


def sim_trainer_factory(dynamics: SimDynamics, step_rate: float = 1.0) -> TrainerFactory:
    """Factory yielding a fresh base-model SimTrainer per call."""
    return lambda: SimTrainer(dynamics, step_rate)


class ExternalTrainer(Trainer):
    """
    Adapter for a training process speaking JSON lines over stdin/stdout.

    Request: ``{"round": t, "allocation": {skill: count, ...}}``.
    Response: ``{"round": t, "losses": {eval_skill: value, ...}}``.
    Round 0 (empty allocation) is sent at start-up and answers the initial losses.
    """

    def __init__(self, command: Sequence[str], train_names: Sequence[str], eval_names: Sequence[str],
                 timeout: float = 60.0):
        self.command = list(command)
        self.train_names = list(train_names)
        self.eval_names = list(eval_names)
        self.timeout = timeout
        self._process: Optional[subprocess.Popen] = None
        self._reader = ThreadPoolExecutor(max_workers=1)
        self.reset()

    def _start(self) -> None:
        logger.info(f"Starting external trainer: {' '.join(self.command)}")
        try:
            self._process = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        except OSError as e:
            raise TrainerError(f"could not start external trainer {self.command}: {e}") from e

    def _exchange(self, round: int, allocation: Dict[str, int]) -> LossState:
        if self._process is None or self._process.poll() is not None:
            raise TrainerError("external trainer is not running")
        request = json.dumps({'round': round, 'allocation': allocation})
        try:
            self._process.stdin.write(request + '\n')
            self._process.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TrainerError(f"external trainer closed its input: {e}") from e

        # read on the worker thread so a silent process can time out
        future = self._reader.submit(self._process.stdout.readline)
        try:
            line = future.result(timeout=self.timeout)
        except FutureTimeoutError as e:
            self._stop()
            raise TrainerError(f"external trainer timed out after {self.timeout}s in round {round}") from e
        return self._parse_response(line, round)

    def _parse_response(self, line: str, round: int) -> LossState:
        if not line:
            raise TrainerError(f"external trainer exited before answering round {round}")
        try:
            response = json.loads(line)
            if int(response['round']) != round:
                raise TrainerError(f"response for round {response['round']}, expected {round}")
            losses = [float(response['losses'][name]) for name in self.eval_names]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise TrainerError(f"malformed response in round {round}: {line.strip()!r}") from e
        if not all(math.isfinite(v) and v >= 0 for v in losses):
            raise TrainerError(f"invalid losses in round {round}: {losses}")
        return LossState(tuple(losses), round=round)

    def step(self, allocation: Sequence[int], mixture: Optional[Mixture] = None) -> None:
        # the process only ever sees counts
        if len(allocation) != len(self.train_names):
            raise TrainerError(f"allocation over {len(allocation)} skills for {len(self.train_names)} training skills")
        next_round = self._state.round + 1
        payload = {name: int(count) for name, count in zip(self.train_names, allocation)}
        self._state = self._exchange(next_round, payload)

    def observe(self) -> LossState:
        return self._state

    def reset(self) -> None:
        self._stop()
        self._start()
        self._state = self._exchange(0, {})

    def close(self) -> None:
        """Stop the process and the reader thread; the trainer cannot be reset afterwards."""
        self._stop()
        self._reader.shutdown(wait=False)

    def _stop(self) -> None:
        if self._process is not None:
            if self._process.poll() is None:
                self._process.terminate()
                try:
                    self._process.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._process.kill()
            for stream in (self._process.stdin, self._process.stdout):
                if stream is not None:
                    try:
                        stream.close()
                    except OSError as e:
                        logger.debug(f"Ignoring error while closing trainer pipe: {e}")
            self._process = None


class Selector(Protocol):
    def select(self, round: int, observed: LossState, budget: int) -> Mixture:
        ...


def _checked_mixture(candidate: Any, k: int, round: int) -> Mixture:
    try:
        mixture = candidate if isinstance(candidate, Mixture) else Mixture(tuple(candidate))
    except (InvalidMixtureError, TypeError) as e:
        raise SelectorError(f"selector returned an invalid mixture in round {round}: {e}") from e
    if mixture.k != k:
        raise SelectorError(f"selector returned {mixture.k} proportions in round {round}, expected {k}")
    return mixture


def run_rounds(config: RunConfig,
               selector: Selector,
               trainer: Trainer,
               k: int,
               pools: Optional[Sequence[Any]] = None,
               flush: Optional[Callable[[RunLog], None]] = None) -> RunLog:
    """
    Execute T rounds of observe -> select -> allocate -> step -> observe.

    Args:
        config: run configuration (rounds, budget, seed, selector kind)
        selector: object answering ``select(round, observed, budget)``
        trainer: trainer to drive, already at its base state
        k: number of training skills
        pools: optional per-skill pools (or sizes) for allocation
        flush: called with the (possibly partial) log when the run ends or aborts

    Returns:
        The RunLog of all T rounds

    Raises:
        SelectorError: on an invalid mixture
        TrainerError: when the trainer fails; ``flush`` still sees the partial log
    """
    log = RunLog(config=config)
    stochastic = bool(config.selector.options.get('stochastic_allocation', False))
    start_time = time.time()
    logger.info(f"Starting run {config.name}: T={config.T}, n={config.n}, eta={config.eta}, w={config.w}")

    # Run the round loop
    try:
        observed = trainer.observe()
        for t in range(1, config.T + 1):
            before = LossState(observed.losses, round=t - 1)
            budget = round_budget(config.n, config.T, t)
            # Ask the selector and apportion the budget
            mixture = _checked_mixture(selector.select(t, before, budget), k, t)
            allocation = allocate_samples(mixture, budget, pools, seed=config.seed, round=t, stochastic=stochastic)
            # dynamics follow the requested mixture; counts are what the log records
            trainer.step(allocation.counts, mixture)
            observed = trainer.observe()
            after = LossState(observed.losses, round=t)
            log.append(RoundRecord(t, mixture, allocation.counts, before, after))
            logger.debug(f"Round {t}: mixture={[round(v, 4) for v in mixture.p]} allocation={allocation.counts}")
    except SkillMixError as e:
        logger.error(f"Run {config.name} aborted after {len(log.rounds)} rounds: {e}", exc_info=True)
        if flush is not None:
            flush(log)
        raise

    if flush is not None:
        flush(log)
    elapsed = time.time() - start_time
    logger.info(f"Run {config.name} completed in {elapsed:.2f}s, final average loss {log.final_losses().average:.6f}")
    return log


def run_simulation(config: RunConfig,
                   selector: Selector,
                   A_true: Any,
                   L0: Sequence[float],
                   noise_sigma: float = 0.0,
                   pools: Optional[Sequence[Any]] = None) -> RunLog:
    """Run a selector against the simulated dynamics; the noise stream is seeded by ``config.seed``."""
    dynamics = A_true if isinstance(A_true, SimDynamics) else SimDynamics(A_true, L0, noise_sigma, config.seed)
    trainer = SimTrainer(dynamics)
    return run_rounds(config, selector, trainer, dynamics.k, pools=pools)
