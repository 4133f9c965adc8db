"""
Turning a mixture into per-skill sample counts for one round.

Counts come from largest-remainder apportionment (ties to the lower skill
index). When a pool cannot cover its share, the overflow is re-apportioned
over the skills that still have capacity. Samples are then drawn without
replacement within the round.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .core import InsufficientDataError, Mixture, Sample

logger = logging.getLogger(__name__)

# Quotas this close to an integer are treated as that integer
_QUOTA_EPSILON = 1e-9

Pool = Union[Sequence[Sample], int]


@dataclass(frozen=True)
class Allocation:
    """Per-skill counts for one round plus the drawn samples (empty when pools are sizes only)."""
    counts: Tuple[int, ...]
    samples: Tuple[Tuple[Sample, ...], ...] = ()

    @property
    def total(self) -> int:
        return sum(self.counts)


def round_budget(n: int, T: int, t: int) -> int:
    """Samples for round t (1-based): n // T plus one for each of the first n % T rounds."""
    return n // T + (1 if t <= n % T else 0)


def largest_remainder(p: Sequence[float], budget: int) -> np.ndarray:
    """Integer counts summing to ``budget``, each within 1 of ``budget * p_i``."""
    weights = np.asarray(p, dtype=float)
    quotas = budget * weights
    base = np.floor(quotas + _QUOTA_EPSILON)
    if base.sum() > budget:
        base = np.floor(quotas)
    counts = base.astype(int)
    extra = budget - int(counts.sum())
    if extra > 0:
        remainders = quotas - base
        # stable sort on -remainder keeps ascending index among ties
        order = np.argsort(-remainders, kind='stable')
        counts[order[:extra]] += 1
    return counts


def _capacities(pools: Optional[Sequence[Pool]], k: int) -> np.ndarray:
    if pools is None:
        return np.full(k, np.iinfo(np.int64).max // 4, dtype=np.int64)
    if len(pools) != k:
        raise InsufficientDataError(f"{len(pools)} pools given for a {k}-skill mixture")
    return np.array([pool if isinstance(pool, int) else len(pool) for pool in pools], dtype=np.int64)


def allocate_samples(p: Mixture,
                     budget: int,
                     pools: Optional[Sequence[Pool]] = None,
                     seed: int = 0,
                     round: int = 0,
                     stochastic: bool = False) -> Allocation:
    """
    Apportion a round budget over skills and draw the samples.

    Args:
        p: mixture for the round
        budget: samples to allocate (>= 0)
        pools: per-skill sample pools, or plain pool sizes, or None for unlimited
        seed: run seed; draws use the stream keyed by (seed, round)
        round: round index, so each round draws afresh
        stochastic: draw the first-pass counts from a multinomial instead of
            largest remainder

    Returns:
        Allocation with counts summing to ``budget``

    Raises:
        InsufficientDataError: when every pool is exhausted before the budget is met
    """
    if budget < 0:
        raise InsufficientDataError(f"budget must be >= 0, got {budget}")
    weights = p.as_array()
    k = weights.size
    capacity = _capacities(pools, k)
    rng = np.random.default_rng([seed, round])

    counts = np.zeros(k, dtype=np.int64)
    remaining = budget
    first_pass = True
    while remaining > 0:
        room = capacity - counts
        open_skills = room > 0
        if not open_skills.any():
            raise InsufficientDataError("insufficient data")
        share_weights = np.where(open_skills, weights, 0.0)
        if share_weights.sum() <= 0:
            share_weights = open_skills.astype(float)
        share_weights = share_weights / share_weights.sum()

        if first_pass and stochastic:
            share = rng.multinomial(remaining, share_weights)
        else:
            share = largest_remainder(share_weights, remaining)
        first_pass = False

        share = np.minimum(share, room)
        if share.sum() < remaining:
            logger.debug(f"Pool overflow of {remaining - int(share.sum())} samples re-apportioned")
        counts += share
        remaining -= int(share.sum())

    drawn: Tuple[Tuple[Sample, ...], ...] = ()
    if pools is not None and not all(isinstance(pool, int) for pool in pools):
        drawn = tuple(
            () if isinstance(pool, int) else
            tuple(pool[i] for i in rng.choice(len(pool), size=int(count), replace=False))
            for pool, count in zip(pools, counts)
        )
    return Allocation(tuple(int(c) for c in counts), drawn)
