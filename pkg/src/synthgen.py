"""
Synthetic skill datasets.

LEGO reasoning chains (chain and tree variants, one skill per depth) and
d-digit addition (one skill per output digit), each with an independent
correctness oracle and the single-line ``Input: ... Output: ...`` surface
format.
"""

import logging
import re
import string
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import GenerationError, Sample, SkillId, SkillSet, make_skills

logger = logging.getLogger(__name__)

SkillKey = Union[SkillId, int]

_CLAUSE_PATTERN = re.compile(r'^\s*([a-z])\s*=\s*(val|not)\s+([a-z01])\s*$')
_LEGO_LINE = re.compile(r'^Input:\s*(?P<input>.+?\.)\s*Output:\s*(?P<output>[a-z] = [01])\.?\s*$')
_ADDITION_INPUT = re.compile(r'^A = (?P<a>[\d ]+?) \+ (?P<b>[\d ]+?) , A (?P<place>\d+) = \?$')
_ADDITION_LINE = re.compile(r'^Input:\s*(?P<input>.+?\?)\s*Output:\s*(?P<output>\d)\s*$')


def lego_skills(k: int) -> Tuple[SkillId, ...]:
    """Skills ``depth_1 .. depth_k``; index = depth - 1."""
    return make_skills([f"depth_{depth}" for depth in range(1, k + 1)])


def addition_skills(d: int) -> Tuple[SkillId, ...]:
    """Skills ``digit_0 .. digit_{d-1}``, named after the ``A <i>`` query token."""
    return make_skills([f"digit_{place}" for place in range(d)])


def _skill_number(key: SkillKey) -> int:
    """1-based skill number: SkillIds map to index + 1, plain ints are taken as-is."""
    return key.index + 1 if isinstance(key, SkillId) else int(key)


@dataclass(frozen=True)
class LegoSpec:
    """
    A LEGO reasoning structure over k variables.

    ``parents`` is None for the chain (parent(i) = i - 1); otherwise a parent
    array with ``parents[0] == -1`` describing a tree rooted at node 0.
    """
    k: int
    parents: Optional[Tuple[int, ...]] = None
    alphabet: str = string.ascii_lowercase
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise GenerationError(f"LEGO needs k >= 2 variables, got {self.k}")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise GenerationError("alphabet letters must be distinct")
        if len(self.alphabet) < self.k:
            raise GenerationError(f"alphabet of {len(self.alphabet)} letters cannot name {self.k} variables")
        if self.parents is not None:
            parents = tuple(int(p) for p in self.parents)
            object.__setattr__(self, 'parents', parents)
            self._validate_tree(parents)

    def _validate_tree(self, parents: Tuple[int, ...]) -> None:
        if len(parents) != self.k:
            raise GenerationError(f"parent array has {len(parents)} entries for k={self.k}")
        if parents[0] != -1:
            raise GenerationError("node 0 must be the root (parent -1)")
        for node in range(1, self.k):
            seen = {node}
            current = parents[node]
            while current != 0:
                if current < 0 or current >= self.k or current in seen:
                    raise GenerationError(f"parent array does not define a tree rooted at 0: {parents}")
                seen.add(current)
                current = parents[current]

    @property
    def structure(self) -> str:
        return 'chain' if self.parents is None else 'tree'

    def parent_array(self) -> Tuple[int, ...]:
        if self.parents is None:
            return tuple(range(-1, self.k - 1))
        return self.parents

    def depths(self) -> Tuple[int, ...]:
        """Depth of every node; the root has depth 1."""
        parents = self.parent_array()
        depths = [0] * self.k
        for node in range(self.k):
            depth, current = 1, node
            while parents[current] != -1:
                current = parents[current]
                depth += 1
            depths[node] = depth
        return tuple(depths)

    @property
    def max_depth(self) -> int:
        return max(self.depths())


@dataclass(frozen=True)
class AdditionSpec:
    """d-digit addition; skill i predicts the output digit at place 10^(i-1)."""
    d: int
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise GenerationError(f"addition needs d >= 1 digits, got {self.d}")


# --- LEGO --------------------------------------------------------------------

def _lego_sample(spec: LegoSpec, depth: int, skill: SkillId, rng: np.random.Generator) -> Sample:
    parents = spec.parent_array()
    depths = spec.depths()
    letters = rng.choice(list(spec.alphabet), size=spec.k, replace=False)
    root_bit = int(rng.integers(2))
    ops = rng.integers(2, size=spec.k)  # 1 = not, 0 = val

    clauses = [''] * spec.k
    values = [0] * spec.k
    for node in sorted(range(spec.k), key=lambda n: depths[n]):
        if parents[node] == -1:
            values[node] = root_bit
            clauses[node] = f"{letters[node]} = val {root_bit}"
        else:
            negate = bool(ops[node])
            values[node] = 1 - values[parents[node]] if negate else values[parents[node]]
            clauses[node] = f"{letters[node]} = {'not' if negate else 'val'} {letters[parents[node]]}"

    candidates = [node for node in range(spec.k) if depths[node] == depth]
    query = candidates[int(rng.integers(len(candidates)))]
    order = rng.permutation(spec.k)
    text_in = ', '.join(clauses[i] for i in order) + '.'
    return Sample(skill, text_in, f"{letters[query]} = {values[query]}")


def _generate_lego_skill(spec: LegoSpec, depth: int, count: int) -> List[Sample]:
    rng = np.random.default_rng([spec.seed, depth])
    skill = SkillId(depth - 1, f"depth_{depth}")
    return [_lego_sample(spec, depth, skill, rng) for _ in range(count)]


def gen_lego(spec: LegoSpec,
             count_per_skill: Mapping[SkillKey, int],
             max_workers: Optional[int] = None) -> List[Sample]:
    """
    Generate LEGO samples.

    Args:
        spec: reasoning structure, alphabet and seed
        count_per_skill: samples wanted per skill; keys are SkillIds from
            ``lego_skills`` or 1-based depths
        max_workers: generate skills in parallel when > 1

    Returns:
        Samples grouped by skill in ascending depth order

    Raises:
        GenerationError: for a negative count or a depth beyond the structure
    """
    requests = _resolve_counts(count_per_skill, spec.max_depth, 'depth')
    return _run_generators(lambda depth, count: _generate_lego_skill(spec, depth, count), requests, max_workers)


def parse_lego_clauses(text: str) -> Dict[str, Tuple[str, str]]:
    """Map each variable to ``(op, operand)`` from a rendered clause list."""
    body = text.strip()
    if body.endswith('.'):
        body = body[:-1]
    clauses = {}
    for raw in body.split(','):
        match = _CLAUSE_PATTERN.match(raw)
        if not match:
            raise GenerationError(f"malformed LEGO clause: {raw!r}")
        var, op, operand = match.groups()
        if var in clauses:
            raise GenerationError(f"variable {var} assigned twice")
        clauses[var] = (op, operand)
    return clauses


def evaluate_lego_clauses(text: str) -> Dict[str, int]:
    """Evaluate every variable by repeatedly resolving clauses whose operand is known."""
    pending = parse_lego_clauses(text)
    values: Dict[str, int] = {}
    while pending:
        resolved = []
        for var, (op, operand) in pending.items():
            if operand in '01':
                source = int(operand)
            elif operand in values:
                source = values[operand]
            else:
                continue
            values[var] = 1 - source if op == 'not' else source
            resolved.append(var)
        if not resolved:
            raise GenerationError(f"clauses are cyclic or reference undefined variables: {sorted(pending)}")
        for var in resolved:
            del pending[var]
    return values


def render_lego(sample: Sample) -> str:
    return f"Input: {sample.input} Output: {sample.output}."


def parse_lego(line: str) -> Tuple[str, str]:
    """Split ``Input: ... Output: x = b.`` into (input, output)."""
    match = _LEGO_LINE.match(line.strip())
    if not match:
        raise GenerationError(f"not a LEGO line: {line!r}")
    return match.group('input'), match.group('output')


# --- addition ----------------------------------------------------------------

def _digits(value: int, d: int) -> str:
    return ' '.join(str(value).zfill(d))


def _addition_sample(spec: AdditionSpec, place: int, skill: SkillId, rng: np.random.Generator) -> Sample:
    a, b = (int(v) for v in rng.integers(0, 10 ** spec.d, size=2))
    text_in = f"A = {_digits(a, spec.d)} + {_digits(b, spec.d)} , A {place} = ?"
    return Sample(skill, text_in, str(addition_oracle(a, b, place, spec.d)))


def _generate_addition_skill(spec: AdditionSpec, number: int, count: int) -> List[Sample]:
    place = number - 1
    rng = np.random.default_rng([spec.seed, number])
    skill = SkillId(place, f"digit_{place}")
    return [_addition_sample(spec, place, skill, rng) for _ in range(count)]


def gen_addition(spec: AdditionSpec,
                 count_per_skill: Mapping[SkillKey, int],
                 max_workers: Optional[int] = None) -> List[Sample]:
    """
    Generate addition samples; keys are SkillIds from ``addition_skills`` or 1-based skill numbers.

    The carry out of the top digit is dropped (the sum is taken mod 10^d).
    """
    requests = _resolve_counts(count_per_skill, spec.d, 'digit skill')
    return _run_generators(lambda number, count: _generate_addition_skill(spec, number, count), requests, max_workers)


def addition_oracle(a: int, b: int, place: int, d: int) -> int:
    return ((a + b) % 10 ** d) // 10 ** place % 10


def parse_addition(text: str) -> Tuple[int, int, int]:
    """Operands and queried place from an addition input string."""
    match = _ADDITION_INPUT.match(text.strip())
    if not match:
        raise GenerationError(f"not an addition input: {text!r}")
    return (int(match.group('a').replace(' ', '')),
            int(match.group('b').replace(' ', '')),
            int(match.group('place')))


def render_addition(sample: Sample) -> str:
    return f"Input: {sample.input} Output: {sample.output}"


def parse_addition_line(line: str) -> Tuple[str, str]:
    match = _ADDITION_LINE.match(line.strip())
    if not match:
        raise GenerationError(f"not an addition line: {line!r}")
    return match.group('input'), match.group('output')


# --- shared plumbing ---------------------------------------------------------

def _resolve_counts(count_per_skill: Mapping[SkillKey, int], limit: int, what: str) -> List[Tuple[int, int]]:
    requests: Dict[int, int] = {}
    for key, count in count_per_skill.items():
        number = _skill_number(key)
        if count < 0:
            raise GenerationError(f"negative count {count} for {what} {number}")
        if number < 1 or number > limit:
            raise GenerationError(f"{what} {number} outside 1..{limit}")
        requests[number] = requests.get(number, 0) + int(count)
    return sorted(requests.items())


def _run_generators(generate, requests: List[Tuple[int, int]], max_workers: Optional[int]) -> List[Sample]:
    if max_workers and max_workers > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            chunks = list(executor.map(lambda item: generate(*item), requests))
    else:
        chunks = [generate(number, count) for number, count in requests]
    samples = [sample for chunk in chunks for sample in chunk]
    logger.debug(f"Generated {len(samples)} samples over {len(requests)} skills")
    return samples


def build_skill_set(samples: Iterable[Sample],
                    skills: Sequence[SkillId],
                    validation_per_skill: int = 100,
                    seed: int = 0) -> SkillSet:
    """
    Split samples into disjoint per-skill training and validation pools.

    Validation takes the first ``validation_per_skill`` distinct texts in a
    seeded shuffle; every sample sharing one of those texts is kept out of
    the training pool.
    """
    by_skill: Dict[SkillId, List[Sample]] = defaultdict(list)
    for sample in samples:
        by_skill[sample.skill].append(sample)

    unknown = set(by_skill) - set(skills)
    if unknown:
        raise GenerationError(f"samples labeled with skills outside the set: {sorted(s.name for s in unknown)}")

    pools, validation = [], []
    for skill in skills:
        group = by_skill.get(skill, [])
        rng = np.random.default_rng([seed, skill.index])
        shuffled = [group[i] for i in rng.permutation(len(group))]
        held_keys, held = set(), []
        for sample in shuffled:
            key = (sample.input, sample.output)
            if len(held) >= validation_per_skill:
                break
            if key not in held_keys:
                held_keys.add(key)
                held.append(sample)
        train = [s for s in group if (s.input, s.output) not in held_keys]
        if len(held) < validation_per_skill:
            logger.warning(f"Skill {skill.name}: only {len(held)} distinct validation samples")
        pools.append(tuple(train))
        validation.append(tuple(held))
    return SkillSet(tuple(skills), tuple(pools), tuple(validation))
