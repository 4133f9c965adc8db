"""
File formats for skillmix.

Adjacency matrices (CSV), skill datasets (JSON lines), run logs (JSON lines,
one object per round), graph-learning probe logs (JSON lines), summaries (CSV)
and trajectory matrices (JSON header line followed by CSV rows).
"""

import csv
import io
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .core import (
    RoundRecord,
    RunConfig,
    RunLog,
    Sample,
    Setting,
    SkillId,
    SkillMixError,
    SkillsGraph,
    make_skills,
)
from .recover import TrajectoryMatrix

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _natural_key(name: str) -> List[Any]:
    return [int(part) if part.isdigit() else part for part in re.split(r'(\d+)', name)]


def infer_setting(train_names: Sequence[str], eval_names: Sequence[str]) -> Setting:
    """Derive the setting from how the eval names relate to the train names."""
    train_set, eval_set = set(train_names), set(eval_names)
    if list(train_names) == list(eval_names):
        return Setting.CONTINUAL
    if eval_set < train_set:
        return Setting.FINE_TUNE
    if not (eval_set & train_set):
        return Setting.OUT_OF_DOMAIN
    raise SkillMixError(
        "eval skills neither equal, strictly contained in, nor disjoint from train skills"
    )


def resolve_eval_skills(train_skills: Sequence[SkillId], eval_names: Sequence[str]) -> tuple:
    """Eval SkillIds that reuse the training SkillId when the name is shared."""
    by_name = {skill.name: skill for skill in train_skills}
    return tuple(by_name.get(name, SkillId(j, name)) for j, name in enumerate(eval_names))


# --- adjacency CSV -----------------------------------------------------------

def write_graph_csv(path: PathLike, graph: SkillsGraph) -> None:
    """Header row = eval skill names, first column = train skill names."""
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow([''] + [skill.name for skill in graph.eval_skills])
        for skill, row in zip(graph.train_skills, graph.A):
            writer.writerow([skill.name] + [repr(float(v)) for v in row])
    logger.debug(f"Wrote {graph.k}x{graph.m} adjacency to {path}")


def read_graph_csv(path: PathLike, setting: Optional[Union[Setting, str]] = None) -> SkillsGraph:
    """Load an adjacency CSV; the setting is inferred from the skill names when omitted."""
    with open(path, newline='', encoding='utf-8') as f:
        rows = [row for row in csv.reader(f) if row]
    if len(rows) < 2:
        raise SkillMixError(f"adjacency file {path} has no data rows")
    eval_names = rows[0][1:]
    train_names = [row[0] for row in rows[1:]]
    try:
        A = np.array([[float(cell) for cell in row[1:]] for row in rows[1:]], dtype=float)
    except ValueError as e:
        raise SkillMixError(f"adjacency file {path} has a non-numeric cell: {e}") from e
    train_skills = make_skills(train_names)
    eval_skills = resolve_eval_skills(train_skills, eval_names)
    chosen = Setting(setting) if setting is not None else infer_setting(train_names, eval_names)
    return SkillsGraph(train_skills, eval_skills, A.reshape(len(train_names), len(eval_names)), chosen)


# --- samples JSONL -----------------------------------------------------------

def write_samples(path: PathLike, samples: Iterable[Sample]) -> int:
    """Write one JSON object per sample; returns the number written."""
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for sample in samples:
            f.write(json.dumps(sample.to_dict()) + '\n')
            count += 1
    logger.info(f"Wrote {count} samples to {path}")
    return count


def read_samples(path: PathLike, skill_order: Optional[Sequence[str]] = None) -> List[Sample]:
    """
    Read a JSON-lines skill dataset.

    Args:
        path: file with one ``{"skill", "input", "output"}`` object per line
        skill_order: names in index order; defaults to natural sort of the names seen

    Returns:
        Samples with SkillIds indexed by ``skill_order``
    """
    records = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                records.append((record['skill'], record['input'], record['output']))
            except (json.JSONDecodeError, KeyError) as e:
                raise SkillMixError(f"{path}:{line_no}: malformed sample record ({e})") from e

    names = list(skill_order) if skill_order else sorted({r[0] for r in records}, key=_natural_key)
    skills = {skill.name: skill for skill in make_skills(names)}
    missing = {r[0] for r in records} - set(skills)
    if missing:
        raise SkillMixError(f"samples reference skills outside the given order: {sorted(missing)}")
    return [Sample(skills[name], text_in, text_out) for name, text_in, text_out in records]


# --- run logs ----------------------------------------------------------------

def runlog_to_jsonl(log: RunLog) -> str:
    return ''.join(json.dumps(record.to_dict()) + '\n' for record in log.rounds)


def write_runlog(path: PathLike, log: RunLog) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(runlog_to_jsonl(log))
    logger.debug(f"Wrote {len(log.rounds)} rounds to {path}")


def read_runlog(path: PathLike, config: RunConfig) -> RunLog:
    log = RunLog(config=config)
    with open(path, encoding='utf-8') as f:
        for line in f:
            if line.strip():
                log.append(RoundRecord.from_dict(json.loads(line)))
    return log


# --- probe logs and summaries ------------------------------------------------

def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record) + '\n')


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    with open(path, encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


SUMMARY_COLUMNS = ('selector', 'status', 'skill', 'final_loss', 'mean_loss')


def summary_to_csv(rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=SUMMARY_COLUMNS, lineterminator='\n')
    writer.writeheader()
    for row in rows:
        writer.writerow({
            key: (repr(row[key]) if isinstance(row.get(key), float) else row.get(key, ''))
            for key in SUMMARY_COLUMNS
        })
    return buffer.getvalue()


def write_summary(path: PathLike, rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(summary_to_csv(rows))


# --- trajectory matrices -----------------------------------------------------

def write_trajectories(path: PathLike, traj: TrajectoryMatrix) -> None:
    """Header JSON line (N, R, C, sample ids, optional labels) then one CSV row per sample."""
    header = {
        'N': traj.n_samples,
        'R': traj.runs,
        'C': traj.checkpoints,
        'samples': list(traj.samples),
        'labels': None if traj.true_labels is None else [int(v) for v in traj.true_labels],
    }
    with open(path, 'w', newline='', encoding='utf-8') as f:
        f.write(json.dumps(header) + '\n')
        writer = csv.writer(f, lineterminator='\n')
        for row in traj.features:
            writer.writerow([repr(float(v)) for v in row])


def read_trajectories(path: PathLike) -> TrajectoryMatrix:
    with open(path, newline='', encoding='utf-8') as f:
        header = json.loads(f.readline())
        rows = [row for row in csv.reader(f) if row]
    features = np.array([[float(v) for v in row] for row in rows], dtype=float)
    if features.shape[0] != header['N']:
        raise SkillMixError(f"trajectory file {path} declares N={header['N']} but has {features.shape[0]} rows")
    labels = header.get('labels')
    return TrajectoryMatrix(
        samples=tuple(header.get('samples') or [str(i) for i in range(header['N'])]),
        features=features.reshape(header['N'], header['R'] * header['C']),
        runs=int(header['R']),
        checkpoints=int(header['C']),
        true_labels=None if labels is None else np.asarray(labels, dtype=int),
    )
