"""
Experiment orchestration.

An experiment fixes a dataset, a trainer, a graph source and a list of
selector runs. Every run gets a fresh trainer with the same noise seed and the
same sample pools, so runs differ only in how they pick mixtures. Runs execute
on a thread pool; a failed run is recorded and the others continue.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ETA_SWEEP, GRAPH_LEARNING_DEFAULTS, VALIDATION_PER_SKILL, Settings, get_preset
from .core import (
    ConfigError,
    GraphError,
    RunConfig,
    RunLog,
    SelectorConfig,
    Setting,
    SkillId,
    SkillsGraph,
    SkillSet,
    all_ones_graph,
    classify_density,
    identity_graph,
    make_skills,
    validate_graph,
)
from .graphlearn import GraphLearnConfig, GraphLearnResult, learn_graph_approximate, learn_graph_bruteforce
from .selector import create_selector
from .storage import (
    read_graph_csv,
    read_samples,
    resolve_eval_skills,
    runlog_to_jsonl,
    write_graph_csv,
    write_jsonl,
    write_summary,
)
from .synthgen import AdditionSpec, LegoSpec, addition_skills, build_skill_set, gen_addition, gen_lego, lego_skills
from .trainer import ExternalTrainer, SimDynamics, SimTrainer, TrainerFactory, run_rounds

logger = logging.getLogger(__name__)

GRAPH_SOURCES = ('identity', 'all_ones', 'csv', 'matrix', 'true', 'learn_bruteforce', 'learn_approximate')
PROBE_STEP_RATE = 0.05

# Preset keys copied into selector options when the selector kind uses them
_PRESET_OPTIONS = {
    'random': ('random_proportions',),
    'curriculum': ('curriculum_epochs', 'steps'),
    'anticurriculum': ('curriculum_epochs', 'steps'),
    'skill_curriculum': ('curriculum_epochs', 'steps'),
    'skill_anticurriculum': ('curriculum_epochs', 'steps'),
}


def planted_prerequisite_matrix(k: int, rng: np.random.Generator, edge_prob: float = 0.5,
                                weight: float = 0.5) -> np.ndarray:
    """Diagonal 1 plus forward edges i -> j (i < j) drawn with ``edge_prob`` at ``weight``."""
    A = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            if rng.random() < edge_prob:
                A[i, j] = weight
    return A


@dataclass
class ExperimentSpec:
    """
    Everything needed to reproduce an experiment.

    ``dataset``, ``trainer`` and ``graph`` are plain mappings with a ``type``
    key; see ``from_dict`` for the accepted forms.
    """
    name: str
    seed: int
    runs: List[RunConfig]
    trainer: Dict[str, Any]
    graph: Dict[str, Any] = field(default_factory=lambda: {'type': 'true'})
    dataset: Optional[Dict[str, Any]] = None
    setting: Setting = Setting.CONTINUAL
    train_skills: Optional[List[str]] = None
    eval_skills: Optional[List[str]] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        labels = [run.name for run in self.runs]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"selector labels must be unique, got {labels}")
        if self.graph.get('type') not in GRAPH_SOURCES:
            raise ConfigError(f"unknown graph source {self.graph.get('type')!r}; expected one of {GRAPH_SOURCES}")
        if self.trainer.get('type') not in ('sim', 'external'):
            raise ConfigError(f"unknown trainer type {self.trainer.get('type')!r}")
        self.setting = Setting(self.setting)
        for key in ('path', 'A_true_path'):
            for section in (self.graph, self.trainer, self.dataset or {}):
                if key in section and not Path(section[key]).exists():
                    raise ConfigError(f"referenced file does not exist: {section[key]}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ExperimentSpec':
        """
        Resolve a config mapping into a spec.

        Top-level ``eta``, ``T``, ``n``, ``w`` (after any ``preset``) are the
        defaults for every entry of ``selectors``; an entry is a kind string or
        a mapping with ``kind``, ``options`` and per-run overrides. A resolved
        ``runs`` list (as written by ``to_dict``) is accepted as well. An entry
        with ``"eta": "sweep"`` expands into one run per ``ETA_SWEEP`` value,
        labeled ``<label>_eta<value>``.
        """
        if 'seed' not in data:
            raise ConfigError("seed is required in the experiment config")
        values: Dict[str, Any] = {}
        if data.get('preset'):
            values.update(get_preset(data['preset']))
        values.update(data)
        seed = int(values['seed'])

        if values.get('runs'):
            runs = [RunConfig.from_dict(run) for run in values['runs']]
        else:
            runs = [run for entry in values.get('selectors', []) for run in cls._expand_sweep(entry, values, seed)]

        try:
            return cls(
                name=str(values.get('name', 'experiment')),
                seed=seed,
                runs=runs,
                trainer=dict(values['trainer']),
                graph=dict(values.get('graph', {'type': 'true'})),
                dataset=dict(values['dataset']) if values.get('dataset') else None,
                setting=Setting(values.get('setting', Setting.CONTINUAL.value)),
                train_skills=values.get('train_skills'),
                eval_skills=values.get('eval_skills'),
                output_dir=values.get('output_dir'),
            )
        except KeyError as e:
            raise ConfigError(f"experiment config missing key {e}") from e

    @classmethod
    def _expand_sweep(cls, entry: Union[str, Mapping[str, Any]], values: Mapping[str, Any],
                      seed: int) -> List[RunConfig]:
        if isinstance(entry, str) or entry.get('eta') != 'sweep':
            return [cls._resolve_run(entry, values, seed)]
        options = dict(entry.get('options', {}))
        label = options.get('label', entry.get('kind'))
        return [
            cls._resolve_run({**entry, 'eta': eta, 'options': {**options, 'label': f"{label}_eta{eta}"}}, values, seed)
            for eta in ETA_SWEEP
        ]

    @staticmethod
    def _resolve_run(entry: Union[str, Mapping[str, Any]], values: Mapping[str, Any], seed: int) -> RunConfig:
        item = {'kind': entry} if isinstance(entry, str) else dict(entry)
        kind = item.get('kind')
        options = dict(item.get('options', {}))
        for key in _PRESET_OPTIONS.get(kind, ()):
            if key in values and key not in options:
                options[key] = values[key]
        try:
            return RunConfig(
                eta=float(item.get('eta', values.get('eta', 0.5))),
                T=int(item.get('T', values['T'])),
                n=int(item.get('n', values['n'])),
                w=int(item.get('w', values.get('w', 1))),
                seed=int(item.get('seed', seed)),
                selector=SelectorConfig(kind, options),
            )
        except KeyError as e:
            raise ConfigError(f"selector {kind!r} has no value for {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'seed': self.seed,
            'setting': self.setting.value,
            'train_skills': self.train_skills,
            'eval_skills': self.eval_skills,
            'dataset': self.dataset,
            'trainer': self.trainer,
            'graph': self.graph,
            'runs': [run.to_dict() for run in self.runs],
        }


@dataclass
class ExperimentResult:
    """Run logs in run order, failures by label, the summary table and the graph used."""
    spec: ExperimentSpec
    graph: SkillsGraph
    logs: Dict[str, RunLog] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    summary: List[Dict[str, Any]] = field(default_factory=list)
    graph_result: Optional[GraphLearnResult] = None


# --- building blocks ---------------------------------------------------------

def _load_dataset(spec: ExperimentSpec) -> Tuple[Optional[Tuple[SkillId, ...]], Optional[SkillSet]]:
    source = spec.dataset
    if not source:
        return None, None
    kind = source.get('type')
    seed = int(source.get('seed', spec.seed))
    if kind == 'lego':
        skills = lego_skills(int(source['k']))
        lego = LegoSpec(int(source['k']), tuple(source['parents']) if source.get('parents') else None, seed=seed)
        samples = gen_lego(lego, {skill: int(source.get('count_per_skill', 1000)) for skill in skills[:lego.max_depth]})
        skills = skills[:lego.max_depth]
    elif kind == 'addition':
        skills = addition_skills(int(source['d']))
        samples = gen_addition(AdditionSpec(int(source['d']), seed=seed),
                               {skill: int(source.get('count_per_skill', 1000)) for skill in skills})
    elif kind == 'jsonl':
        samples = read_samples(source['path'], source.get('skill_order'))
        if source.get('skill_order'):
            skills = make_skills(source['skill_order'])
        else:
            skills = tuple(sorted({s.skill for s in samples}, key=lambda s: s.index))
    else:
        raise ConfigError(f"unknown dataset type {kind!r}")
    skill_set = build_skill_set(samples, skills, int(source.get('validation_per_skill', VALIDATION_PER_SKILL)), seed)
    logger.info(f"Dataset {kind}: {skill_set.k} skills, pool sizes {skill_set.pool_sizes()}")
    return skills, skill_set


def _sim_dynamics(spec: ExperimentSpec) -> SimDynamics:
    source = spec.trainer
    if 'A_true' in source:
        M = np.asarray(source['A_true'], dtype=float)
    elif 'A_true_path' in source:
        M = read_graph_csv(source['A_true_path'], spec.setting).A
    elif 'planted' in source:
        planted = source['planted']
        rng = np.random.default_rng(int(planted.get('seed', spec.seed)))
        M = planted_prerequisite_matrix(int(planted['k']), rng, float(planted.get('edge_prob', 0.5)),
                                        float(planted.get('weight', 0.5)))
    else:
        raise ConfigError("sim trainer needs A_true, A_true_path or planted")
    L0 = source.get('L0', 1.0)
    L0 = np.full(M.shape[1], float(L0)) if np.isscalar(L0) else np.asarray(L0, dtype=float)
    noise = float(source.get('noise_sigma', 0.0))
    if source.get('scale'):
        return SimDynamics.from_matrix(M, L0, noise, spec.seed, scale=source['scale'])
    return SimDynamics(M, L0, noise, spec.seed)


def _skill_ids(spec: ExperimentSpec, k: int, m: int,
               dataset_skills: Optional[Tuple[SkillId, ...]]) -> Tuple[Tuple[SkillId, ...], Tuple[SkillId, ...]]:
    if spec.train_skills:
        train = make_skills(spec.train_skills)
    elif dataset_skills is not None:
        train = dataset_skills
    else:
        train = make_skills([f"skill_{i}" for i in range(k)])
    if len(train) != k:
        raise ConfigError(f"{len(train)} training skills named for a {k}-skill trainer")

    if spec.eval_skills:
        evals = resolve_eval_skills(train, spec.eval_skills)
    elif spec.setting == Setting.CONTINUAL:
        evals = train
    elif spec.setting == Setting.OUT_OF_DOMAIN:
        evals = make_skills([f"eval_{j}" for j in range(m)])
    else:
        raise ConfigError("fine_tune experiments must name their eval_skills")
    if len(evals) != m:
        raise ConfigError(f"{len(evals)} eval skills named for a trainer reporting {m} losses")
    return train, evals


def _trainer_factory(spec: ExperimentSpec, train: Sequence[SkillId], evals: Sequence[SkillId],
                     settings: Settings, step_rate: float = 1.0) -> TrainerFactory:
    source = spec.trainer
    if source['type'] == 'sim':
        dynamics = _sim_dynamics(spec)
        return lambda: SimTrainer(dynamics, step_rate)
    command = source['command']
    timeout = float(source.get('timeout', settings.trainer_timeout))
    return lambda: ExternalTrainer(command, [s.name for s in train], [s.name for s in evals], timeout)


def _resolve_graph(spec: ExperimentSpec, train: Tuple[SkillId, ...], evals: Tuple[SkillId, ...],
                   settings: Settings,
                   allow_failure: bool = False) -> Tuple[Optional[SkillsGraph], Optional[GraphLearnResult]]:
    source = spec.graph
    kind = source['type']
    if kind == 'identity':
        return identity_graph(train, evals, spec.setting), None
    if kind == 'all_ones':
        return all_ones_graph(train, evals, spec.setting), None
    if kind == 'csv':
        loaded = read_graph_csv(source['path'], spec.setting)
        return SkillsGraph(train, evals, loaded.A, spec.setting), None
    if kind == 'matrix':
        return SkillsGraph(train, evals, np.asarray(source['A'], dtype=float), spec.setting), None
    if kind == 'true':
        if spec.trainer['type'] != 'sim':
            raise ConfigError("graph source 'true' needs a simulated trainer")
        return SkillsGraph(train, evals, _sim_dynamics(spec).A_true, spec.setting), None

    options = {**GRAPH_LEARNING_DEFAULTS, **{key: v for key, v in source.items() if key != 'type'}}
    step_rate = float(options.pop('step_rate', PROBE_STEP_RATE))
    options.setdefault('max_workers', settings.max_workers)
    cfg = GraphLearnConfig(**options)
    factory = _trainer_factory(spec, train, evals, settings, step_rate)
    if kind == 'learn_bruteforce':
        result = learn_graph_bruteforce(train, factory, cfg, evals)
    else:
        result = learn_graph_approximate(train, evals, factory, cfg, spec.setting)
    if not result.ok and not allow_failure:
        raise GraphError(f"graph learning failed: {len(result.failed)} probe(s) failed")
    return result.graph, result


def summarize(runs: Sequence[RunConfig], logs: Mapping[str, RunLog], failures: Mapping[str, str],
              eval_skills: Sequence[SkillId]) -> List[Dict[str, Any]]:
    """Long-format rows: one per (selector, eval skill) plus an ``average`` row; failures get one row."""
    rows: List[Dict[str, Any]] = []
    for run in runs:
        label = run.name
        if label in failures or label not in logs:
            rows.append({'selector': label, 'status': 'failed', 'skill': '', 'final_loss': '', 'mean_loss': ''})
            continue
        log = logs[label]
        after = np.array([record.losses_after.losses for record in log.rounds])
        for j, skill in enumerate(eval_skills):
            rows.append({
                'selector': label, 'status': 'ok', 'skill': skill.name,
                'final_loss': float(after[-1, j]), 'mean_loss': float(after[:, j].mean()),
            })
        rows.append({
            'selector': label, 'status': 'ok', 'skill': 'average',
            'final_loss': float(after[-1].mean()), 'mean_loss': float(after.mean(axis=1).mean()),
        })
    return rows


# --- entry points ------------------------------------------------------------

def resolve_skills(spec: ExperimentSpec) -> Tuple[Tuple[SkillId, ...], Tuple[SkillId, ...], Optional[SkillSet]]:
    """Training skills, eval skills and the generated/loaded skill set (if any) of an experiment."""
    dataset_skills, skill_set = _load_dataset(spec)
    if spec.trainer['type'] == 'sim':
        dynamics = _sim_dynamics(spec)
        k, m = dynamics.k, dynamics.m
    else:
        k = len(spec.train_skills or dataset_skills or ())
        m = len(spec.eval_skills or spec.train_skills or dataset_skills or ())
    train, evals = _skill_ids(spec, k, m, dataset_skills)
    return train, evals, skill_set


def learn_graph(spec: ExperimentSpec, method: str, options: Optional[Mapping[str, Any]] = None,
                settings: Optional[Settings] = None) -> GraphLearnResult:
    """Learn a graph with the experiment's trainer; ``method`` is 'brute' or 'approx'."""
    settings = settings or Settings.from_env()
    kinds = {'brute': 'learn_bruteforce', 'approx': 'learn_approximate'}
    if method not in kinds:
        raise ConfigError(f"unknown graph learning method {method!r}; expected brute or approx")
    spec.graph = {**{key: v for key, v in spec.graph.items() if key not in ('type', 'path', 'A')},
                  **(options or {}), 'type': kinds[method]}
    train, evals, _ = resolve_skills(spec)
    _, result = _resolve_graph(spec, train, evals, settings, allow_failure=True)
    return result


def run_experiment(spec: ExperimentSpec, settings: Optional[Settings] = None) -> ExperimentResult:
    """
    Run every selector of the experiment and write its outputs.

    Outputs (when ``spec.output_dir`` is set): ``experiment.json``,
    ``graph.csv``, ``probes.jsonl`` (learned graphs), one
    ``<label>.runlog.jsonl`` per selector and ``summary.csv``.
    """
    if not spec.runs:
        raise ConfigError("an experiment needs at least one selector run")
    settings = settings or Settings.from_env()
    start_time = time.time()
    logger.info(f"Starting experiment {spec.name} with {len(spec.runs)} selector runs")

    out_dir = Path(spec.output_dir) if spec.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / 'experiment.json', 'w', encoding='utf-8') as f:
            json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
    train, evals, skill_set = resolve_skills(spec)

    graph, graph_result = _resolve_graph(spec, train, evals, settings)
    report = validate_graph(graph)
    if not report.ok:
        raise GraphError(f"invalid skills graph: {report.violations}")
    logger.info(f"Using {classify_density(graph)} graph ({spec.graph['type']}) over {graph.k} x {graph.m} skills")
    if out_dir is not None:
        write_graph_csv(out_dir / 'graph.csv', graph)
        if graph_result is not None:
            write_jsonl(out_dir / 'probes.jsonl', graph_result.probe_log())

    pools = skill_set.pools if skill_set is not None else None
    pool_sizes = skill_set.pool_sizes() if skill_set is not None else None
    factory = _trainer_factory(spec, train, evals, settings)
    result = ExperimentResult(spec=spec, graph=graph, graph_result=graph_result)
    completed: Dict[str, RunLog] = {}

    def execute(run: RunConfig) -> RunLog:
        def flush(log: RunLog) -> None:
            if out_dir is not None:
                (out_dir / f"{run.name}.runlog.jsonl").write_text(runlog_to_jsonl(log), encoding='utf-8')

        selector = create_selector(run, graph, pool_sizes)
        with factory() as trainer:
            return run_rounds(run, selector, trainer, graph.k, pools=pools, flush=flush)

    with ThreadPoolExecutor(max_workers=max(1, settings.max_workers)) as executor:
        future_to_run = {executor.submit(execute, run): run for run in spec.runs}
        for future in as_completed(future_to_run):
            run = future_to_run[future]
            try:
                completed[run.name] = future.result()
            except Exception as e:
                logger.warning(f"Selector run {run.name} failed: {e}")
                result.failures[run.name] = str(e)

    result.logs = {run.name: completed[run.name] for run in spec.runs if run.name in completed}
    result.summary = summarize(spec.runs, result.logs, result.failures, evals)
    if out_dir is not None:
        write_summary(out_dir / 'summary.csv', result.summary)

    elapsed = time.time() - start_time
    logger.info(f"Experiment {spec.name} finished in {elapsed:.2f}s: "
                f"{len(result.logs)} succeeded, {len(result.failures)} failed")
    return result


def replay_experiment(output_dir: Union[str, Path], settings: Optional[Settings] = None) -> Dict[str, bool]:
    """
    Re-execute a persisted experiment in memory.

    Returns, per selector label, whether the regenerated run log is
    byte-identical to the stored ``<label>.runlog.jsonl``.
    """
    out_dir = Path(output_dir)
    with open(out_dir / 'experiment.json', encoding='utf-8') as f:
        spec = ExperimentSpec.from_dict(json.load(f))
    spec.output_dir = None
    result = run_experiment(spec, settings)

    matches: Dict[str, bool] = {}
    for run in spec.runs:
        stored = out_dir / f"{run.name}.runlog.jsonl"
        if run.name not in result.logs or not stored.exists():
            matches[run.name] = False
            continue
        matches[run.name] = stored.read_text(encoding='utf-8') == runlog_to_jsonl(result.logs[run.name])
        if not matches[run.name]:
            logger.warning(f"Replay of {run.name} diverged from {stored}")
    return matches
