#!/usr/bin/env python3
"""
Command-line interface for skillmix.

Subcommands: ``gen lego|addition``, ``learn-graph brute|approx``, ``run``,
``recover``, ``plot``, ``replay``. Every flag may also be given as a key of
the ``--config`` JSON file; an explicit flag wins over the file, which wins
over a named preset, which wins over the built-in default.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .config import Settings, load_json_config, merge_overrides
from .core import ConfigError, RunConfig, Sample, SkillMixError
from .harness import ExperimentSpec, learn_graph, replay_experiment, run_experiment
from .plots import export_plots
from .recover import cluster_trajectories, matched_accuracy
from .storage import read_graph_csv, read_runlog, read_trajectories, write_graph_csv, write_jsonl, write_samples
from .synthgen import AdditionSpec, LegoSpec, addition_skills, gen_addition, gen_lego, lego_skills

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='skillmix', description="Skill-graph data mixture planning")
    parser.add_argument('--config', help="JSON config file; keys mirror the flags")
    parser.add_argument('--log-level', dest='log_level', default=None)
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen', help="generate a synthetic skill dataset")
    gen.add_argument('dataset', choices=['lego', 'addition'])
    gen.add_argument('--k', type=int, help="LEGO variables")
    gen.add_argument('--parents', help="LEGO tree parent array, comma separated (root = -1)")
    gen.add_argument('--d', type=int, help="addition digits")
    gen.add_argument('--count', type=int, help="samples per skill")
    gen.add_argument('--seed', type=int)
    gen.add_argument('--out', help="output file, or directory with --split-by-skill")
    gen.add_argument('--split-by-skill', dest='split_by_skill', action='store_true', default=None)

    learn = commands.add_parser('learn-graph', help="learn a skills graph with the configured trainer")
    learn.add_argument('method', choices=['brute', 'approx'])
    learn.add_argument('--H', type=int)
    learn.add_argument('--h', type=int)
    learn.add_argument('--threshold', dest='threshold_loss', type=float)
    learn.add_argument('--scheme', dest='weight_scheme', choices=['binary_half', 'raw_delta'])
    learn.add_argument('--compare', dest='compare_mode', choices=['steps_to_threshold', 'delta'])
    learn.add_argument('--step-rate', dest='step_rate', type=float)
    learn.add_argument('--out', help="adjacency CSV to write")
    learn.add_argument('--probes', help="probe log JSONL to write")

    run = commands.add_parser('run', help="run an experiment")
    run.add_argument('--preset')
    run.add_argument('--seed', type=int)
    run.add_argument('--output-dir', dest='output_dir')

    recover = commands.add_parser('recover', help="cluster loss trajectories into skills")
    recover.add_argument('--trajectories')
    recover.add_argument('--k', type=int)
    recover.add_argument('--seed', type=int)
    recover.add_argument('--n-init', dest='n_init', type=int)
    recover.add_argument('--zscore', action='store_true', default=None)
    recover.add_argument('--out', help="assignment CSV to write")

    plot = commands.add_parser('plot', help="plot the run logs of an experiment directory")
    plot.add_argument('--output-dir', dest='output_dir')
    plot.add_argument('--plots-dir', dest='plots_dir')

    replay = commands.add_parser('replay', help="re-run an experiment directory and compare run logs")
    replay.add_argument('--output-dir', dest='output_dir')
    return parser


def _require(values: Dict[str, Any], key: str) -> Any:
    if values.get(key) is None:
        raise ConfigError(f"missing required value {key!r} (flag or config key)")
    return values[key]


def _cmd_gen(values: Dict[str, Any]) -> int:
    count = int(values.get('count') or 1000)
    seed = int(values.get('seed') or 0)
    if values['dataset'] == 'lego':
        parents = values.get('parents')
        if isinstance(parents, str):
            parents = [int(p) for p in parents.split(',')]
        spec = LegoSpec(int(_require(values, 'k')), tuple(parents) if parents else None, seed=seed)
        skills = lego_skills(spec.max_depth)
        samples = gen_lego(spec, {skill: count for skill in skills})
        header = {'dataset': 'lego', 'k': spec.k, 'structure': spec.structure,
                  'parents': list(spec.parent_array()), 'seed': seed, 'count_per_skill': count}
    else:
        spec = AdditionSpec(int(_require(values, 'd')), seed=seed)
        skills = addition_skills(spec.d)
        samples = gen_addition(spec, {skill: count for skill in skills})
        header = {'dataset': 'addition', 'd': spec.d, 'seed': seed, 'count_per_skill': count,
                  'carry': f"sum taken mod 10^{spec.d}; the carry out of the top digit is dropped"}

    out = Path(_require(values, 'out'))
    if values.get('split_by_skill'):
        out.mkdir(parents=True, exist_ok=True)
        for skill in skills:
            write_samples(out / f"{skill.name}.jsonl", [s for s in samples if s.skill == skill])
        meta_path = out / 'dataset.meta.json'
    else:
        order = np.random.default_rng(seed).permutation(len(samples))
        shuffled: List[Sample] = [samples[i] for i in order]
        out.parent.mkdir(parents=True, exist_ok=True)
        write_samples(out, shuffled)
        meta_path = out.with_suffix('.meta.json')
    meta_path.write_text(json.dumps(header, indent=2) + '\n', encoding='utf-8')
    return 0


def _cmd_learn_graph(values: Dict[str, Any], settings: Settings) -> int:
    spec = ExperimentSpec.from_dict(values)
    options = {key: values[key] for key in ('H', 'h', 'threshold_loss', 'weight_scheme', 'compare_mode', 'step_rate')
               if values.get(key) is not None}
    result = learn_graph(spec, values['method'], options, settings)
    if values.get('probes'):
        write_jsonl(values['probes'], result.probe_log())
    if not result.ok:
        logger.error(f"{len(result.failed)} probe(s) failed; no graph written")
        return 1
    write_graph_csv(_require(values, 'out'), result.graph)
    return 0


def _cmd_run(values: Dict[str, Any], settings: Settings) -> int:
    spec = ExperimentSpec.from_dict(values)
    if spec.output_dir is None:
        spec.output_dir = settings.output_dir
    result = run_experiment(spec, settings)
    for row in result.summary:
        if row['skill'] in ('average', ''):
            logger.info(f"{row['selector']}: status={row['status']} final={row['final_loss']}")
    return 1 if result.failures else 0


def _cmd_recover(values: Dict[str, Any]) -> int:
    traj = read_trajectories(_require(values, 'trajectories'))
    assignment = cluster_trajectories(traj, int(_require(values, 'k')), int(values.get('seed') or 0),
                                      n_init=int(values.get('n_init') or 10), zscore=bool(values.get('zscore')))
    if traj.true_labels is not None:
        accuracy = matched_accuracy(assignment, traj.true_labels)
        logger.info(f"Matched accuracy: {accuracy:.4f}")
        print(f"matched_accuracy={accuracy:.6f}")
    if values.get('out'):
        with open(values['out'], 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['sample', 'cluster'])
            writer.writerows(zip(traj.samples, (int(c) for c in assignment)))
    return 0


def _load_logs(out_dir: Path) -> Dict[str, Any]:
    with open(out_dir / 'experiment.json', encoding='utf-8') as f:
        experiment = json.load(f)
    logs = {}
    for run_data in experiment['runs']:
        config = RunConfig.from_dict(run_data)
        path = out_dir / f"{config.name}.runlog.jsonl"
        if path.exists():
            logs[config.name] = read_runlog(path, config)
    return logs


def _cmd_plot(values: Dict[str, Any]) -> int:
    out_dir = Path(_require(values, 'output_dir'))
    logs = _load_logs(out_dir)
    graph = read_graph_csv(out_dir / 'graph.csv')
    export_plots(logs, values.get('plots_dir') or out_dir / 'plots',
                 [s.name for s in graph.eval_skills], [s.name for s in graph.train_skills])
    return 0


def _cmd_replay(values: Dict[str, Any], settings: Settings) -> int:
    matches = replay_experiment(_require(values, 'output_dir'), settings)
    for label, same in matches.items():
        print(f"{label}: {'identical' if same else 'DIFFERENT'}")
    return 0 if all(matches.values()) else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings.from_env()
    logging.basicConfig(level=(args.log_level or settings.log_level).upper(), format=LOG_FORMAT)

    try:
        config = load_json_config(args.config) if args.config else {}
        values = merge_overrides(config, vars(args))
        if args.command == 'gen':
            return _cmd_gen(values)
        if args.command == 'learn-graph':
            return _cmd_learn_graph(values, settings)
        if args.command == 'run':
            return _cmd_run(values, settings)
        if args.command == 'recover':
            return _cmd_recover(values)
        if args.command == 'plot':
            return _cmd_plot(values)
        if args.command == 'replay':
            return _cmd_replay(values, settings)
    except SkillMixError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
