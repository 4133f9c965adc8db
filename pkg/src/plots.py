"""
Loss and mixture plots for finished runs.

Simulated losses exist only at round boundaries, so every "per-step" curve
here is a round-boundary series: round 0 is the loss before training, round t
the loss after round t.
"""

import csv
import logging
import re
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from .core import RunLog, SkillMixError  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams['svg.hashsalt'] = 'skillmix'


def _slug(text: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', text)


def loss_series(log: RunLog, j: int) -> List[float]:
    """Eval skill j's loss at rounds 0..T."""
    if not log.rounds:
        raise SkillMixError("no data")
    return [log.rounds[0].losses_before.losses[j]] + [record.losses_after.losses[j] for record in log.rounds]


def export_plots(logs: Mapping[str, RunLog],
                 output_dir: Union[str, Path],
                 eval_names: Optional[Sequence[str]] = None,
                 train_names: Optional[Sequence[str]] = None) -> Dict[str, List[Path]]:
    """
    Write loss series, per-skill loss charts and per-selector mixture charts.

    Files:
        ``<selector>.<skill>.series.csv`` with columns ``round,loss``;
        ``loss_<skill>.svg`` with one line per selector;
        ``mixture_<selector>.svg`` with the weight of every training skill per round.

    Raises:
        SkillMixError: "no data" when there are no logs or a log has no rounds
    """
    if not logs or any(not log.rounds for log in logs.values()):
        raise SkillMixError("no data")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    first = next(iter(logs.values()))
    m = len(first.rounds[0].losses_after.losses)
    k = len(first.rounds[0].mixture.p)
    eval_names = list(eval_names) if eval_names else [f"skill_{j}" for j in range(m)]
    train_names = list(train_names) if train_names else [f"skill_{i}" for i in range(k)]
    written: Dict[str, List[Path]] = {'series': [], 'loss_plots': [], 'mixture_plots': []}

    for label, log in logs.items():
        for j, skill in enumerate(eval_names):
            path = out_dir / f"{_slug(label)}.{_slug(skill)}.series.csv"
            with open(path, 'w', newline='', encoding='utf-8') as f:
                writer = csv.writer(f, lineterminator='\n')
                writer.writerow(['round', 'loss'])
                for t, value in enumerate(loss_series(log, j)):
                    writer.writerow([t, repr(float(value))])
            written['series'].append(path)

    for j, skill in enumerate(eval_names):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, log in logs.items():
            series = loss_series(log, j)
            ax.plot(range(len(series)), series, marker='o', label=label)
        ax.set_title(f"Validation loss on {skill}")
        ax.set_xlabel("round (losses at round boundaries)")
        ax.set_ylabel("loss")
        ax.legend()
        path = out_dir / f"loss_{_slug(skill)}.svg"
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
        written['loss_plots'].append(path)

    for label, log in logs.items():
        weights = log.mixtures()
        rounds = [record.round for record in log.rounds]
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, skill in enumerate(train_names):
            ax.plot(rounds, weights[:, i], marker='o', label=skill)
        ax.set_title(f"Weight per skill: {label}")
        ax.set_xlabel("round")
        ax.set_ylabel("mixture weight")
        ax.set_ylim(0, 1)
        ax.legend()
        path = out_dir / f"mixture_{_slug(label)}.svg"
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
        written['mixture_plots'].append(path)

    logger.info(f"Wrote {sum(len(v) for v in written.values())} plot files to {out_dir}")
    return written
