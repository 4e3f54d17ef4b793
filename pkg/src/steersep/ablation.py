"""Ablation grids: each cell is a full config trained under a shared seed and budget."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .audio import Corpus, MixtureSample
from .config import RunConfig, SpeakerAugConfig
from .evaluation import build_sv_trials, evaluate_separation, evaluate_sv
from .models import AblationRow, GlobalKind, LocalKind, Mode, SpeakerLoss, SteeringReg
from .output import write_csv
from .speaker import MetricError
from .trainer import Trainer

logger = logging.getLogger(__name__)

ABLATION_FIELDS = ["name", "config_hash", "si_snri", "auc"]
SUMMARIZER_WINDOW = 16


class Grid(str, Enum):
    SUMMARIZER = "summarizer"
    TABLE = "table"
    SV = "sv"


@dataclass
class Cell:
    name: str
    config: RunConfig


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(config.to_json().encode("utf-8")).hexdigest()


def _with(config: RunConfig, **sections) -> RunConfig:
    """Copy ``config`` with per-section field updates, re-validated."""
    document = config.model_dump(by_alias=True)
    for section, update in sections.items():
        document[section].update(update)
    return RunConfig.model_validate(document)


def summarizer_grid(config: RunConfig) -> list[Cell]:
    """Bi-LSTM / self-attention permuted as intra- and inter-segment summarizers."""
    cells = []
    for local in (LocalKind.RNN, LocalKind.SELF_ATTN):
        for globl in (GlobalKind.SELF_ATTN, GlobalKind.RNN):
            cells.append(Cell(
                f"local={local.value},global={globl.value}",
                _with(
                    config,
                    model={"local_kind": local, "global_kind": globl,
                           "window": SUMMARIZER_WINDOW},
                    train={"mode": Mode.AUTOPILOT, "speaker_aug": None,
                           "speaker_aug_epochs": 0, "finetune_epochs": 0},
                ),
            ))
    return cells


def table_grid(config: RunConfig) -> list[Cell]:
    """The online baseline (noise, speaker augmentation, reg loss) and four ablations."""
    aug = config.train.speaker_aug or SpeakerAugConfig()
    baseline = _with(
        config,
        train={
            "mode": Mode.ONLINE,
            "steering_reg": SteeringReg.NOISE,
            "speaker_loss": SpeakerLoss.INCE,
            "use_reg_loss": True,
            "speaker_aug": aug.model_dump(),
            "speaker_aug_epochs": max(1, config.train.speaker_aug_epochs),
        },
    )
    return [
        Cell("baseline", baseline),
        Cell("dropout", _with(baseline, train={"steering_reg": SteeringReg.DROPOUT})),
        Cell("no-noise", _with(baseline, train={"steering_reg": SteeringReg.NONE})),
        Cell("no-speaker-aug",
             _with(baseline, train={"speaker_aug": None, "speaker_aug_epochs": 0})),
        Cell("no-reg", _with(baseline, train={"use_reg_loss": False})),
    ]


def sv_grid(config: RunConfig) -> list[Cell]:
    """Tune-InCE steering against the token-id embedding baseline."""
    online = _with(config, train={"mode": Mode.ONLINE})
    return [
        Cell("ince", _with(online, train={"speaker_loss": SpeakerLoss.INCE})),
        Cell("token_id",
             _with(online, train={"speaker_loss": SpeakerLoss.TOKEN_ID, "use_reg_loss": False})),
    ]


GRIDS = {Grid.SUMMARIZER: summarizer_grid, Grid.TABLE: table_grid, Grid.SV: sv_grid}


@dataclass
class Datasets:
    corpus: Corpus
    validation: list[MixtureSample]
    test: list[MixtureSample]


def desk_datasets(config: RunConfig) -> Datasets:
    """Synthesize the corpus and its fixed validation/test mixtures in memory.

    Raises:
        ValueError: If fewer than two held-out speakers are configured.
    """
    cc = config.corpus
    if cc.heldout_speakers < 2:
        raise ValueError("Ablations need at least two held-out speakers for test mixtures.")
    corpus = Corpus.synthesize(cc)
    seconds = min(config.train.utterance_seconds, cc.utterance_seconds)
    validation = corpus.fixed_mixtures(corpus.train_speakers, cc.validation_mixtures, seconds,
                                       cc.sir_range, cc.seed + 1, "val")
    test = corpus.fixed_mixtures(corpus.heldout_speakers, max(cc.test_mixtures, 1), seconds,
                                 cc.sir_range, cc.seed + 2, "test")
    return Datasets(corpus, validation, test)


def run_cell(
    cell: Cell, data: Datasets, out_dir: Path, workers: int = 1, show_progress: bool = False,
    with_sv: bool = False,
) -> AblationRow:
    trainer = Trainer(cell.config, data.corpus, data.validation, out_dir / cell.name,
                      workers=workers, show_progress=show_progress)
    model = trainer.fit().model
    mode = cell.config.train.mode
    if mode == Mode.OFFLINE:
        mode = Mode.ONLINE
    report = evaluate_separation(model, data.test, [mode])
    si_snri = float(np.mean([r.si_snri for r in report.rows]))
    auc = None
    if with_sv:
        trials = build_sv_trials(data.corpus, data.corpus.heldout_speakers,
                                 cell.config.eval.sv_trials, cell.config.eval.seed,
                                 cell.config.eval.sv_clean, cell.config.corpus.sir_range)
        try:
            auc = evaluate_sv(model, data.corpus, trials).roc.auc
        except MetricError as e:
            logger.warning("No AUC for %s: %s", cell.name, e)
    logger.info("Cell %s: SI-SNRi %.2f dB", cell.name, si_snri)
    return AblationRow(name=cell.name, config_hash=config_hash(cell.config), si_snri=si_snri,
                       auc=auc)


def ablate(
    config: RunConfig,
    grid: Grid,
    out_dir: Path,
    workers: int = 1,
    show_progress: bool = False,
    data: Datasets | None = None,
) -> list[AblationRow]:
    """Train and score every cell of ``grid``; writes ``ablation.csv`` and each cell's run."""
    grid = Grid(grid)
    out_dir = Path(out_dir)
    data = data or desk_datasets(config)
    rows = [
        run_cell(cell, data, out_dir, workers, show_progress, with_sv=grid == Grid.SV)
        for cell in GRIDS[grid](config)
    ]
    write_csv(
        out_dir / "ablation.csv",
        ABLATION_FIELDS,
        [
            {"name": r.name, "config_hash": r.config_hash, "si_snri": repr(r.si_snri),
             "auc": "" if r.auc is None else repr(r.auc)}
            for r in rows
        ],
    )
    return rows
