"""Training loop: phases, per-sample graphs on worker replicas, checkpoints."""

from __future__ import annotations

import contextvars
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from .attention import cross_attention
from .audio import Corpus, MixtureSample
from .checkpoint import atomic_write, load_container, save_container
from .config import CorpusConfig, ModelConfig, RunConfig
from .model import SPEAKER_SPACE, STIMULI_SPACE, SeparationModel
from .models import EpochRecord, Mode, PermutationAssignment, PermutationMethod, Phase, SpeakerLoss
from .objective import joint_loss, reconstruction_loss, speaker_assign, upit_assign
from .optim import Adam, clip_grad_norm
from .output import write_csv
from .speaker import ema_update, reg_loss, token_embedding_baseline, tune_ince_loss
from .tensor import NumericalError, Tensor, no_grad, precision

logger = logging.getLogger(__name__)

METRICS_FIELDS = ["epoch", "phase", "train_loss", "val_loss", "val_si_snr"]


@dataclass
class PhasePlan:
    phase: Phase
    mode: Mode
    epochs: int


@dataclass
class TrainingSample:
    """One prepared example; every random draw is made before the graph is built."""

    index: int
    mixture: MixtureSample
    rows: list[int]
    seed: int
    enrollments: list[np.ndarray] = field(default_factory=list)


@dataclass
class SampleResult:
    loss: float
    grads: dict[str, np.ndarray]
    ema: list[tuple[int, np.ndarray]]
    agreement: bool | None = None


@dataclass
class TrainResult:
    records: list[EpochRecord]
    stopped_early: bool
    model: SeparationModel


def phase_plan(config: RunConfig) -> list[PhasePlan]:
    """Warm-up (autopilot), main, speaker augmentation, stimuli fine-tune; empty phases dropped."""
    train = config.train
    steered = Mode.ONLINE if train.mode == Mode.AUTOPILOT else train.mode
    plan = [
        PhasePlan(Phase.WARMUP, Mode.AUTOPILOT, train.warmup_epochs),
        PhasePlan(Phase.MAIN, train.mode, train.max_epochs),
        PhasePlan(Phase.SPEAKER_AUG, Mode.ONLINE,
                  train.speaker_aug_epochs if train.speaker_aug else 0),
        PhasePlan(Phase.FINETUNE, steered, train.finetune_epochs),
    ]
    return [p for p in plan if p.epochs > 0]


def trainable_names(model: SeparationModel, plan: PhasePlan) -> set[str]:
    names = [name for name, _ in model.named_parameters()]
    if plan.phase == Phase.SPEAKER_AUG:
        return {n for n in names if n.startswith(SPEAKER_SPACE)}
    if plan.phase == Phase.FINETUNE:
        return {n for n in names if n.startswith(STIMULI_SPACE)}
    if plan.mode == Mode.AUTOPILOT:
        return {n for n in names if not n.startswith(SPEAKER_SPACE)}
    return set(names)


class Trainer:
    """Owns the model, optimizer, speaker table and every piece of mutable training state.

    Args:
        config: Resolved run configuration.
        corpus: Training corpus (training speakers index the speaker table).
        validation: Fixed validation mixtures of training speakers.
        out_dir: Where config.json, metrics.csv and the checkpoint go.
        workers: Number of replicas evaluating samples of a batch in parallel.
        show_progress: Show a transient progress bar.
        aug_corpus: External speakers for the speaker augmentation phase.
    """

    def __init__(
        self,
        config: RunConfig,
        corpus: Corpus,
        validation: list[MixtureSample],
        out_dir: Path,
        workers: int = 1,
        show_progress: bool = True,
        aug_corpus: Corpus | None = None,
    ):
        self.config = config
        self.corpus = corpus
        self.validation = validation
        self.out_dir = Path(out_dir)
        self.workers = max(1, workers)
        self.show_progress = show_progress
        if config.train.speaker_aug is not None and aug_corpus is None:
            aug_corpus = Corpus.synthesize(
                CorpusConfig(
                    seed=config.train.speaker_aug.seed,
                    sample_rate=corpus.sample_rate,
                    num_speakers=config.train.speaker_aug.num_speakers,
                    heldout_speakers=0,
                    utterances_per_speaker=config.train.speaker_aug.utterances_per_speaker,
                    utterance_seconds=config.corpus.utterance_seconds,
                ),
                speaker_offset=max(corpus.utterances) + 1,
            )
        self.aug_corpus = aug_corpus
        speakers = list(corpus.train_speakers) + (aug_corpus.train_speakers if aug_corpus else [])
        self.row_of = {sid: k for k, sid in enumerate(speakers)}
        self.dtype = np.dtype(config.train.precision)
        with precision(self.dtype):
            self.model = SeparationModel(config.model, len(speakers), dtype=self.dtype)
        self.model.speaker_table.epsilon = config.train.epsilon
        self.optimizer = Adam(
            self.model.parameters(), lr=config.train.lr, weight_decay=config.train.weight_decay
        )
        self.plan = phase_plan(config)
        self.epoch = 0
        self.best_val = float("inf")
        self.stale = 0
        self.records: list[EpochRecord] = []
        self._agreements: list[bool] = []
        self._replicas: list[SeparationModel] | None = None

    # phases -------------------------------------------------------------

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.plan)

    def plan_at(self, epoch: int) -> tuple[PhasePlan, int]:
        """Phase of a global epoch index and the epoch offset inside it."""
        start = 0
        for p in self.plan:
            if epoch < start + p.epochs:
                return p, epoch - start
            start += p.epochs
        raise IndexError(f"Epoch {epoch} is beyond the {start}-epoch plan.")

    def _next_phase_start(self, epoch: int) -> int:
        start = 0
        for p in self.plan:
            start += p.epochs
            if epoch < start:
                return start
        return start

    # data ---------------------------------------------------------------

    def _offline_enrollments(
        self, corpus: Corpus, sample: MixtureSample, pool: list[int], rng: np.random.Generator
    ) -> list[np.ndarray]:
        seconds = self.config.train.utterance_seconds
        out = []
        for sid in sample.speaker_ids:
            utt = int(rng.integers(0, len(corpus.utterances[sid])))
            sir_range = self.config.train.sir_range
            enroll = corpus.online_mixture(sid, utt, pool, seconds, sir_range, rng)
            out.append(enroll.mixture)
        return out

    def prepare_epoch(self, epoch: int) -> list[TrainingSample]:
        """Draw the mixtures of one epoch from ``default_rng([seed, epoch])``."""
        plan, _ = self.plan_at(epoch)
        train = self.config.train
        rng = np.random.default_rng([train.seed, epoch])
        corpus = self.aug_corpus if plan.phase == Phase.SPEAKER_AUG else self.corpus
        pool = list(corpus.train_speakers)
        pairs = [(s, u) for s in pool for u in range(len(corpus.utterances[s]))]
        if train.mixtures_per_epoch is not None:
            picks = rng.integers(0, len(pairs), size=train.mixtures_per_epoch)
        else:
            picks = rng.permutation(len(pairs))
        samples = []
        for index, k in enumerate(picks):
            speaker, utt = pairs[int(k)]
            mixture = corpus.online_mixture(
                speaker, utt, pool, train.utterance_seconds, train.sir_range, rng
            )
            enrollments = []
            if plan.mode == Mode.OFFLINE and plan.phase != Phase.SPEAKER_AUG:
                enrollments = self._offline_enrollments(corpus, mixture, pool, rng)
            samples.append(
                TrainingSample(
                    index=index,
                    mixture=mixture,
                    rows=[self.row_of[s] for s in mixture.speaker_ids],
                    seed=int(rng.integers(0, 2**31 - 1)),
                    enrollments=enrollments,
                )
            )
        return samples

    # one sample ---------------------------------------------------------

    def _assignment(
        self, model: SeparationModel, sample: TrainingSample, references, estimates, z, plan
    ) -> tuple[PermutationAssignment, bool | None]:
        train = self.config.train
        if plan.mode == Mode.OFFLINE:
            identity = tuple(range(len(references)))
            return PermutationAssignment(
                mapping=identity, cost=0.0, method=PermutationMethod.UPIT_SPEAKER
            ), None
        pit = upit_assign(references, [e.data for e in estimates])
        use_speaker = (
            plan.mode != Mode.AUTOPILOT
            and train.speaker_loss == SpeakerLoss.INCE
            and self.epoch >= train.pit_switch_epoch
        )
        if not use_speaker:
            return pit, None
        table = model.speaker_table
        by_speaker = speaker_assign(z, sample.rows, table.E.data, float(table.alpha.data[0]))
        return by_speaker, by_speaker.mapping == pit.mapping

    def _speaker_terms(self, model: SeparationModel, z, rows: list[int]):
        train = self.config.train
        if train.speaker_loss == SpeakerLoss.TOKEN_ID:
            return token_embedding_baseline(z, rows, model.speaker_table), None
        speaker = tune_ince_loss(z, rows, model.speaker_table)
        reg = reg_loss(model.speaker_table, rows, train.gamma) if train.use_reg_loss else None
        return speaker, reg

    def run_sample(self, model: SeparationModel, sample: TrainingSample, plan: PhasePlan):
        """Forward and backward one example on ``model`` (a replica).

        Returns:
            The scalar loss value, per-parameter gradients and pending EMA updates.
        """
        train = self.config.train
        rng = np.random.default_rng(sample.seed)
        mix = sample.mixture
        x = Tensor(mix.mixture.astype(self.dtype))
        references = mix.references

        if plan.phase == Phase.SPEAKER_AUG:
            with no_grad():
                generic = model.front_end(x)[2]
            generic = Tensor(generic.data)
            vectors, _ = cross_attention(generic, model.speaker(generic), model.speaker.cross)
            z = [v.z for v in vectors]
            table = model.speaker_table
            assignment = speaker_assign(
                np.stack([t.data for t in z]), sample.rows, table.E.data,
                float(table.alpha.data[0]),
            )
            rows = [sample.rows[assignment.mapping[j]] for j in range(len(z))]
            speaker, reg = self._speaker_terms(model, z, rows)
            loss = joint_loss(None, speaker, reg, train.lambda_)
            agreement = None
        else:
            enrollment = None
            if plan.mode == Mode.OFFLINE:
                enrollment = [
                    model.enroll(Tensor(e.astype(self.dtype))) for e in sample.enrollments
                ]
            out = model.run_spaces(
                x, plan.mode, enrollment, train.steering_reg, training=True, rng=rng
            )
            z_clean = None
            if out.steering is not None:
                z_clean = np.stack([v.clean.data for v in out.steering])
            assignment, agreement = self._assignment(
                model, sample, references, out.estimates, z_clean, plan
            )
            separation = reconstruction_loss(references, out.estimates, assignment)
            speaker = reg = None
            rows = [sample.rows[assignment.mapping[j]] for j in range(len(out.estimates))]
            if out.steering is not None:
                z = [v.clean for v in out.steering]
                speaker, reg = self._speaker_terms(model, z, rows)
            loss = joint_loss(separation, speaker, reg, train.lambda_)

        value = loss.item()
        if not np.isfinite(value):
            return SampleResult(loss=value, grads={}, ema=[], agreement=agreement)
        loss.backward()
        grads = {name: p.grad for name, p in model.named_parameters() if p.grad is not None}
        model.zero_grad()
        ema = []
        if train.speaker_loss == SpeakerLoss.INCE and plan.mode != Mode.AUTOPILOT:
            source = vectors if plan.phase == Phase.SPEAKER_AUG else out.steering
            ema = [(rows[j], v.clean.data.copy()) for j, v in enumerate(source)]
        return SampleResult(loss=value, grads=grads, ema=ema, agreement=agreement)

    # batches ------------------------------------------------------------

    def _replica_pool(self) -> list[SeparationModel]:
        if self._replicas is None:
            self._replicas = [self.model.replicate() for _ in range(self.workers)]
        return self._replicas

    def _evaluate_batch(self, batch: list[TrainingSample], plan: PhasePlan) -> list[SampleResult]:
        replicas = self._replica_pool()
        if self.workers == 1:
            return [self.run_sample(replicas[0], s, plan) for s in batch]
        results: list[SampleResult | None] = [None] * len(batch)
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for start in range(0, len(batch), self.workers):
                chunk = batch[start : start + self.workers]
                futures = [
                    pool.submit(
                        contextvars.copy_context().run, self.run_sample, replicas[k], s, plan
                    )
                    for k, s in enumerate(chunk)
                ]
                for k, future in enumerate(futures):
                    results[start + k] = future.result()
        return results

    def _dump_nan(self, batch_id: int, batch: list[TrainingSample]) -> None:
        dump = {
            "epoch": self.epoch,
            "batch": batch_id,
            "speaker_ids": [s.mixture.speaker_ids for s in batch],
            "sir_db": [s.mixture.sir_db for s in batch],
        }
        atomic_write(self.out_dir / "nan_dump.json", json.dumps(dump, indent=2))

    def train_batch(self, batch_id: int, batch: list[TrainingSample], plan: PhasePlan) -> float:
        """Mean-reduce per-sample gradients in sample order, clip, step, then apply EMA.

        Raises:
            NumericalError: If any sample's loss is not finite.
        """
        results = self._evaluate_batch(batch, plan)
        losses = [r.loss for r in results]
        if not all(np.isfinite(losses)):
            self._dump_nan(batch_id, batch)
            raise NumericalError(
                f"Non-finite loss in epoch {self.epoch}, batch {batch_id}; see nan_dump.json."
            )
        trainable = trainable_names(self.model, plan)
        params = dict(self.model.named_parameters())
        for name, param in params.items():
            parts = [r.grads[name] for r in results if name in r.grads]
            if not parts or name not in trainable:
                param.grad = None
                continue
            total = parts[0].copy()
            for g in parts[1:]:
                total += g
            param.grad = total / len(results)
        clip_grad_norm(params.values(), self.config.train.clip_l2)
        self.optimizer.step(trainable)
        self.optimizer.zero_grad()
        for r in results:
            for row, z in r.ema:
                ema_update(self.model.speaker_table, z, row)
        self._agreements.extend(r.agreement for r in results if r.agreement is not None)
        return float(np.mean(losses))

    # validation ---------------------------------------------------------

    def validate(self, plan: PhasePlan) -> tuple[float, float]:
        """Negative and positive mean u-PIT SI-SNR over the fixed validation mixtures."""
        mode = Mode.ONLINE if plan.mode == Mode.OFFLINE else plan.mode
        scores = []
        for sample in self.validation:
            out = self.model.separate(sample.mixture.astype(self.dtype), mode)
            assignment = upit_assign(sample.references, [e.data for e in out.estimates])
            scores.append(-assignment.cost)
        mean = float(np.mean(scores)) if scores else 0.0
        return -mean, mean

    # epochs -------------------------------------------------------------

    def _progress(self) -> Progress:
        return Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            transient=True,
            disable=not self.show_progress,
        )

    def run_epoch(self) -> EpochRecord:
        plan, _ = self.plan_at(self.epoch)
        samples = self.prepare_epoch(self.epoch)
        size = self.config.train.batch_size
        batches = [samples[i : i + size] for i in range(0, len(samples), size)]
        self._agreements = []
        losses = []
        with precision(self.dtype), self._progress() as progress:
            task = progress.add_task(f"epoch {self.epoch} ({plan.phase.value})", total=len(batches))
            for batch_id, batch in enumerate(batches):
                losses.append(self.train_batch(batch_id, batch, plan))
                progress.advance(task)
        if self._agreements:
            rate = sum(self._agreements) / len(self._agreements)
            logger.info("Speaker/u-PIT assignment agreement %.3f", rate)
        with precision(self.dtype):
            val_loss, val_si_snr = self.validate(plan)
        record = EpochRecord(
            epoch=self.epoch,
            phase=plan.phase,
            train_loss=float(np.mean(losses)) if losses else 0.0,
            val_loss=val_loss,
            val_si_snr=val_si_snr,
        )
        logger.info(
            "epoch %d %s train %.4f val %.4f (%.2f dB)",
            record.epoch, record.phase.value, record.train_loss, record.val_loss, val_si_snr,
        )
        return record

    def fit(self) -> TrainResult:
        """Run every remaining epoch of the phase plan, checkpointing after each one."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        atomic_write(self.out_dir / "config.json", self.config.to_json())
        stopped_early = False
        while self.epoch < self.total_epochs:
            plan, offset = self.plan_at(self.epoch)
            if offset == 0:
                self.best_val, self.stale = float("inf"), 0
            record = self.run_epoch()
            self.records.append(record)
            if record.val_loss < self.best_val:
                self.best_val, self.stale = record.val_loss, 0
            else:
                self.stale += 1
            self.epoch += 1
            if self.stale >= self.config.train.patience and plan.phase != Phase.SPEAKER_AUG:
                logger.info("Early stop in %s after %d stale epochs", plan.phase.value, self.stale)
                stopped_early = True
                self.epoch = self._next_phase_start(self.epoch - 1)
                self.stale = 0
            self.write_metrics()
            self.save_checkpoint()
        return TrainResult(records=self.records, stopped_early=stopped_early, model=self.model)

    # persistence --------------------------------------------------------

    def write_metrics(self) -> None:
        rows = [
            {
                "epoch": r.epoch,
                "phase": r.phase.value,
                "train_loss": repr(r.train_loss),
                "val_loss": repr(r.val_loss),
                "val_si_snr": repr(r.val_si_snr),
            }
            for r in self.records
        ]
        write_csv(self.out_dir / "metrics.csv", METRICS_FIELDS, rows)

    def save_checkpoint(self) -> None:
        """Parameters and Adam moments to checkpoint.bin; counters to checkpoint.json."""
        tensors = dict(self.model.state_dict())
        tensors.update(self.optimizer.state_dict())
        save_container(self.out_dir / "checkpoint.bin", tensors)
        meta = {
            "epoch": self.epoch,
            "optimizer_steps": self.optimizer.steps,
            "best_val": self.best_val if np.isfinite(self.best_val) else None,
            "stale": self.stale,
            "rng": {"seed": self.config.train.seed, "next_epoch": self.epoch},
            "num_speakers": self.model.speaker_table.num_speakers,
            "precision": self.config.train.precision,
            "records": [r.model_dump(mode="json") for r in self.records],
            "model": self.config.model.model_dump(mode="json"),
        }
        atomic_write(self.out_dir / "checkpoint.json", json.dumps(meta, indent=2))

    def resume(self, directory: Path | None = None) -> None:
        """Restore parameters, moments and counters written by :meth:`save_checkpoint`.

        The container stores float32, so a float64 run continues from rounded
        parameters and moments and is not bit-identical to an uninterrupted run.

        Raises:
            FileNotFoundError: If the checkpoint is missing.
        """
        directory = Path(directory or self.out_dir)
        meta_path = directory / "checkpoint.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"No checkpoint to resume in {directory}")
        meta = json.loads(meta_path.read_text())
        tensors = load_container(directory / "checkpoint.bin")
        names = {name for name, _ in self.model.named_parameters()}
        self.model.load_state_dict({k: v for k, v in tensors.items() if k in names})
        self.optimizer.load_state_dict(tensors, meta["optimizer_steps"])
        self.epoch = meta["epoch"]
        self.best_val = meta["best_val"] if meta["best_val"] is not None else float("inf")
        self.stale = meta["stale"]
        self.records = [EpochRecord.model_validate(r) for r in meta["records"]]
        self._replicas = None
        if self.dtype != np.float32:
            logger.warning(
                "Resuming a %s run from float32 checkpoint values; results will differ "
                "from an uninterrupted run", self.dtype.name,
            )
        logger.info("Resumed at epoch %d from %s", self.epoch, directory)


def load_model(checkpoint: Path) -> SeparationModel:
    """Rebuild a model from checkpoint.bin and its checkpoint.json sidecar.

    Raises:
        FileNotFoundError: If either file is missing.
    """
    checkpoint = Path(checkpoint)
    meta_path = checkpoint.with_suffix(".json")
    for path in (checkpoint, meta_path):
        if not path.exists():
            raise FileNotFoundError(f"Checkpoint file not found: {path}")
    meta = json.loads(meta_path.read_text())
    config = ModelConfig.model_validate(meta["model"])
    dtype = np.dtype(meta.get("precision", "float32"))
    with precision(dtype):
        model = SeparationModel(config, meta["num_speakers"], dtype=dtype)
    tensors = load_container(checkpoint)
    names = {name for name, _ in model.named_parameters()}
    model.load_state_dict({k: v for k, v in tensors.items() if k in names})
    return model
