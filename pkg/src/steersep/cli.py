import contextlib
import json
import logging
from collections.abc import Iterator
from pathlib import Path

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from .ablation import Grid, ablate
from .audio import Corpus, load_mixture, read_wav, write_corpus, write_wav
from .checkpoint import atomic_write
from .config import ConfigError, RunConfig, load_config
from .cost import cost_row, sweep, write_cost_csv
from .evaluation import (
    build_sv_trials,
    evaluate_separation,
    evaluate_sv,
    export_attention,
    write_separation_csv,
    write_sv_outputs,
)
from .model import SeparationModel
from .models import GlobalKind, MixtureManifest, Mode, SvTrial
from .output import (
    print_ablation_table,
    print_cost_table,
    print_epochs,
    print_separation_table,
    print_summary,
    print_sv_report,
)
from .tensor import NumericalError, Tensor, no_grad
from .trainer import Trainer, load_model

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4

OVERRIDES = {"ignore_unknown_options": True, "allow_extra_args": True}

console = Console()


@contextlib.contextmanager
def _errors(verbose: bool) -> Iterator[None]:
    """Print any failure as ``Error: ...`` and exit with its code."""
    try:
        yield
    except SystemExit:
        raise
    except Exception as e:
        console.print(f"[red]Error:[/red] {e}")
        if verbose:
            import traceback

            console.print(traceback.format_exc())
        if isinstance(e, ConfigError):
            raise SystemExit(EXIT_CONFIG)
        if isinstance(e, FileNotFoundError):
            raise SystemExit(EXIT_MISSING)
        if isinstance(e, NumericalError):
            raise SystemExit(EXIT_NUMERICAL)
        raise SystemExit(1)


def _config(path: Path | None, overrides: tuple[str, ...], seed: int | None) -> RunConfig:
    extra = list(overrides)
    if seed is not None:
        extra += [f"train.seed={seed}", f"model.seed={seed}", f"eval.seed={seed}"]
    return load_config(path, extra)


def _emit(data) -> None:
    click.echo(json.dumps(data, indent=2, default=str))


def _validation(config: RunConfig, corpus: Corpus, corpus_dir: Path | None) -> list:
    if corpus_dir is not None and (corpus_dir / "validation.json").exists():
        manifest = MixtureManifest.model_validate_json(
            (corpus_dir / "validation.json").read_text()
        )
        return [load_mixture(r, corpus_dir) for r in manifest.mixtures]
    cc = config.corpus
    seconds = min(config.train.utterance_seconds, cc.utterance_seconds)
    return corpus.fixed_mixtures(corpus.train_speakers, cc.validation_mixtures, seconds,
                                 cc.sir_range, cc.seed + 1, "val")


def _corpus(config: RunConfig, corpus_dir: Path | None) -> Corpus:
    if corpus_dir is None:
        return Corpus.synthesize(config.corpus)
    return Corpus.from_manifest(corpus_dir / "corpus.json")


config_option = click.option(
    "-c", "--config", "config_path", type=click.Path(path_type=Path),
    help="Run configuration (JSON). Omitted sections use defaults.",
)
out_option = click.option(
    "-o", "--out", type=click.Path(path_type=Path), required=True,
    help="Output directory.",
)
seed_option = click.option("--seed", type=int, help="Override every seed in the config.")
json_option = click.option("--json", "as_json", is_flag=True, help="Print JSON instead of tables.")
overrides_argument = click.argument("overrides", nargs=-1, type=click.UNPROCESSED)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Show debug logs and tracebacks.")
@click.version_option(version="0.1.0")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """Speaker-steered speech separation workbench.

    Config keys can be overridden after any command as --section.key=value.

    Examples:

        steersep synth -o data

        steersep train -o run --corpus data --train.max_epochs=5

        steersep cost --sweep -o cost
    """
    ctx.obj = {"verbose": verbose}
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


@cli.command(context_settings=OVERRIDES)
@config_option
@out_option
@seed_option
@json_option
@overrides_argument
@click.pass_context
def synth(ctx, config_path, out, seed, as_json, overrides) -> None:
    """Render the synthetic corpus, validation/test mixtures and enrollments."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, seed)
        paths = write_corpus(config.corpus, out)
        atomic_write(out / "config.json", config.to_json())
        if as_json:
            _emit({k: str(v) for k, v in paths.items()})
            return
        for name, path in paths.items():
            console.print(f"[bold]{name}:[/bold] {path}")


@cli.command(context_settings=OVERRIDES)
@config_option
@out_option
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path),
              help="Directory written by 'synth'. Default: synthesize in memory.")
@click.option("--resume", is_flag=True, help="Continue from the checkpoint in --out.")
@click.option("-w", "--workers", type=int, default=1, show_default=True,
              help="Replicas evaluating the samples of a batch in parallel.")
@seed_option
@json_option
@overrides_argument
@click.pass_context
def train(ctx, config_path, out, corpus_dir, resume, workers, seed, as_json, overrides) -> None:
    """Train through warm-up, main, speaker-augmentation and fine-tune phases."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, seed)
        corpus = _corpus(config, corpus_dir)
        trainer = Trainer(config, corpus, _validation(config, corpus, corpus_dir), out,
                          workers=workers, show_progress=not as_json)
        if resume:
            trainer.resume()
        result = trainer.fit()
        if as_json:
            _emit([r.model_dump(mode="json") for r in result.records])
            return
        print_epochs(result.records, console)
        if result.stopped_early:
            console.print("[yellow]Stopped early on validation patience.[/yellow]")


@cli.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True,
              help="checkpoint.bin written by 'train'.")
@click.option("-i", "--in", "input_path", type=click.Path(path_type=Path), required=True,
              help="Mixture WAV.")
@click.option("-m", "--mode", type=click.Choice([m.value for m in Mode]), default="online",
              show_default=True)
@click.option("--enroll", type=click.Path(path_type=Path), multiple=True,
              help="Enrollment WAV, one per source (offline mode).")
@out_option
@json_option
@click.pass_context
def separate(ctx, checkpoint, input_path, mode, enroll, out, as_json) -> None:
    """Write one WAV per source plus the attention CSVs."""
    with _errors(ctx.obj["verbose"]):
        model = load_model(checkpoint)
        dtype = model.encoder.weight.dtype
        mixture, sample_rate = read_wav(input_path)
        enrollment = None
        if enroll:
            with no_grad():
                enrollment = [
                    model.enroll(Tensor(read_wav(path)[0].astype(dtype))) for path in enroll
                ]
        output = model.separate(mixture, Mode(mode), enrollment)
        written = []
        for j, estimate in enumerate(output.estimates):
            path = out / f"source{j}.wav"
            write_wav(path, estimate.data, sample_rate)
            written.append(path)
        written += export_attention(model, output, sample_rate, out)
        if as_json:
            _emit([str(p) for p in written])
            return
        for path in written:
            console.print(f"[green]wrote[/green] {path}")


@cli.command("eval-sep", context_settings=OVERRIDES)
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", type=click.Path(path_type=Path), required=True,
              help="Mixture manifest (test.json) written by 'synth'.")
@click.option("-m", "--mode", "modes", type=click.Choice([m.value for m in Mode]),
              multiple=True, help="Modes to evaluate. Default: the config's eval modes.")
@config_option
@out_option
@json_option
@click.option("--save-estimates", is_flag=True, help="Also write the estimated sources.")
@overrides_argument
@click.pass_context
def eval_sep(
    ctx, checkpoint, manifest, modes, config_path, out, as_json, save_estimates, overrides
) -> None:
    """SI-SNRi and SDRi per mixture and mode; writes separation.csv."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, None)
        if not manifest.exists():
            raise FileNotFoundError(f"Mixture manifest not found: {manifest}")
        model = load_model(checkpoint)
        document = MixtureManifest.model_validate_json(manifest.read_text())
        root = manifest.parent
        samples = [load_mixture(r, root) for r in document.mixtures]
        enrollments = {k: load_mixture(r, root) for k, r in document.enrollments.items()}
        report = evaluate_separation(
            model, samples, [Mode(m) for m in modes] or config.eval.modes, enrollments,
            out_dir=out / "estimates" if save_estimates else None,
        )
        write_separation_csv(report.rows, out / "separation.csv")
        if as_json:
            _emit({m.value: v for m, v in report.means().items()})
            return
        print_separation_table(report.rows, console)


@cli.command("eval-sv", context_settings=OVERRIDES)
@click.option("--checkpoint", type=click.Path(path_type=Path), required=True)
@click.option("--corpus", "corpus_dir", type=click.Path(path_type=Path), required=True,
              help="Directory written by 'synth'; trials use its held-out speakers.")
@click.option("--trials", type=click.Path(path_type=Path),
              help="Trial list (JSON). Default: built from the config and saved to --out.")
@config_option
@out_option
@seed_option
@json_option
@overrides_argument
@click.pass_context
def eval_sv(
    ctx, checkpoint, corpus_dir, trials, config_path, out, seed, as_json, overrides
) -> None:
    """Speaker verification on masked trials: ROC, AUC and EER."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, seed)
        model = load_model(checkpoint)
        corpus = Corpus.from_manifest(corpus_dir / "corpus.json")
        if trials is not None:
            if not trials.exists():
                raise FileNotFoundError(f"Trial list not found: {trials}")
            trial_list = [SvTrial.model_validate(t) for t in json.loads(trials.read_text())]
        else:
            trial_list = build_sv_trials(corpus, corpus.heldout_speakers, config.eval.sv_trials,
                                         config.eval.seed, config.eval.sv_clean,
                                         config.corpus.sir_range)
            atomic_write(out / "trials.json",
                         json.dumps([t.model_dump() for t in trial_list], indent=2))
        report = evaluate_sv(model, corpus, trial_list)
        write_sv_outputs(report, model, out)
        if as_json:
            _emit({"auc": report.roc.auc, "eer": report.roc.eer, "trials": len(trial_list)})
            return
        print_sv_report(report.roc.auc, report.roc.eer, len(trial_list), console)


@cli.command(context_settings=OVERRIDES)
@config_option
@click.option("--sweep", "do_sweep", is_flag=True,
              help="Window-length grid for GALR and DPRNN reference configs.")
@out_option
@json_option
@overrides_argument
@click.pass_context
def cost(ctx, config_path, do_sweep, out, as_json, overrides) -> None:
    """Parameter, activation-memory and FLOP estimates; writes cost.csv."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, None)
        if do_sweep:
            rows = sweep(config.cost)
        else:
            arch = "dprnn" if config.model.global_kind == GlobalKind.RNN else "galr"
            rows = [cost_row(arch, config.model, config.cost, config.train.mode)]
        write_cost_csv(rows, out / "cost.csv")
        if as_json:
            _emit([r.model_dump() for r in rows])
            return
        print_cost_table(rows, console)


@cli.command("ablate", context_settings=OVERRIDES)
@config_option
@click.option("-g", "--grid", type=click.Choice([g.value for g in Grid]), default="table",
              show_default=True, help="Which ablation grid to run.")
@out_option
@click.option("-w", "--workers", type=int, default=1, show_default=True)
@seed_option
@json_option
@overrides_argument
@click.pass_context
def ablate_cmd(ctx, config_path, grid, out, workers, seed, as_json, overrides) -> None:
    """Train every cell of an ablation grid; writes ablation.csv."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, seed)
        rows = ablate(config, Grid(grid), out, workers=workers, show_progress=not as_json)
        if as_json:
            _emit([r.model_dump() for r in rows])
            return
        print_ablation_table(rows, console)


@cli.command(context_settings=OVERRIDES)
@config_option
@click.option("--speakers", type=int, default=None,
              help="Speaker-table rows. Default: the corpus training speakers.")
@json_option
@overrides_argument
@click.pass_context
def summary(ctx, config_path, speakers, as_json, overrides) -> None:
    """List every parameter of the configured model."""
    with _errors(ctx.obj["verbose"]):
        config = _config(config_path, overrides, None)
        count = speakers if speakers is not None else config.corpus.num_speakers
        rows = SeparationModel(config.model, count, dtype=np.float32).summary()
        if as_json:
            _emit([{"name": n, "shape": list(s), "count": c} for n, s, c in rows])
            return
        print_summary(rows, console)

