import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import click

from app.config import RunConfig, flatten_config, load_run_config, write_resolved_config
from app.data import FramePeriods, Vocabulary, generate_synthetic, load_dataset, read_teacher_captions
from app.errors import CaptionError, DataError, FeatureIOError, PreconditionError, UsageError
from app.evaluation import TradeoffReport, corpus_eval, learning_curve, threshold_sweep
from app.model import AVCaptioner, load_checkpoint
from app.streaming import stream_event, write_trace
from app.training import TEACHER_CAPTIONS_FILE, VOCAB_FILE, train_student, train_teacher
from app.utilities.logger import RunLogger, create_run_logger


class CommandFailed(click.ClickException):
    """A CaptionError surfaced through click, keeping its exit code."""

    def __init__(self, error: CaptionError):
        super().__init__(error.detail)
        self.exit_code = error.exit_code


def _periods(config: RunConfig) -> FramePeriods:
    return FramePeriods(audio=config.data.audio_period, visual=config.data.visual_period)


@contextmanager
def _command_run(command: str, out_dir: Path, config: RunConfig) -> Iterator[RunLogger]:
    log = create_run_logger(command, out_dir)
    log.log_run_start(flatten_config(config))
    write_resolved_config(config, out_dir)
    try:
        yield log
    except CaptionError as exc:
        log.log_exception(exc, command)
        raise CommandFailed(exc) from exc
    except OSError as exc:
        log.log_exception(exc, command)
        raise CommandFailed(FeatureIOError(str(exc))) from exc
    finally:
        log.close()


def _load_config(config_path: Optional[Path], **overrides) -> RunConfig:
    try:
        return load_run_config(config_path, overrides)
    except CaptionError as exc:
        raise CommandFailed(exc) from exc


def _vocab_next_to(checkpoint: Path) -> Vocabulary:
    path = Path(checkpoint).parent / VOCAB_FILE
    if not path.is_file():
        raise PreconditionError(f"no {VOCAB_FILE} next to checkpoint {checkpoint}")
    return Vocabulary.load(path)


def _load_captioner(checkpoint: Path, vocab: Vocabulary) -> AVCaptioner:
    params = load_checkpoint(checkpoint, requires_grad=False)
    if params.config.vocab_size != len(vocab):
        raise DataError(
            f"checkpoint {checkpoint} has vocab_size {params.config.vocab_size} but {VOCAB_FILE} has {len(vocab)} entries"
        )
    return AVCaptioner(params)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
    help="key=value run configuration file",
)
seed_option = click.option("--seed", type=int, default=None, help="Override the run seed")
out_option = click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory")
data_option = click.option("--data", type=click.Path(file_okay=False, path_type=Path), default=None, help="Dataset directory")
checkpoint_option = click.option(
    "--checkpoint", type=click.Path(dir_okay=False, path_type=Path), required=True, help="Model checkpoint (.avck)"
)
threshold_option = click.option("--threshold", type=float, default=None, help="Detection threshold F in (0, 1)")
beam_option = click.option("--beam", type=int, default=None, help="Beam width (1 = greedy)")


@click.group()
def cli():
    """Low-latency audio-visual event captioning."""


@cli.command("gen-data")
@config_option
@out_option
@seed_option
def gen_data(config_path, out, seed):
    """Write a synthetic dataset (manifests plus feature files)."""
    config = _load_config(config_path, seed=seed, data_dir=out)
    target = Path(config.data_dir)
    if target.exists() and any(target.iterdir()):
        raise CommandFailed(UsageError(f"output directory {target} is not empty"))
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        with _command_run("gen-data", staging, config) as log:
            paths = generate_synthetic(config.data, staging)
            log.success(f"Generated {config.data.num_train} train and {config.data.num_val} val events")
        if target.exists():
            target.rmdir()
        staging.rename(target)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    for split in paths:
        click.echo(f"{split}: {target / paths[split].name}")


@cli.command("train-teacher")
@config_option
@data_option
@out_option
@seed_option
@click.option("--epochs", type=int, default=None, help="Override train.epochs")
def train_teacher_command(config_path, data, out, seed, epochs):
    """Pretrain the offline captioner on full event windows."""
    config = _load_config(config_path, seed=seed, data_dir=data, out_dir=out, **{"train.epochs": epochs})
    out_dir = Path(config.out_dir)
    with _command_run("train-teacher", out_dir, config) as log:
        dataset = load_dataset(config.data_dir, _periods(config))
        result = train_teacher(dataset, config, out_dir, log)
        log.log_summary("teacher training", {name: str(path) for name, path in result.paths.items()})
    click.echo(f"best: {result.paths['best']} (epoch {result.best_epoch})")


@cli.command("train-student")
@config_option
@data_option
@out_option
@seed_option
@click.option("--epochs", type=int, default=None, help="Override train.epochs")
@click.option(
    "--teacher", type=click.Path(dir_okay=False, path_type=Path), required=True,
    help="Teacher checkpoint; its directory must hold vocab.txt and teacher_captions.tsv",
)
@click.option("--no-distill", is_flag=True, default=False, help="Train without the distillation term")
def train_student_command(config_path, data, out, seed, epochs, teacher, no_distill):
    """Jointly train the captioner and the end detector on truncated windows."""
    overrides = {"seed": seed, "data_dir": data, "out_dir": out, "train.epochs": epochs}
    if no_distill:
        overrides["train.distill"] = False
    config = _load_config(config_path, **overrides)
    out_dir = Path(config.out_dir)
    with _command_run("train-student", out_dir, config) as log:
        vocab = _vocab_next_to(teacher)
        captions_path = teacher.parent / TEACHER_CAPTIONS_FILE
        if not captions_path.is_file():
            raise PreconditionError(f"teacher caption cache not found: {captions_path}")
        dataset = load_dataset(config.data_dir, _periods(config), vocab)
        dataset = dataset.with_teacher_captions(read_teacher_captions(captions_path))
        teacher_params = _load_captioner(teacher, vocab).params
        result = train_student(dataset, teacher_params, config, out_dir, log)
        log.log_summary("student training", {name: str(path) for name, path in result.paths.items()})
    click.echo(f"best: {result.paths['best']} (epoch {result.best_epoch})")


@cli.command()
@config_option
@data_option
@out_option
@checkpoint_option
@seed_option
@threshold_option
@beam_option
@click.option("--event", "event_id", required=True, help="Event id from either split")
def infer(config_path, data, out, checkpoint, seed, threshold, beam, event_id):
    """Stream one event and print the emitted caption."""
    config = _load_config(config_path, seed=seed, data_dir=data, out_dir=out, threshold=threshold, beam_width=beam)
    out_dir = Path(config.out_dir)
    with _command_run("infer", out_dir, config) as log:
        vocab = _vocab_next_to(checkpoint)
        captioner = _load_captioner(checkpoint, vocab)
        record = load_dataset(config.data_dir, _periods(config), vocab).find(event_id)
        emission, session = stream_event(captioner, record, config.threshold, _periods(config), config.beam_width)
        trace_path = write_trace(session, out_dir / f"trace_{event_id}.csv")
        text = vocab.decode(emission.caption)
        log.info(f"{event_id}: '{text}' at {emission.fire_time:.2f}s, latency {emission.latency_ratio:.4f}, fired={emission.fired}")
    click.echo(f"caption: {text}")
    click.echo(f"emission_time: {emission.fire_time:.2f}")
    click.echo(f"latency_ratio: {emission.latency_ratio:.4f}")
    click.echo(f"fired: {str(emission.fired).lower()}")
    click.echo(f"trace: {trace_path}")


@cli.command("eval")
@config_option
@data_option
@out_option
@checkpoint_option
@seed_option
@threshold_option
@beam_option
@click.option("--split", type=click.Choice(["train", "val"]), default="val", show_default=True)
def eval_command(config_path, data, out, checkpoint, seed, threshold, beam, split):
    """Stream a split at one threshold and write tradeoff.csv."""
    config = _load_config(config_path, seed=seed, data_dir=data, out_dir=out, threshold=threshold, beam_width=beam)
    out_dir = Path(config.out_dir)
    with _command_run("eval", out_dir, config) as log:
        vocab = _vocab_next_to(checkpoint)
        captioner = _load_captioner(checkpoint, vocab)
        records = load_dataset(config.data_dir, _periods(config), vocab).split(split)
        row = corpus_eval(captioner, records, config.threshold, _periods(config), config.beam_width, log)
        paths = TradeoffReport([row]).write(out_dir)
        log.log_failures(row.failures)
        log.log_summary("evaluation", dict(zip(["F", "latency_ratio", "bleu3", "bleu4", "word_acc", "fired_frac"], row.values())))
    click.echo(f"F={row.key} latency={row.latency_ratio:.4f} bleu3={row.bleu3:.4f} bleu4={row.bleu4:.4f} word_acc={row.word_acc:.4f}")
    click.echo(f"report: {paths['tradeoff']}")


@cli.command()
@config_option
@data_option
@out_option
@checkpoint_option
@seed_option
@beam_option
@click.option("--thresholds", default=None, help="Comma-separated F values")
@click.option(
    "--teacher", type=click.Path(dir_okay=False, path_type=Path), default=None,
    help="Captioner used for the naive truncation rows (defaults to --checkpoint)",
)
@click.option("--split", type=click.Choice(["train", "val"]), default="val", show_default=True)
def sweep(config_path, data, out, checkpoint, seed, beam, thresholds, teacher, split):
    """Evaluate several thresholds plus the naive truncation baseline."""
    config = _load_config(config_path, seed=seed, data_dir=data, out_dir=out, beam_width=beam, thresholds=thresholds)
    out_dir = Path(config.out_dir)
    with _command_run("sweep", out_dir, config) as log:
        vocab = _vocab_next_to(checkpoint)
        captioner = _load_captioner(checkpoint, vocab)
        baseline = _load_captioner(teacher, vocab) if teacher is not None else None
        records = load_dataset(config.data_dir, _periods(config), vocab).split(split)
        report = threshold_sweep(captioner, records, config.thresholds, _periods(config), config.beam_width, baseline, log)
        paths = report.write(out_dir)
        log.log_failures(report.failures)
        log.success(f"Wrote {len(report.rows)} threshold rows and {len(report.naive_rows)} naive rows")
    for row in report.rows:
        click.echo(f"F={row.key} latency={row.latency_ratio:.4f} bleu4={row.bleu4:.4f}")
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


@cli.command()
@click.option("--history", type=click.Path(dir_okay=False, path_type=Path), required=True, help="History CSV from training")
@out_option
def curve(history, out):
    """Summarise a training history and fit the latency trend."""
    try:
        result = learning_curve(history)
    except CaptionError as exc:
        raise CommandFailed(exc) from exc
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.frame().to_csv(out / "curve.csv", index=False, lineterminator="\n")
    click.echo(f"epochs: {len(result.epochs)}")
    click.echo(f"latency_slope: {result.latency_slope:.6f}")


def run(argv: Optional[list[str]] = None) -> int:
    """Invoke the command group and map failures onto the exit-code contract."""
    try:
        cli.main(args=argv, prog_name="avcap", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except CommandFailed as exc:
        exc.show()
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except CaptionError as exc:
        click.echo(f"Error: {exc.detail}", err=True)
        return exc.exit_code
    except OSError as exc:
        click.echo(f"Error: {exc}", err=True)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(run())
