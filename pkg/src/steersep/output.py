import csv
import io
from collections.abc import Sequence
from pathlib import Path

from rich.console import Console
from rich.table import Table

from .checkpoint import atomic_write
from .models import AblationRow, CostRow, EpochRecord, Mode, SeparationRow


def write_csv(path: Path, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    """Write ``rows`` as CSV with ``\\n`` line endings, atomically.

    Args:
        path: Destination file.
        fieldnames: Column order.
        rows: One dict per row; missing keys are written empty.
    """
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    atomic_write(Path(path), buf.getvalue())


def _format_db(value: float) -> str:
    """Format a dB figure with color.

    Args:
        value: Improvement or ratio in dB.

    Returns:
        Colored string with two decimals.
    """
    if value >= 10:
        return f"[green]{value:.2f}[/green]"
    elif value >= 0:
        return f"[yellow]{value:.2f}[/yellow]"
    else:
        return f"[red]{value:.2f}[/red]"


def _format_count(count: int) -> str:
    if count >= 1_000_000:
        return f"{count / 1e6:.2f}M"
    if count >= 1_000:
        return f"{count / 1e3:.1f}K"
    return str(count)


def _format_bytes(count: int) -> str:
    return f"{count / 2**20:.1f} MB"


def _truncate(text: str, max_length: int = 48) -> str:
    if len(text) <= max_length:
        return text
    return text[: max_length - 3] + "..."


def print_separation_table(rows: list[SeparationRow], console: Console | None = None) -> None:
    """Print mean SI-SNRi/SDRi per mode, then totals.

    Args:
        rows: Per-mixture evaluation rows.
        console: Rich console instance. If None, a new one is created.
    """
    if console is None:
        console = Console()

    if not rows:
        console.print("[yellow]No mixtures evaluated.[/yellow]")
        return

    table = Table(title="Separation", show_header=True, header_style="bold")
    table.add_column("Mode", style="cyan")
    table.add_column("Mixtures", justify="right")
    table.add_column("SI-SNR", justify="right")
    table.add_column("SI-SNRi", justify="right")
    table.add_column("SDRi", justify="right")

    for mode in Mode:
        subset = [r for r in rows if r.mode == mode]
        if not subset:
            continue
        n = len(subset)
        table.add_row(
            mode.value,
            str(n),
            _format_db(sum(r.si_snr for r in subset) / n),
            _format_db(sum(r.si_snri for r in subset) / n),
            _format_db(sum(r.sdri for r in subset) / n),
        )

    console.print(table)


def print_sv_report(auc: float, eer: float, trials: int, console: Console | None = None) -> None:
    if console is None:
        console = Console()
    color = "green" if auc >= 0.9 else "yellow"
    console.print(f"[bold]Trials:[/bold] {trials}")
    console.print(f"[bold]AUC:[/bold] [{color}]{auc:.4f}[/{color}]")
    console.print(f"[bold]EER:[/bold] {eer:.4f}")


def print_cost_table(rows: list[CostRow], console: Console | None = None) -> None:
    """Print parameter, memory and FLOP estimates, one row per (arch, window)."""
    if console is None:
        console = Console()

    table = Table(title="Cost", show_header=True, header_style="bold")
    table.add_column("Arch", style="cyan")
    table.add_column("W", justify="right")
    table.add_column("Params", justify="right")
    table.add_column("Memory", justify="right")
    table.add_column("GFLOPs", justify="right")
    for row in rows:
        table.add_row(
            row.arch,
            str(row.window),
            _format_count(row.params),
            _format_bytes(row.memory_bytes),
            f"{row.gflops:.2f}",
        )
    console.print(table)


def print_ablation_table(rows: list[AblationRow], console: Console | None = None) -> None:
    if console is None:
        console = Console()

    table = Table(title="Ablation", show_header=True, header_style="bold")
    table.add_column("Cell", style="cyan")
    table.add_column("Config", style="dim")
    table.add_column("SI-SNRi", justify="right")
    table.add_column("AUC", justify="right")
    for row in rows:
        auc = "-" if row.auc is None else f"{row.auc:.3f}"
        table.add_row(_truncate(row.name), row.config_hash[:12], _format_db(row.si_snri), auc)
    console.print(table)


def print_epochs(records: list[EpochRecord], console: Console | None = None) -> None:
    if console is None:
        console = Console()

    if not records:
        console.print("[yellow]No epochs run.[/yellow]")
        return

    table = Table(title="Training", show_header=True, header_style="bold")
    table.add_column("Epoch", justify="right")
    table.add_column("Phase", style="cyan")
    table.add_column("Train loss", justify="right")
    table.add_column("Val loss", justify="right")
    table.add_column("Val SI-SNR", justify="right")
    for r in records:
        table.add_row(
            str(r.epoch), r.phase.value, f"{r.train_loss:.4f}", f"{r.val_loss:.4f}",
            _format_db(r.val_si_snr),
        )
    console.print(table)


def print_summary(
    rows: list[tuple[str, tuple[int, ...], int]], console: Console | None = None
) -> None:
    """Print the parameter inventory of a model.

    Args:
        rows: (name, shape, count) triples in parameter order.
        console: Rich console instance. If None, a new one is created.
    """
    if console is None:
        console = Console()

    table = Table(title="Parameters", show_header=True, header_style="bold")
    table.add_column("Name", style="cyan")
    table.add_column("Shape")
    table.add_column("Count", justify="right")
    for name, shape, count in rows:
        table.add_row(_truncate(name, 60), "x".join(map(str, shape)) or "scalar", str(count))
    total = sum(count for _, _, count in rows)
    table.add_row("[bold]total[/bold]", "", f"[bold]{total}[/bold] ({_format_count(total)})")
    console.print(table)
