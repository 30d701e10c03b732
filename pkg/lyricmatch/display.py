import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn, TimeElapsedColumn
from rich.table import Table
from rich.text import Text

from tagsong.types import MetricsReport

from .types import CompareRow, PrepareSummary, RetrievalHit, TrainSummary


# Safe terminal width detection with proper error handling
def get_terminal_width():
    """Get terminal width with fallback for environments without a terminal"""
    try:
        return os.get_terminal_size().columns
    except (OSError, ValueError):
        # No terminal (CI, redirected output): try COLUMNS
        try:
            width = os.environ.get("COLUMNS")
            if width:
                return int(width)
        except (ValueError, TypeError):
            pass
        return 120


terminal_width = get_terminal_width()
console = Console(width=terminal_width)


class CustomRichHandler(RichHandler):
    """RichHandler that tags library records with the module they came from."""

    def emit(self, record):
        if record.name.startswith("tagsong.") and record.levelno >= logging.WARNING:
            module = record.name.split(".", 1)[1]
            record.msg = f"[{module}] {record.msg}"
            record.name = "tagsong"
        super().emit(record)


def print_startup_banner(command: str):
    """Print the startup banner across the full width"""
    banner_text = f"LYRICMATCH\nimage2song / song2image retrieval\ncommand: {command}"
    console.print(Panel(Text(banner_text, style="bold cyan", justify="center"), box=box.DOUBLE, expand=True))


def print_section_header(title, style="bold blue"):
    """Print a section header with styling using full width"""
    separator = "=" * console.width
    console.print(f"\n{separator}")
    console.print(f"  {title}", style=style)
    console.print(f"{separator}")


def _key_value_table(rows: Sequence[Tuple[str, str]], title: Optional[str] = None, style: str = "cyan") -> Table:
    table = Table(title=title, show_header=False, box=box.SIMPLE, expand=True)
    table.add_column("", style=style, ratio=1, min_width=20)
    table.add_column("", style="white", ratio=4)
    for key, value in rows:
        table.add_row(key, value)
    return table


def print_prepare_summary(summary: PrepareSummary):
    rows = [
        ("Mode:", summary["mode"]),
        ("Songs:", f"{summary['songs']} songs / {summary['test_songs']} test"),
        ("Triplets:", f"{summary['triplets']} kept of {summary['loaded']} loaded"),
        ("Train:", f"{summary['train']} triplets"),
        ("Test:", f"{summary['test']} triplets"),
        ("Split file:", summary["split_path"]),
    ]
    console.print(_key_value_table(rows, title="Prepared Dataset"))


def training_progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        TextColumn("loss {task.fields[loss]}"),
        TimeElapsedColumn(),
        console=console,
        transient=False,
    )


def print_training_summary(summary: TrainSummary):
    final = summary["final_loss"]
    rows = [
        ("Model:", summary["model"]),
        ("Loss:", summary["loss"]),
        ("Epochs:", f"{summary['start_epoch']} -> {summary['epoch']}"),
        ("Final loss:", "n/a" if final is None else f"{final:.6f}"),
        ("Checkpoint:", summary["checkpoint"]),
    ]
    console.print(_key_value_table(rows, title="Training", style="green"))


def print_metrics_table(report: MetricsReport):
    """One row per direction: R@K columns and median rank."""
    directions = report["directions"]
    if not directions:
        return
    ks = list(directions[0]["recall"])
    title = f"{report['model']} | {report['mode']} | {report['tag_group']}"
    table = Table(title=title, box=box.ROUNDED, expand=True)
    table.add_column("Direction", style="cyan", ratio=2)
    table.add_column("Queries", justify="right", ratio=1)
    for k in ks:
        table.add_column(k, justify="right", style="green", ratio=1)
    table.add_column("Med r", justify="right", style="yellow", ratio=1)
    for entry in directions:
        table.add_row(
            entry["direction"],
            str(entry["queries"]),
            *(f"{entry['recall'][k]:.1f}" for k in ks),
            f"{entry['median_rank']:g}",
        )
    console.print(table)


def print_gradcheck_table(worst: Dict[str, float], tolerance: float):
    table = Table(title="Gradient Check", box=box.ROUNDED, expand=True)
    table.add_column("Block", style="cyan", ratio=3)
    table.add_column("Max rel. error", justify="right", ratio=1)
    table.add_column("Status", justify="center", ratio=1)
    for name, error in worst.items():
        ok = error < tolerance
        table.add_row(name, f"{error:.3e}", Text("ok" if ok else "FAIL", style="green" if ok else "bold red"))
    console.print(table)


def print_stats_table(rows: List[Tuple[int, Optional[str], float]], favorites: Dict[str, int], group: str):
    table = Table(title=f"Tag distribution ({group})", box=box.ROUNDED, expand=True)
    table.add_column("Rank", justify="right", ratio=1)
    table.add_column("Dim", justify="right", ratio=1)
    table.add_column("Tag", style="cyan", ratio=3)
    table.add_column("Mean prob.", justify="right", style="green", ratio=2)
    for rank, (dim, name, mean) in enumerate(rows, start=1):
        table.add_row(str(rank), str(dim), name or "-", f"{mean:.4f}")
    console.print(table)
    console.print(_key_value_table([(f"Favourites {k}:", str(v)) for k, v in favorites.items()], style="magenta"))


def print_retrieval_table(hits: List[RetrievalHit], direction: str):
    if not hits:
        console.print("Nothing to retrieve", style="red")
        return
    label = "Song" if direction == "image2song" else "Image"
    table = Table(title=f"{direction} results", box=box.ROUNDED, expand=True)
    table.add_column("Rank", justify="right", ratio=1)
    table.add_column(label, style="cyan", ratio=4)
    table.add_column("Similarity", justify="right", style="green", ratio=2)
    for hit in hits:
        table.add_row(str(hit["rank"]), hit["id"], f"{hit['score']:.4f}")
    console.print(table)


def print_compare_table(rows: List[CompareRow]):
    if not rows:
        return
    ks = list(rows[0]["recall"])
    table = Table(title="Model comparison", box=box.ROUNDED, expand=True)
    table.add_column("Model", style="cyan", ratio=2)
    table.add_column("Tags", ratio=1)
    table.add_column("Direction", ratio=2)
    for k in ks:
        table.add_column(k, justify="right", style="green", ratio=1)
    table.add_column("Med r", justify="right", style="yellow", ratio=1)
    for row in rows:
        table.add_row(
            row["model"], row["tag_group"], row["direction"], *(f"{row['recall'][k]:.1f}" for k in ks), f"{row['median_rank']:g}"
        )
    console.print(table)


__all__ = [
    "console",
    "CustomRichHandler",
    "get_terminal_width",
    "print_startup_banner",
    "print_section_header",
    "print_prepare_summary",
    "training_progress",
    "print_training_summary",
    "print_metrics_table",
    "print_gradcheck_table",
    "print_stats_table",
    "print_retrieval_table",
    "print_compare_table",
]
