"""
Chunkvid Console Output

Styled terminal output for chunkvid commands, built on `rich`. Library
code reports through the module-level `console`; numeric kernels never
print.

Usage:
    from chunkvid.console import console

    console.info("Training on 4 moving_square videos")
    console.success("Wrote runs/model.lvck")
    console.warn("Metric clarity unavailable: reference score near zero")
    console.step("Chunk 3: kept 41/64 tokens")

    with console.spinning("Generating 8 chunks..."):
        result = generate_video(...)

Verbosity comes from CHUNKVID_VERBOSITY (quiet|normal|verbose or 0|1|2)
and is overridden by --quiet / --verbose.
"""

import os
import threading
from contextlib import contextmanager
from typing import Dict, Optional

from rich.console import Console as RichConsole
from rich.panel import Panel
from rich.table import Table
from rich.theme import Theme


# ---------------------------------------------------------------------------
# Verbosity
# ---------------------------------------------------------------------------

class Verbosity:
    QUIET = 0    # errors, panels and tables
    NORMAL = 1   # + info, success, warnings
    VERBOSE = 2  # + per-step and per-chunk lines

    _NAMES = {"quiet": 0, "normal": 1, "verbose": 2, "0": 0, "1": 1, "2": 2}

    @classmethod
    def from_env(cls) -> int:
        value = os.environ.get("CHUNKVID_VERBOSITY", "normal")
        return cls._NAMES.get(value.strip().lower(), cls.NORMAL)


_THEME = Theme({
    "cv.success": "green",
    "cv.warn": "yellow",
    "cv.error": "bold red",
    "cv.step": "cyan",
    "cv.info": "dim",
    "cv.label": "bold",
    "cv.muted": "dim italic",
})


# ---------------------------------------------------------------------------
# Step Tracker
# ---------------------------------------------------------------------------

class StepTracker:
    """Planned vs completed work units (training steps, chunks, ablation cells).

    Usage:
        tracker.reset()
        tracker.plan(300)
        done, total = tracker.advance()
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._total = 0
        self._done = 0

    def plan(self, units: int) -> None:
        with self._lock:
            self._total += units

    def advance(self, units: int = 1) -> tuple[int, int]:
        """Mark units complete. Returns (done, total)."""
        with self._lock:
            self._done += units
            return self._done, self._total

    @property
    def summary(self) -> str:
        with self._lock:
            return f"{self._done}/{self._total}"

    def reset(self) -> None:
        with self._lock:
            self._total = 0
            self._done = 0


# ---------------------------------------------------------------------------
# ChunkvidConsole
# ---------------------------------------------------------------------------

class ChunkvidConsole:
    """Styled output with verbosity levels and a status spinner."""

    def __init__(self) -> None:
        self._rich = RichConsole(theme=_THEME, highlight=False)
        self._verbosity = Verbosity.from_env()
        self._print_lock = threading.Lock()
        self._status_depth = 0
        self._tracker = StepTracker()

    def _print(self, text, level: int = Verbosity.QUIET) -> None:
        if self._verbosity < level:
            return
        with self._print_lock:
            self._rich.print(text)

    # -- messages -----------------------------------------------------------

    def info(self, msg: str) -> None:
        self._print(f"  [cv.info]{msg}[/]", Verbosity.NORMAL)

    def success(self, msg: str) -> None:
        self._print(f"  [cv.success]✓[/] {msg}", Verbosity.NORMAL)

    def warn(self, msg: str) -> None:
        self._print(f"  [cv.warn]![/] {msg}", Verbosity.NORMAL)

    def error(self, msg: str) -> None:
        """Always shown."""
        self._print(f"  [cv.error]✗[/] {msg}")

    def step(self, msg: str) -> None:
        self._print(f"  [cv.step]›[/] {msg}", Verbosity.VERBOSE)

    def debug(self, msg: str) -> None:
        self._print(f"  [cv.muted]{msg}[/]", Verbosity.VERBOSE)

    # -- progress -----------------------------------------------------------

    @contextmanager
    def spinning(self, message: str):
        """Status spinner around a long computation. Nested calls reuse the outer one."""
        if (self._verbosity < Verbosity.NORMAL or not self._rich.is_terminal
                or self._status_depth > 0):
            yield
            return

        self._status_depth += 1
        try:
            with self._rich.status(f"[cv.step]{message}[/]", spinner="line"):
                yield
        finally:
            self._status_depth -= 1

    @property
    def tracker(self) -> StepTracker:
        return self._tracker

    @staticmethod
    def progress_bar(current: int, total: int, width: int = 20) -> str:
        """'[████████░░░░░░░░░░░░]  40%'."""
        if total <= 0:
            return f"[{'░' * width}]   0%"
        pct = min(current / total, 1.0)
        filled = int(width * pct)
        return f"[{'█' * filled}{'░' * (width - filled)}] {pct:>4.0%}"

    # -- structured output --------------------------------------------------

    def panel(self, content: str, title: str = "", border_style: str = "cyan") -> None:
        self._print(Panel(content, title=title, border_style=border_style, padding=(0, 1)))

    def table(self, title: str, columns: list[tuple[str, str]], rows: list[list[str]]) -> None:
        """
        Display a table. Always shown.

        Args:
            title: Table title
            columns: (name, style) per column
            rows: cell strings per row
        """
        tbl = Table(title=title, show_edge=False, pad_edge=False, box=None)
        for name, style in columns:
            tbl.add_column(name, style=style)
        for row in rows:
            tbl.add_row(*row)
        self._print(tbl)

    def summary_panel(self, title: str, stats: Dict[str, str], footer: Optional[str] = None) -> None:
        """Key/value panel printed at the end of a command."""
        width = max((len(k) for k in stats), default=0)
        content = "\n".join(f"  [cv.label]{key:<{width}}[/]  {value}" for key, value in stats.items())
        if footer:
            content += f"\n\n  [cv.muted]{footer}[/]"
        self._print(Panel(content, title=f"[bold]{title}[/]", border_style="cyan", padding=(1, 1)))

    # -- verbosity ----------------------------------------------------------

    @property
    def verbosity(self) -> int:
        return self._verbosity

    @verbosity.setter
    def verbosity(self, level: int) -> None:
        self._verbosity = level


console = ChunkvidConsole()
