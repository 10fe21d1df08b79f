"""
fk-connectome-uq - Centralized Path and Environment Configuration
=================================================================

This module provides centralized path management and run defaults for the
connectome reaction-diffusion / uncertainty quantification scripts. Every
script in code/ imports it by name, so paths never depend on the working directory.

Usage:
    from config_paths import GRAPHS_DIR, RUNS_DIR, CONSOLE, DEFAULT_THREADS

    g = load_connectome(GRAPHS_DIR / 'synthetic.json')
    moments.to_frame().to_csv(RUNS_DIR / 'mc' / 'moments.csv', index=False)
    CONSOLE.print("  ✓ moments.csv")

Defaults can be overridden through a `.env` file at the project root
(see `.env.example`):

    FKUQ_THREADS=4
    FKUQ_SEED=2023
    FKUQ_RESULTS_DIR=/scratch/fkuq-results
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

from dotenv import load_dotenv
from rich.console import Console

# ==============================================================================
# PROJECT ROOT DETECTION
# ==============================================================================

ROOT_MARKERS = ("requirements.txt", "pytest.ini", "README.md", ".git")


def find_project_root(start: Path | None = None) -> Path:
    """First directory at or above code/ holding a root marker."""
    here = (start or Path(__file__)).resolve().parent
    for candidate in (here, *here.parents[:3]):
        if any((candidate / marker).exists() for marker in ROOT_MARKERS):
            return candidate
    # code/ always sits directly under the root
    return here.parent


PROJECT_ROOT = find_project_root()

# ==============================================================================
# ENVIRONMENT DEFAULTS
# ==============================================================================

load_dotenv(PROJECT_ROOT / '.env')


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}") from None


DEFAULT_THREADS = max(1, _env_int('FKUQ_THREADS', 1))
DEFAULT_SEED = _env_int('FKUQ_SEED', 2023)

# ==============================================================================
# DIRECTORY PATHS
# ==============================================================================

CODE_DIR = PROJECT_ROOT / 'code'

DATA_DIR = PROJECT_ROOT / 'data'
GRAPHS_DIR = DATA_DIR / 'graphs'
SCANS_DIR = DATA_DIR / 'scans'

RESULTS_DIR = Path(os.getenv('FKUQ_RESULTS_DIR') or PROJECT_ROOT / 'results')
RUNS_DIR = RESULTS_DIR / 'runs'
FIGURES_DIR = RESULTS_DIR / 'figures'
TABLES_DIR = RESULTS_DIR / 'tables'
REPORTS_DIR = RESULTS_DIR / 'reports'

# ==============================================================================
# CONSOLE
# ==============================================================================

# Status lines go to stderr so CSV/JSON written to stdout stays clean.
CONSOLE = Console(stderr=True, highlight=False)


def set_quiet(quiet: bool) -> None:
    """Silence (or re-enable) all status output."""
    CONSOLE.quiet = quiet


def banner(title: str, width: int = 72) -> None:
    CONSOLE.print("=" * width)
    CONSOLE.print(title)
    CONSOLE.print("=" * width)

# ==============================================================================
# DIRECTORY CREATION
# ==============================================================================

def ensure_directories() -> None:
    """Create all necessary directories if they don't exist."""
    directories = [
        GRAPHS_DIR,
        SCANS_DIR,
        RUNS_DIR,
        FIGURES_DIR,
        TABLES_DIR,
        REPORTS_DIR,
    ]

    for directory in directories:
        directory.mkdir(parents=True, exist_ok=True)

# ==============================================================================
# UTF-8 ENCODING (Windows PowerShell fix)
# ==============================================================================

if sys.platform == 'win32':
    try:
        sys.stdout.reconfigure(encoding='utf-8')
        sys.stderr.reconfigure(encoding='utf-8')
    except AttributeError:
        pass

# ==============================================================================
# VERIFICATION
# ==============================================================================

if __name__ == "__main__":
    """Run this script to verify path configuration."""
    from rich.table import Table

    ensure_directories()
    console = Console()
    table = Table(title="fk-connectome-uq Path Configuration", show_header=True)
    table.add_column("Variable", style="cyan", no_wrap=True)
    table.add_column("Path / Value", style="green")
    table.add_column("Exists?", style="yellow")

    paths = {
        'PROJECT_ROOT': PROJECT_ROOT,
        'CODE_DIR': CODE_DIR,
        'GRAPHS_DIR': GRAPHS_DIR,
        'SCANS_DIR': SCANS_DIR,
        'RESULTS_DIR': RESULTS_DIR,
        'RUNS_DIR': RUNS_DIR,
        'FIGURES_DIR': FIGURES_DIR,
        'TABLES_DIR': TABLES_DIR,
        'REPORTS_DIR': REPORTS_DIR,
    }

    for name, path in paths.items():
        exists = "✓" if path.exists() else "✗"
        table.add_row(name, str(path), exists)
    table.add_row('DEFAULT_THREADS', str(DEFAULT_THREADS), '')
    table.add_row('DEFAULT_SEED', str(DEFAULT_SEED), '')

    console.print(table)
    console.print("\n[bold green]All paths verified![/bold green]")
