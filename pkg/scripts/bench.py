"""Run the face-filter benchmark: `python scripts/bench.py report --config bench.toml`."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import cli  # noqa: E402


if __name__ == "__main__":
    sys.exit(cli.main())
