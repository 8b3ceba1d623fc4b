"""Build reconstruction pairs, train the network and apply it to a manifest."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import cli  # noqa: E402


if __name__ == "__main__":
    sys.exit(cli.reconstruct_main())
