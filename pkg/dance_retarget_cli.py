#!/usr/bin/env python3
"""
Dance retargeting CLI

Runs the dance-retarget command line from a source checkout.
Usage: python dance_retarget_cli.py <command> [options]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from dance_retarget.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
