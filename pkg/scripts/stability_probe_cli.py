#!/usr/bin/env python3
"""
Stability probe command-line entry point.

    python scripts/stability_probe_cli.py list-problems
    python scripts/stability_probe_cli.py probe --problem ex32 --out r.json
    python scripts/stability_probe_cli.py report r.json
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cli import main  # noqa: E402


if __name__ == '__main__':
    main()
