#!/usr/bin/env python3
"""
Robust Quasi-Newton Simulator - Main Entry Point

Development entry point: runs the CLI from a source checkout without
installing the package.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent / "src"))

from robust_qn.launcher import main  # noqa: E402

if __name__ == "__main__":
    main()
