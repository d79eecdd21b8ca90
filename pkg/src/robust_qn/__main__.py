#!/usr/bin/env python3
"""
Robust Quasi-Newton Simulator - Package Entry Point

Runs the launcher when the package is invoked via ``python -m robust_qn`` or
the installed ``robust-qn`` / ``rqn`` scripts.
"""

import sys


def main():
    """Main entry point for the robust-quasi-newton package."""
    try:
        from .launcher import main as launcher_main
    except ImportError as e:
        print("Robust Quasi-Newton Simulator")
        print("\nError: Could not import launcher:", str(e))
        print("\nPlease ensure the package is properly installed:")
        print("  pip install -e .")
        sys.exit(1)
    launcher_main()


if __name__ == "__main__":
    main()
