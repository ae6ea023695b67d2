"""
Development entry point.

Run with: python run.py <command> [options]
Equivalent to the installed ``duetdiff`` console script.
"""
import sys

from duetdiff.cli import main

if __name__ == "__main__":
    sys.exit(main())
