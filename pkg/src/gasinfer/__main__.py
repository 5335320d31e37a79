"""Main entry point for running the command-line interface."""

import sys

from gasinfer.cli import main

if __name__ == "__main__":
    sys.exit(main())
