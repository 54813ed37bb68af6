"""Entry point for ``python -m maskgraph``."""

import sys

from maskgraph.cli import execute

if __name__ == "__main__":
    sys.exit(execute(sys.argv[1:]))
