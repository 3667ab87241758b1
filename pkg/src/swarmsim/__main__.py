"""Allow ``python -m swarmsim``."""

import sys

from swarmsim.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
