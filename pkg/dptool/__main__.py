"""Entry point for `python -m dptool`."""

import sys

from dptool.cli import main

if __name__ == "__main__":
    sys.exit(main())
