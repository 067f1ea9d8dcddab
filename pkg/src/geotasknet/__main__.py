"""Run the command-line driver with ``python -m geotasknet``."""
import sys

from .cli import main

sys.exit(main())
