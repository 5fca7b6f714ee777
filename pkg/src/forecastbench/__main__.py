"""Allow ``python -m forecastbench``."""

import sys

from .cli import main

sys.exit(main())
