"""Allow running with `python -m mcp_hysteresis`."""

import sys

from mcp_hysteresis.cli import main

sys.exit(main())
