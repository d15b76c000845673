"""Allow `python -m modbind`, handy where a shell builtin shadows `bind`."""

import sys

from modbind.cli import main

sys.exit(main())
