import sys

from metascript.cli import main

sys.exit(main())
