import sys

from boscwatch.cli import main

sys.exit(main())
