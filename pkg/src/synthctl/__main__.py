import sys

from synthctl.cli import main

sys.exit(main())
