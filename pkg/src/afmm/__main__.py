import sys

from afmm.cli import main

sys.exit(main())
