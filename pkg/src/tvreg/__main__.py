import sys

from tvreg.cli import main

sys.exit(main())
