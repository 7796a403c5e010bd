import sys

from tmoz.cli import main

sys.exit(main())
