import sys

from pfac.cli import main

sys.exit(main())
