import sys

from crowdobs.cli import main

sys.exit(main())
