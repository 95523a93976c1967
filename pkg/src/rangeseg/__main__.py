import sys

from rangeseg.cli import main

sys.exit(main())
