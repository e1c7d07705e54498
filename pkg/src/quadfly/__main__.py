import sys

from quadfly.cli import main

sys.exit(main())
