import sys

from memreader.cli import main

sys.exit(main())
