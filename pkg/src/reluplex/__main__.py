import sys

from reluplex.cli import main

sys.exit(main())
