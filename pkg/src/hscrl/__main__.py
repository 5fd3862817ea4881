import sys

from hscrl.cli import main

sys.exit(main())
