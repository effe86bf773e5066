import sys

from tdsenet.cli import main

sys.exit(main())
