import sys

from hdate.cli import main

sys.exit(main())
