"""python -m threeterm"""

import sys

from .cli import main

sys.exit(main())
