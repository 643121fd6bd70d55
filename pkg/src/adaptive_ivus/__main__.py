import sys

from adaptive_ivus.cli import main

sys.exit(main())
