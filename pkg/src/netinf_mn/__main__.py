import sys

from netinf_mn.scenario.cli import main

sys.exit(main())
