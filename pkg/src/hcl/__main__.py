import sys

from hcl.cli import main

sys.exit(main())
