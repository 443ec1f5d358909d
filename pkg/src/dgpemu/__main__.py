import sys

from dgpemu.cli import main

sys.exit(main())
