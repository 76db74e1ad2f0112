import sys

from postselect_lab.cli import main

sys.exit(main())
