import sys

from opfx.main import main

sys.exit(main())
