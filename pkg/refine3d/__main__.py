import sys

from refine3d.main import main

sys.exit(main())
