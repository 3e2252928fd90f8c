import sys

from stepadapter.serve import main

sys.exit(main())
