import sys

from qgnn.main import main

sys.exit(main())
