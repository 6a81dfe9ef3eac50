import sys

from posr.main import main

sys.exit(main())
