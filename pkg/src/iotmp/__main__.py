import sys

from iotmp.cli import main

sys.exit(main())
