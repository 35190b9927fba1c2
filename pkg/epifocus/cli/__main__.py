import sys

from epifocus.cli.main import main

sys.exit(main())
