#!/usr/bin/env python3
import sys

import dotenv

from epifocus.cli import main

dotenv.load_dotenv()

if __name__ == "__main__":
    sys.exit(main())
