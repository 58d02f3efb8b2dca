#!/usr/bin/env python3
"""
Entry point script for the command line (fit, weights, infer, codite,
simulate, coverage). Run `python drf.py --help`.
"""

import sys
import os

sys.path.insert(0, os.path.dirname(__file__))

from app.cli import main

if __name__ == '__main__':
    sys.exit(main())
