#!/usr/bin/env python3
"""
Glance-Focus command line entry point.
Generate synthetic episodes, train, evaluate and inspect attention.
"""
import sys

from glance_focus.cli import main

if __name__ == "__main__":
    sys.exit(main())
