"""
file: __main__.py
brief: command-line entry point
usage: python3 -m ctxadapt {run,list,verify-theory,evaluate} ...
"""

import sys

from .experiment_cli import main

if __name__ == "__main__":
    sys.exit(main())
