#!/usr/bin/env python3
"""
Process entry point: ``python app.py <subcommand> --config <path> ...``
"""

import sys

# Load environment variables from .env file FIRST
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    print("⚠️ python-dotenv not installed. Install with: pip install python-dotenv", file=sys.stderr)

from grbsde.cli import main


def run() -> None:
    sys.exit(main())


if __name__ == '__main__':
    run()
