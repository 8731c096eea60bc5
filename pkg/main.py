#!/usr/bin/env python3
"""
driftlens
Main entry point for the application
"""

import os
import sys

# Add the current directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from driftlens.cli import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("Stopped by user")
        sys.exit(1)
