#!/usr/bin/env python3
"""
riskrag entry point for running from a source checkout.
"""

import os
import sys

# Add src to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from riskrag.cli import main

if __name__ == "__main__":
    main()
