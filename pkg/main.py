"""
Sparse Bregman autoencoders - command-line entry point.

Run with: python main.py <command> [options]
"""
import sys

from bregman_rom.cli import main

if __name__ == "__main__":
    sys.exit(main())
