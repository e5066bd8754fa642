"""Run the synthetic chirp and stationary-null benchmark and print the verdicts.

    python scripts/run_benchmark.py [--out DIR] [--seed N] [--key value ...]
"""

import sys
from pathlib import Path

from windgp.cli import main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "benchmark.cfg"

if __name__ == "__main__":
    sys.exit(main(["--config", str(CONFIG), "-v", "benchmark", *sys.argv[1:]]))
