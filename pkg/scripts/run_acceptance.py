"""Run the acceptance module and exit with pytest's status.

    python scripts/run_acceptance.py            # all ten criteria
    python scripts/run_acceptance.py -k c07     # one of them
"""
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(pytest.main([str(ROOT / "tests" / "test_acceptance.py"), *sys.argv[1:]]))
