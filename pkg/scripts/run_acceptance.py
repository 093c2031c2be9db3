"""Run the acceptance criteria and exit nonzero if any fails.

    python scripts/run_acceptance.py            # all criteria
    python scripts/run_acceptance.py 2 3        # a subset
"""

import sys

from chiralab.acceptance import run_acceptance


def main(argv: list[str]) -> int:
    only = [int(a) for a in argv] or None
    results = run_acceptance(only)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return 0 if passed == len(results) else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
