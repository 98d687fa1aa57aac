"""
main.py - Application Entry Point

    python main.py <subcommand> [options]

Runs one cli.py subcommand and exits with its code (0 success, 1 runtime
failure, 2 usage error). Logging goes to stderr so stdout stays usable with
--json.

Examples:
    python main.py stats fixtures/tiny.jsonl
    python main.py experiment --config fixtures/experiment.cfg --out-dir out
    python main.py serve-mock --port 8765
"""

import sys

from cli import dispatch


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
