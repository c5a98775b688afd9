"""Run gen-data, train, eval and export-flow in one go.

    python3 scripts/run_pipeline.py --out run --seed 0 [--set key=value ...]

Extra flags are passed to every subcommand unchanged.
"""

import sys
import time

from graspflow.cli import main


def run(extra):
    for command in ("gen-data", "train", "eval", "export-flow"):
        start = time.perf_counter()
        code = main(extra + [command])
        print(f"[{command}] exit {code} in {time.perf_counter() - start:.1f} s", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
