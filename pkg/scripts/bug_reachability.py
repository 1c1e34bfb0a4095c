#!/usr/bin/env python3
"""Bug-reachability separation experiment.

Runs repeated fuzzing campaigns per mode against the reference target with
all three seeded bugs enabled, and prints how many trials discovered each
bug. Full mode sees through packet protection and reaches the
encryption-gated bugs; the ciphertext-mutating baseline only ever finds the
unprotected-field bug.
"""

import argparse

from quicgrey.experiments import ALL_BUG_IDS, bug_reachability


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=10)
    parser.add_argument("--seconds", type=float, default=60.0,
                        help="per-campaign budget for the 60s arms")
    parser.add_argument("--stream-seconds", type=float, default=300.0)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    result = bug_reachability(trials=args.trials, full_seconds=args.seconds,
                              baseline_seconds=args.seconds,
                              stream_seconds=args.stream_seconds,
                              workers=args.workers)
    print(f"{'arm':<14}" + "".join(f"{bug:>14}" for bug in ALL_BUG_IDS))
    for arm in ("full_60s", "baseline_60s", "full_300s"):
        trials = result.trials(arm)
        cells = "".join(f"{result.count(arm, bug)}/{trials}".rjust(14)
                        for bug in ALL_BUG_IDS)
        print(f"{arm:<14}{cells}")


if __name__ == "__main__":
    main()
