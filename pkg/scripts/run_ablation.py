#!/usr/bin/env python3
"""Ablation ladder: median final edge coverage per enabled-module set.

Modes stack left to right: baseline (ciphertext mutation, timeout-paced,
respawn per run) -> +crypto -> +sync -> +snapshot (full).
"""

import argparse
import statistics

from quicgrey.experiments import ABLATION_MODES, ablation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=10)
    parser.add_argument("--seconds", type=float, default=120.0)
    parser.add_argument("--init-delay-ms", type=float, default=5.0)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    edges = ablation(trials=args.trials, seconds=args.seconds,
                     init_delay_ms=args.init_delay_ms, workers=args.workers)
    print(f"{'mode':<14}{'median':>8}{'min':>8}{'max':>8}  edges per trial")
    for mode in ABLATION_MODES:
        values = edges[mode]
        print(f"{mode:<14}{statistics.median(values):>8.0f}{min(values):>8}"
              f"{max(values):>8}  {values}")


if __name__ == "__main__":
    main()
