#!/usr/bin/env python3
"""Snapshot-reset throughput benchmark.

Compares executions/second with snapshot resets against full
respawn-per-iteration under a configurable simulated initialisation delay.
"""

import argparse

from quicgrey.experiments import snapshot_throughput


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--execs", type=int, default=500)
    parser.add_argument("--init-delay-ms", type=float, default=50.0)
    args = parser.parse_args()

    enabled, disabled = snapshot_throughput(execs=args.execs,
                                            init_delay_ms=args.init_delay_ms)
    print(f"init delay        : {args.init_delay_ms:.0f} ms")
    print(f"snapshot enabled  : {enabled:.1f} exec/s")
    print(f"snapshot disabled : {disabled:.1f} exec/s")
    print(f"speedup           : {enabled / disabled:.1f}x")


if __name__ == "__main__":
    main()
