"""Latency overhead sweep against a throwaway local server.

Spins the untrusted GEMM server on a loopback port in a background thread,
runs the gelo-vs-baseline benchmark over a range of batch sizes, and prints
the overhead table.  The combined CSV lands next to the printed output.

Usage: python3 scripts/run_bench_local.py [d] [p] [out_csv]
"""

import sys
from pathlib import Path

from gelo.harness import OffloadClient, benchmark_sweep, local_server

D = int(sys.argv[1]) if len(sys.argv) > 1 else 256
P = int(sys.argv[2]) if len(sys.argv) > 2 else 256
OUT = Path(sys.argv[3]) if len(sys.argv) > 3 else Path("out/bench_local.csv")

SIZES = [64, 128, 256, 512]
REPS = 5


def main() -> None:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with local_server() as address:
        with OffloadClient(address) as client:
            rows, breakdowns = benchmark_sweep(
                client, SIZES, d=D, p=P, reps=REPS, seed=0, csv_path=OUT
            )
    print(f"{'n':>6} {'gelo ms':>10} {'baseline ms':>12} {'overhead %':>11}")
    for row in rows:
        print(
            f"{row.n:>6} {row.gelo_total_ms:>10.3f} "
            f"{row.baseline_total_ms:>12.3f} {row.overhead_pct:>11.1f}"
        )
    largest = breakdowns[-1]
    print(f"\nbreakdown at n={rows[-1].n} (median ms):")
    for name in ("a_gen_ms", "mix_ms", "gemm_ms", "unmix_ms", "copy_ms", "total_ms"):
        print(f"  {name:<10} {getattr(largest, name):.3f}")
    print(f"\nwrote {OUT}")


if __name__ == "__main__":
    main()
