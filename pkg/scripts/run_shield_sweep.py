"""Recovery quality versus shield padding scale.

Sweeps shield scales {0, 1, 4, 10} over a few batch sizes with the fastica
pipeline and writes one CSV row per (n, scale, seed) cell.  Columns follow
the shared sweep schema, so the output plots directly against the padding
scale on the x axis and p95 cosine on the y axis.

Usage: python3 scripts/run_shield_sweep.py [out_csv] [master_seed]
"""

import csv
import sys
from pathlib import Path

from gelo.attacks import SWEEP_COLUMNS, cell_seed, run_cell

OUT = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out/shield_sweep.csv")
MASTER = int(sys.argv[2]) if len(sys.argv) > 2 else 0

N_LIST = [64, 128, 256]
SCALES = [0.0, 1.0, 4.0, 10.0]
D = 256
SEEDS = 3


def main() -> None:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS + ["error"])
        for n in N_LIST:
            for scale in SCALES:
                for rep in range(SEEDS):
                    seed = cell_seed(MASTER, n, D, 0, "fastica", scale, rep)
                    row = run_cell(n, D, 0, "subtraction", "fastica", scale, seed)
                    writer.writerow(row[c] for c in SWEEP_COLUMNS + ["error"])
                    print(
                        f"n={n} scale={scale} rep={rep} "
                        f"p95={row['p95_cos']:.3f} median={row['median_cos']:.3f}"
                    )
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
