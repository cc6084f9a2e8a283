"""Size and power tables for the OLS t test, the first-stage F test and the 2SLS t test.

    python scripts/run_tables.py --table 1 --reps 2000 --out results/
"""

import argparse
import os
import time
from pathlib import Path

from sketchreg.montecarlo import table1, table2, table3

TABLES = {1: table1, 2: table2, 3: table3}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--table", type=int, choices=sorted(TABLES), default=1)
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--m", type=int, default=500)
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    reps = args.reps or (2000 if args.table == 1 else 1000)
    for hetero in (False, True):
        t0 = time.perf_counter()
        tab = TABLES[args.table](hetero, n=args.n, m=args.m, reps=reps, seed=args.seed,
                                 workers=args.workers)
        label = "heteroskedastic" if hetero else "homoskedastic"
        print(f"table {args.table}, {label} ({time.perf_counter() - t0:.0f} s)")
        print(tab.format(), end="\n\n")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            tab.write_csv(args.out / f"table{args.table}_{label}.csv")


if __name__ == "__main__":
    main()
