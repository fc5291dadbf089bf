"""Timing of the fast bootstrap against the naive one as p grows.

Prints (and optionally saves) one CSV row per p with the sample SVD,
bootstrap loop, SE path, percentile path and extrapolated brute-force
times. Large p are streamed through temporary files.

    python3 scripts/benchmark_scaling.py --p-list 1000,10000,100000
"""
from __future__ import annotations

import argparse
import csv
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

from bootpca.cli import benchmark_row


@dataclass
class BenchConfig:
    p_list: tuple[int, ...] = (1000, 3000, 10000, 30000, 100000, 300000)
    n: int = 100
    B: int = 200
    K: int = 3
    seed: int = 0
    in_memory_bytes: int = 2**28  # larger samples go through files


def main() -> None:
    cfg = BenchConfig()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p-list", default=",".join(map(str, cfg.p_list)))
    ap.add_argument("--n", type=int, default=cfg.n)
    ap.add_argument("-B", type=int, default=cfg.B)
    ap.add_argument("-K", type=int, default=cfg.K)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    p_list = [int(v) for v in args.p_list.split(",")]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = None
    with tempfile.TemporaryDirectory() as tmp:
        for p in p_list:
            workdir = Path(tmp) if p * args.n * 8 > cfg.in_memory_bytes else None
            row = benchmark_row(p, args.n, args.B, args.K, cfg.seed, workdir)
            if writer is None:
                writer = csv.DictWriter(fh, fieldnames=list(row))
                writer.writeheader()
            writer.writerow({k: f"{v:.4g}" if isinstance(v, float) else v
                             for k, v in row.items()})
            fh.flush()
    if fh is not sys.stdout:
        fh.close()


if __name__ == "__main__":
    main()
