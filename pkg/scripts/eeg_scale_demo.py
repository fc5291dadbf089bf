"""End-to-end run at EEG-like dimensions (p=900, n=392) on synthetic data.

Writes the sample, runs the CLI pipeline (svd, bootstrap, summarize,
percentiles) and reports each stage's wall time plus the leading
percent biases and region thresholds.

    python3 scripts/eeg_scale_demo.py --out results/eeg_demo
"""
from __future__ import annotations

import argparse
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bootpca.cli import main as cli
from bootpca.matrixio import TallMatrix, write_matrix
from bootpca.simulation import SimConfig, generate_sample


@dataclass
class DemoConfig:
    p: int = 900
    n: int = 392
    K: int = 3
    B: int = 1000
    seed: int = 0
    score_sds: tuple[float, ...] = (6.0, 4.0, 3.0, 2.0, 1.0)
    sigma2: float = 30.0


def main() -> None:
    cfg = DemoConfig()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/eeg_demo")
    ap.add_argument("-B", type=int, default=cfg.B)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sim = SimConfig(p=cfg.p, n=cfg.n, K0=len(cfg.score_sds), score_sds=list(cfg.score_sds),
                    sigma2=cfg.sigma2)
    Y = generate_sample(sim, np.random.default_rng(cfg.seed))
    write_matrix(TallMatrix(Y.to_array()), out / "Y.bpca")

    stages = [
        ("svd", ["svd", "--input", str(out / "Y.bpca"), "--out-dir", str(out / "svd")]),
        ("bootstrap", ["bootstrap", "--svd-dir", str(out / "svd"), "-B", str(args.B),
                       "-K", str(cfg.K), "--seed", str(cfg.seed), "--drop-U",
                       "--out", str(out / "ensemble.bpce")]),
        ("summarize", ["summarize", "--svd-dir", str(out / "svd"),
                       "--ensemble", str(out / "ensemble.bpce"),
                       "--out-dir", str(out / "summaries")]),
        ("percentiles", ["percentiles", "--svd-dir", str(out / "svd"),
                         "--ensemble", str(out / "ensemble.bpce"),
                         "--out-dir", str(out / "percentiles")]),
    ]
    for name, argv in stages:
        t0 = time.perf_counter()
        status = cli(argv)
        print(f"== {name}: exit {status}, {time.perf_counter() - t0:.2f}s")
        if status:
            raise SystemExit(status)


if __name__ == "__main__":
    main()
