"""Coverage-rate simulations with a known population basis.

Subjects are generated as ``y_i = sum_k s_ik psi_k + eps_i`` with Gaussian
scores and elementwise Gaussian noise of variance ``sigma2 / p`` (so the
total noise variance is about ``sigma2`` whatever p is). Each simulated
sample is bootstrapped and every interval/region type is checked against
the true basis.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapOptions, run_bootstrap
from .matrixio import TallMatrix
from .projection import percentile_intervals
from .summaries import (cone_threshold, moment_ci, moments_of_A, pc_mean,
                        pc_standard_errors, subspace_threshold, write_csv)
from .svd import economy_svd, sign_convention

SPACINGS = ("given", "geometric-half")


def fourier_basis(p: int, K0: int) -> np.ndarray:
    """Orthonormalised sin/cos curves of increasing frequency on a p-point grid."""
    t = (np.arange(p) + 0.5) / p
    cols = []
    freq = 1
    while len(cols) < K0:
        cols.append(np.sin(2 * np.pi * freq * t))
        if len(cols) < K0:
            cols.append(np.cos(2 * np.pi * freq * t))
        freq += 1
    q, _ = np.linalg.qr(np.column_stack(cols))
    return q * sign_convention(q)


def geometric_half_variances(K0: int, total: float) -> np.ndarray:
    """Variances halving from one component to the next, summing to ``total``."""
    w = 0.5 ** np.arange(K0)
    return total * w / w.sum()


@dataclass
class SimConfig:
    p: int = 100
    n: int = 150
    K0: int = 3
    score_sds: list[float] = field(default_factory=lambda: [4.0, 2.0, 1.0])
    sigma2: float = 21.0
    spacing: str = "given"
    B: int = 200
    n_sims: int = 200
    alpha: float = 0.05
    seed: int = 0
    basis: np.ndarray | None = None
    score_pool: np.ndarray | None = None  # optional empirical scores, one column per PC

    def __post_init__(self):
        if self.spacing not in SPACINGS:
            raise ValueError(f"spacing must be one of {SPACINGS}")
        self.score_sds = [float(s) for s in self.score_sds]
        if len(self.score_sds) != self.K0:
            raise ValueError(f"score_sds has {len(self.score_sds)} entries, K0={self.K0}")
        if any(s < 0 for s in self.score_sds) or self.sigma2 < 0:
            raise ValueError("score_sds and sigma2 must be non-negative")
        if not 0 < self.alpha < 1 or self.B < 1 or self.n_sims < 1 or self.n < 2:
            raise ValueError("invalid alpha, B, n_sims or n")
        if self.basis is None:
            self.basis = fourier_basis(self.p, self.K0)
        self.basis = np.asarray(self.basis, dtype=float)
        if self.basis.shape != (self.p, self.K0):
            raise ValueError("basis must be p x K0")
        if np.max(np.abs(self.basis.T @ self.basis - np.eye(self.K0))) > 1e-8:
            raise ValueError("basis columns must be orthonormal")

    @property
    def score_variances(self) -> np.ndarray:
        given = np.asarray(self.score_sds) ** 2
        if self.spacing == "geometric-half":
            return geometric_half_variances(self.K0, float(given.sum()))
        return given

    @classmethod
    def from_mapping(cls, values: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in known or key in ("basis", "score_pool"):
                raise ValueError(f"unknown config key {key!r}")
            raw = str(raw).strip()
            if key == "score_sds":
                kwargs[key] = [float(v) for v in raw.replace(",", " ").split()]
            elif key == "spacing":
                kwargs[key] = raw
            elif key in ("sigma2", "alpha"):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        return cls.from_mapping(values)


def _sim_seed(seed: int, sim: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(sim, purpose))


def generate_sample(cfg: SimConfig, rng: np.random.Generator) -> TallMatrix:
    """One p x n sample from the configured population."""
    sds = np.sqrt(cfg.score_variances)
    if cfg.score_pool is not None:
        pool = np.asarray(cfg.score_pool, dtype=float)
        pick = rng.integers(0, pool.shape[0], size=(cfg.n, cfg.K0))
        scores = pool[pick, np.arange(cfg.K0)]
        scores = (scores - pool.mean(axis=0)) / np.where(pool.std(axis=0) > 0,
                                                         pool.std(axis=0), 1.0) * sds
    else:
        scores = rng.standard_normal((cfg.n, cfg.K0)) * sds
    noise = rng.standard_normal((cfg.p, cfg.n)) * np.sqrt(cfg.sigma2 / cfg.p)
    return TallMatrix(cfg.basis @ scores.T + noise)


@dataclass
class CoverageReport:
    pointwise_moment: np.ndarray      # (p, K0)
    pointwise_percentile: np.ndarray  # (p, K0)
    cone_coverage: np.ndarray         # (K0,)
    subspace_coverage: float
    n_sims_effective: int
    n_failed: int = 0
    elapsed: float = 0.0

    @property
    def median_pointwise(self) -> dict[str, np.ndarray]:
        return {"moment": np.median(self.pointwise_moment, axis=0),
                "percentile": np.median(self.pointwise_percentile, axis=0)}

    def summary_table(self) -> str:
        med = self.median_pointwise
        lines = [f"simulations: {self.n_sims_effective} (failed {self.n_failed})",
                 f"{'PC':>3} {'median moment':>14} {'median pct':>11} {'cone':>7}"]
        for k in range(self.cone_coverage.size):
            lines.append(f"{k + 1:>3} {med['moment'][k]:>14.4f} {med['percentile'][k]:>11.4f} "
                         f"{self.cone_coverage[k]:>7.4f}")
        lines.append(f"subspace coverage: {self.subspace_coverage:.4f}")
        return "\n".join(lines)

    def to_csv(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        K0 = self.cone_coverage.size
        cols = {"element": np.arange(self.pointwise_moment.shape[0])}
        for k in range(K0):
            cols[f"moment_pc{k + 1}"] = self.pointwise_moment[:, k]
            cols[f"percentile_pc{k + 1}"] = self.pointwise_percentile[:, k]
        write_csv(out / "pointwise_coverage.csv", cols)
        med = self.median_pointwise
        with open(out / "region_coverage.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "component", "coverage"])
            for k in range(K0):
                w.writerow(["median_pointwise_moment", k + 1, format(med["moment"][k], ".17g")])
                w.writerow(["median_pointwise_percentile", k + 1,
                            format(med["percentile"][k], ".17g")])
                w.writerow(["cone", k + 1, format(self.cone_coverage[k], ".17g")])
            w.writerow(["subspace", K0, format(self.subspace_coverage, ".17g")])
        (out / "summary.txt").write_text(self.summary_table() + "\n")
        (out / "meta.json").write_text(json.dumps(
            {"n_sims_effective": self.n_sims_effective, "n_failed": self.n_failed}))


def simulate_once(cfg: SimConfig, sim: int) -> dict[str, np.ndarray]:
    """Coverage indicators for one simulated sample."""
    K = cfg.K0
    rng = np.random.Generator(np.random.Philox(_sim_seed(cfg.seed, sim, 0)))
    Y = generate_sample(cfg, rng)
    svd = economy_svd(Y, center=True)
    boot_seed = int(_sim_seed(cfg.seed, sim, 1).generate_state(1, np.uint64)[0])
    ens = run_bootstrap(svd, cfg.B, K, seed=boot_seed, options=BootstrapOptions(keep_U=False))
    summ = moments_of_A(ens, allow_single=True)

    V = svd.V.to_array()[:, :K]
    # align truth with the fitted PCs by the same dot-product rule as the draws
    truth = cfg.basis * np.where(np.sum(cfg.basis * V, axis=0) < 0, -1.0, 1.0)

    mean = pc_mean(svd, summ.mean_A)
    se = pc_standard_errors(svd, summ.cov_A)
    moment = np.empty((cfg.p, K), dtype=bool)
    for k in range(K):
        moment[:, k] = moment_ci(mean[:, k], se[:, k], cfg.alpha).contains(truth[:, k])
    pct_iv = percentile_intervals(svd, ens, cfg.alpha)
    pct = np.column_stack([pct_iv[k].contains(truth[:, k]) for k in range(K)])

    coords = V.T @ cfg.basis  # K x K0, |psi_k' V_k| on the diagonal
    cone = np.array([abs(coords[k, k]) >= cone_threshold(summ, k, cfg.alpha)
                     for k in range(K)])
    subspace = np.linalg.norm(coords) >= subspace_threshold(summ, cfg.alpha)
    return {"moment": moment, "percentile": pct, "cone": cone, "subspace": subspace}


def run_coverage(cfg: SimConfig, progress=None) -> CoverageReport:
    """Repeat :func:`simulate_once` ``cfg.n_sims`` times and average."""
    t0 = time.perf_counter()
    acc = None
    done = failed = 0
    for sim in range(cfg.n_sims):
        try:
            res = simulate_once(cfg, sim)
        except (ValueError, np.linalg.LinAlgError):
            failed += 1
            continue
        if acc is None:
            acc = {k: np.asarray(v, dtype=np.int64) for k, v in res.items()}
        else:
            for k, v in res.items():
                acc[k] = acc[k] + v
        done += 1
        if progress is not None:
            progress(sim + 1, cfg.n_sims)
    if done == 0:
        raise RuntimeError("every simulated sample failed")
    return CoverageReport(
        pointwise_moment=acc["moment"] / done, pointwise_percentile=acc["percentile"] / done,
        cone_coverage=acc["cone"] / done, subspace_coverage=float(acc["subspace"]) / done,
        n_sims_effective=done, n_failed=failed, elapsed=time.perf_counter() - t0)
