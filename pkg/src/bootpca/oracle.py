"""Naive reference: decompose every materialised bootstrap sample directly.

This is the O(B p n^2) baseline the fast path is checked and timed against.
It is deliberately simple and unoptimised.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .bootstrap import draw_indices, replicate_rng
from .matrixio import TallMatrix


def _as_array(Y) -> np.ndarray:
    return Y.to_array() if isinstance(Y, TallMatrix) else np.asarray(Y, dtype=float)


def brute_force_draw(Y, idx, K: int, center: bool = True, V_ref: np.ndarray | None = None
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD of ``Y[:, idx]`` truncated to K components.

    If ``V_ref`` (the sample PCs) is given, each column is flipped so that
    its dot product with the matching sample PC is non-negative.
    """
    raw = _as_array(Y)[:, np.asarray(idx)]
    Yb = raw - raw.mean(axis=1, keepdims=True) if center else raw
    left, s, vt = np.linalg.svd(Yb, full_matrices=False)
    Vb, d, Ub = left[:, :K], s[:K], vt[:K].T
    if not np.any(d > ZERO_TOL * np.linalg.norm(raw)):
        warnings.warn("bootstrap sample is degenerate: all singular values are zero",
                      stacklevel=2)
    if V_ref is not None:
        signs = np.where(np.sum(Vb * V_ref[:, :K], axis=0) < 0, -1.0, 1.0)
        Vb, Ub = Vb * signs, Ub * signs
    return Vb, d, Ub


# singular values below ZERO_TOL * d[0] are round-off, i.e. exact zeros
ZERO_TOL = 1e-10


def numerical_rank(d: np.ndarray) -> int:
    d = np.asarray(d)
    if d.size == 0 or d[0] <= 0:
        return 0
    return int(np.sum(d > ZERO_TOL * d[0]))


def relative_gap(d: np.ndarray, K: int) -> float:
    """Smallest relative spacing among the leading K+1 singular values.

    Gaps to the (K+1)-th value matter too: if it ties with the K-th, the
    K-th singular vector is not determined. Values that are numerically
    zero count as tied with each other (a resample with few distinct
    subjects has rank below K).
    """
    d = np.asarray(d, dtype=float)
    m = min(K + 1, d.size)
    if m < 2:
        return np.inf
    if d[0] <= 0:
        return 0.0
    lead = np.where(d[:m] > ZERO_TOL * d[0], d[:m], 0.0)
    gaps = lead[:-1] - lead[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(lead[:-1] > 0, gaps / lead[:-1], 0.0)
    return float(np.min(rel))


def principal_angles(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the column spans of X and Y."""
    qx, _ = np.linalg.qr(X)
    qy, _ = np.linalg.qr(Y)
    s = np.linalg.svd(qx.T @ qy, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def brute_force_timing(Y, B: int, K: int, seed: int = 0, center: bool = True,
                       extrapolate: bool = True) -> float:
    """Wall time of the naive bootstrap.

    With ``extrapolate`` a single replicate is timed and multiplied by B,
    as is customary when the full run would take too long; otherwise all B
    replicates are run.
    """
    if B <= 0:
        return 0.0
    Y = _as_array(Y)
    n = Y.shape[1]
    reps = 1 if extrapolate else B
    t0 = time.perf_counter()
    for b in range(reps):
        idx = draw_indices(n, replicate_rng(seed, b))
        brute_force_draw(Y, idx, K, center=center)
    elapsed = time.perf_counter() - t0
    return elapsed * B if extrapolate else elapsed


@dataclass
class OracleReport:
    n_draws: int
    n_excluded: int
    n_subspace_failures: int
    max_pc_error: float
    max_sv_error: float
    max_angle_excluded: float = 0.0

    def passed(self, pc_tol: float = 1e-6, sv_tol: float = 1e-8,
               max_excluded: float = 0.05) -> bool:
        return (self.max_pc_error <= pc_tol and self.max_sv_error <= sv_tol
                and self.n_subspace_failures == 0
                and self.n_excluded < max_excluded * self.n_draws)


def oracle_check(Y, V: np.ndarray, ensemble, gap: float = 1e-6,
                 angle_tol: float = 1e-4) -> OracleReport:
    """Compare every fast draw ``(V A, d_b)`` with the brute-force SVD.

    Draws whose leading singular values are closer than ``gap`` (relative)
    are not compared elementwise; they must instead agree as subspaces to
    within ``angle_tol`` radians. When the resample itself has rank below
    K only the determined leading columns enter that check.
    """
    Y = _as_array(Y)
    K = ensemble.K
    center = ensemble.options.center
    worst_pc = worst_sv = worst_angle = 0.0
    excluded = failures = 0
    for draw in ensemble:
        Vb, db, _ = brute_force_draw(Y, draw.idx, K + 1, center=center, V_ref=None)
        fast = V @ draw.A
        if relative_gap(db, K) < gap:
            excluded += 1
            m = min(K, numerical_rank(db))
            if m == 0:
                continue
            angle = float(np.max(principal_angles(fast[:, :m], Vb[:, :m])))
            worst_angle = max(worst_angle, angle)
            failures += angle >= angle_tol
            continue
        Vb = Vb[:, :K] * np.where(np.sum(Vb[:, :K] * V[:, :K], axis=0) < 0, -1.0, 1.0)
        worst_pc = max(worst_pc, float(np.max(np.abs(fast - Vb))))
        worst_sv = max(worst_sv, float(np.max(np.abs(draw.d - db[:K]) / db[:K])))
    return OracleReport(n_draws=len(ensemble), n_excluded=excluded,
                        n_subspace_failures=failures, max_pc_error=worst_pc,
                        max_sv_error=worst_sv, max_angle_excluded=worst_angle)
