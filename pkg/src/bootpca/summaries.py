"""Low-dimensional bootstrap summaries and their p-dimensional projections.

Only :func:`pc_mean`, :func:`pc_standard_errors`, :func:`elliptical_axes`,
:func:`target_variance_explained` and the membership helpers that take a
p-vector read V; every other statistic here is computed from the
ensemble's A matrices.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapEnsemble, resample_scores
from .matrixio import TallMatrix
from .svd import SvdResult


@dataclass
class EnsembleSummary:
    mean_A: np.ndarray          # (rank, K)
    cov_A: np.ndarray           # (K, rank, rank)
    eig_samples: np.ndarray     # (B_eff, K)
    cone_stats: np.ndarray      # (B_eff, K), |A[k, k]|
    subspace_stats: np.ndarray  # (B_eff,), ||A[:K, :K]||_F
    A: np.ndarray               # (B_eff, rank, K), kept for elliptical regions
    B_effective: int

    @property
    def K(self) -> int:
        return self.mean_A.shape[1]


@dataclass
class PointwiseInterval:
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    kind: str  # "moment" or "percentile"

    def contains(self, x: np.ndarray) -> np.ndarray:
        return (self.lower <= x) & (x <= self.upper)


def empirical_quantile(x: np.ndarray, alpha: float, axis: int = 0) -> np.ndarray:
    """Type-1 empirical quantile: the ``ceil(alpha * B)``-th smallest value.

    ``alpha * B`` is rounded to 9 decimals before the ceiling so products
    like ``0.07 * 100`` land on the intended order statistic.
    """
    x = np.asarray(x)
    B = x.shape[axis]
    k = quantile_rank(alpha, B)
    return np.take(np.partition(x, k, axis=axis), k, axis=axis)


def quantile_rank(alpha: float, B: int) -> int:
    """Zero-based order-statistic index used by :func:`empirical_quantile`."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if B < 1:
        raise ValueError("need at least one value")
    return min(max(math.ceil(round(alpha * B, 9)), 1), B) - 1


# Acklam's rational approximation to the inverse normal CDF, refined by one
# Halley step; the result is accurate to well below 1e-9.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(prob: float) -> float:
    if not 0 < prob < 1:
        raise ValueError("probability must lie in (0, 1)")
    lo = 0.02425
    if prob < lo:
        q = math.sqrt(-2 * math.log(prob))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    elif prob > 1 - lo:
        q = math.sqrt(-2 * math.log1p(-prob))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    else:
        q = prob - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - prob
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def moments_of_A(e: BootstrapEnsemble, allow_single: bool = False) -> EnsembleSummary:
    """Bootstrap mean and per-component covariance of the columns of A.

    Covariances use the unbiased ``B - 1`` divisor. With ``allow_single``
    a one-draw ensemble yields zero covariances instead of an error.
    """
    B = e.B_effective
    if B < 2 and not (allow_single and B == 1):
        raise ValueError(f"need at least 2 successful replicates, have {B}")
    A = e.A
    K = e.K
    mean_A = A.mean(axis=0)
    dev = A - mean_A
    if B > 1:
        cov_A = np.einsum("bik,bjk->kij", dev, dev) / (B - 1)
    else:
        cov_A = np.zeros((K, A.shape[1], A.shape[1]))
    ks = np.arange(K)
    return EnsembleSummary(
        mean_A=mean_A, cov_A=cov_A, eig_samples=e.d**2 / (e.n - 1),
        cone_stats=np.abs(A[:, ks, ks]),
        subspace_stats=np.sqrt(np.sum(A[:, :K, :K] ** 2, axis=(1, 2))),
        A=A, B_effective=B)


def pc_mean(svd: SvdResult, mean_A: np.ndarray) -> np.ndarray:
    """Bootstrap mean of the PCs, ``V E(A)``, one pass over V."""
    out = np.empty((svd.p, mean_A.shape[1]))
    for start, vb in svd.V.blocks():
        out[start:start + vb.shape[0]] = vb @ mean_A
    return out


def pc_standard_errors(svd: SvdResult, cov_A: np.ndarray) -> np.ndarray:
    """Elementwise bootstrap SDs of the PCs from ``diag(V Cov(A_k) V')``.

    The diagonal is taken as the row sums of ``(V Cov(A_k)) * V``, all K
    components fused into a single pass over V.
    """
    K = cov_A.shape[0]
    out = np.empty((svd.p, K))
    for start, vb in svd.V.blocks():
        rows = slice(start, start + vb.shape[0])
        for k in range(K):
            out[rows, k] = np.sum((vb @ cov_A[k]) * vb, axis=1)
    return np.sqrt(np.maximum(out, 0.0))


def moment_ci(center, se, alpha: float = 0.05, truncate: bool = False) -> PointwiseInterval:
    """Wald interval ``center +/- z_{1-alpha/2} se``, optionally clipped to [-1, 1]."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    center = np.asarray(center, dtype=float)
    half = normal_quantile(1 - alpha / 2) * np.asarray(se, dtype=float)
    lower, upper = center - half, center + half
    if truncate:
        lower, upper = np.clip(lower, -1, 1), np.clip(upper, -1, 1)
    return PointwiseInterval(center=center, lower=lower, upper=upper, alpha=alpha, kind="moment")


def cone_threshold(summary: EnsembleSummary, k: int, alpha: float = 0.05) -> float:
    """Lower alpha-quantile of ``|A[k, k]|`` (k is zero-based).

    The cone is ``{x : |x' V[:, k]| >= threshold}``.
    """
    return float(empirical_quantile(summary.cone_stats[:, k], alpha))


# slack for membership comparisons, so that e.g. |V_k'V_k| = 1 - ulp still
# counts as meeting a threshold of exactly 1
MEMBERSHIP_TOL = 1e-12


def cone_contains_coords(coords: np.ndarray, k: int, threshold: float,
                         tol: float = MEMBERSHIP_TOL) -> bool:
    """Cone membership for a unit vector given its coordinates ``V'x``."""
    return bool(abs(coords[k]) >= threshold - tol)


def project_onto_pcs(svd: SvdResult, x: np.ndarray) -> np.ndarray:
    """``V' x`` for a p-vector or p x m matrix, one pass over V."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((svd.rank,) + x.shape[1:])
    for start, vb in svd.V.blocks():
        out += vb.T @ x[start:start + vb.shape[0]]
    return out


def cone_contains(svd: SvdResult, x: np.ndarray, k: int, threshold: float,
                  tol: float = MEMBERSHIP_TOL) -> bool:
    return cone_contains_coords(project_onto_pcs(svd, x), k, threshold, tol)


def subspace_threshold(summary: EnsembleSummary, alpha: float = 0.05) -> float:
    """Lower alpha-quantile of ``||A[:K, :K]||_F``."""
    return float(empirical_quantile(summary.subspace_stats, alpha))


def subspace_statistic_coords(coords: np.ndarray, K: int) -> float:
    """``||X' V[:, :K]||_F`` from ``coords = V'X`` (rank x m)."""
    return float(np.linalg.norm(coords[:K]))


def subspace_contains(svd: SvdResult, X: np.ndarray, threshold: float,
                      tol: float = MEMBERSHIP_TOL) -> bool:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return subspace_statistic_coords(project_onto_pcs(svd, X), X.shape[1]) >= threshold - tol


@dataclass
class EllipticalRegion:
    """``{x : (V'x - e_k)' P (V'x - e_k) <= radius}`` with P = pinv(Cov(A_k))."""
    pseudo_inverse: np.ndarray
    center: np.ndarray
    radius: float
    axis_lengths: np.ndarray  # sqrt of retained covariance eigenvalues
    axis_coords: np.ndarray   # rank x m, retained eigenvectors of Cov(A_k)
    k: int

    def statistic_coords(self, coords: np.ndarray) -> float:
        return float(_mahalanobis(np.asarray(coords, dtype=float) - self.center,
                                  self.pseudo_inverse))

    def contains_coords(self, coords: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
        if self.axis_lengths.size == 0:
            # zero covariance: the region collapses to the sample PC itself
            return bool(np.linalg.norm(np.asarray(coords) - self.center) <= tol)
        return self.statistic_coords(coords) <= self.radius


def _mahalanobis(diff: np.ndarray, P: np.ndarray) -> np.ndarray:
    # one fixed summation order for single vectors and batches alike, so a
    # draw sitting exactly on the radius is classified consistently
    return np.einsum("...i,ij,...j->...", diff, P, diff)


def pseudo_inverse_psd(C: np.ndarray, rel_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Moore-Penrose inverse of a PSD matrix by eigen-thresholding.

    Returns the inverse together with the retained eigenvalues/vectors.
    """
    w, W = np.linalg.eigh(0.5 * (C + C.T))
    order = np.argsort(w)[::-1]
    w, W = w[order], W[:, order]
    if w.size == 0 or w[0] <= 0:
        return np.zeros_like(C), w[:0], W[:, :0]
    keep = w > rel_tol * w[0]
    w, W = w[keep], W[:, keep]
    return (W / w) @ W.T, w, W


def elliptical_cr(summary: EnsembleSummary, k: int, alpha: float = 0.05) -> EllipticalRegion:
    """Elliptical confidence region for PC k in coordinates ``V'x``.

    The radius is the upper ``1 - alpha`` quantile of the bootstrap
    Mahalanobis statistics, so that ``1 - alpha`` of the draws fall inside.
    """
    rank = summary.mean_A.shape[0]
    if summary.B_effective <= rank:
        warnings.warn(f"B_effective={summary.B_effective} does not exceed rank={rank}; "
                      "the covariance of A is rank deficient", stacklevel=2)
    P, w, W = pseudo_inverse_psd(summary.cov_A[k])
    delta = np.zeros(rank)
    delta[k] = 1.0
    diff = summary.A[:, :, k] - delta
    stats = _mahalanobis(diff, P)
    radius = 0.0 if w.size == 0 else float(empirical_quantile(stats, 1 - alpha))
    return EllipticalRegion(pseudo_inverse=P, center=delta, radius=radius,
                            axis_lengths=np.sqrt(w), axis_coords=W, k=k)


def elliptical_axes(svd: SvdResult, region: EllipticalRegion) -> np.ndarray:
    """Primary axes of the region in p dimensions (p x m, unit columns)."""
    return pc_mean(svd, region.axis_coords)


@dataclass
class EigenvalueStats:
    boot_eigs: np.ndarray                 # (B_eff, K)
    sample_eigs: np.ndarray               # (K,)
    percent_bias: np.ndarray              # (K,), in percent
    variance_explained_fractions: np.ndarray  # (B_eff, K)


def eigenvalue_stats(e: BootstrapEnsemble, sample_d: np.ndarray, n: int) -> EigenvalueStats:
    """Bootstrap covariance eigenvalues ``d_b^2 / (n-1)`` and their percent bias.

    Percent bias is ``100 * (mean_b lambda_b - lambda) / lambda``.
    """
    boot = e.d**2 / (n - 1)
    lam = np.asarray(sample_d[: e.K]) ** 2 / (n - 1)
    bias = 100.0 * (boot.mean(axis=0) - lam) / lam
    return EigenvalueStats(boot_eigs=boot, sample_eigs=lam, percent_bias=bias,
                           variance_explained_fractions=boot / e.total_var[:, None])


def target_variance_explained(svd: SvdResult, T, e: BootstrapEnsemble) -> np.ndarray:
    """Per-replicate variance of the resampled data projected onto span(T).

    ``W = V'T (T'T)^{-1} T'V`` is built in one pass over V and T; each
    replicate then costs only score-space work: ``tr(S_b' W S_b) / (n-1)``.
    """
    T = T.to_array() if isinstance(T, TallMatrix) else np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if T.shape[0] != svd.p:
        raise ValueError(f"target has {T.shape[0]} rows, expected p={svd.p}")
    VtT = np.zeros((svd.rank, T.shape[1]))
    TtT = np.zeros((T.shape[1], T.shape[1]))
    for start, vb in svd.V.blocks():
        tb = T[start:start + vb.shape[0]]
        VtT += vb.T @ tb
        TtT += tb.T @ tb
    if np.linalg.matrix_rank(TtT) < T.shape[1]:
        raise np.linalg.LinAlgError("target matrix T is rank deficient")
    W = VtT @ np.linalg.solve(TtT, VtT.T)
    S = svd.scores
    o = e.options
    out = np.empty(e.B_effective)
    for b in range(e.B_effective):
        Sb = resample_scores(S, e.idx[b], center=o.center, zero_leading=o.zero_leading)
        out[b] = np.sum((W @ Sb) * Sb) / (e.n - 1)
    return out


def a_column_intervals(summary: EnsembleSummary, k: int, alpha: float = 0.05,
                       truncate: bool = False) -> tuple[PointwiseInterval, PointwiseInterval]:
    """Moment and percentile intervals for each element of ``A[:, k]``.

    These are the low-dimensional displays of rotational variability: row i
    says how much bootstrap PC k loads on sample PC i.
    """
    col = summary.A[:, :, k]
    sd = np.sqrt(np.maximum(np.diag(summary.cov_A[k]), 0.0))
    mom = moment_ci(summary.mean_A[:, k], sd, alpha, truncate=truncate)
    lo = empirical_quantile(col, alpha / 2, axis=0)
    hi = empirical_quantile(col, 1 - alpha / 2, axis=0)
    pct = PointwiseInterval(center=summary.mean_A[:, k], lower=lo, upper=hi,
                            alpha=alpha, kind="percentile")
    return mom, pct


# ---------------------------------------------------------------------------
# CSV export

def write_csv(path, columns: dict[str, np.ndarray]) -> list[str]:
    """Write equal-length columns with 17 significant digits; returns the header."""
    names = list(columns)
    data = [np.asarray(columns[c]).ravel() for c in names]
    length = {d.size for d in data}
    if len(length) != 1:
        raise ValueError("columns must share a length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*data):
            w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v
                        for v in row])
    return names


class SummaryExporter:
    """Collects CSV files into a directory and records them in manifest.json."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.manifest: dict[str, dict] = {}

    def add(self, name: str, description: str, columns: dict[str, np.ndarray]) -> Path:
        path = self.out_dir / f"{name}.csv"
        header = write_csv(path, columns)
        self.manifest[path.name] = {"description": description, "columns": header}
        return path

    def close(self) -> None:
        (self.out_dir / "manifest.json").write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True))
