"""Centered economy SVD of a tall matrix through its n x n Gram matrix.

Two streaming passes over the data are made: the first accumulates row
means and ``G = Yc' Yc``; the second forms ``V = Yc U diag(1/d)`` one row
block at a time, optionally writing it straight to disk.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matrixio import (MatrixWriter, TallMatrix, read_matrix, read_vector,
                       write_matrix, write_vector)

_EPS = np.finfo(np.float64).eps
# Gram eigenvalues below this multiple of n * eps * lambda_1 are round-off.
_GRAM_NOISE = 16.0


class DegenerateSampleError(ValueError):
    pass


@dataclass
class SvdResult:
    """``Yc = V diag(d) U'`` with ``Yc`` the (optionally) row-centered data.

    ``v_colmeans`` holds ``V' 1_p / p``, collected during the V pass so the
    correlation sign rule never has to revisit V.
    """
    V: TallMatrix
    d: np.ndarray
    U: np.ndarray
    mu: np.ndarray
    v_colmeans: np.ndarray
    centered: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.d.size

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.V.p

    @property
    def scores(self) -> np.ndarray:
        """The rank x n score matrix ``diag(d) U'``."""
        return self.d[:, None] * self.U.T

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.d**2 / (self.n - 1)

    @property
    def total_variance(self) -> float:
        return float(np.sum(self.d**2) / (self.n - 1))

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        v_file = out / "V.bpca"
        if self.V.path is None or Path(self.V.path).resolve() != v_file.resolve():
            write_matrix(self.V, v_file)
        write_matrix(TallMatrix.from_array(self.U), out / "U.bpca")
        write_vector(self.d, out / "d.vec")
        write_vector(self.mu, out / "mu.vec")
        write_vector(self.v_colmeans, out / "v_colmeans.vec")
        meta = dict(self.meta, centered=self.centered, rank=self.rank, n=self.n, p=self.p)
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, in_dir, lazy: bool = True) -> "SvdResult":
        src = Path(in_dir)
        meta = json.loads((src / "meta.json").read_text())
        V = read_matrix(src / "V.bpca", lazy=lazy)
        U = read_matrix(src / "U.bpca").to_array()
        return cls(V=V, d=read_vector(src / "d.vec"), U=U, mu=read_vector(src / "mu.vec"),
                   v_colmeans=read_vector(src / "v_colmeans.vec"),
                   centered=bool(meta.pop("centered")), meta=meta)


def center_rows(m: TallMatrix) -> tuple[TallMatrix, np.ndarray]:
    """Subtract each row's mean; returns the centered matrix and the means."""
    out = np.empty(m.shape)
    mu = np.empty(m.p)
    for start, block in m.blocks():
        stop = start + block.shape[0]
        mu[start:stop] = block.mean(axis=1)
        out[start:stop] = block - mu[start:stop, None]
    return TallMatrix(out, m.block_rows), mu


def gram(m: TallMatrix, mu: np.ndarray | None = None) -> np.ndarray:
    """``Y'Y`` accumulated over row blocks; ``mu`` is subtracted on the fly."""
    G = np.zeros((m.n, m.n))
    for start, block in m.blocks():
        if mu is not None:
            block = block - mu[start:start + block.shape[0], None]
        G += block.T @ block
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("Gram matrix overflowed to non-finite values")
    return 0.5 * (G + G.T)


def _row_means_and_gram(m: TallMatrix, center: bool) -> tuple[np.ndarray, np.ndarray]:
    G = np.zeros((m.n, m.n))
    mu = np.zeros(m.p)
    for start, block in m.blocks():
        if center:
            mu[start:start + block.shape[0]] = block.mean(axis=1)
            block = block - mu[start:start + block.shape[0], None]
        G += block.T @ block
    if not np.all(np.isfinite(G)):
        raise FloatingPointError("Gram matrix overflowed to non-finite values")
    return mu, 0.5 * (G + G.T)


def complement_of_ones(n: int) -> np.ndarray:
    """Orthonormal n x (n-1) basis of the subspace orthogonal to ``1_n``."""
    q, _ = np.linalg.qr(np.ones((n, 1)), mode="complete")
    return q[:, 1:]


def sign_convention(U: np.ndarray) -> np.ndarray:
    """Per-column signs making each column's largest-magnitude entry positive.

    Ties go to the lowest index (``argmax`` picks the first maximum).
    """
    rows = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[rows, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def gram_eigen(G: np.ndarray, tol: float = 1e-12, center: bool = True
               ) -> tuple[np.ndarray, np.ndarray]:
    """Singular values and right singular vectors from a Gram matrix.

    When ``center`` is set the eigenproblem is solved inside the complement
    of ``1_n``, so the null direction created by centering is removed
    exactly rather than by thresholding.
    """
    n = G.shape[0]
    if center:
        if n < 2:
            raise DegenerateSampleError("degenerate sample: centering a single column")
        H = complement_of_ones(n)
        w, W = np.linalg.eigh(H.T @ G @ H)
        W = H @ W
    else:
        w, W = np.linalg.eigh(G)
    order = np.argsort(w)[::-1]
    w = np.clip(w[order], 0.0, None)
    W = W[:, order]
    if w.size == 0 or w[0] <= 0.0:
        raise DegenerateSampleError("degenerate sample: matrix has rank 0")
    d = np.sqrt(w)
    keep = (d > tol * d[0]) & (w > _GRAM_NOISE * n * _EPS * w[0])
    d, W = d[keep], W[:, keep]
    W = W * sign_convention(W)
    return d, W


def economy_svd(m: TallMatrix, tol: float = 1e-12, center: bool = True,
                v_path: str | os.PathLike | None = None) -> SvdResult:
    """Economy SVD of the (row-centered) tall matrix ``m``.

    Parameters
    ----------
    m : TallMatrix
        The p x n data, subjects as columns.
    tol : float
        Components with ``d[k] <= tol * d[0]`` are dropped.
    center : bool
        Subtract row means before decomposing.
    v_path : path, optional
        If given, V is streamed to this file and returned memory-mapped;
        otherwise it is held in memory.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    mu, G = _row_means_and_gram(m, center)
    d, U = gram_eigen(G, tol=tol, center=center)
    proj = U / d

    colsum = np.zeros(d.size)
    if v_path is not None:
        with MatrixWriter(v_path, m.p, d.size, m.block_rows) as w:
            for start, block in m.blocks():
                vb = (block - mu[start:start + block.shape[0], None]) @ proj
                colsum += vb.sum(axis=0)
                w.write(vb)
        V = read_matrix(v_path, lazy=True)
    else:
        Vdata = np.empty((m.p, d.size))
        for start, block in m.blocks():
            vb = (block - mu[start:start + block.shape[0], None]) @ proj
            colsum += vb.sum(axis=0)
            Vdata[start:start + vb.shape[0]] = vb
        V = TallMatrix(Vdata, m.block_rows)
    return SvdResult(V=V, d=d, U=U, mu=mu, v_colmeans=colsum / m.p, centered=center,
                     meta={"tol": tol})
