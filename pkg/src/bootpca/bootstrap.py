"""Bootstrap replicates computed entirely in score space.

Every bootstrap sample ``Y[:, idx]`` lies in the span of the sample PCs, so
its SVD is ``(V A) diag(d_b) U_b'`` where ``A diag(d_b) U_b'`` is the SVD of
the resampled rank x n score matrix. Nothing here touches V or Y.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .matrixio import MatrixFormatError, pack_matrix, unpack_matrix
from .svd import SvdResult

SIGN_METHODS = ("dot", "correlation")

# stream purposes: one independent Philox stream per (replicate, purpose)
_IDX_STREAM = 0
_PRECOND_STREAM = 1


class SvdConvergenceError(np.linalg.LinAlgError):
    pass


def replicate_rng(seed: int, replicate_id: int, purpose: int = _IDX_STREAM) -> np.random.Generator:
    """Counter-based generator keyed on (seed, replicate_id, purpose).

    The stream depends only on its key, so replicates can be computed in any
    order or on any worker and still draw the same numbers.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(replicate_id, purpose))
    return np.random.Generator(np.random.Philox(ss))


def draw_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """n subject indices drawn uniformly with replacement from ``range(n)``."""
    if n < 1:
        raise ValueError("n must be positive")
    return rng.integers(0, n, size=n)


def resample_scores(S: np.ndarray, idx: np.ndarray, center: bool = True,
                    zero_leading: int = 0) -> np.ndarray:
    """Gather score columns by ``idx``.

    ``zero_leading=m`` zeroes the first m score rows first, which conditions
    on the leading m PCs being known. ``center`` removes the row means of the
    resampled matrix, equivalent to recentering the bootstrap sample in p
    dimensions.
    """
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= S.shape[1]):
        raise IndexError("resample index out of range")
    if not 0 <= zero_leading < S.shape[0]:
        raise ValueError(f"zero_leading must lie in [0, {S.shape[0]})")
    M = S[:, idx]
    if zero_leading:
        M[:zero_leading] = 0.0
    if center:
        M -= M.mean(axis=1, keepdims=True)
    return M


def random_rotation(size: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    # fix column signs so q is Haar-distributed and reproducible
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def truncated_svd_scores(M: np.ndarray, K: int, rng: np.random.Generator | None = None,
                         max_retries: int = 3, svd: Callable = np.linalg.svd,
                         force_precondition: bool = False
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Leading-K SVD of M with randomized preconditioning on failure.

    If ``svd`` raises ``LinAlgError`` the factorisation is retried on ``Q M``
    for a fresh random rotation Q (at most ``max_retries`` times); the left
    singular vectors are mapped back with ``Q'``.

    Returns
    -------
    A, d, U, attempts
        ``A`` is rank x K, ``d`` length K, ``U`` n x K; ``attempts`` is the
        number of preconditioned attempts used (0 for the direct path).
    """
    if not 1 <= K <= min(M.shape):
        raise ValueError(f"K must lie in [1, {min(M.shape)}], got {K}")
    if not force_precondition:
        try:
            a, s, vt = svd(M, full_matrices=False)
            return a[:, :K], s[:K], vt[:K].T, 0
        except np.linalg.LinAlgError:
            pass
    if rng is None:
        rng = np.random.default_rng()
    for attempt in range(1, max_retries + 1):
        Q = random_rotation(M.shape[0], rng)
        try:
            a, s, vt = svd(Q @ M, full_matrices=False)
        except np.linalg.LinAlgError:
            continue
        return Q.T @ a[:, :K], s[:K], vt[:K].T, attempt
    raise SvdConvergenceError(f"SVD failed to converge after {max_retries} preconditioned retries")


def sign_adjust(A: np.ndarray, U: np.ndarray | None, method: str = "dot",
                col_means: np.ndarray | None = None, p: int | None = None
                ) -> tuple[np.ndarray, np.ndarray | None]:
    """Resolve the sign ambiguity of each bootstrap component.

    ``dot`` flips column k when ``A[k, k] < 0`` (so ``V_b[:, k]' V[:, k] >= 0``).
    ``correlation`` flips when the covariance across the p coordinates of
    ``V A[:, k]`` and ``V[:, k]`` is negative; it needs ``col_means = V'1/p``.
    Exact zeros never flip.
    """
    K = A.shape[1]
    diag = A[np.arange(K), np.arange(K)]
    if method == "dot":
        crit = diag
    elif method == "correlation":
        if col_means is None or p is None:
            raise ValueError("correlation sign method needs col_means and p")
        m = np.asarray(col_means)[: A.shape[0]]
        crit = diag / p - (m @ A) * m[:K]
    else:
        raise ValueError(f"unknown sign method {method!r}")
    signs = np.where(crit < 0, -1.0, 1.0)
    A = A * signs
    if U is not None:
        U = U * signs
    return A, U


@dataclass(frozen=True)
class BootstrapOptions:
    center: bool = True
    sign_method: str = "dot"
    zero_leading: int = 0
    max_retries: int = 3
    keep_U: bool = True
    identity_resample: bool = False  # test hook: every replicate uses idx = 0..n-1

    def __post_init__(self):
        if self.sign_method not in SIGN_METHODS:
            raise ValueError(f"sign_method must be one of {SIGN_METHODS}")
        if self.zero_leading < 0 or self.max_retries < 0:
            raise ValueError("zero_leading and max_retries must be non-negative")


@dataclass
class BootstrapDraw:
    A: np.ndarray
    d: np.ndarray
    U: np.ndarray | None
    idx: np.ndarray
    total_var: float
    replicate_id: int
    preconditioned: int = 0


@dataclass
class BootstrapEnsemble:
    """Successful draws stacked along axis 0, plus reproduction metadata.

    ``replicate_ids`` maps rows back to replicate numbers; replicates whose
    SVD never converged are listed in ``failed_ids`` and carry no data.
    """
    A: np.ndarray            # (B_eff, rank, K)
    d: np.ndarray            # (B_eff, K)
    U: np.ndarray | None     # (B_eff, n, K)
    idx: np.ndarray          # (B_eff, n)
    total_var: np.ndarray    # (B_eff,)
    replicate_ids: np.ndarray
    B: int
    K: int
    n: int
    seed: int
    options: BootstrapOptions = field(default_factory=BootstrapOptions)
    failed_ids: list[int] = field(default_factory=list)
    preconditioned_ids: list[int] = field(default_factory=list)

    @property
    def B_effective(self) -> int:
        return int(self.replicate_ids.size)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def __len__(self) -> int:
        return self.B_effective

    def __getitem__(self, i: int) -> BootstrapDraw:
        return BootstrapDraw(A=self.A[i], d=self.d[i], U=None if self.U is None else self.U[i],
                             idx=self.idx[i], total_var=float(self.total_var[i]),
                             replicate_id=int(self.replicate_ids[i]),
                             preconditioned=int(self.replicate_ids[i] in self.preconditioned_ids))

    def __iter__(self) -> Iterator[BootstrapDraw]:
        for i in range(len(self)):
            yield self[i]

    def save(self, path) -> None:
        write_ensemble(self, path)

    @classmethod
    def load(cls, path) -> "BootstrapEnsemble":
        return read_ensemble(path)


def bootstrap_draw(S: np.ndarray, replicate_id: int, K: int, seed: int,
                   options: BootstrapOptions = BootstrapOptions(),
                   col_means: np.ndarray | None = None, p: int | None = None,
                   svd: Callable = np.linalg.svd) -> BootstrapDraw:
    """One replicate: indices, resampled scores, truncated SVD, sign fix."""
    n = S.shape[1]
    if options.identity_resample:
        idx = np.arange(n)
    else:
        idx = draw_indices(n, replicate_rng(seed, replicate_id, _IDX_STREAM))
    M = resample_scores(S, idx, center=options.center, zero_leading=options.zero_leading)
    total_var = float(np.sum(M * M) / (n - 1))
    A, d, U, attempts = truncated_svd_scores(
        M, K, rng=replicate_rng(seed, replicate_id, _PRECOND_STREAM),
        max_retries=options.max_retries, svd=svd)
    A, U = sign_adjust(A, U, options.sign_method, col_means, p)
    return BootstrapDraw(A=A, d=d, U=U if options.keep_U else None, idx=idx,
                         total_var=total_var, replicate_id=replicate_id,
                         preconditioned=attempts)


def run_bootstrap(svd: SvdResult, B: int, K: int, seed: int = 0,
                  options: BootstrapOptions = BootstrapOptions(), workers: int = 1,
                  svd_func: Callable = np.linalg.svd) -> BootstrapEnsemble:
    """Run B bootstrap replicates in score space.

    Results are identical for any ``workers`` value: each replicate draws
    from its own keyed stream and the ensemble is assembled in replicate
    order.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if not 1 <= K <= svd.rank - options.zero_leading:
        raise ValueError(f"K must lie in [1, {svd.rank - options.zero_leading}] "
                         f"(rank {svd.rank}, zero_leading {options.zero_leading})")
    if svd.n < 2:
        raise ValueError("need at least two subjects")
    S = svd.scores

    def one(b: int):
        try:
            return bootstrap_draw(S, b, K, seed, options, svd.v_colmeans, svd.p, svd_func)
        except SvdConvergenceError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(B)))
        return _assemble(results, B, K, svd.n, svd.rank, seed, options)
    return _assemble([one(b) for b in range(B)], B, K, svd.n, svd.rank, seed, options)


def _assemble(results, B, K, n, rank, seed, options) -> BootstrapEnsemble:
    ok = [r for r in results if r is not None]
    failed = [b for b, r in enumerate(results) if r is None]
    if not ok:
        raise SvdConvergenceError(f"all {B} bootstrap replicates failed")
    return BootstrapEnsemble(
        A=np.stack([r.A for r in ok]).reshape(len(ok), rank, K),
        d=np.stack([r.d for r in ok]),
        U=np.stack([r.U for r in ok]) if options.keep_U else None,
        idx=np.stack([r.idx for r in ok]).astype(np.int64),
        total_var=np.array([r.total_var for r in ok]),
        replicate_ids=np.array([r.replicate_id for r in ok], dtype=np.int64),
        B=B, K=K, n=n, seed=seed, options=options, failed_ids=failed,
        preconditioned_ids=[r.replicate_id for r in ok if r.preconditioned])


# ---------------------------------------------------------------------------
# ensemble file format
#
# header: magic "BPCE", version u32, B u64, K u64, n u64, rank u64, seed u64,
#         center u8, sign_method u8, keep_U u8, identity_resample u8,
#         zero_leading u32, max_retries u32
# per replicate b = 0..B-1: status u8 (0 failed, 1 ok, 2 ok after
#         preconditioning); if ok: idx as n x u32, A (matrix format),
#         U (matrix format, only if keep_U), d as K x f8, total_var f8

_ENS_MAGIC = b"BPCE"
_ENS_HEADER = struct.Struct("<4sIQQQQQBBBBII")


def write_ensemble(e: BootstrapEnsemble, path) -> None:
    o = e.options
    chunks = [_ENS_HEADER.pack(_ENS_MAGIC, 1, e.B, e.K, e.n, e.rank, e.seed, o.center,
                               SIGN_METHODS.index(o.sign_method), o.keep_U,
                               o.identity_resample, o.zero_leading, o.max_retries)]
    row_of = {int(b): i for i, b in enumerate(e.replicate_ids)}
    pre = set(e.preconditioned_ids)
    for b in range(e.B):
        i = row_of.get(b)
        if i is None:
            chunks.append(b"\x00")
            continue
        chunks.append(b"\x02" if b in pre else b"\x01")
        chunks.append(e.idx[i].astype("<u4").tobytes())
        chunks.append(pack_matrix(e.A[i]))
        if o.keep_U:
            chunks.append(pack_matrix(e.U[i]))
        chunks.append(np.asarray(e.d[i], dtype="<f8").tobytes())
        chunks.append(struct.pack("<d", e.total_var[i]))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_ensemble(path) -> BootstrapEnsemble:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _ENS_HEADER.size:
        raise MatrixFormatError("truncated ensemble header")
    (magic, version, B, K, n, rank, seed, center, sign, keep_U, ident,
     zero_leading, max_retries) = _ENS_HEADER.unpack_from(buf)
    if magic != _ENS_MAGIC or version != 1:
        raise MatrixFormatError("bad ensemble magic or version")
    options = BootstrapOptions(center=bool(center), sign_method=SIGN_METHODS[sign],
                               zero_leading=zero_leading, max_retries=max_retries,
                               keep_U=bool(keep_U), identity_resample=bool(ident))
    off = _ENS_HEADER.size
    draws = []
    try:
        for b in range(B):
            status = buf[off]
            off += 1
            if status == 0:
                continue
            idx = np.frombuffer(buf, dtype="<u4", count=n, offset=off).astype(np.int64)
            off += 4 * n
            A, off = unpack_matrix(buf, off)
            U = None
            if keep_U:
                U, off = unpack_matrix(buf, off)
            d = np.frombuffer(buf, dtype="<f8", count=K, offset=off).astype(np.float64)
            off += 8 * K
            (tv,) = struct.unpack_from("<d", buf, off)
            off += 8
            draws.append(BootstrapDraw(A=A, d=d, U=U, idx=idx, total_var=tv,
                                       replicate_id=b, preconditioned=int(status == 2)))
    except (IndexError, ValueError, struct.error) as err:
        raise MatrixFormatError(f"truncated ensemble file: {err}") from None
    slots = [None] * B
    for dr in draws:
        slots[dr.replicate_id] = dr
    return _assemble(slots, B, K, n, rank, seed, options)
