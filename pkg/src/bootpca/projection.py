"""p-dimensional reconstruction of bootstrap PCs.

Percentile intervals need the full bootstrap distribution of every PC
element, but only one row block of it at a time: each block of V is
projected against all B draws, the requested order statistics are pulled
out with a partial sort, and the block is dropped.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import BootstrapDraw, BootstrapEnsemble
from .matrixio import MatrixWriter
from .summaries import PointwiseInterval, quantile_rank
from .svd import SvdResult


def project_rows(vb: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``vb @ A`` accumulated column by column in a fixed order.

    Each output element is the same sequence of multiply-adds whatever the
    height of ``vb``, so results do not depend on the block partition
    (a BLAS product gives no such guarantee).
    """
    out = vb[:, :1] * A[:1]
    for j in range(1, vb.shape[1]):
        out += vb[:, j:j + 1] * A[j:j + 1]
    return out


def project_draw(svd: SvdResult, draw: BootstrapDraw | np.ndarray, out=None,
                 block_rows: int | None = None):
    """Bootstrap PCs ``V A`` for one draw.

    Written blockwise to ``out`` in the matrix format when a path is given,
    otherwise returned as a p x K array.
    """
    A = draw.A if isinstance(draw, BootstrapDraw) else np.asarray(draw)
    if A.shape[0] != svd.rank:
        raise ValueError(f"draw has {A.shape[0]} rows, SVD rank is {svd.rank}")
    if out is None:
        res = np.empty((svd.p, A.shape[1]))
        for start, vb in svd.V.blocks(block_rows):
            res[start:start + vb.shape[0]] = project_rows(vb, A)
        return res
    with MatrixWriter(out, svd.p, A.shape[1], block_rows or svd.V.block_rows) as w:
        for _, vb in svd.V.blocks(block_rows):
            w.write(project_rows(vb, A))
    return None


class MemoryBudgetError(ValueError):
    pass


@dataclass
class PercentilePlan:
    """Which quantiles to extract and how many V rows to hold at once.

    Exactly one of ``block_rows`` / ``memory_budget`` (bytes) is normally
    given; the per-block working set is ``block_rows * B * 8`` bytes.
    """
    alphas: list[float]
    block_rows: int | None = None
    components: list[int] | None = None
    memory_budget: int | None = None
    _alphas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if a.size == 0 or np.any((a <= 0) | (a >= 1)):
            raise ValueError("alphas must lie in (0, 1)")
        self._alphas = np.sort(a)
        self.alphas = list(self._alphas)

    def rows_for(self, B: int, p: int) -> int:
        rows = self.block_rows or p
        if self.memory_budget is not None:
            fit = self.memory_budget // (8 * B)
            if fit < 1:
                raise MemoryBudgetError(
                    f"memory budget {self.memory_budget} B is below one row of draws; "
                    f"need at least {8 * B} bytes")
            rows = min(rows, fit)
        return max(1, min(rows, p))


@dataclass
class PercentileBands:
    """Requested quantiles of each PC element: ``values[j]`` is the p-vector
    for ``alphas[j]``."""
    k: int
    alphas: list[float]
    values: np.ndarray

    def interval(self, alpha: float, center: np.ndarray | None = None) -> PointwiseInterval:
        lo = self.values[self.alphas.index(alpha / 2)]
        hi = self.values[self.alphas.index(1 - alpha / 2)]
        return PointwiseInterval(center=center if center is not None else 0.5 * (lo + hi),
                                 lower=lo, upper=hi, alpha=alpha, kind="percentile")


def stream_percentiles(svd: SvdResult, e: BootstrapEnsemble, plan: PercentilePlan
                       ) -> dict[int, PercentileBands]:
    """Per-element type-1 quantiles of ``V A_b[:, k]`` over the ensemble.

    Memory is ``O(block_rows * B)``; the p x B distribution never exists.
    """
    B = e.B_effective
    comps = list(range(e.K)) if plan.components is None else list(plan.components)
    ranks = [quantile_rank(a, B) for a in plan.alphas]
    kth = sorted(set(ranks))
    rows = plan.rows_for(B, svd.p)
    # A_k laid out rank x B so one projection yields all draws for a block
    Ak = {k: np.ascontiguousarray(e.A[:, :, k].T) for k in comps}
    out = {k: np.empty((len(ranks), svd.p)) for k in comps}
    for start, vb in svd.V.blocks(rows):
        stop = start + vb.shape[0]
        for k in comps:
            vals = np.partition(project_rows(vb, Ak[k]), kth, axis=1)
            out[k][:, start:stop] = vals[:, ranks].T
    return {k: PercentileBands(k=k, alphas=list(plan.alphas), values=out[k]) for k in comps}


def percentile_intervals(svd: SvdResult, e: BootstrapEnsemble, alpha: float = 0.05,
                         components=None, block_rows=None, memory_budget=None
                         ) -> dict[int, PointwiseInterval]:
    """Convenience wrapper: ``(q(alpha/2), q(1 - alpha/2))`` per PC element."""
    plan = PercentilePlan([alpha / 2, 1 - alpha / 2], block_rows=block_rows,
                          components=components, memory_budget=memory_budget)
    bands = stream_percentiles(svd, e, plan)
    return {k: b.interval(alpha) for k, b in bands.items()}


def write_draws(svd: SvdResult, e: BootstrapEnsemble, out_dir) -> list[str]:
    """Materialise every ``V A_b`` as ``draw_<replicate>.bpca`` in ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for draw in e:
        path = os.path.join(out_dir, f"draw_{draw.replicate_id:06d}.bpca")
        project_draw(svd, draw, path)
        paths.append(path)
    return paths
