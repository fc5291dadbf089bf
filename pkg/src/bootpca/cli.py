"""Command-line pipeline: import -> svd -> bootstrap -> summarize / percentiles.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapEnsemble, BootstrapOptions, SvdConvergenceError, run_bootstrap
from .matrixio import (MatrixFormatError, TallMatrix, export_csv, import_csv, read_matrix,
                       write_matrix)
from .oracle import brute_force_timing, oracle_check
from .projection import (MemoryBudgetError, PercentilePlan, stream_percentiles,
                         write_draws)
from .simulation import SimConfig, run_coverage
from .summaries import (SummaryExporter, a_column_intervals, cone_threshold,
                        eigenvalue_stats, moment_ci, moments_of_A, pc_mean,
                        pc_standard_errors, subspace_threshold, target_variance_explained)
from .svd import DegenerateSampleError, SvdResult, economy_svd


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _components(text: str | None, K: int) -> list[int]:
    """Parse a 1-based component list like ``1,3`` into zero-based indices."""
    if not text:
        return list(range(K))
    comps = [int(c) - 1 for c in text.split(",") if c.strip()]
    if any(not 0 <= c < K for c in comps):
        raise UsageError(f"components must lie in 1..{K}")
    return comps


def cmd_import(args) -> int:
    m = import_csv(args.input, orientation=args.orientation, block_rows=args.block_rows,
                   skip_header=args.skip_header)
    write_matrix(m, args.output)
    print(f"p={m.p} n={m.n} block_rows={m.block_rows}")
    return 0


def cmd_export(args) -> int:
    export_csv(read_matrix(args.input, lazy=True), args.output)
    return 0


def cmd_svd(args) -> int:
    m = read_matrix(args.input, lazy=True)
    if args.block_rows:
        m = m.with_block_rows(min(args.block_rows, m.p))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = economy_svd(m, tol=args.tol, center=args.center, v_path=out / "V.bpca")
    res.save(out)
    frac = res.d**2 / np.sum(res.d**2)
    print(f"rank {res.rank}")
    print("component,singular_value,variance_explained")
    for k in range(min(10, res.rank)):
        print(f"{k + 1},{res.d[k]:.10g},{frac[k]:.6f}")
    return 0


def cmd_bootstrap(args) -> int:
    svd = SvdResult.load(args.svd_dir)
    if args.K > svd.rank - args.zero_leading:
        raise UsageError(f"-K {args.K} exceeds usable rank {svd.rank - args.zero_leading}")
    opts = BootstrapOptions(center=not args.no_center_scores, sign_method=args.sign_method,
                            zero_leading=args.zero_leading, max_retries=args.max_retries,
                            keep_U=not args.drop_U, identity_resample=args.identity_resample)
    ens = run_bootstrap(svd, args.B, args.K, seed=args.seed, options=opts, workers=args.threads)
    ens.save(args.out)
    print(f"B_effective {ens.B_effective}")
    print(f"failed {len(ens.failed_ids)}")
    print(f"preconditioned {len(ens.preconditioned_ids)}")
    return 0


def cmd_summarize(args) -> int:
    svd = SvdResult.load(args.svd_dir)
    ens = BootstrapEnsemble.load(args.ensemble)
    comps = _components(args.components, ens.K)
    summ = moments_of_A(ens)
    ex = SummaryExporter(args.out_dir)

    mean = pc_mean(svd, summ.mean_A)
    se = pc_standard_errors(svd, summ.cov_A)
    rows = np.arange(svd.p)
    sample = pc_mean(svd, np.eye(svd.rank)[:, comps])
    ex.add("sample_pcs", "sample principal components",
           {"element": rows, **{f"pc{k + 1}": sample[:, j] for j, k in enumerate(comps)}})
    ex.add("means", "bootstrap mean of each PC element, V E(A)",
           {"element": rows, **{f"pc{k + 1}": mean[:, k] for k in comps}})
    ex.add("standard_errors", "bootstrap standard error of each PC element",
           {"element": rows, **{f"pc{k + 1}": se[:, k] for k in comps}})
    iv = {"element": rows}
    for k in comps:
        ci = moment_ci(mean[:, k], se[:, k], args.alpha, truncate=args.truncate_unit)
        iv[f"pc{k + 1}_lower"] = ci.lower
        iv[f"pc{k + 1}_upper"] = ci.upper
    ex.add("moment_intervals", f"moment CIs, alpha={args.alpha}", iv)

    thr = {"component": [], "cone_threshold": []}
    for k in comps:
        thr["component"].append(k + 1)
        thr["cone_threshold"].append(cone_threshold(summ, k, args.alpha))
    ex.add("cone_thresholds", "lower alpha-quantile of |A[k,k]|; cone is |x'V_k| >= value",
           {k: np.array(v) for k, v in thr.items()})
    ex.add("subspace_threshold", "lower alpha-quantile of ||A[1:K,1:K]||_F",
           {"K": np.array([ens.K]),
            "subspace_threshold": np.array([subspace_threshold(summ, args.alpha)])})

    eig = eigenvalue_stats(ens, svd.d, svd.n)
    ex.add("eigenvalue_draws", "bootstrap covariance eigenvalues d_b^2/(n-1) per replicate",
           {"replicate": ens.replicate_ids,
            **{f"lambda{k + 1}": eig.boot_eigs[:, k] for k in comps},
            **{f"fraction{k + 1}": eig.variance_explained_fractions[:, k] for k in comps}})
    ex.add("percent_bias", "100*(mean bootstrap eigenvalue - sample)/sample",
           {"component": np.array([k + 1 for k in comps]),
            "sample_eigenvalue": eig.sample_eigs[comps],
            "percent_bias": eig.percent_bias[comps]})

    acol = {"row": np.arange(summ.mean_A.shape[0]) + 1}
    for k in comps:
        mom, pct = a_column_intervals(summ, k, args.alpha, truncate=args.truncate_unit)
        acol[f"A{k + 1}_mean"] = mom.center
        acol[f"A{k + 1}_moment_lower"] = mom.lower
        acol[f"A{k + 1}_moment_upper"] = mom.upper
        acol[f"A{k + 1}_pct_lower"] = pct.lower
        acol[f"A{k + 1}_pct_upper"] = pct.upper
    ex.add("a_column_intervals", "low-dimensional intervals for elements of A[:,k]", acol)

    if args.target:
        T = read_matrix(args.target)
        tv = target_variance_explained(svd, T, ens)
        ex.add("target_variance", "variance of each bootstrap sample explained by span(T)",
               {"replicate": ens.replicate_ids, "variance": tv,
                "fraction": tv / ens.total_var})
    ex.close()
    print(f"B_effective {ens.B_effective}")
    for k in comps:
        print(f"pc{k + 1} cone_threshold {cone_threshold(summ, k, args.alpha):.6f} "
              f"percent_bias {eig.percent_bias[k]:.3f}")
    print(f"subspace_threshold {subspace_threshold(summ, args.alpha):.6f}")
    return 0


def cmd_percentiles(args) -> int:
    svd = SvdResult.load(args.svd_dir)
    ens = BootstrapEnsemble.load(args.ensemble)
    comps = _components(args.components, ens.K)
    plan = PercentilePlan([args.alpha / 2, 1 - args.alpha / 2], components=comps,
                          memory_budget=args.memory_budget)
    bands = stream_percentiles(svd, ens, plan)
    ex = SummaryExporter(args.out_dir)
    cols = {"element": np.arange(svd.p)}
    for k in comps:
        cols[f"pc{k + 1}_lower"] = bands[k].values[0]
        cols[f"pc{k + 1}_upper"] = bands[k].values[1]
    ex.add("percentile_intervals", f"type-1 percentile CIs, alpha={args.alpha}", cols)
    ex.close()
    if args.write_draws:
        write_draws(svd, ens, args.write_draws)
    return 0


def cmd_simulate(args) -> int:
    try:
        if args.config:
            cfg = SimConfig.from_file(args.config)
        else:
            values = {k: getattr(args, k) for k in
                      ("p", "n", "K0", "sigma2", "spacing", "B", "n_sims", "alpha", "seed")
                      if getattr(args, k) is not None}
            if args.score_sds:
                values["score_sds"] = args.score_sds
            cfg = SimConfig.from_mapping(values)
    except ValueError as err:
        raise UsageError(f"invalid simulation config: {err}") from err
    report = run_coverage(cfg)
    report.to_csv(args.out_dir)
    print(report.summary_table())
    return 0


def _synthetic(p: int, n: int, seed: int, path: Path | None = None, rank: int = 10) -> TallMatrix:
    """Low-rank-plus-noise test data, generated block by block."""
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal((rank, n)) * (2.0 ** -np.arange(rank))[:, None]
    block = max(1, min(p, 2**24 // (8 * n)))
    if path is None:
        Y = np.empty((p, n))
        for s in range(0, p, block):
            r = min(block, p - s)
            Y[s:s + r] = rng.standard_normal((r, rank)) @ scores + 0.1 * rng.standard_normal((r, n))
        return TallMatrix(Y, block)
    from .matrixio import MatrixWriter
    with MatrixWriter(path, p, n, block) as w:
        for s in range(0, p, block):
            r = min(block, p - s)
            w.write(rng.standard_normal((r, rank)) @ scores + 0.1 * rng.standard_normal((r, n)))
    return read_matrix(path, lazy=True)


def benchmark_row(p: int, n: int, B: int, K: int, seed: int, workdir: Path | None = None,
                  percentiles: bool = True) -> dict:
    Y = _synthetic(p, n, seed, None if workdir is None else workdir / f"Y_{p}.bpca")
    t = time.perf_counter
    t0 = t()
    svd = economy_svd(Y, v_path=None if workdir is None else workdir / f"V_{p}.bpca")
    t1 = t()
    ens = run_bootstrap(svd, B, K, seed=seed, options=BootstrapOptions(keep_U=False))
    t2 = t()
    summ = moments_of_A(ens)
    pc_standard_errors(svd, summ.cov_A)
    t3 = t()
    pct = float("nan")
    if percentiles:
        stream_percentiles(svd, ens, PercentilePlan([0.025, 0.975]))
        pct = t() - t3
    brute = brute_force_timing(Y, B, K, seed=seed)
    se_total = (t1 - t0) + (t2 - t1) + (t3 - t2)
    return {"p": p, "n": n, "B": B, "K": K, "svd_seconds": t1 - t0,
            "bootstrap_seconds": t2 - t1, "se_seconds": t3 - t2,
            "percentile_seconds": pct, "se_total_seconds": se_total,
            "percentile_total_seconds": (t1 - t0) + (t2 - t1) + pct,
            "brute_force_seconds": brute, "speedup_se": brute / se_total}


def cmd_benchmark(args) -> int:
    p_list = [int(v) for v in args.p_list.split(",") if v.strip()]
    rows = []
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        for p in p_list:
            workdir = Path(tmp) if p * args.n * 8 > 2**28 else None
            rows.append(benchmark_row(p, args.n, args.B, args.K, args.seed, workdir,
                                      percentiles=not args.skip_percentiles))
    fh = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_oracle_check(args) -> int:
    Y = read_matrix(args.input)
    svd = economy_svd(Y, center=not args.no_center)
    ens = run_bootstrap(svd, args.B, args.K, seed=args.seed,
                        options=BootstrapOptions(center=not args.no_center))
    rep = oracle_check(Y, svd.V.to_array(), ens, gap=args.gap)
    print(f"draws {rep.n_draws} excluded {rep.n_excluded} "
          f"subspace_failures {rep.n_subspace_failures}")
    print(f"max_abs_pc_error {rep.max_pc_error:.3e} max_rel_sv_error {rep.max_sv_error:.3e}")
    ok = rep.passed()
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="bootpca", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="worker count for replicate loops")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("import", help="convert CSV to the binary matrix format")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--orientation", choices=["subjects-as-columns", "subjects-as-rows"],
                   default="subjects-as-columns")
    s.add_argument("--block-rows", type=int, default=None)
    s.add_argument("--skip-header", action="store_true")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("export", help="write a binary matrix as CSV (17 digits)")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("svd", help="centered economy SVD of the sample")
    s.add_argument("--input", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--center", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--block-rows", type=int, default=None)
    s.set_defaults(func=cmd_svd)

    s = sub.add_parser("bootstrap", help="run bootstrap replicates in score space")
    s.add_argument("--svd-dir", required=True)
    s.add_argument("-B", type=int, default=1000)
    s.add_argument("-K", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sign-method", choices=["dot", "correlation"], default="dot")
    s.add_argument("--no-center-scores", action="store_true")
    s.add_argument("--zero-leading", type=int, default=0, metavar="M")
    s.add_argument("--max-retries", type=int, default=3)
    s.add_argument("--drop-U", action="store_true", help="do not store U_b")
    s.add_argument("--identity-resample", action="store_true", help=argparse.SUPPRESS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("summarize", help="moments, SEs, CIs, CR thresholds, eigenvalues")
    s.add_argument("--svd-dir", required=True)
    s.add_argument("--ensemble", required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--components", default=None, help="1-based list, e.g. 1,2")
    s.add_argument("--target", default=None, help="p x m target matrix file")
    s.add_argument("--truncate-unit", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("percentiles", help="streamed pointwise percentile intervals")
    s.add_argument("--svd-dir", required=True)
    s.add_argument("--ensemble", required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--components", default=None)
    s.add_argument("--memory-budget", type=int, default=2**28, help="bytes")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--write-draws", default=None, metavar="DIR")
    s.set_defaults(func=cmd_percentiles)

    s = sub.add_parser("simulate", help="coverage simulation")
    s.add_argument("--config", default=None)
    for name, typ in (("p", int), ("n", int), ("K0", int), ("sigma2", float),
                      ("B", int), ("n_sims", int), ("alpha", float), ("seed", int)):
        flags = ["-B", "--B"] if name == "B" else [f"--{name.replace('_', '-')}"]
        s.add_argument(*flags, dest=name, type=typ, default=None)
    s.add_argument("--score-sds", default=None, help="comma-separated")
    s.add_argument("--spacing", choices=["given", "geometric-half"], default=None)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("benchmark", help="timing of fast vs brute-force bootstrap")
    s.add_argument("--p-list", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("-B", type=int, default=200)
    s.add_argument("-K", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--skip-percentiles", action="store_true")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("oracle-check", help="compare fast draws with brute force")
    s.add_argument("--input", required=True)
    s.add_argument("-B", type=int, default=100)
    s.add_argument("-K", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gap", type=float, default=1e-6)
    s.add_argument("--no-center", action="store_true")
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(f"bootpca: error: {err}", file=sys.stderr)
        return 2
    except (MatrixFormatError, DegenerateSampleError, SvdConvergenceError, MemoryBudgetError,
            OSError, ValueError, np.linalg.LinAlgError) as err:
        print(f"bootpca: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
