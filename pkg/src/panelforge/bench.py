"""Benchmark CLI: sweep problem sizes, time each scheduling strategy, report
GFLOPS as CSV.

Problem instances are square matrices with uniform random entries, generated
from a seed that derives deterministically from (seed, kind, n), so every
strategy at a given size factors the bitwise-identical matrix and repeated
runs reproduce the same instances.  Timing covers only the library call:
generation, copying and optional result checking are excluded, and the best
(minimum) of the timed repetitions is reported.

Run as ``python -m panelforge.bench --help``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass

import numpy as np

from .core import CacheConfig, Matrix
from .factor import Kind, Strategy, TaskGraph, dmf_la, dmf_mtb, dmf_rtm, flops
from .kernels import gemm
from .oracle import UNIT_ROUNDOFF, lu_residual, naive_gemm, qr_residual
from .runtime import MalleableTeam, Pool, default_thread_count

logger = logging.getLogger(__name__)

CSV_HEADER = "kind,strategy,n,b,threads,seconds,gflops,residual"

_KINDS = ("lu", "qr", "gemm")
_FACTOR_STRATEGIES = {
    "mtb": Strategy.MTB,
    "rtm": Strategy.RTM,
    "la": Strategy.LA,
    "la-mb": Strategy.LA_MB,
}


@dataclass(frozen=True)
class BenchRecord:
    kind: str            # LU | QR | GEMM
    strategy: str        # MTB/RTM/LA/LA_MB, or MTB-GEMM/RTM-GEMM
    n: int
    b: int
    threads: int
    seconds: float       # best of the timed repetitions
    gflops: float        # flop_count(kind, n) / seconds / 1e9
    residual: float | None = None


@dataclass(frozen=True)
class SweepSpec:
    n_min: int = 256
    n_max: int = 4096
    n_step: int = 256
    reps: int = 3
    seed: int = 0
    strategies: tuple[str, ...] = ("mtb", "rtm", "la", "la-mb")
    kinds: tuple[str, ...] = ("lu",)
    check: bool = False

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise ValueError("n_min must not exceed n_max")
        if self.n_step < 1 or self.reps < 1:
            raise ValueError("n_step and reps must be >= 1")
        for k in self.kinds:
            if k not in _KINDS:
                raise ValueError(f"unknown kind {k!r}")

    def sizes(self):
        return range(self.n_min, self.n_max + 1, self.n_step)


def flop_count(kind: str, n: int) -> int:
    if kind == "gemm":
        return 2 * n ** 3
    return flops(Kind.LU if kind == "lu" else Kind.QR, n)


def _instance_seed(seed: int, kind: str, n: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, _KINDS.index(kind), n])


def make_instance(seed: int, kind: str, n: int) -> Matrix:
    """The uniform-random problem matrix for (seed, kind, n); bitwise
    reproducible across runs and shared by all strategies."""
    rng = np.random.default_rng(_instance_seed(seed, kind, n))
    return Matrix.from_array(rng.random((n, n)))


def rtm_gemm(c: Matrix, a: Matrix, b: Matrix, block: int, pool: Pool,
             cfg: CacheConfig):
    """Task-parallel GEMM study variant: the operands are cut into
    block x block tiles and every C_ij += A_ik B_kj becomes one task, chained
    over k per output tile; tasks run a serial gemm."""
    n = c.rows
    tiles = [(i0, min(block, n - i0)) for i0 in range(0, n, block)]

    graph = TaskGraph()
    for ti, (i0, hi) in enumerate(tiles):
        for tj, (j0, wj) in enumerate(tiles):
            for tk, (k0, wk) in enumerate(tiles):
                cv = c.view().subview(i0, j0, hi, wj)
                av = a.view().subview(i0, k0, hi, wk)
                bv = b.view().subview(k0, j0, wk, wj)

                def body(cv=cv, av=av, bv=bv):
                    gemm(cv, av, bv, cfg=cfg)

                deps = ((ti, tj, tk - 1),) if tk > 0 else ()
                graph.add((ti, tj, tk), body, deps)
    graph.run(pool)


def _time_factor(kind: str, strategy: str, pristine: Matrix, cfg, pool, reps,
                 check: bool):
    kd = Kind.LU if kind == "lu" else Kind.QR
    strat = _FACTOR_STRATEGIES[strategy]

    def run_once():
        work = pristine.copy()
        t0 = time.perf_counter()
        if strat is Strategy.MTB:
            out = dmf_mtb(work, cfg, pool, kd)
        elif strat is Strategy.RTM:
            out = dmf_rtm(work, cfg, pool, kd)
        else:
            out = dmf_la(work, cfg, pool, kd,
                         malleable=strat is Strategy.LA_MB)
        return time.perf_counter() - t0, out

    run_once()                                    # warm-up
    best, out = min((run_once() for _ in range(reps)), key=lambda r: r[0])
    residual = None
    if check:
        if kd is Kind.LU:
            residual = lu_residual(pristine.array, out).value
        else:
            residual = max(r.value for r in qr_residual(pristine.array, out))
    return best, residual


def _time_gemm(strategy: str, seed: int, n: int, cfg, pool, reps, check: bool):
    rng = np.random.default_rng(_instance_seed(seed, "gemm", n))
    a = Matrix.from_array(rng.random((n, n)))
    b = Matrix.from_array(rng.random((n, n)))
    team = MalleableTeam(pool.t, max_size=pool.t)

    def run_once():
        c = Matrix.zeros(n, n)
        t0 = time.perf_counter()
        if strategy == "mtb":
            gemm(c.view(), a.view(), b.view(), cfg=cfg, pool=pool, team=team)
        else:
            rtm_gemm(c, a, b, cfg.b, pool, cfg)
        return time.perf_counter() - t0, c

    run_once()
    best, c = min((run_once() for _ in range(reps)), key=lambda r: r[0])
    residual = None
    if check:
        ref = np.zeros((n, n), order="F")
        naive_gemm(ref, a.array, b.array)
        scale = np.abs(a.array) @ np.abs(b.array)
        scale[scale == 0.0] = 1.0
        residual = float(np.max(np.abs(c.array - ref) / (n * UNIT_ROUNDOFF * scale)))
    return best, residual


def run_sweep(spec: SweepSpec, cfg: CacheConfig, pool: Pool):
    """Warm up, time ``reps`` runs per (kind, strategy, n) and keep the
    minimum; allocation failures skip the record and the sweep continues."""
    records = []
    for kind in spec.kinds:
        if kind == "gemm":
            strategies = [s for s in spec.strategies if s in ("mtb", "rtm")]
            skipped = set(spec.strategies) - set(strategies)
            if skipped:
                logger.warning("gemm study supports mtb/rtm only; skipping %s",
                               sorted(skipped))
        else:
            strategies = list(spec.strategies)
        for n in spec.sizes():
            try:
                pristine = make_instance(spec.seed, kind, n) \
                    if kind != "gemm" else None
            except MemoryError:
                logger.warning("skipping %s n=%d: allocation failure", kind, n)
                continue
            for strategy in strategies:
                try:
                    if kind == "gemm":
                        seconds, residual = _time_gemm(
                            strategy, spec.seed, n, cfg, pool, spec.reps,
                            spec.check)
                        label = f"{strategy.upper()}-GEMM"
                    else:
                        seconds, residual = _time_factor(
                            kind, strategy, pristine, cfg, pool, spec.reps,
                            spec.check)
                        label = _FACTOR_STRATEGIES[strategy].name
                except MemoryError:
                    logger.warning("skipping %s/%s n=%d: allocation failure",
                                   kind, strategy, n)
                    continue
                records.append(BenchRecord(
                    kind=kind.upper(), strategy=label, n=n, b=cfg.b,
                    threads=pool.t, seconds=seconds,
                    gflops=flop_count(kind, n) / seconds / 1e9,
                    residual=residual))
    return records


def emit_csv(records, sink):
    """Write records as CSV (header always, one row per record, plain decimal
    points, residual column empty when unchecked)."""
    own = False
    if isinstance(sink, str):
        sink = open(sink, "w", encoding="ascii")
        own = True
    try:
        sink.write(CSV_HEADER + "\n")
        for r in records:
            res = "" if r.residual is None else repr(r.residual)
            sink.write(f"{r.kind},{r.strategy},{r.n},{r.b},{r.threads},"
                       f"{r.seconds!r},{r.gflops!r},{res}\n")
    finally:
        if own:
            sink.close()


def parse_csv(text: str):
    """Inverse of :func:`emit_csv` (used by the round-trip checks)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("missing or unexpected CSV header")
    records = []
    for ln in lines[1:]:
        kind, strategy, n, b, threads, seconds, gflops, residual = ln.split(",")
        records.append(BenchRecord(
            kind=kind, strategy=strategy, n=int(n), b=int(b),
            threads=int(threads), seconds=float(seconds),
            gflops=float(gflops),
            residual=None if residual == "" else float(residual)))
    return records


def _parse_cache(text: str) -> tuple[int, ...]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 5:
        raise argparse.ArgumentTypeError("--cache expects mc,nc,kc,mr,nr")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="panelforge-bench",
        description="Sweep matrix sizes and report GFLOPS per scheduling "
                    "strategy as CSV.")
    p.add_argument("--kind", choices=_KINDS, default="lu")
    p.add_argument("--strategy", choices=list(_FACTOR_STRATEGIES) + ["all"],
                   default="all")
    p.add_argument("--n-min", type=int, default=256)
    p.add_argument("--n-max", type=int, default=4096)
    p.add_argument("--n-step", type=int, default=256)
    p.add_argument("--b", type=int, default=192, help="panel/block size")
    p.add_argument("--threads", type=int, default=None,
                   help="pool size (default: PANELFORGE_THREADS or CPU count)")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--check", action="store_true",
                   help="verify results against the reference oracles "
                        "(not timed)")
    p.add_argument("--csv", default="stdout",
                   help="output path, or 'stdout'")
    p.add_argument("--cache", type=_parse_cache, default=(72, 4032, 256, 8, 6),
                   metavar="mc,nc,kc,mr,nr")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    mc, nc, kc, mr, nr = args.cache
    cfg = CacheConfig(mc=mc, nc=nc, kc=kc, mr=mr, nr=nr, b=args.b)
    strategies = tuple(_FACTOR_STRATEGIES) if args.strategy == "all" \
        else (args.strategy,)
    spec = SweepSpec(n_min=args.n_min, n_max=args.n_max, n_step=args.n_step,
                     reps=args.reps, seed=args.seed, strategies=strategies,
                     kinds=(args.kind,), check=args.check)
    threads = args.threads if args.threads is not None else default_thread_count()
    with Pool(threads) as pool:
        records = run_sweep(spec, cfg, pool)
    if args.csv == "stdout":
        emit_csv(records, sys.stdout)
    else:
        emit_csv(records, args.csv)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
