"""Blocked LU (partial pivoting) and Householder QR under four schedulers.

All four drivers execute the same panel factorizations and the same
column-sliced trailing-update kernels on the same operands; they differ only
in how that work is ordered and mapped onto workers:

* ``dmf_mtb``   fork-join: serial panel, then the trailing update on the full
                team (the panel is the modeled bottleneck).
* ``dmf_rtm``   task graph: panel factorizations and per-panel trailing
                updates become dependency-tracked tasks run by a ready-queue
                executor, each with a serial kernel team.
* ``dmf_la``    static look-ahead (depth 1): a dedicated worker updates the
                next panel's columns and factorizes it while the remaining
                workers update the rest of the trailing matrix; with
                ``malleable=True`` the panel worker rejoins the team as soon
                as the panel is done.

Because the kernels' per-element arithmetic is independent of how the
trailing columns are grouped, the four drivers produce bitwise-identical
factors, pivots and tau values.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import _jit
from .core import CacheConfig, Matrix, MatrixView, cont_with_3x3, part_2x2, repart_3x3
from .kernels import Transpose, gemm, laswp, trmm_ut, trsm_llnu
from .runtime import (MalleableTeam, Pool, _Latch, _WorkItem, _wait_helping,
                      promote, sections_2)


class Kind(enum.Enum):
    LU = "lu"
    QR = "qr"


class Strategy(enum.Enum):
    MTB = "mtb"
    RTM = "rtm"
    LA = "la"
    LA_MB = "la-mb"


@dataclass
class LuOutput:
    """In-place LU factors (unit-lower L below the diagonal, U on and above)
    plus 1-based pivot indices of length min(m, n).

    ``info`` is 0, or the 1-based index of the first column whose pivot was
    exactly zero (the column is left zeroed below the diagonal)."""

    matrix: Matrix
    pivots: np.ndarray
    strategy: Strategy
    info: int = 0


@dataclass
class QrOutput:
    """In-place QR factors: R in the upper triangle, Householder vectors
    (unit head, stored below the diagonal) and their tau scalars."""

    matrix: Matrix
    tau: np.ndarray
    strategy: Strategy


@dataclass(frozen=True, order=True)
class PanelTaskKey:
    """Task name in the factorization DAG, keyed by the representant block.

    ``j == k`` names the panel factorization of step k; ``j > k`` names the
    update of column panel j by step k's transformations.
    """

    k: int
    j: int

    @property
    def is_panel_factorization(self) -> bool:
        return self.j == self.k


def task_dependencies(key: PanelTaskKey) -> tuple[PanelTaskKey, ...]:
    """Exact dependency edges: PF(k) <- TU(k-1, k); TU(k, j) <- {PF(k),
    TU(k-1, j)}."""
    if key.is_panel_factorization:
        if key.k == 0:
            return ()
        return (PanelTaskKey(key.k - 1, key.k),)
    deps = [PanelTaskKey(key.k, key.k)]
    if key.k > 0:
        deps.append(PanelTaskKey(key.k - 1, key.j))
    return tuple(deps)


@dataclass(frozen=True)
class TraceEvent:
    """One timed task occurrence, for dependency audits and overlap reports."""

    label: str
    k: int
    j: int | None
    start: float
    end: float
    worker: int | None


def _worker_id() -> int | None:
    return getattr(threading.current_thread(), "pf_worker_index", None)


def _record(trace, label, k, j, t0, t1):
    if trace is not None:
        trace.append(TraceEvent(label, k, j, t0, t1, _worker_id()))


# ---------------------------------------------------------------------------
# panel kernels

def lu_unb(panel: MatrixView, row_base: int = 0):
    """Unblocked right-looking LU with partial pivoting, in place.

    Column j picks the largest |entry| on or below the diagonal (ties to the
    smallest row), swaps that row across the full panel width, scales the
    sub-diagonal by 1/pivot and applies the rank-1 update to the remaining
    panel columns.  Returns ``(pivots, info)`` where pivots are 1-based and
    offset by ``row_base``, and info flags the first exactly-zero pivot
    column (0 if none; that column is left as zeros, unscaled).
    """
    m_p, bw = panel.rows, panel.cols
    if m_p < 1 or bw < 1:
        raise ValueError("panel must be non-empty")
    piv = np.empty(min(m_p, bw), dtype=np.int64)
    info = _jit.lu_unb_run(panel.base.data, panel.row_off, panel.col_off,
                           m_p, bw, piv)
    return piv + (row_base + 1), int(info)


def qr_unb(panel: MatrixView) -> np.ndarray:
    """Unblocked Householder QR of a tall panel (geqr2 shape), in place.

    Returns the tau scalars; a zero column yields tau = 0 and an unchanged
    panel (null reflector).
    """
    m_p, bw = panel.rows, panel.cols
    if m_p < bw:
        raise ValueError("panel must be at least as tall as wide")
    tau = np.zeros(bw)
    if bw:
        _jit.qr_unb_run(panel.base.data, panel.row_off, panel.col_off,
                        m_p, bw, tau)
    return tau


def reflector_matrix(panel: MatrixView) -> np.ndarray:
    """Dense copy of the stored reflectors: unit diagonal, zero above."""
    v = np.tril(panel.array, -1)
    np.fill_diagonal(v, 1.0)
    return v


def larft_forward_columnwise(panel_v: MatrixView, tau) -> np.ndarray:
    """Accumulate the upper-triangular T with I - V T V^T = H_1 H_2 ... H_b.

    Built column by column: T[:j, j] = -tau_j T[:j, :j] (V[:, :j]^T v_j) and
    T[j, j] = tau_j.
    """
    v = reflector_matrix(panel_v)
    bw = v.shape[1]
    t = np.zeros((bw, bw))
    for j in range(bw):
        t[j, j] = tau[j]
        if j:
            w = v[:, :j].T @ v[:, j]
            t[:j, j] = -tau[j] * (t[:j, :j] @ w)
    return t


def apply_block_reflector(panel_v: MatrixView, t: np.ndarray, c: MatrixView,
                          cfg: CacheConfig | None = None,
                          pool: Pool | None = None,
                          team: MalleableTeam | None = None):
    """c <- (I - V T V^T)^T c, computed as c - V (T^T (V^T c)).

    Realized with gemm and the triangular multiply only, so the whole update
    runs on (and is malleable with) the given team.
    """
    if c.rows == 0 or c.cols == 0 or t.shape[0] == 0:
        return
    v = Matrix.from_array(reflector_matrix(panel_v))
    tm = Matrix.from_array(t)
    w = Matrix.zeros(t.shape[0], c.cols)
    gemm(w.view(), v.view(), c, ta=Transpose.TRANS, tb=Transpose.NONE,
         cfg=cfg, pool=pool, team=team)
    trmm_ut(tm.view(), w.view(), transpose_t=True, pool=pool, team=team)
    np.negative(w.array, out=w.array)        # exact sign flip
    gemm(c, v.view(), w.view(), cfg=cfg, pool=pool, team=team)


def flops(kind: Kind, n: int) -> int:
    """Standard flop counts: 2n^3/3 for LU, 4n^3/3 for QR, rounded to the
    nearest integer."""
    if n < 1:
        raise ValueError("n must be >= 1")
    num = (2 if kind is Kind.LU else 4) * n ** 3
    q, r = divmod(num, 3)
    return q + (1 if 2 * r >= 3 else 0)


# ---------------------------------------------------------------------------
# shared driver pieces

@dataclass
class _PanelFactors:
    k: int
    col0: int
    bw: int
    pivots: np.ndarray | None = None     # LU: global 1-based
    t_block: np.ndarray | None = None    # QR: block-reflector triangle


def _panel_grid(n: int, b: int):
    count = -(-n // b)
    return [(k, k * b, min(b, n - k * b)) for k in range(count)]


def _factor_panel(kind: Kind, a: Matrix, k: int, col0: int, bw: int,
                  out_piv, out_tau, trace=None):
    m = a.rows
    panel = a.view().subview(col0, col0, m - col0, bw)
    t0 = time.perf_counter()
    if kind is Kind.LU:
        piv, info = lu_unb(panel, row_base=col0)
        out_piv[col0: col0 + bw] = piv
        pf = _PanelFactors(k, col0, bw, pivots=piv)
    else:
        tau = qr_unb(panel)
        out_tau[col0: col0 + bw] = tau
        pf = _PanelFactors(k, col0, bw, t_block=larft_forward_columnwise(panel, tau))
        info = 0
    _record(trace, "PF", k, None, t0, time.perf_counter())
    return pf, (col0 + info if info else 0)


def _panel_laswp(a: Matrix, pf: _PanelFactors, lo: int, hi: int,
                 pool=None, team=None):
    # pivots are global 1-based; shift into the row frame of the update view
    view = a.view().subview(pf.col0, lo, a.rows - pf.col0, hi - lo)
    laswp(view, pf.pivots - pf.col0, pool=pool, team=team)


def _apply_left_swaps(a: Matrix, pf: _PanelFactors, pool=None, team=None):
    if pf.pivots is None or pf.col0 == 0:
        return
    _panel_laswp(a, pf, 0, pf.col0, pool=pool, team=team)


def _update_columns(kind: Kind, a: Matrix, pf: _PanelFactors, lo: int, hi: int,
                    cfg: CacheConfig, pool=None, team=None):
    """Apply step ``pf.k``'s transformations to columns [lo, hi)."""
    if hi <= lo:
        return
    m = a.rows
    col0, bw = pf.col0, pf.bw
    if kind is Kind.LU:
        _panel_laswp(a, pf, lo, hi, pool=pool, team=team)
        l11 = a.view().subview(col0, col0, bw, bw)
        a12 = a.view().subview(col0, lo, bw, hi - lo)
        trsm_llnu(l11, a12, pool=pool, team=team)
        below = col0 + bw
        if below < m:
            a21 = a.view().subview(below, col0, m - below, bw)
            a22 = a.view().subview(below, lo, m - below, hi - lo)
            # accumulate-only gemm: negate the (small) multiplier block, the
            # sign flip is exact so A22 += A21 (-A12) == A22 -= A21 A12
            neg = Matrix.from_array(np.negative(a12.array))
            gemm(a22, a21, neg.view(), cfg=cfg, pool=pool, team=team)
    else:
        panel = a.view().subview(col0, col0, m - col0, bw)
        c = a.view().subview(col0, lo, m - col0, hi - lo)
        apply_block_reflector(panel, pf.t_block, c, cfg=cfg, pool=pool,
                              team=team)


def _validate_input(a: Matrix):
    if a.rows < a.cols:
        raise ValueError("factorizations require a square or tall matrix")
    if a.cols < 1:
        raise ValueError("matrix must be non-empty")


def _make_output(kind, a, strategy, pivots, tau, info):
    if kind is Kind.LU:
        return LuOutput(a, pivots, strategy, info)
    return QrOutput(a, tau, strategy)


# ---------------------------------------------------------------------------
# task-graph executor

class TaskGraph:
    """Ready-queue executor for dependency-tracked tasks on a pool.

    Tasks run on pool workers as their in-degrees drop to zero; at most
    ``pool.t`` tasks execute at any instant.  After a task raises, the
    remaining tasks are drained without running their bodies and the first
    exception is re-raised to the caller.
    """

    def __init__(self):
        self._fns: dict = {}      # hashable key -> zero-arg callable
        self._deps: dict = {}

    def add(self, key, fn, deps=()):
        if key in self._fns:
            raise ValueError(f"duplicate task {key}")
        self._fns[key] = fn
        self._deps[key] = tuple(deps)

    def run(self, pool: Pool, trace: list | None = None):
        if not self._fns:
            return
        for key, deps in self._deps.items():
            for d in deps:
                if d not in self._fns:
                    raise ValueError(f"task {key} depends on unknown {d}")
        indeg = {key: len(deps) for key, deps in self._deps.items()}
        dependents: dict = {key: [] for key in self._fns}
        for key, deps in self._deps.items():
            for d in deps:
                dependents[d].append(key)
        latch = _Latch(len(self._fns))
        lock = threading.Lock()
        aborted = [False]

        def make_item(key):
            def body():
                err = None
                if not aborted[0]:
                    t0 = time.perf_counter()
                    try:
                        self._fns[key]()
                    except BaseException as e:
                        err = e
                        aborted[0] = True
                    else:
                        if trace is not None and isinstance(key, PanelTaskKey):
                            label = "PF" if key.is_panel_factorization else "TU"
                            trace.append(TraceEvent(label, key.k, key.j,
                                                    t0, time.perf_counter(),
                                                    _worker_id()))
                ready = []
                with lock:
                    for d in dependents[key]:
                        indeg[d] -= 1
                        if indeg[d] == 0:
                            ready.append(d)
                if ready:
                    pool._push_items([make_item(d) for d in ready])
                if err is not None:
                    raise err
            return _WorkItem(body, latch)

        roots = [make_item(key) for key, d in indeg.items() if d == 0]
        if not roots:
            raise ValueError("task graph has no ready tasks (cycle?)")
        pool._push_items(roots)
        _wait_helping(pool, latch)


# ---------------------------------------------------------------------------
# drivers

def dmf_mtb(a: Matrix, cfg: CacheConfig, pool: Pool | None, kind: Kind,
            trace=None):
    """Fork-join driver: serial panel factorization, then the trailing update
    (row swaps + triangular solve + gemm for LU, block reflector for QR) on
    the full team.  The loop walks the matrix with the 2x2/3x3 partitioning
    helpers; panels are b wide except for a ragged final step."""
    _validate_input(a)
    n = a.cols
    out_piv = np.zeros(n, dtype=np.int64)
    out_tau = np.zeros(n)
    info = 0
    team = None
    if pool is not None and pool.t > 1:
        team = MalleableTeam(pool.t, max_size=pool.t)
    quad = part_2x2(a.view(), 0, 0)
    k = 0
    while quad.tl.cols < n:
        part3 = repart_3x3(quad, cfg.b)
        col0, bw = part3.a00.cols, part3.a11.cols
        pf, pinfo = _factor_panel(kind, a, k, col0, bw, out_piv, out_tau,
                                  trace=trace)
        if info == 0 and pinfo:
            info = pinfo
        if kind is Kind.LU:
            _apply_left_swaps(a, pf, pool=pool, team=team)
        t0 = time.perf_counter()
        _update_columns(kind, a, pf, col0 + bw, n, cfg, pool=pool, team=team)
        _record(trace, "TU", k, None, t0, time.perf_counter())
        quad = cont_with_3x3(part3)
        k += 1
    return _make_output(kind, a, Strategy.MTB, out_piv, out_tau, info)


def dmf_rtm(a: Matrix, cfg: CacheConfig, pool: Pool, kind: Kind, trace=None):
    """Task-graph driver: one task per panel factorization and one per
    (step, trailing panel) update, linked by the representant-keyed
    dependencies; tasks run their kernels with a serial team."""
    _validate_input(a)
    n = a.cols
    grid = _panel_grid(n, cfg.b)
    out_piv = np.zeros(n, dtype=np.int64)
    out_tau = np.zeros(n)
    pfs: dict[int, _PanelFactors] = {}
    infos: dict[int, int] = {}
    graph = TaskGraph()

    def pf_fn(k, col0, bw):
        def body():
            pf, pinfo = _factor_panel(kind, a, k, col0, bw, out_piv, out_tau)
            if kind is Kind.LU:
                _apply_left_swaps(a, pf)
            pfs[k] = pf
            if pinfo:
                infos[k] = pinfo
        return body

    def tu_fn(k, j, lo, hi):
        def body():
            _update_columns(kind, a, pfs[k], lo, hi, cfg)
        return body

    for k, col0, bw in grid:
        key = PanelTaskKey(k, k)
        graph.add(key, pf_fn(k, col0, bw), task_dependencies(key))
        for j, jcol0, jbw in grid[k + 1:]:
            key = PanelTaskKey(k, j)
            graph.add(key, tu_fn(k, j, jcol0, jcol0 + jbw),
                      task_dependencies(key))
    graph.run(pool, trace=trace)
    info = min((infos[k] for k in infos), default=0)
    return _make_output(kind, a, Strategy.RTM, out_piv, out_tau, info)


def dmf_la(a: Matrix, cfg: CacheConfig, pool: Pool, kind: Kind,
           malleable: bool = False, trace=None):
    """Static look-ahead driver (depth 1).

    The first panel is factorized up front.  Each iteration k then runs two
    sections: the panel update (columns of panel k+1 updated with step k,
    then panel k+1 factorized) on one dedicated worker, concurrently with the
    right trailing update (columns beyond panel k+1) on the remaining
    ``t - 1`` workers.  With ``malleable=True`` the panel worker promotes the
    team back to ``t`` once its panel is done, so the trailing update picks
    up the extra worker at its next loop-3 boundary.  Pivot row swaps to the
    left of a panel are deferred by one iteration, when those columns are
    quiescent; this changes nothing in the result (swaps commute with updates
    of disjoint columns and stay in ascending step order per column).

    A single-worker pool degrades to the sequential pipelined order.
    """
    _validate_input(a)
    n = a.cols
    grid = _panel_grid(n, cfg.b)
    count = len(grid)
    out_piv = np.zeros(n, dtype=np.int64)
    out_tau = np.zeros(n)
    infos: dict[int, int] = {}
    strategy = Strategy.LA_MB if malleable else Strategy.LA

    pf0, pinfo = _factor_panel(kind, a, 0, grid[0][1], grid[0][2],
                               out_piv, out_tau, trace=trace)
    if pinfo:
        infos[0] = pinfo
    pfs: list[_PanelFactors] = [pf0]

    for k in range(count):
        cur = pfs[k]

        def branch_a(team, k=k, cur=cur):
            if kind is Kind.LU:
                _apply_left_swaps(a, cur)
            if k + 1 < count:
                _, ncol0, nbw = grid[k + 1]
                t0 = time.perf_counter()
                _update_columns(kind, a, cur, ncol0, ncol0 + nbw, cfg)
                _record(trace, "TU_L", k, k + 1, t0, time.perf_counter())
                pf, pinfo = _factor_panel(kind, a, k + 1, ncol0, nbw,
                                          out_piv, out_tau, trace=trace)
                if pinfo:
                    infos[k + 1] = pinfo
                pfs.append(pf)
            if malleable:
                promote(team, pool.t)

        def branch_b(team, k=k, cur=cur):
            lo = grid[k + 1][1] + grid[k + 1][2] if k + 1 < count else n
            t0 = time.perf_counter()
            _update_columns(kind, a, cur, lo, n, cfg, pool=pool, team=team)
            _record(trace, "TU_R", k, None, t0, time.perf_counter())

        sections_2(pool, branch_a, branch_b)

    info = min((infos[k] for k in infos), default=0)
    return _make_output(kind, a, strategy, out_piv, out_tau, info)
