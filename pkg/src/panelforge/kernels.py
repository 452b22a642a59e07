"""Cache-blocked level-3 kernels.

The centerpiece is :func:`gemm`, a five-loop blocked matrix multiply: three
cache loops (jc over nc, pc over kc, ic over mc) around a macro-kernel of two
register loops (jr over nr, ir over mr), with the A and B cache blocks packed
into tile-ordered buffers before use.  Loop 4 (jr) is the only parallel loop;
the malleable team size is re-read at every loop-3 iteration, for the packing
of the A block and for the macro-kernel dispatch, so team promotions become
effective at the next iteration boundary.

Determinism contract: for fixed operands and blocking config, the output is
bitwise identical for every team size and promotion schedule.  Each output
micro-panel is owned by exactly one chunk whose identity depends only on its
index, and every element accumulates its rank-1 updates in ascending k order.

Also here: the triangular solve/multiply and the row-interchange kernel the
factorizations need.  Their per-element arithmetic is independent of how the
columns are grouped, which is what lets different schedulers slice the same
trailing update differently and still agree bitwise.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _jit
from .core import CacheConfig, MatrixView
from .runtime import MalleableTeam, Pool, parallel_for_blocks

# column-block width used when laswp/trsm/trmm are run on a team
_COL_CHUNK = 192


class Transpose(enum.Enum):
    NONE = "n"
    TRANS = "t"


@dataclass(frozen=True)
class PackedPanelA:
    """Packed mc x kc block of op(A).

    ``data`` has shape (ceil(mc_eff/mr), kc_eff, mr): sliver ``i`` stores an
    mr x kc_eff sub-block column by column, zero-padded to mr rows on the
    ragged edge.  ``unpack`` reproduces the source block exactly.
    """

    data: np.ndarray
    mc_eff: int
    kc_eff: int

    @property
    def mr(self) -> int:
        return self.data.shape[2]

    @property
    def n_slivers(self) -> int:
        return self.data.shape[0]

    def sliver(self, i: int) -> np.ndarray:
        """mr x kc_eff view of sliver ``i`` (padding rows are exact zeros)."""
        return self.data[i].T

    def unpack(self) -> np.ndarray:
        flat = self.data.transpose(0, 2, 1).reshape(-1, self.kc_eff)
        return flat[: self.mc_eff].copy()


@dataclass(frozen=True)
class PackedPanelB:
    """Packed kc x nc block of op(B).

    ``data`` has shape (ceil(nc_eff/nr), kc_eff, nr): sliver ``j`` stores the
    kc_eff x nr micro-panel row by row, zero-padded to nr columns.
    """

    data: np.ndarray
    kc_eff: int
    nc_eff: int

    @property
    def nr(self) -> int:
        return self.data.shape[2]

    @property
    def n_slivers(self) -> int:
        return self.data.shape[0]

    def sliver(self, j: int) -> np.ndarray:
        """kc_eff x nr view of micro-panel ``j``."""
        return self.data[j]

    def unpack(self) -> np.ndarray:
        flat = self.data.transpose(1, 0, 2).reshape(self.kc_eff, -1)
        return flat[:, : self.nc_eff].copy()


def _op_shape(v: MatrixView, trans: Transpose):
    return (v.rows, v.cols) if trans is Transpose.NONE else (v.cols, v.rows)


def pack_block_a(a: MatrixView, ic: int, pc: int, mc_eff: int, kc_eff: int,
                 trans: Transpose = Transpose.NONE, mr: int = 8,
                 pool: Pool | None = None,
                 team: MalleableTeam | None = None) -> PackedPanelA:
    """Pack op(a)[ic:ic+mc_eff, pc:pc+kc_eff] into sliver order.

    All team ranks collaborate, each packing a deterministic contiguous run
    of slivers; the packed bytes are identical for every team size.
    """
    n_slv = -(-mc_eff // mr)
    out = np.zeros((n_slv, kc_eff, mr), dtype=np.float64)
    if trans is Transpose.NONE:
        ro, co = a.row_off + ic, a.col_off + pc
    else:
        ro, co = a.row_off + pc, a.col_off + ic
    base = a.base.data
    flag = trans is Transpose.TRANS

    def run(rank, lo, hi):
        _jit.pack_a_run(base, ro, co, out, lo, hi, mc_eff, kc_eff, flag)

    parallel_for_blocks(pool, team, n_slv, run)
    return PackedPanelA(out, mc_eff, kc_eff)


def pack_block_b(b: MatrixView, pc: int, jc: int, kc_eff: int, nc_eff: int,
                 trans: Transpose = Transpose.NONE, nr: int = 6,
                 pool: Pool | None = None,
                 team: MalleableTeam | None = None) -> PackedPanelB:
    """Pack op(b)[pc:pc+kc_eff, jc:jc+nc_eff] into micro-panel order."""
    n_slv = -(-nc_eff // nr)
    out = np.zeros((n_slv, kc_eff, nr), dtype=np.float64)
    if trans is Transpose.NONE:
        ro, co = b.row_off + pc, b.col_off + jc
    else:
        ro, co = b.row_off + jc, b.col_off + pc
    base = b.base.data
    flag = trans is Transpose.TRANS

    def run(rank, lo, hi):
        _jit.pack_b_run(base, ro, co, out, lo, hi, kc_eff, nc_eff, flag)

    parallel_for_blocks(pool, team, n_slv, run)
    return PackedPanelB(out, kc_eff, nc_eff)


def micro_kernel(kc_eff: int, a_sliver: np.ndarray, b_sliver: np.ndarray,
                 c_tile: MatrixView):
    """Register-tile update: c_tile += sum_p a_sliver[:, p] * b_sliver[p, :].

    Accumulation runs in ascending p; ragged tiles (c_tile smaller than
    mr x nr) use the leading lanes only, padding lanes are never read.
    """
    h, w = c_tile.rows, c_tile.cols
    if h == 0 or w == 0:
        return
    if kc_eff > a_sliver.shape[1] or kc_eff > b_sliver.shape[0]:
        raise ValueError("kc_eff exceeds sliver depth")
    if h > a_sliver.shape[0] or w > b_sliver.shape[1]:
        raise ValueError("c_tile larger than the register tile")
    if kc_eff == 0:
        return
    _jit.micro_run(np.asarray(a_sliver), np.asarray(b_sliver),
                   c_tile.base.data, c_tile.row_off, c_tile.col_off,
                   h, w, kc_eff)


def gemm(c: MatrixView, a: MatrixView, b: MatrixView,
         ta: Transpose = Transpose.NONE, tb: Transpose = Transpose.NONE,
         cfg: CacheConfig | None = None,
         pool: Pool | None = None, team: MalleableTeam | None = None,
         loop3_hook=None):
    """c += op(a) @ op(b), cache-blocked and packed.

    ``loop3_hook``, when given, is invoked at every loop-3 iteration boundary
    (instrumentation; this is where team-size changes become visible).
    Passing ``team=None`` runs serially.  Distinct calls on disjoint ``c``
    views may run concurrently.
    """
    cfg = cfg or CacheConfig()
    m, n = c.rows, c.cols
    am, ak = _op_shape(a, ta)
    bk, bn = _op_shape(b, tb)
    if am != m or bn != n or ak != bk:
        raise ValueError(
            f"gemm dimension mismatch: C is {m}x{n}, op(A) {am}x{ak}, "
            f"op(B) {bk}x{bn}")
    k = ak
    if m == 0 or n == 0 or k == 0:
        return
    cbase = c.base.data
    for jc in range(0, n, cfg.nc):                              # Loop 1
        nc_eff = min(cfg.nc, n - jc)
        for pc in range(0, k, cfg.kc):                          # Loop 2
            kc_eff = min(cfg.kc, k - pc)
            bpk = pack_block_b(b, pc, jc, kc_eff, nc_eff, tb, cfg.nr,
                               pool, team)
            b3 = bpk.data
            for ic in range(0, m, cfg.mc):                      # Loop 3
                if loop3_hook is not None:
                    loop3_hook()
                mc_eff = min(cfg.mc, m - ic)
                apk = pack_block_a(a, ic, pc, mc_eff, kc_eff, ta, cfg.mr,
                                   pool, team)
                a3 = apk.data
                i0 = c.row_off + ic
                j0 = c.col_off + jc

                def run(rank, lo, hi):                          # Loops 4+5
                    _jit.macro_run(a3, b3, cbase, i0, j0,
                                   mc_eff, nc_eff, lo, hi, kc_eff)

                parallel_for_blocks(pool, team, bpk.n_slivers, run)


def _col_chunks(n_cols: int):
    return -(-n_cols // _COL_CHUNK)


def trsm_llnu(a11: MatrixView, x: MatrixView,
              pool: Pool | None = None, team: MalleableTeam | None = None):
    """x <- inv(L) x with L the unit-lower triangle of ``a11``.

    The strictly-upper part of ``a11`` is ignored and the diagonal is taken
    as 1, so the solve cannot encounter a zero pivot.  Independent column
    blocks are distributed over the team.
    """
    if a11.rows != a11.cols:
        raise ValueError("triangular factor must be square")
    if x.rows != a11.rows:
        raise ValueError("x rows must match the triangular factor")
    bsz, n = a11.rows, x.cols
    if bsz == 0 or n == 0:
        return

    def run(rank, lo, hi):
        _jit.trsm_unit_lower_run(a11.base.data, a11.row_off, a11.col_off,
                                 bsz, x.base.data, x.row_off, x.col_off,
                                 lo * _COL_CHUNK, min(n, hi * _COL_CHUNK))

    parallel_for_blocks(pool, team, _col_chunks(n), run)


def trmm_ut(t: MatrixView, x: MatrixView, transpose_t: bool = False,
            pool: Pool | None = None, team: MalleableTeam | None = None):
    """x <- T x (or T^T x) with T the upper triangle of ``t``.

    The strictly-lower part of ``t`` is ignored.  Per-column results are
    independent of the column grouping.
    """
    if t.rows != t.cols:
        raise ValueError("triangular factor must be square")
    if x.rows != t.rows:
        raise ValueError("x rows must match the triangular factor")
    bsz, n = t.rows, x.cols
    if bsz == 0 or n == 0:
        return

    def run(rank, lo, hi):
        _jit.trmm_upper_run(t.base.data, t.row_off, t.col_off, bsz,
                            x.base.data, x.row_off, x.col_off,
                            lo * _COL_CHUNK, min(n, hi * _COL_CHUNK),
                            transpose_t)

    parallel_for_blocks(pool, team, _col_chunks(n), run)


def laswp(a: MatrixView, pivots, col_range=None, row_offset: int = 0,
          pool: Pool | None = None, team: MalleableTeam | None = None):
    """Apply row interchanges in ascending order within a column range.

    ``pivots`` follow LAPACK ipiv semantics relative to this view: entry
    ``idx`` (0-based) swaps row ``row_offset + idx`` with the 1-based row
    ``pivots[idx]``.  Swaps within one column are sequential; disjoint column
    blocks are processed independently (and in parallel on a team).
    """
    piv = np.ascontiguousarray(pivots, dtype=np.int64)
    if piv.size == 0:
        return
    lo, hi = (0, a.cols) if col_range is None else col_range
    if not (0 <= lo <= hi <= a.cols):
        raise ValueError("column range out of bounds")
    if piv.min() < 1 or piv.max() > a.rows:
        raise ValueError("pivot index out of range")
    if row_offset + piv.size > a.rows:
        raise ValueError("pivot list exceeds view rows")
    ncols = hi - lo
    if ncols == 0:
        return

    def run(rank, clo, chi):
        _jit.laswp_run(a.base.data, a.row_off, a.col_off, piv, row_offset,
                       lo + clo * _COL_CHUNK, lo + min(ncols, chi * _COL_CHUNK))

    parallel_for_blocks(pool, team, _col_chunks(ncols), run)
