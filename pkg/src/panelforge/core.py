"""Column-major matrix storage, strided views, and FLAME-style partitioning.

Everything downstream (kernels, factorizations, benchmarks) operates on
``MatrixView`` windows into a ``Matrix``.  Views are cheap descriptors; the
partitioning helpers below guarantee that the windows produced within one
blocked-loop iteration are pairwise disjoint, which is what makes concurrent
updates through them race-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CacheConfig:
    """Blocking parameters for the cache-blocked kernels.

    ``mc``/``nc``/``kc`` are the cache-block extents of the three outer GEMM
    loops, ``mr``/``nr`` the register-tile extents of the two inner loops, and
    ``b`` the algorithmic block (panel width) used by the factorizations.
    Kernels must be correct for any valid combination, not just the tuned
    defaults.
    """

    mc: int = 72
    nc: int = 4032
    kc: int = 256
    mr: int = 8
    nr: int = 6
    b: int = 192

    def __post_init__(self):
        for name in ("mc", "nc", "kc", "mr", "nr", "b"):
            if getattr(self, name) < 1:
                raise ValueError(f"CacheConfig.{name} must be >= 1")
        if self.mr > self.mc:
            raise ValueError("mr must not exceed mc")
        if self.nr > self.nc:
            raise ValueError("nr must not exceed nc")

    @classmethod
    def haswell(cls) -> "CacheConfig":
        """The tuned 8-core-Haswell parameter set (benchmark default)."""
        return cls(mc=72, nc=4032, kc=256, mr=8, nr=6, b=192)

    @classmethod
    def desk(cls) -> "CacheConfig":
        """Smaller ``nc`` so test matrices and packing buffers stay tiny."""
        return cls(mc=72, nc=1024, kc=256, mr=8, nr=6, b=192)


class Matrix:
    """Dense column-major matrix of 64-bit floats.

    Element (i, j) lives at flat offset ``i + j*leading_dim``; storage is a
    Fortran-ordered ndarray of shape ``(leading_dim, cols)`` with
    ``leading_dim >= rows``.
    """

    __slots__ = ("rows", "cols", "leading_dim", "data")

    def __init__(self, rows: int, cols: int, data: np.ndarray | None = None,
                 leading_dim: int | None = None):
        ld = rows if leading_dim is None else leading_dim
        if ld < rows:
            raise ValueError("leading_dim must be >= rows")
        if data is None:
            data = np.zeros((ld, cols), dtype=np.float64, order="F")
        if data.shape != (ld, cols):
            raise ValueError(f"backing array must have shape ({ld}, {cols})")
        if data.dtype != np.float64 or not data.flags.f_contiguous:
            raise ValueError("backing array must be float64 and column-major")
        self.rows = rows
        self.cols = cols
        self.leading_dim = ld
        self.data = data

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls(rows, cols)

    @classmethod
    def from_array(cls, arr) -> "Matrix":
        a = np.asfortranarray(np.asarray(arr, dtype=np.float64))
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(a.shape[0], a.shape[1], data=a)

    @classmethod
    def random_uniform(cls, rows: int, cols: int, seed: int) -> "Matrix":
        """Matrix with i.i.d. uniform [0, 1) entries from a fixed-seed PCG64."""
        rng = np.random.default_rng(seed)
        return cls.from_array(rng.random((rows, cols)))

    @property
    def array(self) -> np.ndarray:
        """The logical rows x cols window of the backing storage."""
        return self.data[: self.rows, :]

    def view(self) -> "MatrixView":
        return MatrixView(self, 0, 0, self.rows, self.cols)

    def copy(self) -> "Matrix":
        return Matrix(self.rows, self.cols,
                      data=self.data.copy(order="F"),
                      leading_dim=self.leading_dim)

    def __repr__(self):
        return f"Matrix({self.rows}x{self.cols}, ld={self.leading_dim})"


@dataclass(frozen=True)
class MatrixView:
    """Strided window into a :class:`Matrix`.

    Two views are *disjoint* iff their index rectangles do not intersect;
    concurrent mutation is only permitted through disjoint views.
    """

    base: Matrix
    row_off: int
    col_off: int
    rows: int
    cols: int

    def __post_init__(self):
        if self.row_off < 0 or self.col_off < 0 or self.rows < 0 or self.cols < 0:
            raise ValueError("negative view extent or offset")
        if self.row_off + self.rows > self.base.rows:
            raise ValueError("view exceeds parent rows")
        if self.col_off + self.cols > self.base.cols:
            raise ValueError("view exceeds parent cols")

    @property
    def leading_dim(self) -> int:
        return self.base.leading_dim

    @property
    def array(self) -> np.ndarray:
        """Numpy window sharing storage with the parent matrix."""
        return self.base.data[self.row_off: self.row_off + self.rows,
                              self.col_off: self.col_off + self.cols]

    def subview(self, r0: int, c0: int, rows: int, cols: int) -> "MatrixView":
        if r0 < 0 or c0 < 0 or r0 + rows > self.rows or c0 + cols > self.cols:
            raise ValueError("subview out of range")
        return MatrixView(self.base, self.row_off + r0, self.col_off + c0,
                          rows, cols)

    def overlaps(self, other: "MatrixView") -> bool:
        """Rectangle intersection test (same backing matrix only)."""
        if self.base is not other.base:
            return False
        if self.rows == 0 or self.cols == 0 or other.rows == 0 or other.cols == 0:
            return False
        return not (self.row_off + self.rows <= other.row_off
                    or other.row_off + other.rows <= self.row_off
                    or self.col_off + self.cols <= other.col_off
                    or other.col_off + other.cols <= self.col_off)


@dataclass(frozen=True)
class Partition2x2:
    tl: MatrixView
    tr: MatrixView
    bl: MatrixView
    br: MatrixView


@dataclass(frozen=True)
class Partition3x3:
    """3x3 repartitioning exposing the current panel (a11; a21).

    ``a11`` is at most b x b (smaller only on the final ragged step); the nine
    views tile the parent exactly and are pairwise disjoint.
    """

    a00: MatrixView
    a01: MatrixView
    a02: MatrixView
    a10: MatrixView
    a11: MatrixView
    a12: MatrixView
    a20: MatrixView
    a21: MatrixView
    a22: MatrixView


def part_2x2(a: MatrixView, tl_rows: int, tl_cols: int) -> Partition2x2:
    """Decouple ``a`` into four disjoint quadrants with a top-left of the
    given extents.  ``(0, 0)`` yields an empty TL and BR == a."""
    if not (0 <= tl_rows <= a.rows) or not (0 <= tl_cols <= a.cols):
        raise ValueError("invalid 2x2 partition split")
    return Partition2x2(
        tl=a.subview(0, 0, tl_rows, tl_cols),
        tr=a.subview(0, tl_cols, tl_rows, a.cols - tl_cols),
        bl=a.subview(tl_rows, 0, a.rows - tl_rows, tl_cols),
        br=a.subview(tl_rows, tl_cols, a.rows - tl_rows, a.cols - tl_cols),
    )


def repart_3x3(quad: Partition2x2, step: int) -> Partition3x3:
    """Split the bottom-right quadrant to expose the next diagonal block.

    The exposed ``a11`` is ``min(step, remaining)`` square, so ragged final
    iterations are allowed; the panel is ``(a11; a21)`` and the trailing
    submatrix ``(a12; a22)``.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    br = quad.br
    s = min(step, br.rows, br.cols)
    mt = quad.tl.rows          # rows consumed so far
    nt = quad.tl.cols
    parent_rows = mt + br.rows
    parent_cols = nt + br.cols
    base_view = MatrixView(quad.tl.base,
                           quad.tl.row_off, quad.tl.col_off,
                           parent_rows, parent_cols)
    sub = base_view.subview
    return Partition3x3(
        a00=sub(0, 0, mt, nt),
        a01=sub(0, nt, mt, s),
        a02=sub(0, nt + s, mt, parent_cols - nt - s),
        a10=sub(mt, 0, s, nt),
        a11=sub(mt, nt, s, s),
        a12=sub(mt, nt + s, s, parent_cols - nt - s),
        a20=sub(mt + s, 0, parent_rows - mt - s, nt),
        a21=sub(mt + s, nt, parent_rows - mt - s, s),
        a22=sub(mt + s, nt + s, parent_rows - mt - s, parent_cols - nt - s),
    )


def cont_with_3x3(part: Partition3x3) -> Partition2x2:
    """Advance the 2x2 boundary past the just-processed diagonal block.

    The loop driving repart/cont terminates when the bottom-right quadrant is
    empty, i.e. when the top-left has absorbed the whole matrix.
    """
    mt = part.a00.rows + part.a11.rows
    nt = part.a00.cols + part.a11.cols
    parent_rows = mt + part.a22.rows
    parent_cols = nt + part.a22.cols
    base_view = MatrixView(part.a00.base,
                           part.a00.row_off, part.a00.col_off,
                           parent_rows, parent_cols)
    return part_2x2(base_view, mt, nt)
