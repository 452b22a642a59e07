"""panelforge: cache-blocked dense linear algebra with a malleable thread
team.

A packing-based blocked GEMM parallelized over its micro-panel loop, blocked
LU with partial pivoting and Householder QR, and four interchangeable
scheduling strategies (fork-join, task graph, static look-ahead, look-ahead
with a malleable team) that produce bitwise-identical factorizations.
"""

from .core import (CacheConfig, Matrix, MatrixView, Partition2x2,
                   Partition3x3, cont_with_3x3, part_2x2, repart_3x3)
from .factor import (Kind, LuOutput, PanelTaskKey, QrOutput, Strategy,
                     TaskGraph, TraceEvent, apply_block_reflector, dmf_la,
                     dmf_mtb, dmf_rtm, flops, larft_forward_columnwise,
                     lu_unb, qr_unb, reflector_matrix, task_dependencies)
from .kernels import (PackedPanelA, PackedPanelB, Transpose, gemm, laswp,
                      micro_kernel, pack_block_a, pack_block_b, trmm_ut,
                      trsm_llnu)
from .oracle import (UNIT_ROUNDOFF, Residual, form_q, lu_residual, naive_gemm,
                     qr_residual)
from .runtime import (ChunkRange, MalleableTeam, Pool, default_thread_count,
                      parallel_for, promote, sections_2)

__version__ = "0.1.0"

__all__ = [
    "CacheConfig", "Matrix", "MatrixView", "Partition2x2", "Partition3x3",
    "part_2x2", "repart_3x3", "cont_with_3x3",
    "Pool", "MalleableTeam", "ChunkRange", "sections_2", "parallel_for",
    "promote", "default_thread_count",
    "Transpose", "PackedPanelA", "PackedPanelB", "pack_block_a",
    "pack_block_b", "micro_kernel", "gemm", "trsm_llnu", "trmm_ut", "laswp",
    "Kind", "Strategy", "LuOutput", "QrOutput", "PanelTaskKey", "TaskGraph",
    "TraceEvent", "lu_unb", "qr_unb", "larft_forward_columnwise",
    "reflector_matrix", "apply_block_reflector", "dmf_mtb", "dmf_rtm",
    "dmf_la", "flops", "task_dependencies",
    "Residual", "UNIT_ROUNDOFF", "naive_gemm", "lu_residual", "qr_residual",
    "form_q",
    "__version__",
]
