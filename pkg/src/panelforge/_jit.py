"""Compiled inner loops (numba, nogil).

fastmath stays OFF everywhere: every kernel relies on strict IEEE multiply
then add, in fixed ascending reduction order, so that results are bitwise
independent of how the surrounding loops are blocked or distributed across
workers.  Do not add reassociation, FMA contraction or zero-skipping
shortcuts here.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(nogil=True, cache=True, fastmath=False)


@njit(**_JIT)
def pack_a_run(base, ro, co, out, lo, hi, mc_eff, kc_eff, trans):
    # out: (n_slivers, kc_eff, mr); sliver s holds rows s*mr.. of the block,
    # one column per p, zero-padded to mr on the ragged edge.
    mr = out.shape[2]
    for s in range(lo, hi):
        r0 = s * mr
        h = min(mr, mc_eff - r0)
        if trans:
            for p in range(kc_eff):
                for ii in range(h):
                    out[s, p, ii] = base[ro + p, co + r0 + ii]
        else:
            for p in range(kc_eff):
                for ii in range(h):
                    out[s, p, ii] = base[ro + r0 + ii, co + p]


@njit(**_JIT)
def pack_b_run(base, ro, co, out, lo, hi, kc_eff, nc_eff, trans):
    # out: (n_slivers, kc_eff, nr); sliver s holds columns s*nr.., one row
    # per p, zero-padded to nr on the ragged edge.
    nr = out.shape[2]
    for s in range(lo, hi):
        c0 = s * nr
        w = min(nr, nc_eff - c0)
        if trans:
            for p in range(kc_eff):
                for jj in range(w):
                    out[s, p, jj] = base[ro + c0 + jj, co + p]
        else:
            for p in range(kc_eff):
                for jj in range(w):
                    out[s, p, jj] = base[ro + p, co + c0 + jj]


@njit(**_JIT)
def macro_run(a3, b3, cbase, i0, j0, mc_eff, nc_eff, js_lo, js_hi, kc_eff):
    # Micro-panel loop (jr) over B slivers js_lo..js_hi, register-tile loop
    # (ir) over A slivers, rank-kc_eff update per tile with p ascending.
    # Each tile is staged in a local accumulator seeded from C, which keeps
    # the per-element operation sequence identical to updating C directly.
    mr = a3.shape[2]
    nr = b3.shape[2]
    n_aslv = a3.shape[0]
    acc = np.empty((mr, nr))
    for js in range(js_lo, js_hi):
        c0 = js * nr
        w = min(nr, nc_eff - c0)
        for isl in range(n_aslv):
            r0 = isl * mr
            h = min(mr, mc_eff - r0)
            for jj in range(w):
                for ii in range(h):
                    acc[ii, jj] = cbase[i0 + r0 + ii, j0 + c0 + jj]
            for p in range(kc_eff):
                for jj in range(w):
                    bv = b3[js, p, jj]
                    for ii in range(h):
                        acc[ii, jj] += a3[isl, p, ii] * bv
            for jj in range(w):
                for ii in range(h):
                    cbase[i0 + r0 + ii, j0 + c0 + jj] = acc[ii, jj]


@njit(**_JIT)
def micro_run(a2, b2, cbase, i0, j0, h, w, kc_eff):
    # One register tile: C(h x w) += a2(:, p) outer b2(p, :), p ascending.
    # a2: (mr, kc) sliver, b2: (kc, nr) sliver; lanes beyond h/w are padding
    # and never read.
    mr = a2.shape[0]
    nr = b2.shape[1]
    acc = np.empty((mr, nr))
    for jj in range(w):
        for ii in range(h):
            acc[ii, jj] = cbase[i0 + ii, j0 + jj]
    for p in range(kc_eff):
        for jj in range(w):
            bv = b2[p, jj]
            for ii in range(h):
                acc[ii, jj] += a2[ii, p] * bv
    for jj in range(w):
        for ii in range(h):
            cbase[i0 + ii, j0 + jj] = acc[ii, jj]


@njit(**_JIT)
def trsm_unit_lower_run(lbase, lro, lco, bsz, xbase, xro, xco, col_lo, col_hi):
    # x <- inv(unit_lower(L)) x, right-looking forward substitution.  Element
    # (r, j) accumulates its updates for pivot rows i ascending, so the result
    # is independent of how callers block the columns.
    for i in range(bsz):
        for j in range(col_lo, col_hi):
            pv = xbase[xro + i, xco + j]
            for r in range(i + 1, bsz):
                xbase[xro + r, xco + j] -= lbase[lro + r, lco + i] * pv


@njit(**_JIT)
def trmm_upper_run(tbase, tro, tco, bsz, xbase, xro, xco, col_lo, col_hi,
                   trans_t):
    # x <- T x (or T^T x), T upper-triangular, strictly-lower part ignored.
    # Zero-seeded accumulation in ascending l; per element this matches a
    # dense accumulate-from-zero product with the triangle zeroed out.
    w = col_hi - col_lo
    out = np.zeros((bsz, w))
    if trans_t:
        for l in range(bsz):
            for j in range(w):
                xv = xbase[xro + l, xco + col_lo + j]
                for i in range(l, bsz):
                    out[i, j] += tbase[tro + l, tco + i] * xv
    else:
        for l in range(bsz):
            for j in range(w):
                xv = xbase[xro + l, xco + col_lo + j]
                for i in range(l + 1):
                    out[i, j] += tbase[tro + i, tco + l] * xv
    for j in range(w):
        for i in range(bsz):
            xbase[xro + i, xco + col_lo + j] = out[i, j]


@njit(**_JIT)
def laswp_run(abase, aro, aco, piv, row_off, col_lo, col_hi):
    # Row interchanges in ascending pivot order, one column at a time.
    for j in range(col_lo, col_hi):
        for idx in range(piv.shape[0]):
            r1 = aro + row_off + idx
            r2 = aro + piv[idx] - 1
            if r1 != r2:
                tmp = abase[r1, aco + j]
                abase[r1, aco + j] = abase[r2, aco + j]
                abase[r2, aco + j] = tmp


@njit(**_JIT)
def lu_unb_run(base, ro, co, m_p, bw, piv):
    # Unblocked right-looking LU with partial pivoting on an m_p x bw panel.
    # piv[j] is the 0-based panel-local pivot row chosen at step j (ties break
    # to the smallest index).  Returns 0, or 1 + the first column whose pivot
    # is exactly zero (that column is left as-is).
    info = 0
    kmax = min(m_p, bw)
    for j in range(kmax):
        pbest = j
        vbest = abs(base[ro + j, co + j])
        for i in range(j + 1, m_p):
            v = abs(base[ro + i, co + j])
            if v > vbest:
                vbest = v
                pbest = i
        piv[j] = pbest
        if vbest == 0.0:
            if info == 0:
                info = j + 1
            continue
        if pbest != j:
            for c in range(bw):
                tmp = base[ro + j, co + c]
                base[ro + j, co + c] = base[ro + pbest, co + c]
                base[ro + pbest, co + c] = tmp
        pivot = base[ro + j, co + j]
        for i in range(j + 1, m_p):
            base[ro + i, co + j] /= pivot
        for c in range(j + 1, bw):
            ujc = base[ro + j, co + c]
            for i in range(j + 1, m_p):
                base[ro + i, co + c] -= base[ro + i, co + j] * ujc
    return info


@njit(**_JIT)
def qr_unb_run(base, ro, co, m_p, bw, tau):
    # Unblocked Householder QR on an m_p x bw panel (m_p >= bw).  Column j is
    # reduced by H_j = I - tau_j v v^T with v stored below the diagonal (unit
    # head); beta takes the sign opposite to the leading entry.
    for j in range(bw):
        alpha = base[ro + j, co + j]
        sq = 0.0
        for i in range(j + 1, m_p):
            v = base[ro + i, co + j]
            sq += v * v
        if sq == 0.0:
            tau[j] = 0.0
            continue
        norm = math.sqrt(alpha * alpha + sq)
        beta = -norm if alpha >= 0.0 else norm
        tau[j] = (beta - alpha) / beta
        scale = 1.0 / (alpha - beta)
        for i in range(j + 1, m_p):
            base[ro + i, co + j] *= scale
        base[ro + j, co + j] = beta
        for c in range(j + 1, bw):
            s = base[ro + j, co + c]
            for i in range(j + 1, m_p):
                s += base[ro + i, co + j] * base[ro + i, co + c]
            s *= tau[j]
            base[ro + j, co + c] -= s
            for i in range(j + 1, m_p):
                base[ro + i, co + c] -= s * base[ro + i, co + j]
