import numpy as np
import pytest

from panelforge import (CacheConfig, Kind, MalleableTeam, Matrix, PanelTaskKey,
                        Strategy, TaskGraph, apply_block_reflector, dmf_la,
                        dmf_mtb, dmf_rtm, flops, form_q,
                        larft_forward_columnwise, laswp, lu_residual, lu_unb,
                        qr_residual, qr_unb, reflector_matrix,
                        task_dependencies, trsm_llnu, gemm)
from panelforge.oracle import UNIT_ROUNDOFF

from conftest import bitwise_equal

CFG = CacheConfig(b=16, nc=256, kc=64, mc=24, mr=8, nr=6)


def _mat(arr):
    return Matrix.from_array(arr)


# ---------------------------------------------------------------------------
# LU panel

def test_lu_unb_swap_case():
    # two steps of partial pivoting by hand: swap makes the panel I
    panel = _mat([[0.0, 1.0], [1.0, 0.0]])
    piv, info = lu_unb(panel.view())
    assert info == 0
    assert piv.tolist() == [2, 2]
    assert np.array_equal(panel.array, np.eye(2))


def test_lu_unb_diagonal_no_swaps():
    d = np.array([5.0, 4.0, 3.0, 2.0])
    panel = _mat(np.diag(d))
    piv, info = lu_unb(panel.view())
    assert piv.tolist() == [1, 2, 3, 4]
    assert np.array_equal(panel.array, np.diag(d))
    assert info == 0


def test_lu_unb_row_base_offsets_pivots():
    panel = _mat([[0.0, 1.0], [1.0, 0.0]])
    piv, _ = lu_unb(panel.view(), row_base=10)
    assert piv.tolist() == [12, 12]


def test_lu_unb_multipliers_bounded():
    rng = np.random.default_rng(2)
    panel = _mat(rng.standard_normal((64, 8)))
    piv, info = lu_unb(panel.view())
    lower = np.tril(panel.array, -1)
    assert np.max(np.abs(lower)) <= 1.0 + 4 * UNIT_ROUNDOFF


def test_lu_unb_reconstruction_residual():
    rng = np.random.default_rng(7)
    a0 = rng.random((64, 8))
    panel = _mat(a0)
    piv, info = lu_unb(panel.view())
    m, b = a0.shape
    lower = np.tril(panel.array[:, :b], -1) + np.eye(m, b)
    upper = np.triu(panel.array[:b, :])
    pa = a0.copy()
    for i, p in enumerate(piv):
        r = p - 1
        if r != i:
            pa[[i, r], :] = pa[[r, i], :]
    resid = np.linalg.norm(pa - lower @ upper)
    assert resid <= 10 * b * UNIT_ROUNDOFF * np.linalg.norm(a0)


def test_lu_unb_exact_zero_pivot_flags_info():
    panel = _mat(np.array([[1.0, 0.0, 2.0],
                           [2.0, 0.0, 1.0],
                           [4.0, 0.0, 3.0]]))
    piv, info = lu_unb(panel.view())
    assert info == 2                       # second column had no pivot
    assert np.all(panel.array[2:, 1] == 0.0)


# ---------------------------------------------------------------------------
# QR panel

def test_qr_unb_single_column_norm():
    panel = _mat(np.array([[3.0], [4.0]]))
    tau = qr_unb(panel.view())
    beta = panel.array[0, 0]
    assert abs(abs(beta) - 5.0) < 1e-14     # |beta| = ||x||_2 = 5
    assert beta < 0                         # sign opposite the leading entry
    assert 0.0 <= tau[0] <= 2.0


def test_qr_unb_zero_column_null_reflector():
    a0 = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]])
    panel = _mat(a0)
    tau = qr_unb(panel.view())
    assert tau[0] == 0.0
    assert np.array_equal(panel.array[:, 0], a0[:, 0])


def test_qr_unb_reconstruction():
    from panelforge import QrOutput
    rng = np.random.default_rng(4)
    a0 = np.triu(rng.random((6, 6))) + np.eye(6)
    panel = _mat(a0.copy())
    tau = qr_unb(panel.view())
    out = QrOutput(panel, tau, Strategy.MTB)
    factor, ortho = qr_residual(a0, out)
    assert factor.value <= 50
    assert ortho.value <= 50


def test_qr_unb_tau_norm_consistency():
    rng = np.random.default_rng(9)
    panel = _mat(rng.standard_normal((20, 5)))
    tau = qr_unb(panel.view())
    v = reflector_matrix(panel.view())
    for j, t in enumerate(tau):
        assert 0.0 <= t <= 2.0
        if t != 0.0:
            # tau ||v||^2 / 2 == 1 characterizes a reflector
            assert abs(t * np.dot(v[:, j], v[:, j]) / 2.0 - 1.0) < 1e-12


def test_qr_unb_requires_tall_panel():
    with pytest.raises(ValueError):
        qr_unb(Matrix.zeros(3, 5).view())


# ---------------------------------------------------------------------------
# block reflector

def test_larft_single_reflector():
    panel = _mat(np.array([[2.0], [0.5]]))
    t = larft_forward_columnwise(panel.view(), np.array([1.25]))
    assert t.shape == (1, 1) and t[0, 0] == 1.25


def test_larft_all_zero_tau_gives_identity_reflector():
    rng = np.random.default_rng(1)
    panel = _mat(rng.random((6, 3)))
    t = larft_forward_columnwise(panel.view(), np.zeros(3))
    assert np.array_equal(t, np.zeros((3, 3)))
    v = reflector_matrix(panel.view())
    block = np.eye(6) - v @ t @ v.T
    assert np.array_equal(block, np.eye(6))


def test_larft_matches_explicit_reflector_product():
    rng = np.random.default_rng(14)
    m, b = 9, 3
    panel = _mat(rng.standard_normal((m, b)))
    tau = qr_unb(panel.view())
    t = larft_forward_columnwise(panel.view(), tau)
    v = reflector_matrix(panel.view())
    # oracle: multiply the reflectors out one by one
    product = np.eye(m)
    for j in range(b):
        h = np.eye(m) - tau[j] * np.outer(v[:, j], v[:, j])
        product = product @ h
    assert np.allclose(np.eye(m) - v @ t @ v.T, product, atol=1e-13)
    assert np.array_equal(t, np.triu(t))


def test_apply_block_reflector_zero_t_is_noop():
    rng = np.random.default_rng(3)
    panel = _mat(rng.random((5, 2)))
    c0 = rng.random((5, 4))
    c = _mat(c0)
    apply_block_reflector(panel.view(), np.zeros((2, 2)), c.view(), cfg=CFG)
    assert np.array_equal(c.array, c0)


def test_apply_block_reflector_single_matches_rank_one():
    rng = np.random.default_rng(6)
    m = 7
    panel = _mat(rng.standard_normal((m, 1)))
    tau = qr_unb(panel.view())
    t = larft_forward_columnwise(panel.view(), tau)
    v = reflector_matrix(panel.view())[:, 0]
    c0 = rng.standard_normal((m, 3))
    expect = c0 - tau[0] * np.outer(v, v @ c0)   # H^T = H for one reflector
    c = _mat(c0)
    apply_block_reflector(panel.view(), t, c.view(), cfg=CFG)
    assert np.allclose(c.array, expect, atol=1e-13)


def test_apply_block_reflector_preserves_norms():
    rng = np.random.default_rng(8)
    m, b = 16, 4
    panel = _mat(rng.standard_normal((m, b)))
    tau = qr_unb(panel.view())
    t = larft_forward_columnwise(panel.view(), tau)
    c0 = rng.standard_normal((m, 5))
    c = _mat(c0)
    apply_block_reflector(panel.view(), t, c.view(), cfg=CFG)
    gram_before = c0.T @ c0
    gram_after = c.array.T @ c.array
    assert np.linalg.norm(gram_before - gram_after) <= 1e-11


# ---------------------------------------------------------------------------
# flop counts

def test_flop_counts():
    assert flops(Kind.LU, 3) == 18
    assert flops(Kind.QR, 3) == 36
    assert flops(Kind.LU, 1000) == 666_666_667
    assert flops(Kind.QR, 1000) == 1_333_333_333
    with pytest.raises(ValueError):
        flops(Kind.LU, 0)


# ---------------------------------------------------------------------------
# task keys

def test_task_dependency_edges():
    assert task_dependencies(PanelTaskKey(0, 0)) == ()
    assert task_dependencies(PanelTaskKey(3, 3)) == (PanelTaskKey(2, 3),)
    assert task_dependencies(PanelTaskKey(0, 2)) == (PanelTaskKey(0, 0),)
    assert set(task_dependencies(PanelTaskKey(2, 5))) == {
        PanelTaskKey(2, 2), PanelTaskKey(1, 5)}


def test_task_graph_runs_all_and_respects_order(pool4):
    done = []
    graph = TaskGraph()
    graph.add("a", lambda: done.append("a"))
    graph.add("b", lambda: done.append("b"), deps=("a",))
    graph.add("c", lambda: done.append("c"), deps=("a",))
    graph.add("d", lambda: done.append("d"), deps=("b", "c"))
    graph.run(pool4)
    assert sorted(done) == ["a", "b", "c", "d"]
    assert done.index("a") == 0 and done.index("d") == 3


def test_task_graph_propagates_failure(pool2):
    graph = TaskGraph()
    graph.add("a", lambda: None)
    graph.add("boom", lambda: 1 / 0, deps=("a",))
    graph.add("after", lambda: None, deps=("boom",))
    with pytest.raises(ZeroDivisionError):
        graph.run(pool2)


# ---------------------------------------------------------------------------
# drivers

def _run(strategy, a, cfg, pool, kind):
    if strategy is Strategy.MTB:
        return dmf_mtb(a, cfg, pool, kind)
    if strategy is Strategy.RTM:
        return dmf_rtm(a, cfg, pool, kind)
    return dmf_la(a, cfg, pool, kind, malleable=strategy is Strategy.LA_MB)


def _outputs_equal(x, y):
    if not bitwise_equal(x.matrix.array, y.matrix.array):
        return False
    if hasattr(x, "pivots"):
        return np.array_equal(x.pivots, y.pivots)
    return bitwise_equal(x.tau, y.tau)


def test_single_panel_equals_unblocked(pool2):
    rng = np.random.default_rng(10)
    a0 = rng.random((CFG.b, CFG.b))

    ref = _mat(a0)
    ref_piv, _ = lu_unb(ref.view())
    out = dmf_mtb(_mat(a0), CFG, pool2, Kind.LU)
    assert bitwise_equal(out.matrix.array, ref.array)
    assert np.array_equal(out.pivots, ref_piv)

    refq = _mat(a0)
    ref_tau = qr_unb(refq.view())
    outq = dmf_mtb(_mat(a0), CFG, pool2, Kind.QR)
    assert bitwise_equal(outq.matrix.array, refq.array)
    assert bitwise_equal(outq.tau, ref_tau)


def test_mtb_two_step_matches_hand_rolled_oracle(pool2):
    # drive the two iterations manually with the same kernels
    rng = np.random.default_rng(11)
    b = CFG.b
    n = 2 * b
    a0 = rng.random((n, n))

    manual = _mat(a0)
    piv0, _ = lu_unb(manual.view().subview(0, 0, n, b))
    laswp(manual.view().subview(0, b, n, b), piv0)
    trsm_llnu(manual.view().subview(0, 0, b, b),
              manual.view().subview(0, b, b, b))
    neg = _mat(np.negative(manual.array[:b, b:]))
    gemm(manual.view().subview(b, b, b, b),
         manual.view().subview(b, 0, b, b), neg.view(), cfg=CFG)
    piv1, _ = lu_unb(manual.view().subview(b, b, b, b), row_base=b)
    laswp(manual.view().subview(b, 0, b, b), piv1 - b)

    out = dmf_mtb(_mat(a0), CFG, pool2, Kind.LU)
    assert bitwise_equal(out.matrix.array, manual.array)
    assert np.array_equal(out.pivots, np.concatenate([piv0, piv1]))


@pytest.mark.parametrize("kind", [Kind.LU, Kind.QR])
def test_rtm_single_worker_matches_mtb(pool1, kind):
    rng = np.random.default_rng(12)
    a0 = rng.random((3 * CFG.b + 5, 3 * CFG.b + 5))
    ref = dmf_mtb(_mat(a0), CFG, pool1, kind)
    out = dmf_rtm(_mat(a0), CFG, pool1, kind)
    assert _outputs_equal(ref, out)


@pytest.mark.parametrize("kind", [Kind.LU, Kind.QR])
def test_rtm_four_workers_matches_mtb(pool4, kind):
    cfg = CacheConfig(b=128, nc=256, kc=64, mc=24, mr=8, nr=6)
    rng = np.random.default_rng(13)
    a0 = rng.random((640, 640))
    ref = dmf_mtb(_mat(a0), cfg, pool4, kind)
    out = dmf_rtm(_mat(a0), cfg, pool4, kind)
    assert _outputs_equal(ref, out)


def test_rtm_dependency_audit(pool4):
    rng = np.random.default_rng(14)
    a0 = rng.random((5 * CFG.b, 5 * CFG.b))
    trace = []
    dmf_rtm(_mat(a0), CFG, pool4, Kind.LU, trace=trace)
    events = {}
    for ev in trace:
        key = PanelTaskKey(ev.k, ev.k if ev.j is None else ev.j)
        events[key] = ev
    assert len(events) == len(trace)       # every task ran exactly once
    for key, ev in events.items():
        for dep in task_dependencies(key):
            assert events[dep].end <= ev.start, (
                f"{key} started before its dependency {dep} finished")


@pytest.mark.parametrize("kind", [Kind.LU, Kind.QR])
@pytest.mark.parametrize("malleable", [False, True])
def test_lookahead_matches_mtb(pool4, kind, malleable):
    rng = np.random.default_rng(15)
    n = 6 * CFG.b
    a0 = rng.random((n, n))
    ref = dmf_mtb(_mat(a0), CFG, pool4, kind)
    out = dmf_la(_mat(a0), CFG, pool4, kind, malleable=malleable)
    assert _outputs_equal(ref, out)
    assert out.strategy is (Strategy.LA_MB if malleable else Strategy.LA)


def test_lookahead_single_worker_degrades_sequentially(pool1):
    rng = np.random.default_rng(16)
    a0 = rng.random((4 * CFG.b + 7, 4 * CFG.b + 7))
    ref = dmf_mtb(_mat(a0), CFG, pool1, Kind.LU)
    out = dmf_la(_mat(a0), CFG, pool1, Kind.LU, malleable=True)
    assert _outputs_equal(ref, out)


@pytest.mark.parametrize("kind", [Kind.LU, Kind.QR])
def test_strategy_equivalence_grid(pool4, pool2, pool1, kind):
    b = CFG.b
    for n in (b, 2 * b, 5 * b, 5 * b + 17):
        rng = np.random.default_rng(1000 + n)
        a0 = rng.random((n, n))
        ref = None
        for pool in (pool1, pool2, pool4):
            for strategy in Strategy:
                out = _run(strategy, _mat(a0), CFG, pool, kind)
                if ref is None:
                    ref = out
                assert _outputs_equal(ref, out), (
                    f"{kind} {strategy} t={pool.t} n={n} diverged")


def test_tall_matrix_lu(pool2):
    rng = np.random.default_rng(18)
    a0 = rng.random((3 * CFG.b + 9, 2 * CFG.b))
    out = dmf_mtb(_mat(a0), CFG, pool2, Kind.LU)
    assert lu_residual(a0, out).value <= 50
    out_la = dmf_la(_mat(a0), CFG, pool2, Kind.LU)
    assert _outputs_equal(out, out_la)


def test_wide_matrix_rejected(pool2):
    with pytest.raises(ValueError):
        dmf_mtb(Matrix.zeros(4, 8), CFG, pool2, Kind.LU)


def test_lu_backward_error_and_multipliers(pool2):
    rng = np.random.default_rng(19)
    n = 200
    a0 = rng.random((n, n))
    out = dmf_mtb(_mat(a0), CFG, pool2, Kind.LU)
    assert lu_residual(a0, out).value <= 50
    lower = np.tril(out.matrix.array, -1)
    assert np.max(np.abs(lower)) <= 1.0 + 4 * UNIT_ROUNDOFF


def test_qr_backward_error_and_orthogonality(pool2):
    rng = np.random.default_rng(20)
    n = 200
    a0 = rng.random((n, n))
    out = dmf_mtb(_mat(a0), CFG, pool2, Kind.QR)
    factor, ortho = qr_residual(a0, out)
    assert factor.value <= 50
    assert ortho.value <= 50


def test_singular_input_flagged_but_completes(pool2):
    rng = np.random.default_rng(21)
    n = 3 * CFG.b
    a0 = rng.random((n, n))
    a0[:, 5] = 0.0                          # an exactly zero column
    out = dmf_mtb(_mat(a0), CFG, pool2, Kind.LU)
    assert out.info == 6                    # 1-based column index
    out_rtm = dmf_rtm(_mat(a0), CFG, pool2, Kind.LU)
    assert out_rtm.info == 6
    assert _outputs_equal(out, out_rtm)


def test_lookahead_overlap_instrumentation(pool4):
    rng = np.random.default_rng(22)
    n = 6 * CFG.b
    a0 = rng.random((n, n))
    trace = []
    dmf_la(_mat(a0), CFG, pool4, Kind.LU, malleable=True, trace=trace)
    labels = {ev.label for ev in trace}
    assert {"PF", "TU_R"} <= labels
    pf = {ev.k: ev for ev in trace if ev.label == "PF"}
    assert set(pf) == set(range(n // CFG.b))


def test_oversubscription_free_lookahead(pool4):
    rng = np.random.default_rng(23)
    a0 = rng.random((4 * CFG.b, 4 * CFG.b))
    pool4.reset_high_water()
    for _ in range(3):
        dmf_la(_mat(a0), CFG, pool4, Kind.LU, malleable=True)
    assert pool4.high_water <= pool4.t
