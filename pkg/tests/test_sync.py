import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from localsgd import sync
from localsgd.data import Dataset, make_sparse_binary, next_minibatch, reshuffle_epoch
from localsgd.objectives import LogisticL2, Quadratic
from localsgd.optim import HSchedule
from localsgd.sync import (Cluster, InvariantError, SyncPlan, aggregate_signs, apply_cross_sync_momentum,
                           average_models, compress_sign, ef_sign_encode, hierarchical_round,
                           local_sgd_round)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_average_models_examples():
    np.testing.assert_array_equal(average_models([np.array([1.0, 2.0]), np.array([3.0, 4.0])]), [2.0, 3.0])
    w = np.array([0.1, -7.3])
    assert average_models([w]).tobytes() == w.tobytes()
    assert average_models([w, w, w]).tobytes() == (3 * w / 3).tobytes()
    with pytest.raises(ValueError):
        average_models([])
    with pytest.raises(ValueError):
        average_models([np.zeros(2), np.zeros(3)])


def test_average_order_is_ascending():
    vs = [np.array([1e16]), np.array([1.0]), np.array([-1e16])]
    # ((1e16 + 1) - 1e16) / 3 == 0 in double precision, any other order would differ
    assert average_models(vs)[0] == ((1e16 + 1.0) - 1e16) / 3


def test_compress_sign_examples():
    s, p = compress_sign(np.array([2.0, -1.0, 0.0, 1.0]))
    np.testing.assert_array_equal(s, [1, -1, 1, 1])
    assert p == 1.0
    s, p = compress_sign(np.zeros(3))
    assert s.tolist() == [1, 1, 1] and p == 0.0 and not (s * p).any()


@given(arrays(np.float64, st.integers(1, 50), elements=finite))
def test_sign_reconstruction_preserves_l1(delta):
    s, p = compress_sign(delta)
    assert set(np.unique(s)) <= {-1.0, 1.0}
    assert np.abs(s * p).sum() == pytest.approx(np.abs(delta).sum(), rel=1e-12, abs=1e-300)


def test_aggregate_examples():
    payload = (np.array([1.0, -1.0]), 0.5)
    for mode in ("avg", "vote"):
        np.testing.assert_array_equal(aggregate_signs([payload], mode), [0.5, -0.5])
    assert aggregate_signs([(np.array([1.0]), 1.0), (np.array([-1.0]), 1.0)], "avg")[0] == 0.0
    votes = [(np.array([1.0]), 1.0), (np.array([1.0]), 1.0), (np.array([-1.0]), 1.0)]
    assert aggregate_signs(votes, "vote")[0] == 1.0
    tie = [(np.array([1.0]), 2.0), (np.array([-1.0]), 4.0)]
    assert aggregate_signs(tie, "vote")[0] == 3.0
    with pytest.raises(ValueError):
        aggregate_signs([(np.ones(2), 1.0), (np.ones(3), 1.0)], "avg")


def test_ef_example():
    (s, p), e = ef_sign_encode(np.array([0.3, -0.1]), np.zeros(2))
    assert p == pytest.approx(0.2, abs=1e-16)
    np.testing.assert_array_equal(s, [1, -1])
    np.testing.assert_allclose(s * p, [0.2, -0.2], atol=1e-16)
    np.testing.assert_allclose(e, [0.1, 0.1], atol=1e-16)
    (s, p), e = ef_sign_encode(np.zeros(3), np.zeros(3))
    assert p == 0 and not e.any()


@given(st.integers(1, 40).flatmap(lambda d: st.tuples(arrays(np.float64, d, elements=finite),
                                                      arrays(np.float64, d, elements=finite))))
def test_ef_decomposition(pair):
    delta, e = pair
    (s, p), e_new = ef_sign_encode(delta, e)
    scale = max(1.0, np.abs(delta + e).max())
    assert np.max(np.abs((delta + e) - s * p - e_new)) <= 1e-12 * scale


def test_cross_sync_momentum_examples():
    buf = np.array([0.25, -1.0])
    before = buf.tobytes()
    upd, out = apply_cross_sync_momentum("local", buf, np.array([1.0, 2.0]), 0.9, 0.1)
    assert out.tobytes() == before and upd.tolist() == [1.0, 2.0]
    lr = 0.1
    mean = np.array([3.0, -1.0])
    upd, _ = apply_cross_sync_momentum("global", np.zeros(2), mean, 0.0, lr)
    np.testing.assert_allclose(upd, mean, rtol=1e-15)
    u = np.zeros(2)
    for _ in range(2):
        upd, u = apply_cross_sync_momentum("global", u, lr * np.array([1.0, 0.0]), 0.9, lr)
    np.testing.assert_allclose(upd, lr * np.array([1.9, 0.0]), rtol=1e-15)


# -- rounds --------------------------------------------------------------------


def _cluster(obj, data, plan, seed=1, momentum=0.0, style="none", w0=None):
    w0 = np.zeros(obj.d) if w0 is None else w0
    return Cluster.create(w0, plan, data.N, seed, momentum, style)


@pytest.fixture(scope="module")
def logreg():
    data = make_sparse_binary(n=96, d=12, density=0.4, seed=5)
    return LogisticL2(12, 1.0 / 96), data


def test_single_worker_is_sequential_sgd(logreg):
    obj, data = logreg
    for H in (1, 3, 7):
        c = _cluster(obj, data, SyncPlan(1, h_schedule=HSchedule("constant", H)))
        stream = reshuffle_epoch(data, 1, 1, 0)[0]
        w = np.zeros(obj.d)
        lr = 0.7
        for _ in range(4):
            local_sgd_round(c, obj, data, lr, H, 8)
            for _ in range(H):
                w = w - lr * obj.gradient(w, next_minibatch(stream, 8), data)
        assert c.consensus.tobytes() == w.tobytes()


def test_two_workers_two_steps_hand_rolled():
    centers = np.arange(16, dtype=float).reshape(8, 2) / 4.0
    data = Dataset.from_dense(centers, np.zeros(8))
    diag = np.array([0.5, 2.0])
    obj = Quadratic(diag)
    lr = 0.1
    w0 = np.array([1.0, -1.0])
    c = _cluster(obj, data, SyncPlan(2), seed=3, w0=w0)
    local_sgd_round(c, obj, data, lr, 2, 2)
    chunks = reshuffle_epoch(8, 2, 3, 0)
    finals = []
    for part in chunks:
        w = w0.copy()
        for h in range(2):
            batch = part.indices[2 * h:2 * h + 2]
            w = w - lr * diag * (w - centers[batch].mean(axis=0))
        finals.append(w)
    np.testing.assert_allclose(c.consensus, (finals[0] + finals[1]) / 2, rtol=0, atol=1e-15)


def test_consensus_and_budget_per_round(logreg):
    obj, data = logreg
    plan = SyncPlan(4, codec="ef-sign")
    c = _cluster(obj, data, plan)
    for _ in range(5):
        stats = local_sgd_round(c, obj, data, 0.5, 3, 4)
        assert stats.samples == 3 * 4 * 4
        assert stats.grad_evals == 3 * 4
        assert stats.global_syncs == 1 and stats.local_steps == 3
        ref = c.workers[0].w.tobytes()
        assert all(wk.w.tobytes() == ref for wk in c.workers)
        assert ref == c.consensus.tobytes()


def test_consensus_violation_raises(logreg):
    obj, data = logreg
    c = _cluster(obj, data, SyncPlan(2))
    c.workers[1].w = c.workers[1].w + 1.0
    with pytest.raises(InvariantError):
        local_sgd_round(c, obj, data, 0.1, 1, 4)


def test_hb_one_equals_local_round(logreg):
    obj, data = logreg
    flat = _cluster(obj, data, SyncPlan(4))
    hier = _cluster(obj, data, SyncPlan(4, n_blocks=2, block_steps=1))
    for _ in range(6):
        local_sgd_round(flat, obj, data, 0.4, 3, 4)
        stats = hierarchical_round(hier, obj, data, 0.4, 3, 4)
        assert stats.block_syncs == 0 and stats.global_syncs == 1
    assert flat.consensus.tobytes() == hier.consensus.tobytes()


def test_one_block_equals_local_rounds(logreg):
    obj, data = logreg
    flat = _cluster(obj, data, SyncPlan(4))
    hier = _cluster(obj, data, SyncPlan(4, n_blocks=1, block_steps=3))
    for _ in range(4):
        for _ in range(3):
            local_sgd_round(flat, obj, data, 0.4, 2, 4)
        hierarchical_round(hier, obj, data, 0.4, 2, 4)
    np.testing.assert_allclose(hier.consensus, flat.consensus, rtol=1e-12, atol=1e-14)


def test_singleton_blocks_degenerate_to_flat(logreg):
    obj, data = logreg
    flat = _cluster(obj, data, SyncPlan(4))
    hier = _cluster(obj, data, SyncPlan(4, n_blocks=4, block_steps=3))
    for _ in range(4):
        local_sgd_round(flat, obj, data, 0.4, 2 * 3, 4)
        hierarchical_round(hier, obj, data, 0.4, 2, 4)
    np.testing.assert_allclose(hier.consensus, flat.consensus, rtol=1e-12, atol=1e-14)


def test_block_step_averages_within_blocks(logreg, monkeypatch):
    obj, data = logreg
    snapshots = []
    real = sync._block_sync

    def spy(cluster, *args):
        real(cluster, *args)
        snapshots.append([wk.w.copy() for wk in cluster.workers])

    monkeypatch.setattr(sync, "_block_sync", spy)
    c = _cluster(obj, data, SyncPlan(4, n_blocks=2, block_steps=2))
    stats = hierarchical_round(c, obj, data, 0.5, 2, 4)
    assert stats.block_syncs == 1 and stats.global_syncs == 1
    (ws,) = snapshots
    assert ws[0].tobytes() == ws[1].tobytes() and ws[2].tobytes() == ws[3].tobytes()
    assert ws[0].tobytes() != ws[2].tobytes()
    assert all(wk.w.tobytes() == c.consensus.tobytes() for wk in c.workers)


def test_zero_global_momentum_is_plain_averaging(logreg):
    obj, data = logreg
    a = _cluster(obj, data, SyncPlan(3))
    b = _cluster(obj, data, SyncPlan(3, momentum_mode="global", global_momentum=0.0))
    for _ in range(5):
        local_sgd_round(a, obj, data, 0.3, 2, 4)
        local_sgd_round(b, obj, data, 0.3, 2, 4)
    assert a.consensus.tobytes() == b.consensus.tobytes()


def test_local_buffers_untouched_by_sync(logreg):
    obj, data = logreg
    c = _cluster(obj, data, SyncPlan(2), momentum=0.9, style="heavy-ball")
    local_sgd_round(c, obj, data, 0.3, 2, 4)
    b0, b1 = (wk.momentum.buffer for wk in c.workers)
    assert b0.tobytes() != b1.tobytes()
    c2 = _cluster(obj, data, SyncPlan(2, average_buffers=True), momentum=0.9, style="heavy-ball")
    local_sgd_round(c2, obj, data, 0.3, 2, 4)
    b0, b1 = (wk.momentum.buffer for wk in c2.workers)
    assert b0.tobytes() == b1.tobytes()


def test_sign_codec_local_steps_use_signs(logreg):
    obj, data = logreg
    c = _cluster(obj, data, SyncPlan(1, codec="sign-avg"))
    local_sgd_round(c, obj, data, 0.01, 1, 4)
    step = np.abs(c.consensus) / 0.01
    np.testing.assert_allclose(step, np.ones(obj.d), rtol=1e-12)


@settings(max_examples=20)
@given(seed=st.integers(0, 1000), codec=st.sampled_from(["exact", "sign-avg", "sign-vote", "ef-sign"]),
       mode=st.sampled_from(["local", "global", "hybrid"]))
def test_all_variants_keep_consensus(logreg, seed, codec, mode):
    obj, data = logreg
    m, style = (0.0, "none") if mode == "global" else (0.5, "nesterov")
    c = _cluster(obj, data, SyncPlan(4, n_blocks=2, block_steps=2, momentum_mode=mode, global_momentum=0.5,
                                     codec=codec), seed=seed, momentum=m, style=style)
    for _ in range(3):
        hierarchical_round(c, obj, data, 0.05, 2, 4)
        c.check_consensus()
    assert np.all(np.isfinite(c.consensus))


def test_plan_validation():
    with pytest.raises(ValueError):
        SyncPlan(6, n_blocks=4)
    with pytest.raises(ValueError):
        SyncPlan(2, codec="topk")
    with pytest.raises(ValueError):
        SyncPlan(2, momentum_mode="global", global_momentum=1.0)
