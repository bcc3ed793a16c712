import numpy as np
import pytest

from helpers import micro_setup
from mgce.data import SyntheticSpec, generate_synthetic
from mgce.losses import loss_total
from mgce.memory import derive_experts
from mgce.model import Hyper, ModelParams
from mgce.trainer import (
    EpochState,
    TrainConfig,
    cosine_lr,
    epoch_setup,
    make_batch,
    run,
    sample_concept_batch,
    train_step,
)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SyntheticSpec(2, 2, 2, 6, 8, seed=0))


def test_schedules():
    assert cosine_lr(0.1, 0, 10) == pytest.approx(0.1)
    assert cosine_lr(0.1, 5, 10) == pytest.approx(0.05)
    assert cosine_lr(0.1, 10, 10) == pytest.approx(0.0)
    h = Hyper()
    assert h.tau_t(0) == pytest.approx(0.07)
    assert h.tau_t(15) == pytest.approx(0.055)
    assert h.tau_t(30) == h.tau_t(100) == pytest.approx(0.04)


def test_epoch_setup_memories_match_partitions(small):
    params = ModelParams.init(small.dim, small.dim, 2, seed=0)
    experts = derive_experts(8, 0.6, len(small))
    st = epoch_setup(0, small, params, experts, Hyper())
    for r in (1, 2, 3):
        assert st.memories[r].k == st.partitions[r].k
        np.testing.assert_allclose(np.linalg.norm(st.memories[r].prototypes, axis=1), 1.0)
    again = epoch_setup(1, small, params, experts, Hyper())
    once_more = epoch_setup(1, small, params, experts, Hyper())
    for r in (1, 2, 3):
        assert again.partitions[r].assignment.tolist() == once_more.partitions[r].assignment.tolist()


def test_concept_batch_sampling(small):
    params = ModelParams.init(small.dim, small.dim, 2, seed=0)
    st = epoch_setup(0, small, params, derive_experts(8, 0.6, len(small)), Hyper())
    rng = np.random.default_rng(0)
    idx = sample_concept_batch(st.partitions[1], 3, 5, rng)
    assert len(idx) == min(3, st.partitions[1].k) * 5
    batch = make_batch(small, np.arange(8), st, Hyper(n_c=3, n_i=5), 1.0, rng, True)
    for r in (1, 2, 3):
        assert batch.concepts[r - 1].tolist() == st.memories[r].concept_of[batch.concept_index].tolist()


def _state_from(mems, params):
    from mgce.infomap import Partition
    return EpochState(0, {m.expert_id: Partition(m.concept_of) for m in mems},
                      {m.expert_id: m for m in mems})


def test_zero_lr_leaves_params_and_descent_with_small_lr():
    params, batch, mems = micro_setup(4)
    state = _state_from(mems, params)
    cfg = TrainConfig(hyper=Hyper())
    before = params.copy()
    train_step(state, batch, params, cfg, 0.0, 0)
    for k in params.tensors:
        np.testing.assert_array_equal(params.tensors[k], before.tensors[k])

    params, batch, mems = micro_setup(4)
    state = _state_from(mems, params)
    v0 = loss_total(batch, params, mems, cfg.hyper)[0]
    frozen = [m.prototypes.copy() for m in mems]
    train_step(state, batch, params, cfg, 1e-4, 0)
    for m, p in zip(mems, frozen):
        m.prototypes[:] = p
    assert loss_total(batch, params, mems, cfg.hyper)[0] < v0


def test_only_sampled_prototypes_move():
    params, batch, mems = micro_setup(8, k_concepts=(4, 5, 3))
    batch.concepts[0][:] = 0
    state = _state_from(mems, params)
    before = mems[0].prototypes.copy()
    train_step(state, batch, params, TrainConfig(), 0.0, 0)
    assert not np.allclose(mems[0].prototypes[0], before[0])
    np.testing.assert_array_equal(mems[0].prototypes[1:], before[1:])


def test_zero_epochs_returns_initial_params(small):
    init = ModelParams.init(small.dim, small.dim, 2, seed=0)
    res = run(small, TrainConfig(epochs=0), params=init.copy())
    assert res.log == [] and res.params.to_bytes() == init.to_bytes()


def test_short_run_logs_and_determinism(small, tmp_path):
    cfg = dict(epochs=2, batch_size=16, knn=6, seed=1)
    a = run(small, TrainConfig(**cfg))
    b = run(small, TrainConfig(**cfg))
    assert len(a.log) == 2 * (len(small) // 16)
    assert len(a.epoch_log) == 3
    a.write_log(tmp_path / "a.csv")
    b.write_log(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.params.to_bytes() == b.params.to_bytes()
    assert all(np.isfinite(r["loss_total"]) for r in a.log)


def test_known_k_branch_merges_to_k(small):
    res = run(small, TrainConfig(epochs=1, batch_size=16, knn=2, k_u_known=True, k=4))
    assert res.final_partition.k <= 4
    assert res.params.n_classes == 4


def test_variant_without_experts_and_alpha(small):
    res = run(small, TrainConfig(epochs=1, batch_size=16, knn=6, hyper=Hyper(n_experts=1, alpha=0.0)))
    assert all(r["loss_c"] == 0 and r["loss_t"] == 0 for r in res.log)
    assert all(r["kg2"] == 0 and r["kg3"] == 0 for r in res.log)
