"""Optimizer mechanics and the episodic training loop."""

import numpy as np
import pytest

from gpldla import backbone, head as H, tensor as T, trainer
from gpldla.data import SyntheticTaskConfig, generate_synthetic_pool
from gpldla.errors import ContractError, NumericsError
from gpldla.heads import GpldlaHead, get_head
from gpldla.rng import Rng
from gpldla.trainer import TrainConfig, adam_init, adam_step, lr_schedule


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(way=0)
    with pytest.raises(ContractError):
        TrainConfig(episodes=-1)
    with pytest.raises(ContractError):
        TrainConfig(lr_backbone=0.0)
    with pytest.raises(ContractError):
        TrainConfig(decay_factor=0.0)
    with pytest.raises(ContractError):
        TrainConfig(decay_factor=1.5)
    TrainConfig(episodes=0, decay_factor=1.0)   # boundary values are fine


def test_adam_first_step_has_learning_rate_magnitude():
    # bias correction makes the very first update lr * g/|g| (+eps slack)
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -0.25, 1e-3])}
    state = adam_init(params)
    adam_step(params, grads, state, lr=0.01)
    delta = params["w"] - np.array([1.0, -2.0, 3.0])
    assert np.allclose(np.abs(delta), 0.01, rtol=1e-2)
    assert np.sign(delta[0]) == -1 and np.sign(delta[1]) == 1
    assert state.step == 1


def test_adam_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([2.0, -1.0])}
    state = adam_init(params)
    adam_step(params, {"w": np.zeros(2)}, state, lr=0.5)
    assert np.array_equal(params["w"], [2.0, -1.0])


def test_adam_matches_reference_formula_over_steps():
    rng = Rng(0)
    params = {"w": rng.normal((4,))}
    ref = params["w"].copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = adam_init(params)
    for t in range(1, 6):
        g = rng.normal((4,))
        adam_step(params, {"w": g}, state, lr=0.1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(params["w"], ref, rtol=1e-12)


def test_lr_schedule_step_decay():
    assert lr_schedule(0.002, 0, 5, 0.5) == 0.002
    assert lr_schedule(0.002, 4, 5, 0.5) == 0.002
    assert lr_schedule(0.002, 5, 5, 0.5) == 0.001
    assert lr_schedule(0.002, 14, 5, 0.5) == 0.0005


def test_clip_rescales_only_large_gradients():
    small = {"a": np.array([0.1, 0.1])}
    norm = trainer.clip_gradients((small,), max_norm=10.0)
    assert np.array_equal(small["a"], [0.1, 0.1])
    assert norm < 1.0
    big = {"a": np.array([30.0, 40.0])}
    norm = trainer.clip_gradients((big,), max_norm=10.0)
    assert np.isclose(norm, 50.0)
    assert np.isclose(np.sqrt((big["a"] ** 2).sum()), 10.0)


def _tiny_dataset(seed=0, **overrides):
    cfg = SyntheticTaskConfig(
        input_dim=8, latent_classes=12, train_classes=6, val_classes=3,
        test_classes=3, samples_per_class=10, seed=seed, **overrides)
    return generate_synthetic_pool(cfg)


def _tiny_arch(dataset):
    return backbone.ArchSpec(kind="mlp", in_dim=dataset.train.input_dim,
                             out_dim=8, hidden=12)


def test_zero_episodes_returns_init_and_no_records():
    ds = _tiny_dataset()
    arch = _tiny_arch(ds)
    cfg = TrainConfig(episodes=0, way=3, shots=1, queries=2, val_episodes=0,
                      seed=7)
    result = trainer.train(arch, GpldlaHead(), ds, cfg)
    assert result.records == []
    init = backbone.init_params(arch, Rng(7).child("init"))
    for name, val in init.items():
        assert np.array_equal(result.params[name], val)
    assert np.array_equal(result.best_params["w0"], result.params["w0"])
    assert result.best_epoch == -1 and np.isnan(result.best_val_acc)


def test_training_is_bit_deterministic():
    ds = _tiny_dataset()
    arch = _tiny_arch(ds)
    cfg = TrainConfig(episodes=12, way=3, shots=1, queries=3, mc_samples=4,
                      episodes_per_epoch=5, val_episodes=4, seed=3)
    a = trainer.train(arch, GpldlaHead(), ds, cfg)
    b = trainer.train(arch, GpldlaHead(), ds, cfg)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    for name in a.prior:
        assert np.array_equal(a.prior[name], b.prior[name])
    assert a.records == b.records
    losses = [r["loss"] for r in a.records if "episode" in r]
    assert len(losses) == 12
    vals = [r for r in a.records if "epoch" in r]
    # epochs 0 and 1 complete; the partial tail (episodes 10..11) revalidates
    assert [v["epoch"] for v in vals] == [0, 1, 2]


def test_loss_decreases_on_a_frozen_episode():
    # repeat one episode with frozen MC noise: plain optimization must
    # make headway on it
    ds = _tiny_dataset()
    arch = _tiny_arch(ds)
    head = GpldlaHead()
    rng = Rng(5)
    params = backbone.init_params(arch, rng.child("init"))
    prior = head.init_prior()
    from gpldla.data import sample_episode
    episode = sample_episode(ds.train, 3, 1, 4, rng.child("train", 0))
    noise = H.sample_noise(rng.child("noise"), 5, 3, arch.out_dim)
    opt_p = adam_init(params)
    opt_r = adam_init(prior)
    losses = []
    for _ in range(50):
        loss, params_t, prior_t = trainer.episode_loss(
            head, arch, params, prior, episode, 5, None, noise=noise)
        T.backward(loss)
        losses.append(float(loss.data))
        adam_step(params, trainer._grads_of(params_t, "backbone", 0), opt_p, 1e-3)
        adam_step(prior, trainer._grads_of(prior_t, "prior", 0), opt_r, 1e-3)
    assert losses[-1] <= losses[0]
    assert losses[-1] < 0.9 * losses[0]


def test_initial_loss_near_uniform_on_uninformative_pool():
    # with vanishing class separation and a small prior scale the initial
    # predictive is near-uniform, so the loss starts near log(way)
    ds = _tiny_dataset(center_scale=1e-6)
    arch = backbone.ArchSpec(kind="mlp", in_dim=8, out_dim=8, hidden=12,
                             activation="tanh")
    head = GpldlaHead()
    rng = Rng(11)
    params = backbone.init_params(arch, rng.child("init"))
    prior = {"log_weight_scale": np.log(0.3) * np.ones(()),
             "log_bias_scale": np.log(0.3) * np.ones(())}
    from gpldla.data import sample_episode
    losses = []
    for t in range(50):
        ep_rng = rng.child("train", t)
        episode = sample_episode(ds.train, 5, 1, 4, ep_rng)
        loss, _, _ = trainer.episode_loss(head, arch, params, prior, episode,
                                          10, ep_rng)
        losses.append(float(loss.data))
    assert abs(np.mean(losses) - np.log(5)) < 0.2


class _NanHead(GpldlaHead):
    def episode_loss(self, arch, params, prior, episode, m_samples, rng,
                     noise=None):
        loss = super().episode_loss(arch, params, prior, episode, m_samples,
                                    rng, noise=noise)
        return T.mul(loss, np.nan)


def test_non_finite_loss_aborts_with_context():
    ds = _tiny_dataset()
    cfg = TrainConfig(episodes=3, way=3, shots=1, queries=2, val_episodes=0)
    with pytest.raises(NumericsError, match="episode 0"):
        trainer.train(_tiny_arch(ds), _NanHead(), ds, cfg)


def test_clip_path_trains_and_records_match_shape():
    ds = _tiny_dataset()
    cfg = TrainConfig(episodes=4, way=3, shots=1, queries=2, mc_samples=3,
                      val_episodes=0, clip=True, seed=1)
    result = trainer.train(_tiny_arch(ds), GpldlaHead(), ds, cfg)
    assert len(result.records) == 4
    for record in result.records:
        assert {"episode", "loss", "lr_theta", "lr_prior"} <= set(record)
        assert np.isfinite(record["loss"])


def test_all_heads_train_without_incident():
    ds = _tiny_dataset()
    arch = _tiny_arch(ds)
    for name in ("gpldla", "protonet", "gpdkt"):
        cfg = TrainConfig(episodes=6, way=3, shots=2, queries=3, mc_samples=3,
                          episodes_per_epoch=3, val_episodes=3, seed=2)
        result = trainer.train(arch, get_head(name), ds, cfg)
        losses = [r["loss"] for r in result.records if "episode" in r]
        assert len(losses) == 6 and all(np.isfinite(l) for l in losses)
        assert result.best_epoch >= 0
