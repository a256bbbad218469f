"""Episodic meta-training: one Adam step per episode, step-decay schedule.

Backbone parameters and prior/kernel scalars form two optimizer groups
with their own learning rates.  Every epoch (a fixed number of
episodes) the trainer scores a held-out validation set on frozen seeds
and keeps the best-validation snapshot alongside the final one.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import backbone, evaluation, tensor as T
from .data import sample_episode
from .errors import ContractError, NumericsError
from .rng import Rng

MAX_GRAD_NORM = 10.0


@dataclass
class TrainConfig:
    episodes: int = 2000
    way: int = 5
    shots: int = 1
    queries: int = 15
    mc_samples: int = 10
    lr_backbone: float = 0.002
    lr_prior: float = 0.005
    decay_every_epochs: int = 5
    decay_factor: float = 0.5
    episodes_per_epoch: int = 100
    val_episodes: int = 100
    clip: bool = False
    seed: int = 0

    def __post_init__(self):
        if min(self.way, self.shots, self.queries, self.mc_samples,
               self.decay_every_epochs, self.episodes_per_epoch) < 1:
            raise ContractError("episode/schedule counts must be positive")
        if self.episodes < 0 or self.val_episodes < 0:
            raise ContractError("episode totals cannot be negative")
        if self.lr_backbone <= 0 or self.lr_prior <= 0:
            raise ContractError("learning rates must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ContractError("decay factor must lie in (0, 1]")


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params):
    return AdamState(0, {k: np.zeros_like(np.asarray(v)) for k, v in params.items()},
                     {k: np.zeros_like(np.asarray(v)) for k, v in params.items()})


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, in place on the params dict."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_schedule(base, epoch, step_epochs, factor):
    """Step decay: base * factor^floor(epoch / step_epochs)."""
    return base * factor ** (epoch // step_epochs)


def clip_gradients(grad_groups, max_norm=MAX_GRAD_NORM):
    """Scale all gradient groups down to a shared global norm bound."""
    total = 0.0
    for grads in grad_groups:
        for g in grads.values():
            total += float((np.asarray(g) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for grads in grad_groups:
            for name in grads:
                grads[name] = grads[name] * scale
    return norm


@dataclass
class TrainResult:
    params: dict
    prior: dict
    best_params: dict
    best_prior: dict
    best_epoch: int
    best_val_acc: float
    records: list            # JSONL-ready dicts, episode + validation mixed


def episode_loss(head, arch, params, prior, episode, m_samples, rng, noise=None):
    """Wrap parameter arrays as leaves and build the head's episode loss.

    Returns (loss tensor, param leaf dict, prior leaf dict) so callers
    can read gradients off the leaves after backward().
    """
    params_t = backbone.wrap_params(params)
    prior_t = backbone.wrap_params(prior)
    loss = head.episode_loss(arch, params_t, prior_t, episode, m_samples, rng,
                             noise=noise)
    return loss, params_t, prior_t


def _grads_of(leaves, what, episode_idx):
    grads = {}
    for name, leaf in leaves.items():
        g = T.grad_or_zeros(leaf)
        if not np.all(np.isfinite(g)):
            raise NumericsError(
                f"episode {episode_idx}: non-finite gradient for {what} {name!r}")
        grads[name] = g
    return grads


def _param_norms(params):
    return {name: float(np.sqrt((np.asarray(p) ** 2).sum()))
            for name, p in params.items()}


def train(arch, head, dataset, cfg: TrainConfig) -> TrainResult:
    """Run the full meta-training loop; deterministic given cfg.seed."""
    rng = Rng(cfg.seed)
    params = backbone.init_params(arch, rng.child("init"))
    prior = head.init_prior()
    opt_params = adam_init(params)
    opt_prior = adam_init(prior)
    records = []
    best_epoch, best_val = -1, -np.inf
    best_params = copy.deepcopy(params)
    best_prior = copy.deepcopy(prior)

    def validate(epoch):
        nonlocal best_epoch, best_val, best_params, best_prior
        report = evaluation.evaluate_accuracy(
            head, arch, params, prior, dataset.val, cfg.val_episodes,
            cfg.way, cfg.shots, cfg.queries, cfg.mc_samples, rng.child("val"))
        records.append({"epoch": epoch, "val_acc": report["accuracy"],
                        "val_ci95": report["ci95"]})
        if report["accuracy"] > best_val:
            best_val = report["accuracy"]
            best_epoch = epoch
            best_params = copy.deepcopy(params)
            best_prior = copy.deepcopy(prior)

    for t in range(cfg.episodes):
        epoch = t // cfg.episodes_per_epoch
        lr_theta = lr_schedule(cfg.lr_backbone, epoch, cfg.decay_every_epochs,
                               cfg.decay_factor)
        lr_rho = lr_schedule(cfg.lr_prior, epoch, cfg.decay_every_epochs,
                             cfg.decay_factor)
        ep_rng = rng.child("train", t)
        episode = sample_episode(dataset.train, cfg.way, cfg.shots, cfg.queries,
                                 ep_rng)
        loss, params_t, prior_t = episode_loss(head, arch, params, prior,
                                               episode, cfg.mc_samples, ep_rng)
        if not np.isfinite(loss.data):
            raise NumericsError(
                f"episode {t}: non-finite loss {float(loss.data)!r} "
                f"(seed {cfg.seed}, parameter norms {_param_norms(params)})")
        T.backward(loss)
        grads_theta = _grads_of(params_t, "backbone parameter", t)
        grads_rho = _grads_of(prior_t, "prior parameter", t)
        if cfg.clip:
            clip_gradients((grads_theta, grads_rho))
        adam_step(params, grads_theta, opt_params, lr_theta)
        adam_step(prior, grads_rho, opt_prior, lr_rho)
        records.append({"episode": t, "loss": float(loss.data),
                        "lr_theta": lr_theta, "lr_prior": lr_rho,
                        **head.prior_summary(prior)})
        if cfg.val_episodes and (t + 1) % cfg.episodes_per_epoch == 0:
            validate(epoch)

    if cfg.episodes and cfg.val_episodes and cfg.episodes % cfg.episodes_per_epoch:
        # partial final epoch still gets scored so "best" sees the end state
        validate(cfg.episodes // cfg.episodes_per_epoch)
    if best_epoch < 0:
        best_params = copy.deepcopy(params)
        best_prior = copy.deepcopy(prior)
        best_val = float("nan")
    return TrainResult(params, prior, best_params, best_prior, best_epoch,
                       best_val, records)
