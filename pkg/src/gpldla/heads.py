"""Uniform episode-head interface over the three classifier variants.

Each head knows how to (a) create its prior/kernel parameter arrays,
(b) build a differentiable episode loss from wrapped parameter tensors,
and (c) produce query probabilities plus logit-like calibration scores
at test time.  The trainer and evaluator only ever talk to this layer.
"""

import numpy as np

from . import backbone, baselines, head as gphead, tensor as T
from .errors import ConfigError


def _np_softmax(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class GpldlaHead:
    """Discriminant-plugin Laplace head (the main event)."""

    name = "gpldla"

    def init_prior(self):
        return gphead.init_prior_arrays()

    def prior_summary(self, prior_arrays):
        return {"beta": float(np.exp(prior_arrays["log_weight_scale"])),
                "beta_b": float(np.exp(prior_arrays["log_bias_scale"]))}

    def episode_loss(self, arch, params, prior, episode, m_samples, rng, noise=None):
        sup = backbone.forward(arch, params, episode.support.features)
        qry = backbone.forward(arch, params, episode.query.features)
        gp = gphead.GpPrior(prior["log_weight_scale"], prior["log_bias_scale"])
        post = gphead.adapt(sup, episode.support.labels, episode.way, gp)
        pred = gphead.predictive(post, qry, m_samples, rng=rng, noise=noise)
        true_p = T.take_per_row(pred.probs, episode.query.labels - 1)
        return T.neg(T.tmean(T.log(true_p)))

    def predict(self, arch, params, prior, episode, m_samples, rng):
        sup = backbone.forward(arch, params, episode.support.features)
        qry = backbone.forward(arch, params, episode.query.features)
        gp = gphead.GpPrior(prior["log_weight_scale"], prior["log_bias_scale"])
        post = gphead.adapt(sup, episode.support.labels, episode.way, gp)
        pred = gphead.predictive(post, qry, m_samples, rng=rng)
        probs = pred.probs.data
        # Calibration scores: log of the MC-averaged probabilities, so a
        # fitted temperature of 1 reproduces the probabilities exactly.
        return probs, np.log(np.maximum(probs, 1e-300))


class ProtoNetHead:
    """Prototype nearest-centroid baseline; no prior parameters."""

    name = "protonet"

    def init_prior(self):
        return {}

    def prior_summary(self, prior_arrays):
        return {"beta": None, "beta_b": None}

    def _logits(self, arch, params, episode):
        sup = backbone.forward(arch, params, episode.support.features)
        qry = backbone.forward(arch, params, episode.query.features)
        return baselines.protonet_logits(sup, episode.support.labels, qry, episode.way)

    def episode_loss(self, arch, params, prior, episode, m_samples, rng, noise=None):
        logits = self._logits(arch, params, episode)
        log_true = T.sub(T.take_per_row(logits, episode.query.labels - 1),
                         T.logsumexp_rows(logits))
        return T.neg(T.tmean(log_true))

    def predict(self, arch, params, prior, episode, m_samples, rng):
        logits = self._logits(arch, params, episode).data
        return _np_softmax(logits), logits


class GpdktHead:
    """One-vs-rest GP label-regression baseline with a learned kernel."""

    name = "gpdkt"

    def init_prior(self):
        return {"log_weight_scale": np.zeros(()),
                "log_offset_scale": np.zeros(()),
                "log_noise_var": np.asarray(np.log(0.1))}

    def prior_summary(self, prior_arrays):
        return {"beta": float(np.exp(prior_arrays["log_weight_scale"])),
                "beta_b": float(np.exp(prior_arrays["log_offset_scale"]))}

    def episode_loss(self, arch, params, prior, episode, m_samples, rng, noise=None):
        # Marginal likelihood is maximised over support and query jointly
        # (both are labelled during meta-training).
        feats_in = np.concatenate([episode.support.features, episode.query.features])
        labels = np.concatenate([episode.support.labels, episode.query.labels])
        z = backbone.forward(arch, params, feats_in)
        targets = baselines.one_vs_rest_targets(labels, episode.way)
        mll = baselines.gpdkt_marginal_loglik(
            z, targets,
            T.exp(prior["log_weight_scale"]),
            T.exp(prior["log_offset_scale"]),
            T.exp(prior["log_noise_var"]))
        return T.neg(mll)

    def predict(self, arch, params, prior, episode, m_samples, rng):
        sup = backbone.forward(arch, params, episode.support.features).data
        qry = backbone.forward(arch, params, episode.query.features).data
        cfg = baselines.KernelConfig(
            weight_scale=float(np.exp(prior["log_weight_scale"].data)),
            offset=float(np.exp(prior["log_offset_scale"].data)),
            noise_var=float(np.exp(prior["log_noise_var"].data)))
        model = baselines.gp_regression_fit(sup, episode.support.labels,
                                            episode.way, cfg)
        means = baselines.gp_regression_predict(model, qry)
        # Predictive means act as logit-like scores; softmax over them
        # gives the confidence used for calibration.
        return _np_softmax(means), means


HEADS = {"gpldla": GpldlaHead, "protonet": ProtoNetHead, "gpdkt": GpdktHead}


def get_head(name):
    if name not in HEADS:
        raise ConfigError(f"unknown head {name!r}; choose from {sorted(HEADS)}")
    return HEADS[name]()
