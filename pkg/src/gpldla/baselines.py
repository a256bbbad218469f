"""Baseline episode heads: prototype nearest-centroid and one-vs-rest GP.

The prototype head scores queries by negative squared distance to class
centroids.  The GP head regresses +/-1 one-vs-rest targets with a
shared cosine-style kernel on the embeddings; classes share one kernel
and one learned noise variance, so the per-class solves reuse a single
factorisation.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import tensor as T
from .errors import ContractError, NumericsError
from .head import one_hot

JITTER = 1e-8


def class_centroids(features, labels, way):
    """Per-class mean embeddings, differentiable: (C, d)."""
    hot = one_hot(labels, way)
    counts = hot.sum(axis=0)
    if np.any(counts == 0):
        raise ContractError("every class needs at least one support row")
    sums = T.matmul(hot.T, T.as_tensor(features))
    return T.mul(sums, (1.0 / counts)[:, None])


def protonet_logits(support_features, support_labels, query_features, way):
    """Negative squared euclidean distance to each centroid: (n_q, C)."""
    q = T.as_tensor(query_features)
    cent = class_centroids(support_features, support_labels, way)
    q_sq = T.tsum(T.square(q), axis=1, keepdims=True)          # (n_q, 1)
    c_sq = T.tsum(T.square(cent), axis=1)                      # (C,)
    cross = T.matmul(q, T.transpose(cent))                     # (n_q, C)
    return T.sub(T.mul(cross, 2.0), T.add(q_sq, c_sq))


def one_vs_rest_targets(labels, way):
    """+1 for the true class, -1 elsewhere: (n, C)."""
    return 2.0 * one_hot(labels, way) - 1.0


@dataclass
class KernelConfig:
    """Cosine-style kernel k(z, z') = weight_scale^2 z.z' + offset^2."""

    weight_scale: float = 1.0
    offset: float = 1.0
    noise_var: float = 0.1
    jitter: float = JITTER


def _gram(cfg, a, b):
    return cfg.weight_scale ** 2 * (a @ b.T) + cfg.offset ** 2


@dataclass
class GpRegressionModel:
    cfg: KernelConfig
    support_features: np.ndarray
    alpha: np.ndarray   # (n, C) solves of (K + noise I) alpha = targets


def gp_regression_fit(support_features, support_labels, way, cfg: KernelConfig):
    """Factor the regularised kernel once and solve all C target columns."""
    feats = np.asarray(support_features, dtype=np.float64)
    targets = one_vs_rest_targets(support_labels, way)
    gram = _gram(cfg, feats, feats)
    gram[np.diag_indices_from(gram)] += cfg.noise_var + cfg.jitter
    try:
        factor = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as err:
        raise NumericsError(f"kernel matrix is not positive definite: {err}") from err
    return GpRegressionModel(cfg, feats, cho_solve(factor, targets))


def gp_regression_predict(model: GpRegressionModel, query_features):
    """Posterior mean score per class: (n_q, C)."""
    q = np.asarray(query_features, dtype=np.float64)
    return _gram(model.cfg, q, model.support_features) @ model.alpha


def gpdkt_marginal_loglik(features, targets, weight_scale, offset_scale,
                          noise_var, jitter=JITTER):
    """Summed Gaussian marginal log-likelihood over the C target columns.

    Differentiable through the features and the three kernel scalars;
    this is the episode training objective for the GP head (maximise,
    so the trainer negates it).
    """
    feats = T.as_tensor(features)
    targets = np.asarray(targets, dtype=np.float64)
    n, c = targets.shape
    if feats.data.shape[0] != n:
        raise ContractError("features and targets disagree on the row count")
    gram = T.mul(T.matmul(feats, T.transpose(feats)), T.square(weight_scale))
    gram = T.add(gram, T.square(offset_scale))
    ridge = T.mul(T.add(noise_var, jitter), np.eye(n))
    a = T.add(gram, ridge)
    solved = T.solve(a, targets)                    # (n, C)
    quad = T.tsum(T.mul(T.as_tensor(targets), solved))
    logdet = T.logdet_psd(a)
    const = c * n * np.log(2.0 * np.pi)
    return T.mul(T.add(T.add(quad, T.mul(logdet, float(c))), const), -0.5)
