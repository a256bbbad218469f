"""Discriminant-plugin Bayesian classifier head.

The episode classifier is a softmax-linear model whose weight rows and
biases carry zero-mean Gaussian priors.  Rather than running Newton
iterations to the posterior mode, the mode is plugged in from
closed-form discriminant estimates:

* class means become the weight rows after dividing by a shared
  variance chosen so the average squared row norm lands exactly on the
  prior's expected value,
* biases come from the log class frequencies minus the usual quadratic
  term, then get shifted to sum to zero (softmax output is invariant to
  the shift, and the zero-sum point is the one the prior favours).

A diagonal Laplace approximation around that mode yields independent
Gaussian posteriors per coordinate, and the class probabilities are a
Monte Carlo average of softmax draws from it.  Everything here is built
from taped ops, so episode losses differentiate through the whole
construction back to the feature extractor and the prior scales.
"""

import contextlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError

# Testing hook: selfcheck --mutate flips one of these on to prove the
# invariant suites actually catch a mis-wired formula.
_FAULT = None
FAULT_MODES = ("prior-norm-scale", "curvature-sign")


@contextlib.contextmanager
def inject_fault(mode):
    """Deliberately mis-wire one formula while the context is active."""
    global _FAULT
    if mode is not None and mode not in FAULT_MODES:
        raise ContractError(f"unknown fault mode {mode!r}; known: {FAULT_MODES}")
    prev = _FAULT
    _FAULT = mode
    try:
        yield
    finally:
        _FAULT = prev


@dataclass
class GpPrior:
    """Prior scales, carried in log space so gradient steps keep them positive."""

    log_weight_scale: T.Tensor
    log_bias_scale: T.Tensor

    @property
    def weight_scale(self):
        return T.exp(self.log_weight_scale)

    @property
    def bias_scale(self):
        return T.exp(self.log_bias_scale)


def init_prior_arrays():
    """Fresh prior parameters: both scales start at 1 (zero in log space)."""
    return {"log_weight_scale": np.zeros(()), "log_bias_scale": np.zeros(())}


def prior_from_arrays(arrays):
    return GpPrior(T.parameter(arrays["log_weight_scale"]),
                   T.parameter(arrays["log_bias_scale"]))


def one_hot(labels, way):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ContractError("labels must be a non-empty vector")
    if labels.min() < 1 or labels.max() > way:
        raise ContractError(f"labels must lie in 1..{way}")
    out = np.zeros((labels.size, way))
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


@dataclass
class LdaEstimates:
    """Closed-form discriminant quantities for one support set."""

    class_priors: np.ndarray   # (C,) empirical class frequencies
    class_means: T.Tensor      # (C, d)
    var_ml: T.Tensor           # scalar; ML shared variance (diagnostic only,
    #                            collapses to 0 in the one-shot case)
    var_adjusted: T.Tensor = None  # scalar; prior-matched shared variance


def lda_ml_estimates(features, labels, way) -> LdaEstimates:
    """Empirical class frequencies, class means, and the pooled ML variance."""
    feats = T.as_tensor(features)
    n, d = feats.data.shape
    hot = one_hot(labels, way)
    counts = hot.sum(axis=0)
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise ContractError(f"episode class {empty[0] + 1} has no support rows")
    sums = T.matmul(hot.T, feats)                       # (C, d)
    means = T.mul(sums, (1.0 / counts)[:, None])
    centred = T.sub(feats, T.gather_rows(means, np.asarray(labels) - 1))
    var_ml = T.div(T.tsum(T.square(centred)), float(n * d))
    return LdaEstimates(counts / float(n), means, var_ml)


def prior_norm_adjust(means, weight_scale):
    """Shared variance that puts the weight rows on the prior's norm shell.

    Returns (var_adjusted, weights) with weights = means / var_adjusted.
    By construction mean_j ||weights_j||^2 equals weight_scale^2 * d
    exactly (up to rounding), whatever the means look like.
    """
    means = T.as_tensor(means)
    c, d = means.data.shape
    if not np.any(means.data):
        raise ContractError("all class means are zero; cannot match the prior norm")
    mean_sq = T.div(T.tsum(T.square(means)), float(c))
    rms = T.clamp_min(T.sqrt(mean_sq), 1e-12)
    scale_root_d = T.mul(weight_scale, float(np.sqrt(d)))
    if _FAULT == "prior-norm-scale":
        var_adjusted = T.mul(rms, scale_root_d)   # wrong on purpose
    else:
        var_adjusted = T.div(rms, scale_root_d)
    weights = T.div(means, var_adjusted)
    return var_adjusted, weights


def center_biases(class_priors, means, var_adjusted):
    """Plug-in biases shifted to sum to zero.

    Returns (biases, centering).  The raw bias for class j is
    log prior_j - ||mean_j||^2 / (2 var); `centering` is the common
    shift added to all of them (softmax output never sees it, but the
    zero-sum point is where the Gaussian bias prior is happiest).  The
    bias prior scale itself cancels from this stationary condition, so
    it only enters the posterior variances later.
    """
    class_priors = np.asarray(class_priors, dtype=np.float64)
    if np.any(class_priors <= 0):
        raise ContractError("class priors must be strictly positive")
    sq_norms = T.tsum(T.square(means), axis=1)              # (C,)
    raw = T.sub(np.log(class_priors), T.div(sq_norms, T.mul(var_adjusted, 2.0)))
    centering = T.neg(T.tmean(raw))
    biases = T.add(raw, centering)
    return biases, centering


def laplace_variances(features, weights, biases, weight_scale, bias_scale):
    """Diagonal posterior variances from the softmax curvature.

    The curvature of the log-likelihood wrt weight coordinate (j, k) is
    sum_x p_j(x)(1 - p_j(x)) x_k^2 and wrt bias j is sum_x p_j(1 - p_j),
    summed over the support rows; the labels never enter these terms.
    Adding the prior precision and inverting gives the variances, so
    0 < var_w <= weight_scale^2 and 0 < var_b <= bias_scale^2 always.
    """
    feats = T.as_tensor(features)
    logits = T.linear(feats, T.transpose(weights), biases)   # (n, C)
    p = T.softmax_rows(logits)
    if _FAULT == "curvature-sign":
        a = T.add(p, T.square(p))   # wrong on purpose
    else:
        a = T.sub(p, T.square(p))   # p(1-p)
    data_w = T.matmul(T.transpose(a), T.square(feats))       # (C, d)
    var_w = T.div(1.0, T.add(T.pow_const(weight_scale, -2.0), data_w))
    data_b = T.tsum(a, axis=0)                               # (C,)
    var_b = T.div(1.0, T.add(T.pow_const(bias_scale, -2.0), data_b))
    return var_w, var_b


@dataclass
class LaplacePosterior:
    weights: T.Tensor    # (C, d) posterior mode for the weight rows
    biases: T.Tensor     # (C,)  posterior mode for the biases
    var_w: T.Tensor      # (C, d) diagonal posterior variances
    var_b: T.Tensor      # (C,)
    centering: T.Tensor  # scalar shift that was added to the raw biases
    estimates: LdaEstimates


def adapt(features, labels, way, prior: GpPrior) -> LaplacePosterior:
    """Fit the full episode posterior from one support set."""
    feats = T.as_tensor(features)
    est = lda_ml_estimates(feats, labels, way)
    var_adj, weights = prior_norm_adjust(est.class_means, prior.weight_scale)
    est.var_adjusted = var_adj
    biases, centering = center_biases(est.class_priors, est.class_means, var_adj)
    var_w, var_b = laplace_variances(feats, weights, biases,
                                     prior.weight_scale, prior.bias_scale)
    return LaplacePosterior(weights, biases, var_w, var_b, centering, est)


@dataclass
class PredictiveDistribution:
    probs: T.Tensor   # (n_q, C) Monte Carlo average of softmax draws
    m_samples: int


def sample_noise(rng, m_samples, way, dim):
    """Standard-normal draws reused across the predictive's MC samples."""
    return rng.normal((m_samples, way, dim)), rng.normal((m_samples, way))


def predictive(posterior: LaplacePosterior, query_features, m_samples,
               rng=None, noise=None) -> PredictiveDistribution:
    """Average softmax probabilities over posterior samples.

    Pass `noise` (from sample_noise) to pin the draws — the gradient
    checks rely on that to keep the loss a fixed smooth function.
    """
    if m_samples < 1:
        raise ContractError("predictive needs at least one Monte Carlo sample")
    q = T.as_tensor(query_features)
    c, d = posterior.weights.data.shape
    if noise is None:
        if rng is None:
            raise ContractError("predictive needs an rng or explicit noise")
        noise = sample_noise(rng, m_samples, c, d)
    eps_w, eps_b = noise
    if eps_w.shape != (m_samples, c, d) or eps_b.shape != (m_samples, c):
        raise ContractError(
            f"noise shapes {eps_w.shape}/{eps_b.shape} do not match "
            f"({m_samples}, {c}, {d}) / ({m_samples}, {c})")
    std_w = T.sqrt(posterior.var_w)
    std_b = T.sqrt(posterior.var_b)
    total = None
    for m in range(m_samples):
        w_m = T.add(posterior.weights, T.mul(std_w, eps_w[m]))
        b_m = T.add(posterior.biases, T.mul(std_b, eps_b[m]))
        p_m = T.softmax_rows(T.linear(q, T.transpose(w_m), b_m))
        total = p_m if total is None else T.add(total, p_m)
    return PredictiveDistribution(T.div(total, float(m_samples)), m_samples)


def log_posterior(features, labels, weights, biases, weight_scale, bias_scale):
    """Unnormalised log posterior of the softmax-linear model (plain numpy).

    Target for the curvature checks and a diagnostic; the training path
    never calls it.  Pass infinite scales to read the data term alone.
    """
    feats = np.asarray(features, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    b = np.asarray(biases, dtype=np.float64)
    labels = np.asarray(labels)
    logits = feats @ w.T + b
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    data = logits[np.arange(labels.size), labels - 1] - lse
    prior = ((w ** 2).sum() / (2.0 * float(weight_scale) ** 2)
             + (b ** 2).sum() / (2.0 * float(bias_scale) ** 2))
    return float(data.sum() - prior)
