"""Test-time metrics: episode accuracy, calibration error, temperature.

Episodes are evaluated against a read-only parameter snapshot, so the
per-episode work can fan out over a thread pool; results are reduced in
episode-index order to keep every report deterministic for a given
seed, whatever the worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backbone
from .data import sample_episode
from .errors import ContractError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _np_softmax(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _mean_ci95(values):
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        # Single-episode convention: report zero width rather than NaN.
        return float(values.mean()), 0.0
    stderr = values.std(ddof=1) / np.sqrt(n)
    return float(values.mean()), float(1.96 * stderr)


def _run_episodes(fn, n_episodes, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(n_episodes)))
    return [fn(i) for i in range(n_episodes)]


def evaluate_accuracy(head, arch, params, prior, split, n_episodes, way, shots,
                      queries, m_samples, rng, workers=1):
    """Mean episode accuracy with a 1.96-stderr 95% interval.

    Episode i is fully determined by `rng.child(i)`, which covers both
    the episode sample and any prediction-time Monte Carlo draws.
    """
    params_t = backbone.wrap_params(params)
    prior_t = backbone.wrap_params(prior)

    def run(i):
        ep_rng = rng.child(i)
        episode = sample_episode(split, way, shots, queries, ep_rng)
        probs, _ = head.predict(arch, params_t, prior_t, episode, m_samples, ep_rng)
        predicted = probs.argmax(axis=1) + 1
        return float(np.mean(predicted == episode.query.labels))

    per_episode = _run_episodes(run, n_episodes, workers)
    accuracy, ci95 = _mean_ci95(per_episode)
    return {"accuracy": accuracy, "ci95": ci95, "per_episode": per_episode}


@dataclass
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    mean_accuracy: float


@dataclass
class CalibrationReport:
    n_bins: int
    bins: list
    ece: float
    temperature: float
    n_samples: int

    def csv_rows(self):
        yield ("bin_lower", "bin_upper", "count", "mean_confidence", "mean_accuracy")
        for b in self.bins:
            yield (f"{b.lower:.6f}", f"{b.upper:.6f}", str(b.count),
                   f"{b.mean_confidence:.6f}", f"{b.mean_accuracy:.6f}")


def compute_ece(confidences, correct, n_bins=20, temperature=1.0):
    """Expected calibration error over equal-width confidence bins."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if confidences.size == 0:
        raise ContractError("ECE needs at least one prediction")
    if confidences.shape != correct.shape:
        raise ContractError("confidences and correctness flags must align")
    if confidences.min() < 0.0 or confidences.max() > 1.0:
        raise ContractError("confidences must lie in [0, 1]")
    if n_bins < 1:
        raise ContractError("need at least one bin")

    idx = np.minimum((confidences * n_bins).astype(np.int64), n_bins - 1)
    total = confidences.size
    ece = 0.0
    bins = []
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count:
            mc = float(confidences[mask].mean())
            ma = float(correct[mask].mean())
            ece += (count / total) * abs(ma - mc)
        else:
            mc = ma = 0.0
        bins.append(CalibrationBin(b / n_bins, (b + 1) / n_bins, count, mc, ma))
    report = CalibrationReport(n_bins, bins, float(ece), float(temperature), total)
    return float(ece), report


def _nll(scores, labels, temperature):
    scaled = scores / temperature
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    picked = log_probs[np.arange(labels.size), labels - 1]
    return float(-picked.mean())


def fit_temperature(scores, labels, log_lo=-4.0, log_hi=4.0, iters=80):
    """Temperature minimising softmax NLL, by golden-section on log T.

    The objective is unimodal in 1/T (the NLL is convex there), so the
    bracketed search converges; the result is clamped to never do worse
    than the unscaled T=1 scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.size or labels.size == 0:
        raise ContractError("scores must be (n, C) with one label per row")
    if scores.shape[1] < 2 or np.unique(labels).size < 2:
        raise ContractError("temperature fitting needs at least two classes")

    def objective(log_t):
        return _nll(scores, labels, math.exp(log_t))

    a, b = log_lo, log_hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = objective(d)
    log_t = c if fc < fd else d
    best = math.exp(log_t)
    if _nll(scores, labels, best) > _nll(scores, labels, 1.0):
        return 1.0
    return best


def collect_scores(head, arch, params, prior, split, n_episodes, way, shots,
                   queries, m_samples, rng, workers=1):
    """Stack per-query calibration scores and labels over many episodes."""
    params_t = backbone.wrap_params(params)
    prior_t = backbone.wrap_params(prior)

    def run(i):
        ep_rng = rng.child(i)
        episode = sample_episode(split, way, shots, queries, ep_rng)
        _, scores = head.predict(arch, params_t, prior_t, episode, m_samples, ep_rng)
        return scores, episode.query.labels

    results = _run_episodes(run, n_episodes, workers)
    scores = np.concatenate([r[0] for r in results], axis=0)
    labels = np.concatenate([r[1] for r in results])
    return scores, labels


def calibration_report(head, arch, params, prior, split, way, shots, queries,
                       m_samples, fit_episodes, eval_episodes, n_bins, rng,
                       workers=1):
    """Fit T on one episode set, report ECE on a disjoint one.

    Confidence of a prediction is its max class probability after the
    scores are divided by the fitted temperature.
    """
    fit_scores, fit_labels = collect_scores(
        head, arch, params, prior, split, fit_episodes, way, shots, queries,
        m_samples, rng.child("calfit"), workers)
    temperature = fit_temperature(fit_scores, fit_labels)

    eval_scores, eval_labels = collect_scores(
        head, arch, params, prior, split, eval_episodes, way, shots, queries,
        m_samples, rng.child("caleval"), workers)
    probs = _np_softmax(eval_scores / temperature)
    confidences = probs.max(axis=1)
    correct = probs.argmax(axis=1) + 1 == eval_labels
    _, report = compute_ece(confidences, correct, n_bins, temperature)
    return report
