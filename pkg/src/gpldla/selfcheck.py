"""Release-gate invariant suites, runnable from the CLI.

Each suite exercises one mathematical property of the pipeline on
randomized small instances and reports pass/fail with the instance seed
so failures are replayable.  `mutate` deliberately mis-wires a formula
(see head.inject_fault) to prove the suites have teeth.
"""

from dataclasses import dataclass

import numpy as np

from . import backbone, head as gphead, tensor as T, trainer
from .data import Episode, LabeledSet
from .heads import get_head
from .rng import Rng


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def flatten_params(groups):
    """Concatenate a sequence of {name: ndarray} dicts into one vector."""
    chunks = []
    layout = []
    for group in groups:
        for name in sorted(group):
            arr = np.asarray(group[name], dtype=np.float64)
            layout.append((name, arr.shape, arr.size))
            chunks.append(arr.ravel())
    vec = np.concatenate(chunks) if chunks else np.zeros(0)
    return vec, layout


def unflatten_params(vec, layout, group_sizes):
    """Rebuild the dicts that flatten_params consumed."""
    groups = []
    offset = 0
    idx = 0
    for size in group_sizes:
        group = {}
        for _ in range(size):
            name, shape, count = layout[idx]
            group[name] = vec[offset:offset + count].reshape(shape)
            offset += count
            idx += 1
        groups.append(group)
    return groups


def _tiny_episode(rng, way=4, shots=2, queries=3, dim=6):
    feats = rng.normal((way * (shots + queries), dim))
    labels = np.repeat(np.arange(1, way + 1), shots + queries)
    sup_idx, qry_idx = [], []
    for c in range(way):
        base = c * (shots + queries)
        sup_idx.extend(range(base, base + shots))
        qry_idx.extend(range(base + shots, base + shots + queries))
    return Episode(LabeledSet(feats[sup_idx], labels[sup_idx]),
                   LabeledSet(feats[qry_idx], labels[qry_idx]),
                   way, shots, queries)


def check_op_gradients(seed, instances=8, tol=1e-6):
    """Tape gradients of a smooth op composition vs central differences."""
    worst = 0.0
    for i in range(instances):
        rng = Rng(seed).child("check", 0, i)
        x0 = rng.normal((5, 4))
        w0 = rng.normal((4, 3))

        def loss_of(flat):
            x = T.parameter(flat[:20].reshape(5, 4))
            w = T.parameter(flat[20:].reshape(4, 3))
            h = T.tanh(T.matmul(x, w))
            z = T.normalize_rows(h)
            logits = T.softmax_rows(z)
            return T.tsum(T.mul(T.log(T.add(logits, 0.5)), 1.7)), (x, w)

        flat0 = np.concatenate([x0.ravel(), w0.ravel()])
        loss, (x, w) = loss_of(flat0)
        T.backward(loss)
        tape = np.concatenate([x.grad.ravel(), w.grad.ravel()])
        fd = T.finite_diff_grad(lambda v: loss_of(v)[0].data, flat0)
        rel = np.linalg.norm(tape - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
        if rel > tol:
            return CheckResult("op-gradients", False,
                               f"instance seed ({seed},{i}): rel err {rel:.3e} > {tol}")
    return CheckResult("op-gradients", True,
                       f"max rel err {worst:.3e} over {instances} instances")


def check_episode_gradient(seed, instances=3, tol=1e-4):
    """Full episode-loss gradient (backbone + prior scales) vs finite diff."""
    head = get_head("gpldla")
    arch = backbone.ArchSpec(kind="mlp", in_dim=6, out_dim=5, hidden=8,
                             activation="tanh", normalize=True)
    worst = 0.0
    for i in range(instances):
        rng = Rng(seed).child("check", 1, i)
        episode = _tiny_episode(rng)
        params = backbone.init_params(arch, rng)
        prior = head.init_prior()
        noise = gphead.sample_noise(rng, 5, episode.way, arch.out_dim)

        flat0, layout = flatten_params((params, prior))
        sizes = (len(params), len(prior))

        def loss_at(flat):
            p, r = unflatten_params(flat, layout, sizes)
            loss, _, _ = trainer.episode_loss(head, arch, p, r, episode, 5,
                                              None, noise=noise)
            return loss

        loss, params_t, prior_t = trainer.episode_loss(
            head, arch, params, prior, episode, 5, None, noise=noise)
        T.backward(loss)
        tape, _ = flatten_params((
            {k: T.grad_or_zeros(v) for k, v in params_t.items()},
            {k: T.grad_or_zeros(v) for k, v in prior_t.items()}))
        fd = T.finite_diff_grad(lambda v: loss_at(v).data, flat0)
        rel = np.linalg.norm(tape - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
        if rel > tol:
            return CheckResult("episode-gradient", False,
                               f"instance seed ({seed},{i}): rel err {rel:.3e} > {tol}")
    return CheckResult("episode-gradient", True,
                       f"max rel err {worst:.3e} over {instances} instances")


def _posterior_instance(rng, way=3, dim=4, n=9):
    feats = rng.normal((n, dim))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = 1 + rng.integers(0, way, (n,))
    labels[:way] = np.arange(1, way + 1)   # every class inhabited
    prior = gphead.GpPrior(T.as_tensor(np.log(1.3)), T.as_tensor(np.log(0.8)))
    post = gphead.adapt(feats, labels, way, prior)
    return feats, labels, post, 1.3, 0.8


def check_hessian_curvature(seed, instances=20, tol=1e-4):
    """Posterior precision minus prior precision vs FD Hessian diagonal.

    The data-term curvature implied by the stored variances must match a
    five-point finite-difference Hessian diagonal of the log-posterior's
    data term at the plugin mode.
    """
    for i in range(instances):
        rng = Rng(seed).child("check", 2, i)
        feats, labels, post, beta, beta_b = _posterior_instance(rng)
        way, dim = post.weights.data.shape
        impl_w = 1.0 / post.var_w.data - 1.0 / beta ** 2
        impl_b = 1.0 / post.var_b.data - 1.0 / beta_b ** 2
        impl = np.concatenate([impl_w.ravel(), impl_b])

        w0 = post.weights.data
        b0 = post.biases.data
        x0 = np.concatenate([w0.ravel(), b0])

        def data_term(flat):
            w = flat[:way * dim].reshape(way, dim)
            b = flat[way * dim:]
            return gphead.log_posterior(feats, labels, w, b, np.inf, np.inf)

        fd = T.finite_diff_hessian_diag(data_term, x0)
        oracle = -fd   # log-posterior data term is concave
        err = np.abs(impl - oracle) / np.maximum(1.0, np.abs(oracle))
        if err.max() > tol:
            return CheckResult("hessian-curvature", False,
                               f"instance seed ({seed},{i}): rel err {err.max():.3e} > {tol}")
    return CheckResult("hessian-curvature", True,
                       f"{instances} instances within {tol}")


def check_norm_identity(seed, instances=200, tol=1e-10):
    """Mean squared weight-row norm must equal scale^2 * d exactly."""
    worst = 0.0
    for i in range(instances):
        rng = Rng(seed).child("check", 3, i)
        way = int(rng.integers(2, 7))
        dim = int(rng.integers(2, 12))
        means = rng.normal((way, dim)) * float(rng.uniform(0.1, 3.0))
        beta = float(rng.uniform(0.2, 4.0))
        _, weights = gphead.prior_norm_adjust(means, T.as_tensor(beta))
        got = float((weights.data ** 2).sum()) / way
        want = beta ** 2 * dim
        rel = abs(got - want) / want
        worst = max(worst, rel)
        if rel > tol:
            return CheckResult("prior-norm-identity", False,
                               f"instance seed ({seed},{i}): rel err {rel:.3e} > {tol}")
    return CheckResult("prior-norm-identity", True,
                       f"max rel err {worst:.3e} over {instances} instances")


def check_bias_centering(seed, instances=200, tol=1e-10):
    """Centred biases sum to zero (absolute tolerance)."""
    worst = 0.0
    for i in range(instances):
        rng = Rng(seed).child("check", 4, i)
        way = int(rng.integers(2, 7))
        dim = int(rng.integers(2, 12))
        means = rng.normal((way, dim))
        counts = 1 + rng.integers(0, 5, (way,))
        priors = counts / counts.sum()
        var_adj, _ = gphead.prior_norm_adjust(means, T.as_tensor(1.0))
        biases, _ = gphead.center_biases(priors, T.as_tensor(means), var_adj)
        off = abs(float(biases.data.sum()))
        worst = max(worst, off)
        if off > tol:
            return CheckResult("bias-centering", False,
                               f"instance seed ({seed},{i}): |sum| {off:.3e} > {tol}")
    return CheckResult("bias-centering", True,
                       f"max |sum| {worst:.3e} over {instances} instances")


def check_variance_bounds(seed, instances=50):
    """Posterior variances must sit in (0, prior variance]."""
    for i in range(instances):
        rng = Rng(seed).child("check", 5, i)
        _, _, post, beta, beta_b = _posterior_instance(rng)
        vw, vb = post.var_w.data, post.var_b.data
        ok = (vw > 0).all() and (vb > 0).all() \
            and (vw <= beta ** 2 + 1e-15).all() and (vb <= beta_b ** 2 + 1e-15).all()
        if not ok:
            return CheckResult("variance-bounds", False,
                               f"instance seed ({seed},{i}): variance outside (0, prior]")
    return CheckResult("variance-bounds", True, f"{instances} instances in range")


def check_mc_convergence(seed, reseeds=100, m_small=10, m_large=250):
    """Predictive MC noise shrinks like 1/sqrt(M)."""
    rng = Rng(seed).child("check", 6)
    _, _, post, _, _ = _posterior_instance(rng)
    query = rng.normal((1, post.weights.data.shape[1]))
    query /= np.linalg.norm(query)

    def spread(m, tag):
        vals = []
        for r in range(reseeds):
            pred = gphead.predictive(post, query, m, rng=rng.child(tag, r))
            vals.append(pred.probs.data[0, 0])
        return np.std(vals)

    expected = np.sqrt(m_large / m_small)
    ratio = spread(m_small, 7) / max(spread(m_large, 8), 1e-300)
    lo, hi = expected / 2.0, expected * 2.0
    ok = lo <= ratio <= hi
    return CheckResult("mc-convergence", ok,
                       f"std ratio {ratio:.2f} (want within [{lo:.1f}, {hi:.1f}])")


def check_rng_reproducibility(seed):
    """Same seed/key gives identical draws; sibling keys differ."""
    a = Rng(seed).child("train", 3).normal((4, 4))
    b = Rng(seed).child("train", 3).normal((4, 4))
    c = Rng(seed).child("train", 4).normal((4, 4))
    ok = np.array_equal(a, b) and not np.array_equal(a, c)
    return CheckResult("rng-reproducibility", ok,
                       "identical streams replay, siblings diverge" if ok
                       else f"seed {seed}: stream replay mismatch")


def run_selfcheck(seed=0, mutate=None):
    """Run every suite; returns (results, all_passed)."""
    suites = (
        check_op_gradients,
        check_episode_gradient,
        check_hessian_curvature,
        check_norm_identity,
        check_bias_centering,
        check_variance_bounds,
        check_mc_convergence,
        check_rng_reproducibility,
    )
    results = []
    with gphead.inject_fault(mutate):
        for suite in suites:
            results.append(suite(seed))
    return results, all(r.passed for r in results)


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  status  detail",
             f"{'-' * width}  ------  {'-' * 30}"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name.ljust(width)}  {status:6}  {r.detail}")
    return "\n".join(lines)
