"""Compare the compiled kernel core against the pure-numpy fallback.

Two views:

* micro — individual kernels on episode-shaped matrices, both backends
  imported side by side in this process;
* episode — full episode loss + gradient timing, run in subprocesses so
  each backend is the one selected at import (GPLDLA_PURE_PYTHON=1
  forces the fallback).

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--episodes N]
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np


def _load_backends():
    from gpldla import _kernels_py
    backends = [("python", _kernels_py)]
    try:
        from gpldla import _ckernels
        backends.insert(0, ("compiled", _ckernels))
    except ImportError:
        pass
    return backends


def _time(fn, repeats):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best.append(time.perf_counter() - t0)
    return statistics.median(best)


def micro_cases(rng):
    """Episode-shaped inputs: 75 queries, 32-dim embeddings, 5 classes."""
    q = rng.standard_normal((75, 32))
    w_hidden = rng.standard_normal((32, 64))
    w_out = rng.standard_normal((5, 32))
    logits = rng.standard_normal((75, 5))
    grad = rng.standard_normal((75, 5))
    probs = None  # filled per backend
    acts = rng.standard_normal((75, 64))
    bias = rng.standard_normal(64)
    return [
        ("matmul 75x32 @ 32x64", lambda k: k.matmul(q, w_hidden)),
        ("matmul_nt 75x32 @ (5x32)'", lambda k: k.matmul_nt(q, w_out)),
        ("matmul_tn (75x32)' @ 75x5", lambda k: k.matmul_tn(q, logits)),
        ("matmul_bias", lambda k: k.matmul_bias(q, w_hidden, bias)),
        ("softmax_rows 75x5", lambda k: k.softmax_rows(logits)),
        ("softmax_rows_backward", lambda k: k.softmax_rows_backward(
            k.softmax_rows(logits), grad)),
        ("logsumexp_rows 75x5", lambda k: k.logsumexp_rows(logits)),
        ("normalize_rows 75x32", lambda k: k.normalize_rows(q, 1e-12)),
        ("relu 75x64", lambda k: k.relu(acts)),
    ]


def run_micro(repeats):
    backends = _load_backends()
    rng = np.random.default_rng(0)
    cases = micro_cases(rng)
    print(f"micro kernels (median of {repeats} runs, microseconds)")
    header = f"{'kernel':30}" + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, call in cases:
        times = []
        for _, mod in backends:
            call(mod)  # warm up
            times.append(_time(lambda: call(mod), repeats))
        row = f"{label:30}" + "".join(f"{t * 1e6:12.1f}" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:9.2f}x"
        print(row)
    print()


EPISODE_PROBE = r"""
import json, time
import numpy as np
from gpldla import backbone, kernels, tensor as T, trainer
from gpldla.data import SyntheticTaskConfig, generate_synthetic_pool, sample_episode
from gpldla.heads import get_head
from gpldla.rng import Rng

episodes = int({episodes})
dataset = generate_synthetic_pool(SyntheticTaskConfig())
arch = backbone.ArchSpec(kind="mlp", in_dim=16, out_dim=32, hidden=64)
head = get_head("gpldla")
rng = Rng(0)
params = backbone.init_params(arch, rng.child("init"))
prior = head.init_prior()

# warm up one episode, then time the loss+gradient loop
for t in range(episodes + 1):
    if t == 1:
        t0 = time.perf_counter()
    ep_rng = rng.child("train", t)
    episode = sample_episode(dataset.train, 5, 1, 15, ep_rng)
    loss, params_t, prior_t = trainer.episode_loss(
        head, arch, params, prior, episode, 10, ep_rng)
    T.backward(loss)
elapsed = time.perf_counter() - t0
print(json.dumps({{"backend": kernels.BACKEND,
                   "ms_per_episode": 1e3 * elapsed / episodes}}))
"""


def run_episode_probe(episodes):
    print(f"episode loss + gradient ({episodes} episodes, 5-way 1-shot, "
          f"M=10, mlp 16->64->32)")
    results = {}
    for forced in (None, "1"):
        env = dict(os.environ)
        env.pop("GPLDLA_PURE_PYTHON", None)
        if forced:
            env["GPLDLA_PURE_PYTHON"] = forced
        out = subprocess.run(
            [sys.executable, "-c", EPISODE_PROBE.format(episodes=episodes)],
            capture_output=True, text=True, env=env, check=True)
        record = json.loads(out.stdout.strip().splitlines()[-1])
        results[record["backend"]] = record["ms_per_episode"]
        print(f"  {record['backend']:>9}: {record['ms_per_episode']:8.2f} ms/episode")
    if len(results) == 2 and "compiled" in results:
        print(f"  speedup: {results['python'] / results['compiled']:.2f}x")
    print()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=300,
                        help="micro-benchmark repetitions (median reported)")
    parser.add_argument("--episodes", type=int, default=30,
                        help="episodes per end-to-end probe")
    parser.add_argument("--skip-episode", action="store_true",
                        help="micro benchmarks only")
    args = parser.parse_args(argv)
    run_micro(args.repeats)
    if not args.skip_episode:
        run_episode_probe(args.episodes)
    return 0


if __name__ == "__main__":
    sys.exit(main())
