"""Command-line entry points: train / eval / selfcheck / compare.

Exit codes: 0 success, 1 selfcheck failure, 2 usage or config problem,
3 numerical abort.  `GPLDLA_LOG={error|info|debug}` sets verbosity; all
diagnostics go to stderr so redirected stdout stays clean.
"""

import argparse
import csv
import json
import logging
import os
import sys

from . import checkpoint as ckpt, evaluation, selfcheck, trainer
from .backbone import init_params
from .config import echo_toml, load_config
from .errors import (ConfigError, ContractError, NumericsError, ParseError,
                     ValidationError)
from .head import FAULT_MODES
from .heads import get_head
from .rng import Rng

EXIT_OK = 0
EXIT_SELFCHECK = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

log = logging.getLogger("gpldla")


def _setup_logging():
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("GPLDLA_LOG", "info").strip().lower()
    logging.basicConfig(level=levels.get(name, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gpldla",
        description="Few-shot classification with a discriminant-plugin "
                    "Laplace head, plus baselines and self-checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory "
                       "(overrides the config's out_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="evaluation worker threads")

    p_train = sub.add_parser("train", help="meta-train a head and save checkpoints")
    common(p_train)
    p_train.add_argument("--head", default=None, help="override the config head")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on test episodes")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint to load")
    p_eval.add_argument("--head", default=None, help="override the config head")

    p_check = sub.add_parser("selfcheck", help="run the invariant suites")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--mutate", default=None, choices=FAULT_MODES,
                         help="deliberately mis-wire one formula (the suites "
                              "must then fail; used to test the tests)")

    p_cmp = sub.add_parser("compare", help="train and evaluate several heads "
                                           "on identical episode seeds")
    common(p_cmp)
    return parser


def _load_run_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.resolved["seed"] = args.seed
    if getattr(args, "head", None):
        cfg.resolved["head"]["name"] = _check_head(args.head)
    if args.out:
        cfg.resolved["out_dir"] = args.out
    return cfg


def _check_head(name):
    get_head(name)  # raises ConfigError on unknown names
    return name


def _prepare(cfg):
    dataset = cfg.load_dataset()
    arch = cfg.arch(dataset.input_dim)
    head = get_head(cfg.head_name)
    return dataset, arch, head


def _ensure_out(cfg):
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w", encoding="utf-8") as fh:
        fh.write(echo_toml(cfg))
    return out_dir


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def cmd_train(args):
    cfg = _load_run_config(args)
    dataset, arch, head = _prepare(cfg)
    out_dir = _ensure_out(cfg)
    tcfg = cfg.train_config()
    log.info("training head=%s for %d episodes (seed %d)",
             head.name, tcfg.episodes, tcfg.seed)
    result = trainer.train(arch, head, dataset, tcfg)
    _write_jsonl(os.path.join(out_dir, "train_log.jsonl"), result.records)
    ckpt.save_checkpoint(os.path.join(out_dir, "checkpoint.bin"),
                         ckpt.pack_run_state(result.params, result.prior))
    ckpt.save_checkpoint(os.path.join(out_dir, "checkpoint_best.bin"),
                         ckpt.pack_run_state(result.best_params, result.best_prior))
    log.info("wrote %s (final) and checkpoint_best.bin (epoch %d, val acc %.4f)",
             os.path.join(out_dir, "checkpoint.bin"),
             result.best_epoch, result.best_val_acc)
    return EXIT_OK


def _check_state_shapes(arch, head, params, prior):
    expected = init_params(arch, Rng(0).child("init"))
    for name, ref in expected.items():
        if name not in params:
            raise ConfigError(f"checkpoint is missing backbone tensor {name!r}")
        if params[name].shape != ref.shape:
            raise ConfigError(
                f"checkpoint tensor {name!r} has shape {params[name].shape}, "
                f"config backbone expects {ref.shape}")
    extra = set(params) - set(expected)
    if extra:
        raise ConfigError(f"checkpoint has unexpected backbone tensors {sorted(extra)}")
    want_prior = set(head.init_prior())
    if set(prior) != want_prior:
        raise ConfigError(
            f"checkpoint prior tensors {sorted(prior)} do not match head "
            f"{head.name!r} (expects {sorted(want_prior)})")


def _metrics(cfg, dataset, arch, head, params, prior, workers):
    ep = cfg.resolved["episode"]
    ev = cfg.resolved["eval"]
    rng = Rng(cfg.seed)
    accuracy = evaluation.evaluate_accuracy(
        head, arch, params, prior, dataset.test, ev["episodes"], ep["way"],
        ep["shots"], ep["queries"], ep["mc_samples"], rng.child("test"), workers)
    report = evaluation.calibration_report(
        head, arch, params, prior, dataset.test, ep["way"], ep["shots"],
        ep["queries"], ep["mc_samples"], ev["calibration_fit_episodes"],
        ev["calibration_eval_episodes"], ev["bins"], rng, workers)
    return accuracy, report


def cmd_eval(args):
    cfg = _load_run_config(args)
    dataset, arch, head = _prepare(cfg)
    params, prior = ckpt.unpack_run_state(ckpt.load_checkpoint(args.checkpoint))
    _check_state_shapes(arch, head, params, prior)
    out_dir = _ensure_out(cfg)
    accuracy, report = _metrics(cfg, dataset, arch, head, params, prior,
                                args.workers)
    metrics = {"accuracy": accuracy["accuracy"], "ci95": accuracy["ci95"],
               "ece": report.ece, "temperature": report.temperature,
               "n_episodes": cfg.resolved["eval"]["episodes"],
               "config": cfg.resolved}
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "calibration_bins.csv"), "w",
              encoding="utf-8", newline="") as fh:
        csv.writer(fh).writerows(report.csv_rows())
    print(json.dumps({k: metrics[k] for k in
                      ("accuracy", "ci95", "ece", "temperature", "n_episodes")},
                     sort_keys=True))
    return EXIT_OK


def cmd_selfcheck(args):
    results, ok = selfcheck.run_selfcheck(args.seed, args.mutate)
    print(selfcheck.format_table(results))
    if args.mutate:
        log.info("fault %r injected: suites %s", args.mutate,
                 "caught it" if not ok else "MISSED it")
    return EXIT_OK if ok else EXIT_SELFCHECK


def cmd_compare(args):
    cfg = _load_run_config(args)
    heads = cfg.compare_heads
    if len(heads) < 2:
        raise ConfigError("compare needs at least two heads in compare.heads")
    for name in heads:
        _check_head(name)
    dataset, arch, _ = _prepare(cfg)
    out_dir = _ensure_out(cfg)
    rows = []
    for name in heads:
        head = get_head(name)
        log.info("compare: training %s", name)
        result = trainer.train(arch, head, dataset, cfg.train_config())
        accuracy, report = _metrics(cfg, dataset, arch, head,
                                    result.best_params, result.best_prior,
                                    args.workers)
        rows.append({"head": name, "accuracy": accuracy["accuracy"],
                     "ci95": accuracy["ci95"], "ece": report.ece,
                     "temperature": report.temperature})
    with open(os.path.join(out_dir, "compare.json"), "w", encoding="utf-8") as fh:
        json.dump({"heads": rows, "config": cfg.resolved}, fh, sort_keys=True,
                  indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "compare.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("head", "accuracy", "ci95", "ece", "temperature"))
        for row in rows:
            writer.writerow((row["head"], f"{row['accuracy']:.6f}",
                             f"{row['ci95']:.6f}", f"{row['ece']:.6f}",
                             f"{row['temperature']:.6f}"))
    for row in rows:
        print(f"{row['head']:>9}: acc {row['accuracy']:.4f} ± {row['ci95']:.4f}"
              f"  ece {row['ece']:.4f}  T {row['temperature']:.3f}")
    return EXIT_OK


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "selfcheck": cmd_selfcheck,
             "compare": cmd_compare}


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ParseError, ValidationError, ContractError) as err:
        log.error("%s", err)
        return EXIT_USAGE
    except NumericsError as err:
        log.error("numerical abort: %s", err)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
