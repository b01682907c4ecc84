"""Command line front end.

    lws train    --config cfg.json [--seed N] [--out DIR] [--mode lws|full|none]
    lws evaluate --config cfg.json --out DIR
    lws compare  --config cfg.json [--seed N] [--out DIR]
    lws report   --out DIR

Exit codes: 0 success, 1 config error, 2 data error, 3 all runs failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .errors import ConfigError, DataError, ReportError
from .experiment import AllRunsFailed, ExperimentConfig, build_architecture, emit_reports, load_tasks, mode_K, run_experiment
from .sharing import count_effective_parameters, sharing_summary
from .trainer import evaluate, normalize_mode, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ALL_FAILED = 0, 1, 2, 3


def _load_config(args) -> tuple[ExperimentConfig, Path]:
    path = Path(args.config)
    config = ExperimentConfig.from_json(path)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = normalize_mode(args.mode)
    if overrides:
        config = ExperimentConfig.from_dict({**config.to_dict(), **overrides})
    return config, path.parent


def cmd_train(args) -> int:
    config, base = _load_config(args)
    tasks = load_tasks(config.dataset, base)
    arch = build_architecture(config.architecture, tasks)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").unlink(missing_ok=True)
    cfg = config.train_config(K=mode_K(config.mode, config.K, arch.n_tasks))
    state, _ = train(cfg, arch, tasks, metrics_path=out / "metrics.csv", checkpoint_path=out / "checkpoint.npz")
    ev = evaluate(state, tasks)
    a = state.inference_assignment()
    final = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "test_error": ev["mean"],
        "per_task_error": ev["per_task"],
        "assignment": a.tolist(),
        "sharing": [{str(k): v for k, v in sorted(s.items())} for s in sharing_summary(a, arch.n_tasks, arch.n_units)],
        "effective_params": count_effective_parameters(state.bank, a),
    }
    (out / "final.json").write_text(json.dumps(final, indent=2))
    print(json.dumps(final, indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config, base = _load_config(args)
    ckpt = Path(config.out_dir) / "checkpoint.npz"
    if not ckpt.exists():
        raise DataError(f"no checkpoint at {ckpt}")
    state, _ = load_checkpoint(ckpt)
    tasks = load_tasks(config.dataset, base)
    print(json.dumps(evaluate(state, tasks), indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    config, base = _load_config(args)
    summary = run_experiment(config, base)
    for entry in summary["modes"]:
        if entry["mean_test_error"] is None:
            print(f"{entry['mode']:<13} all runs failed")
            continue
        line = f"{entry['mode']:<13} {100 * entry['mean_test_error']:6.2f} ± {100 * entry['std_test_error']:4.2f} %"
        for key in ("p_vs_full", "p_vs_none"):
            if entry[key] is not None:
                line += f"  {key}={entry[key]:.4g}"
        print(line)
    return EXIT_OK


def cmd_report(args) -> int:
    if args.out is None:
        raise ConfigError("report needs --out")
    for name, path in emit_reports(args.out).items():
        print(f"{name}: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lws", description="Learned weight sharing for multi-task networks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (
        ("train", cmd_train, True),
        ("evaluate", cmd_evaluate, True),
        ("compare", cmd_compare, True),
        ("report", cmd_report, False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--mode", choices=["lws", "full", "none"])
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ReportError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AllRunsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
