"""Repeated runs over modes, summary statistics and plot-data reports.

Output layout under ``out_dir``::

    <mode>/seed_<s>/metrics.csv     per-iteration metrics
    <mode>/seed_<s>/final.json      test errors, assignment, sharing, parameter count
    <mode>/seed_<s>/checkpoint.npz
    summary.json
    reports/                        written by emit_reports
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import SyntheticSuiteSpec, Task, load_idx, pad_images, subsample, synthetic_suite
from .errors import ConfigError, DataError, LWSError, ReportError
from .sharing import ArchitectureSpec, convnet, count_effective_parameters, mlp, sharing_summary
from .stats import mann_whitney_u
from .trainer import MODES, TrainConfig, evaluate, normalize_mode, train

logger = logging.getLogger(__name__)

MODE_LABELS = {"full_sharing": "Full sharing", "no_sharing": "No sharing", "lws": "Learned sharing"}


class AllRunsFailed(LWSError, RuntimeError):
    pass


@dataclass
class ExperimentConfig(TrainConfig):
    architecture: dict = field(default_factory=lambda: {"preset": "mlp", "hidden": [32, 32]})
    dataset: dict = field(default_factory=lambda: {"type": "synthetic"})
    repeats: int = 10
    out_dir: str = "runs"
    modes: Sequence[str] = MODES

    def __post_init__(self):
        super().__post_init__()
        self.modes = tuple(normalize_mode(m) for m in self.modes)
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def train_config(self, **overrides) -> TrainConfig:
        base = {f.name: getattr(self, f.name) for f in fields(TrainConfig)}
        base.update(overrides)
        return TrainConfig(**base)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["modes"] = list(self.modes)
        return d


def load_tasks(spec: dict, base_dir=".") -> list[Task]:
    """Materialise the dataset section of a config."""
    spec = dict(spec)
    kind = spec.pop("type", None)
    seed = int(spec.pop("seed", 0))
    if kind == "synthetic":
        try:
            return synthetic_suite(SyntheticSuiteSpec(**spec), seed)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic dataset spec: {exc}") from None
    if kind == "idx":
        rng = np.random.default_rng(seed)
        pad_to = spec.get("pad_to")
        tasks = []
        for entry in spec.get("tasks", []):
            paths = {k: Path(base_dir) / entry[k] for k in ("train_images", "train_labels", "test_images", "test_labels")}
            missing = [str(p) for p in paths.values() if not p.exists()]
            if missing:
                raise DataError(f"missing IDX files: {missing}")
            xtr, ytr = load_idx(paths["train_images"], paths["train_labels"])
            xte, yte = load_idx(paths["test_images"], paths["test_labels"])
            xtr, ytr = subsample(xtr.data, ytr, entry.get("n_train"), rng)
            xte, yte = subsample(xte.data, yte, entry.get("n_test"), rng)
            if pad_to:
                xtr, xte = pad_images(xtr, pad_to), pad_images(xte, pad_to)
            n_classes = int(entry.get("n_classes", max(ytr.max(), yte.max()) + 1))
            tasks.append(Task(entry.get("name", f"task{len(tasks)}"), xtr, ytr, xte, yte, n_classes))
        if not tasks:
            raise ConfigError("idx dataset lists no tasks")
        return tasks
    raise ConfigError(f"unknown dataset type {kind!r}")


def build_architecture(spec: dict, tasks: Sequence[Task]) -> ArchitectureSpec:
    """An explicit layer list, or a preset (``mlp`` / ``convnet``); heads follow the tasks."""
    classes = [t.n_classes for t in tasks]
    spec = dict(spec)
    preset = spec.pop("preset", None)
    sample_shape = tasks[0].x_train.shape[1:]
    if preset == "mlp":
        return mlp(int(np.prod(sample_shape)), spec.get("hidden", [32, 32]), classes)
    if preset == "convnet":
        return convnet(
            classes,
            in_channels=sample_shape[0],
            size=sample_shape[1],
            filters=spec.get("filters", 32),
            dense=spec.get("dense", 128),
        )
    if preset is not None:
        raise ConfigError(f"unknown architecture preset {preset!r}")
    spec.setdefault("head_classes", classes)
    return ArchitectureSpec.from_dict(spec)


def mode_K(mode: str, K: int, n_tasks: int) -> int:
    """Bank size used for each mode: one candidate for full sharing, one per task for no sharing."""
    return {"lws": K, "full_sharing": 1, "no_sharing": n_tasks}[mode]


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def run_experiment(config: ExperimentConfig, base_dir=".") -> dict:
    """Train ``repeats`` seeds per mode and write per-run files and ``summary.json``.

    A failing run is logged and recorded; the rest carry on.
    """
    tasks = load_tasks(config.dataset, base_dir)
    arch = build_architecture(config.architecture, tasks)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T, U = arch.n_tasks, arch.n_units

    per_mode: dict[str, dict] = {}
    for mode in config.modes:
        errors, params, seeds, failures, summaries = [], [], [], [], []
        for r in range(config.repeats):
            seed = config.seed + r
            run_dir = out / mode / f"seed_{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            for stale in ("metrics.csv", "final.json"):
                (run_dir / stale).unlink(missing_ok=True)
            cfg = config.train_config(mode=mode, seed=seed, K=mode_K(mode, config.K, T))
            try:
                state, _ = train(
                    cfg, arch, tasks, metrics_path=run_dir / "metrics.csv", checkpoint_path=run_dir / "checkpoint.npz"
                )
                ev = evaluate(state, tasks)
            except Exception as exc:  # noqa: BLE001 - one bad run must not sink the batch
                logger.exception("run %s seed %d failed", mode, seed)
                failures.append({"seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                continue
            a = state.inference_assignment()
            summary = sharing_summary(a, T, U)
            final = {
                "mode": mode,
                "seed": seed,
                "test_error": ev["mean"],
                "per_task_error": ev["per_task"],
                "assignment": a.tolist(),
                "sharing": [{str(k): v for k, v in sorted(s.items())} for s in summary],
                "effective_params": count_effective_parameters(state.bank, a),
                "pi": [s.full_probs().tolist() for s in state.dist.slots],
            }
            (run_dir / "final.json").write_text(json.dumps(final, indent=2))
            errors.append(ev["mean"])
            params.append(final["effective_params"])
            seeds.append(seed)
            summaries.append(summary)
        per_mode[mode] = {
            "errors": errors,
            "params": params,
            "seeds": seeds,
            "failures": failures,
            "sharing": sharing_percentages(summaries, T, U),
        }

    if not any(m["errors"] for m in per_mode.values()):
        raise AllRunsFailed(f"all runs failed: {[m['failures'] for m in per_mode.values()]}")

    entries = []
    for mode, m in per_mode.items():
        entry = {"mode": mode, "n_runs": len(m["errors"]), "seeds": m["seeds"], "test_errors": m["errors"]}
        if m["errors"]:
            mean, std = _mean_std(m["errors"])
            entry.update(mean_test_error=mean, std_test_error=std, std_degenerate=len(m["errors"]) < 2)
            entry["effective_params"] = float(np.mean(m["params"]))
        else:
            entry.update(mean_test_error=None, std_test_error=None, std_degenerate=True, effective_params=None)
        for ref, key in (("full_sharing", "p_vs_full"), ("no_sharing", "p_vs_none")):
            other = per_mode.get(ref, {}).get("errors")
            entry[key] = mann_whitney_u(m["errors"], other).p if mode != ref and other and m["errors"] else None
        entry["effective_params_per_run"] = m["params"]
        entry["sharing_percentages"] = m["sharing"]
        entry["failures"] = m["failures"]
        entries.append(entry)
    summary = {"config": config.to_dict(), "n_tasks": T, "n_units": U, "modes": entries}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def sharing_percentages(summaries: Sequence[list[dict[int, int]]], n_tasks: int, n_units: int) -> list[dict[str, float]]:
    """Per unit, the percentage of tasks that sit in a sharing group of exactly ``t`` tasks."""
    out = []
    for u in range(n_units):
        tally = {t: 0 for t in range(1, n_tasks + 1)}
        for s in summaries:
            for size, count in s[u].items():
                tally[int(size)] += int(size) * count
        total = n_tasks * len(summaries)
        out.append({str(t): (100.0 * c / total if total else 0.0) for t, c in tally.items()})
    return out


def _read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_reports(run_dir) -> dict[str, Path]:
    """Write test-curve CSVs, a sharing CSV and a text table under ``run_dir/reports``.

    Every input is checked before anything is written.
    """
    run_dir = Path(run_dir)
    runs: dict[str, list[Path]] = {}
    for mode in MODES:
        mdir = run_dir / mode
        if mdir.is_dir():
            seeds = sorted(p for p in mdir.iterdir() if p.is_dir() and p.name.startswith("seed_"))
            if seeds:
                runs[mode] = seeds
    if not runs:
        raise ReportError(f"no runs under {run_dir}: expected <mode>/seed_<n>/metrics.csv and final.json")
    missing = [str(d / f) for seeds in runs.values() for d in seeds for f in ("metrics.csv", "final.json") if not (d / f).exists()]
    if missing:
        raise ReportError(f"missing run files: {missing}")

    curves: dict[str, str] = {}
    sharing_rows = []
    table_rows = []
    n_tasks = None
    for mode, seeds in runs.items():
        finals = [json.loads((d / "final.json").read_text()) for d in seeds]
        by_iter: dict[int, list[float]] = {}
        for d in seeds:
            for row in _read_metrics(d / "metrics.csv"):
                if row["phase"] == "eval":
                    by_iter.setdefault(int(row["iteration"]), []).append(1.0 - float(row["mean_test_error"]))
        lines = ["iteration,mean_test_accuracy,std_test_accuracy,n_runs"]
        for it in sorted(by_iter):
            acc = by_iter[it]
            mean, std = _mean_std(acc)
            lines.append(f"{it},{mean!r},{std!r},{len(acc)}")
        curves[mode] = "\n".join(lines) + "\n"

        n_tasks = len(finals[0]["per_task_error"])
        n_units = len(finals[0]["sharing"])
        summaries = [[{int(k): v for k, v in s.items()} for s in f["sharing"]] for f in finals]
        for u, pct in enumerate(sharing_percentages(summaries, n_tasks, n_units)):
            for t, value in pct.items():
                sharing_rows.append(f"{mode},{u},{t},{value!r}")
        mean, std = _mean_std([100.0 * f["test_error"] for f in finals])
        table_rows.append((MODE_LABELS[mode], mean, std, len(finals)))

    table = ["Method            Test error [%]   runs", "-" * 40]
    table += [f"{label:<17} {mean:6.2f} ± {std:4.2f}   {n:>4}" for label, mean, std, n in table_rows]

    rep = run_dir / "reports"
    rep.mkdir(exist_ok=True)
    written = {}
    for mode, text in curves.items():
        written[f"curve_{mode}"] = rep / f"test_accuracy_{mode}.csv"
        written[f"curve_{mode}"].write_text(text)
    written["sharing"] = rep / "sharing_groups.csv"
    written["sharing"].write_text("mode,layer,group_size,percentage\n" + "\n".join(sharing_rows) + "\n")
    written["table"] = rep / "table.txt"
    written["table"].write_text("\n".join(table) + "\n")
    return written
