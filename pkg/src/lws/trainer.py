"""Alternating NES / SGD training of weight assignments and weights.

Each iteration runs one NES step on the assignment distribution (weights
frozen) followed by one Adam step on the weights (distribution frozen).
The baselines ``full_sharing`` and ``no_sharing`` skip the NES step and
train under their fixed assignment, represented as a point-mass
distribution so that inference code is shared.

Randomness is split into independent streams so that the two phases never
perturb each other's draws:

* ``init``       weight initialisation
* ``nes``        NES batches and assignment samples
* ``sgd_batch``  SGD batches
* ``sgd_sample`` assignment samples for the SGD gradient
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Task
from .distribution import JointAssignmentDistribution
from .errors import ConfigError, DataError
from .nes import NesConfig, ScoredSample, estimate_search_gradient, nes_step
from .sharing import ArchitectureSpec, WeightBank, build_banks, count_effective_parameters, fixed_assignment, forward_task, task_view
from .tensor import AdamState, Tape, adam_step, add, scale, softmax_cross_entropy_mean

logger = logging.getLogger(__name__)

MODES = ("lws", "full_sharing", "no_sharing")
_MODE_ALIASES = {"full": "full_sharing", "none": "no_sharing"}
RNG_STREAMS = ("init", "nes", "sgd_batch", "sgd_sample")
METRICS_HEADER = ["iteration", "phase", "mean_train_loss", "mean_test_error", "pi_entropy", "effective_params"]


def normalize_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES} or 'full'/'none'")
    return mode


@dataclass
class TrainConfig:
    mode: str = "lws"
    K: int = 3
    lambda_theta: int = 8
    lambda_pi: int = 8
    eta_theta: float = 1e-3
    eta_pi: float = 1e-2
    batch_size: int = 16
    iterations: int = 1000
    seed: int = 0
    floor: float = 1e-3
    eval_interval: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        if self.lambda_theta < 1:
            raise ConfigError(f"lambda_theta must be >= 1, got {self.lambda_theta}")
        if self.mode == "lws" and self.lambda_pi < 2:
            raise ConfigError(f"lambda_pi must be >= 2 in lws mode, got {self.lambda_pi}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.iterations < 0 or self.eval_interval < 1:
            raise ConfigError("iterations must be >= 0 and eval_interval >= 1")
        if self.eta_theta <= 0 or self.eta_pi <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.floor < 1.0:
            raise ConfigError(f"floor must lie in [0, 1), got {self.floor}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainState:
    bank: WeightBank
    dist: JointAssignmentDistribution
    adam: AdamState
    mode: str
    iteration: int = 0
    rngs: dict[str, np.random.Generator] = field(default_factory=dict)

    def inference_assignment(self) -> np.ndarray:
        return self.dist.argmax()


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(RNG_STREAMS, children)}


def init_state(config: TrainConfig, arch: ArchitectureSpec) -> TrainState:
    rngs = make_rngs(config.seed)
    bank = build_banks(arch, config.K, rngs["init"])
    if config.mode == "lws":
        dist = JointAssignmentDistribution.uniform(bank.slot_ks())
    else:
        a = fixed_assignment(config.mode, bank.n_tasks, bank.n_units, bank.ks)
        dist = JointAssignmentDistribution.point_mass(bank.slot_ks(), a)
    adam = AdamState.for_params(
        bank.parameters(), beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps
    )
    return TrainState(bank, dist, adam, config.mode, 0, rngs)


def make_batch(tasks: Sequence[Task], b: int, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """``b`` training examples per task, drawn uniformly with replacement."""
    batch = []
    for task in tasks:
        n = len(task.y_train)
        if n == 0:
            raise DataError(f"task {task.name!r} has no training examples")
        idx = rng.integers(0, n, size=b)
        batch.append((task.x_train[idx], task.y_train[idx]))
    return batch


def multi_task_loss(bank: WeightBank, assignment, batch) -> "Tensor":
    """Mean over tasks of the per-task softmax cross-entropy."""
    total = None
    for t, (x, y) in enumerate(batch):
        loss = softmax_cross_entropy_mean(forward_task(bank, t, assignment, x), y)
        total = loss if total is None else add(total, loss)
    return scale(total, 1.0 / len(batch))


def _loss_values(bank: WeightBank, assignments: np.ndarray, batch) -> np.ndarray:
    # Untaped forward passes; a task's loss depends only on its own slots.
    cache: dict[tuple, float] = {}
    out = np.empty(len(assignments))
    for i, a in enumerate(assignments):
        total = 0.0
        for t, (x, y) in enumerate(batch):
            key = (t, task_view(bank, a, t))
            if key not in cache:
                cache[key] = softmax_cross_entropy_mean(forward_task(bank, t, a, x), y).item()
            total += cache[key]
        out[i] = total / len(batch)
    return out


def step_nes(state: TrainState, config: TrainConfig, tasks: Sequence[Task]) -> float:
    """Update the assignment distribution; weights and Adam state are untouched.

    Returns the mean loss over the sampled population.
    """
    if state.mode != "lws":
        raise ConfigError(f"step_nes is only defined in lws mode, state is in {state.mode!r}")
    rng = state.rngs["nes"]
    batch = make_batch(tasks, config.batch_size, rng)
    A = state.dist.sample_many(rng, config.lambda_pi)
    losses = _loss_values(state.bank, A, batch)
    D = state.dist.natural_log_derivative_many(A)
    samples = [ScoredSample(a, float(l), d) for a, l, d in zip(A, losses, D)]
    grad = estimate_search_gradient(samples, state.dist.param_size)
    nes_step(state.dist, grad, NesConfig(config.lambda_pi, config.eta_pi, config.floor))
    return float(losses.mean())


def _distinct(assignments: np.ndarray) -> list[tuple[np.ndarray, int]]:
    counts: dict[tuple, int] = {}
    first: dict[tuple, np.ndarray] = {}
    for a in assignments:
        key = tuple(a.tolist())
        if key not in counts:
            counts[key] = 0
            first[key] = a
        counts[key] += 1
    return [(first[k], c) for k, c in counts.items()]


def accumulate_gradient(bank: WeightBank, assignments: np.ndarray, batch) -> float:
    """Zero the gradients, then accumulate the mean over ``assignments`` of the weight gradient.

    Identical assignments share one backward pass weighted by their
    multiplicity. Returns the mean loss.
    """
    bank.zero_grad()
    n = len(assignments)
    mean_loss = 0.0
    for a, count in _distinct(assignments):
        with Tape() as tape:
            loss = multi_task_loss(bank, a, batch)
        tape.backward(loss, seed=count / n)
        mean_loss += loss.item() * count / n
    return mean_loss


def step_sgd(state: TrainState, config: TrainConfig, tasks: Sequence[Task]) -> float:
    """One Adam step on the weights with the distribution held fixed. Returns the mean loss."""
    batch = make_batch(tasks, config.batch_size, state.rngs["sgd_batch"])
    if state.mode == "lws":
        A = state.dist.sample_many(state.rngs["sgd_sample"], config.lambda_theta)
    else:
        A = state.dist.argmax()[None, :]
    loss = accumulate_gradient(state.bank, A, batch)
    adam_step(state.bank.parameters(), state.adam, config.eta_theta)
    return loss


def evaluate(state: TrainState, tasks: Sequence[Task], assignment=None, chunk: int = 2048) -> dict:
    """Top-1 test error per task under the most likely assignment (or ``assignment``)."""
    a = state.inference_assignment() if assignment is None else np.asarray(assignment)
    errors = []
    for t, task in enumerate(tasks):
        n = len(task.y_test)
        if n == 0:
            raise DataError(f"task {task.name!r} has no test examples")
        wrong = 0
        for start in range(0, n, chunk):
            logits = forward_task(state.bank, t, a, task.x_test[start : start + chunk]).data
            wrong += int(np.sum(logits.argmax(axis=1) != task.y_test[start : start + chunk]))
        errors.append(wrong / n)
    return {"per_task": errors, "mean": float(np.mean(errors))}


class MetricsWriter:
    """Append-only CSV sink for metric rows; also keeps them in memory."""

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None and (not self.path.exists() or self.path.stat().st_size == 0):
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def emit(self, **row) -> None:
        row = {k: row.get(k, "") for k in METRICS_HEADER}
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([_fmt(row[k]) for k in METRICS_HEADER])


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def train(
    config: TrainConfig,
    arch: ArchitectureSpec,
    tasks: Sequence[Task],
    state: TrainState | None = None,
    metrics_path=None,
    checkpoint_path=None,
    checkpoint_every: int | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run (or resume) training up to ``config.iterations``.

    Returns the final state and the metric rows emitted by this call.
    """
    from .checkpoint import save_checkpoint

    if len(tasks) != arch.n_tasks:
        raise ConfigError(f"architecture has {arch.n_tasks} heads but {len(tasks)} tasks were given")
    if state is None:
        state = init_state(config, arch)
    sink = MetricsWriter(metrics_path)

    def common():
        a = state.inference_assignment()
        return {"pi_entropy": state.dist.entropy(), "effective_params": count_effective_parameters(state.bank, a)}

    def log_eval():
        err = evaluate(state, tasks)["mean"]
        sink.emit(iteration=state.iteration, phase="eval", mean_test_error=err, **common())
        logger.info("iteration %d: mean test error %.4f", state.iteration, err)

    in_step = False
    try:
        if state.iteration == 0:
            log_eval()
        while state.iteration < config.iterations:
            it = state.iteration + 1
            in_step = True
            if state.mode == "lws":
                loss = step_nes(state, config, tasks)
                sink.emit(iteration=it, phase="nes", mean_train_loss=loss, **common())
            loss = step_sgd(state, config, tasks)
            state.iteration = it
            in_step = False
            sink.emit(iteration=it, phase="sgd", mean_train_loss=loss, **common())
            if it % config.eval_interval == 0 or it == config.iterations:
                log_eval()
            if checkpoint_path is not None and checkpoint_every and it % checkpoint_every == 0:
                save_checkpoint(state, config, checkpoint_path)
    except KeyboardInterrupt:
        # a half-finished iteration is not resumable; keep the last good checkpoint then
        if checkpoint_path is not None and not in_step:
            save_checkpoint(state, config, checkpoint_path)
        raise
    if checkpoint_path is not None:
        save_checkpoint(state, config, checkpoint_path)
    return state, sink.rows
