"""Weight banks and task-specific networks built from them.

A base architecture is duplicated once per task. Every shareable unit (one
parametric layer, or several layers tied together through ``group``) owns a
bank of ``K`` candidate weights; an assignment picks one candidate per
(task, unit) slot. Task heads are always private, and parametric layers
marked ``shareable=False`` hold a single weight used by every task.

Slots are ordered task-major: slot ``task * n_units + unit``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ConfigError, DimensionError, SpecError
from .tensor import Parameter, Tensor, add, conv2d, flatten, he_uniform_init, matmul, maxpool2, relu


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    shareable: bool = True
    group: str | None = None


@dataclass(frozen=True)
class Conv:
    """3x3 convolution, stride 1, padding 1."""

    in_channels: int
    out_channels: int
    shareable: bool = True
    group: str | None = None


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool2:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Union[Dense, Conv, ReLU, MaxPool2, Flatten]
_LAYER_TYPES = {"dense": Dense, "conv": Conv, "relu": ReLU, "maxpool2": MaxPool2, "flatten": Flatten}
_TYPE_NAMES = {v: k for k, v in _LAYER_TYPES.items()}


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    head_classes: tuple[int, ...]
    units: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    feature_dim: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "head_classes", tuple(int(c) for c in self.head_classes))
        if not self.head_classes or min(self.head_classes) < 1:
            raise SpecError(f"need at least one task with >= 1 class, got {self.head_classes}")
        object.__setattr__(self, "feature_dim", self._check_chain())
        object.__setattr__(self, "units", self._group_units())

    @property
    def n_tasks(self) -> int:
        return len(self.head_classes)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def _check_chain(self) -> int:
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                if shape != (layer.in_features,):
                    raise SpecError(f"layer {i}: dense expects ({layer.in_features},), receives {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv):
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise SpecError(f"layer {i}: conv expects {layer.in_channels} channels, receives {shape}")
                shape = (layer.out_channels, shape[1], shape[2])
            elif isinstance(layer, MaxPool2):
                if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
                    raise SpecError(f"layer {i}: maxpool2 needs even spatial dims, receives {shape}")
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif not isinstance(layer, ReLU):
                raise SpecError(f"layer {i}: unknown layer {layer!r}")
        if len(shape) != 1:
            raise SpecError(f"the head needs a flat feature vector, body ends with shape {shape}")
        return shape[0]

    def _group_units(self) -> tuple[tuple[int, ...], ...]:
        units: list[list[int]] = []
        by_group: dict[str, int] = {}
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, (Dense, Conv)) or not layer.shareable:
                continue
            if layer.group is None:
                units.append([i])
            elif layer.group in by_group:
                units[by_group[layer.group]].append(i)
            else:
                by_group[layer.group] = len(units)
                units.append([i])
        return tuple(tuple(u) for u in units)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": _TYPE_NAMES[type(layer)]}
            d.update(asdict(layer))
            layers.append(d)
        return {"input_shape": list(self.input_shape), "layers": layers, "head_classes": list(self.head_classes)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        layers = []
        for ld in d["layers"]:
            ld = dict(ld)
            kind = ld.pop("type")
            if kind not in _LAYER_TYPES:
                raise SpecError(f"unknown layer type {kind!r}")
            layers.append(_LAYER_TYPES[kind](**ld))
        return cls(tuple(d["input_shape"]), tuple(layers), tuple(d["head_classes"]))


def mlp(input_dim: int, hidden: Sequence[int], head_classes: Sequence[int]) -> ArchitectureSpec:
    """Dense + ReLU stack; every hidden layer is shareable."""
    layers: list[Layer] = []
    width = input_dim
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    return ArchitectureSpec((input_dim,), tuple(layers), tuple(head_classes))


def convnet(
    head_classes: Sequence[int], in_channels: int = 1, size: int = 32, filters: int = 32, dense: int = 128
) -> ArchitectureSpec:
    """Three conv/ReLU/pool stages and one dense layer, all shareable."""
    layers: list[Layer] = []
    c = in_channels
    for _ in range(3):
        layers += [Conv(c, filters), ReLU(), MaxPool2()]
        c = filters
    side = size // 8
    layers += [Flatten(), Dense(filters * side * side, dense), ReLU()]
    return ArchitectureSpec((in_channels, size, size), tuple(layers), tuple(head_classes))


def _layer_shapes(layer) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    if isinstance(layer, Dense):
        return (layer.in_features, layer.out_features), (layer.out_features,), layer.in_features
    return (layer.out_channels, layer.in_channels, 3, 3), (layer.out_channels,), layer.in_channels * 9


class WeightBank:
    """All trainable weights of a multi-task system.

    ``candidates[u][k]`` is the flat parameter list (weight, bias, weight,
    bias, ...) of candidate ``k`` for unit ``u``, in the unit's layer order.
    """

    def __init__(self, arch: ArchitectureSpec, ks: Sequence[int], candidates, fixed, heads):
        self.arch = arch
        self.ks = [int(k) for k in ks]
        self.candidates: list[list[list[Parameter]]] = candidates
        self.fixed: dict[int, list[Parameter]] = fixed
        self.heads: list[list[Parameter]] = heads
        self._unit_of = {li: (u, pos) for u, unit in enumerate(arch.units) for pos, li in enumerate(unit)}

    @property
    def n_tasks(self) -> int:
        return self.arch.n_tasks

    @property
    def n_units(self) -> int:
        return self.arch.n_units

    @property
    def n_slots(self) -> int:
        return self.n_tasks * self.n_units

    def slot(self, task: int, unit: int) -> int:
        return task * self.n_units + unit

    def slot_ks(self) -> list[int]:
        return [self.ks[u] for _ in range(self.n_tasks) for u in range(self.n_units)]

    def parameters(self) -> list[Parameter]:
        out = [p for unit in self.candidates for cand in unit for p in cand]
        out += [p for li in sorted(self.fixed) for p in self.fixed[li]]
        out += [p for head in self.heads for p in head]
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def layer_params(self, layer_index: int, task: int, assignment) -> list[Parameter]:
        if layer_index in self.fixed:
            return self.fixed[layer_index]
        u, pos = self._unit_of[layer_index]
        k = int(assignment[self.slot(task, u)])
        return self.candidates[u][k][2 * pos : 2 * pos + 2]

    def candidate_size(self, unit: int, k: int = 0) -> int:
        return sum(p.size for p in self.candidates[unit][k])

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]


def build_banks(arch: ArchitectureSpec, K, rng: np.random.Generator) -> WeightBank:
    """Create ``K`` independently He-initialised candidates per unit plus heads and fixed layers.

    ``K`` is an int or one count per shareable unit. Biases start at zero.
    """
    ks = [int(K)] * arch.n_units if np.isscalar(K) else [int(k) for k in K]
    if len(ks) != arch.n_units:
        raise ConfigError(f"got {len(ks)} candidate counts for {arch.n_units} shareable units")
    if arch.n_units and min(ks) < 1:
        raise ConfigError(f"candidate counts must be >= 1, got {ks}")
    next_id = 0

    def make(layer) -> list[Parameter]:
        nonlocal next_id
        wshape, bshape, fan_in = _layer_shapes(layer)
        w = Parameter(he_uniform_init(wshape, fan_in, rng).data, next_id)
        b = Parameter(np.zeros(bshape), next_id + 1)
        next_id += 2
        return [w, b]

    candidates = []
    for u, unit in enumerate(arch.units):
        bank_u = []
        for _ in range(ks[u]):
            params: list[Parameter] = []
            for li in unit:
                params += make(arch.layers[li])
            bank_u.append(params)
        candidates.append(bank_u)
    fixed = {
        i: make(layer)
        for i, layer in enumerate(arch.layers)
        if isinstance(layer, (Dense, Conv)) and not layer.shareable
    }
    heads = [make(Dense(arch.feature_dim, c)) for c in arch.head_classes]
    return WeightBank(arch, ks, candidates, fixed, heads)


def task_view(bank: WeightBank, assignment, task: int) -> tuple[int, ...]:
    """The part of an assignment that a task's network depends on."""
    a = np.asarray(assignment)
    start = task * bank.n_units
    return tuple(int(k) for k in a[start : start + bank.n_units])


def forward_task(bank: WeightBank, task: int, assignment, x) -> Tensor:
    """Logits of ``task``'s network under ``assignment`` for the batch ``x``."""
    arch = bank.arch
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != len(arch.input_shape) + 1 or x.shape[1:] != arch.input_shape:
        raise DimensionError(f"task {task}: batch shape {x.shape} does not match input shape {arch.input_shape}")
    a = np.asarray(assignment)
    if a.shape != (bank.n_slots,):
        raise DimensionError(f"assignment has shape {a.shape}, expected ({bank.n_slots},)")
    h = x
    for li, layer in enumerate(arch.layers):
        if isinstance(layer, Dense):
            w, b = bank.layer_params(li, task, a)
            h = add(matmul(h, w), b)
        elif isinstance(layer, Conv):
            w, b = bank.layer_params(li, task, a)
            h = conv2d(h, w, b)
        elif isinstance(layer, ReLU):
            h = relu(h)
        elif isinstance(layer, MaxPool2):
            h = maxpool2(h)
        else:
            h = flatten(h)
    w, b = bank.heads[task]
    return add(matmul(h, w), b)


def fixed_assignment(mode: str, n_tasks: int, n_units: int, K=None) -> np.ndarray:
    """Baseline assignments: ``full_sharing`` picks candidate 0 everywhere, ``no_sharing`` gives task t candidate t."""
    if mode in ("full_sharing", "full"):
        return np.zeros(n_tasks * n_units, dtype=np.int64)
    if mode in ("no_sharing", "none"):
        if K is not None and n_units:
            k_min = int(K) if np.isscalar(K) else min(int(k) for k in K)
            if k_min < n_tasks:
                raise ConfigError(f"no_sharing needs K >= number of tasks ({n_tasks}), got K={k_min}")
        return np.repeat(np.arange(n_tasks, dtype=np.int64), n_units)
    raise ConfigError(f"unknown fixed assignment mode {mode!r}")


def count_effective_parameters(bank: WeightBank, assignment) -> int:
    """Size of every candidate some task uses, plus fixed layers and heads."""
    a = np.asarray(assignment).reshape(bank.n_tasks, bank.n_units)
    n = 0
    for u in range(bank.n_units):
        for k in np.unique(a[:, u]):
            n += bank.candidate_size(u, int(k))
    n += sum(p.size for ps in bank.fixed.values() for p in ps)
    n += sum(p.size for head in bank.heads for p in head)
    return int(n)


def sharing_summary(assignment, n_tasks: int, n_units: int) -> list[dict[int, int]]:
    """Per unit, how many groups of each size the tasks fall into.

    >>> sharing_summary([0, 0, 1], 3, 1)
    [{2: 1, 1: 1}]
    """
    a = np.asarray(assignment).reshape(n_tasks, n_units)
    return [dict(Counter(Counter(a[:, u].tolist()).values())) for u in range(n_units)]
