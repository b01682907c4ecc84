"""Learned weight sharing for multi-task networks.

Tasks get copies of one base network; each shareable layer slot picks one
of ``K`` candidate weights. A categorical search distribution over these
picks is trained by a natural evolution strategy while the weights
themselves are trained by Adam, alternating one step of each.
"""

from .distribution import JointAssignmentDistribution, SlotDistribution
from .nes import NesConfig, ScoredSample, estimate_search_gradient, nes_step, rank_descending, utilities
from .sharing import (
    ArchitectureSpec,
    Conv,
    Dense,
    Flatten,
    MaxPool2,
    ReLU,
    WeightBank,
    build_banks,
    convnet,
    count_effective_parameters,
    fixed_assignment,
    forward_task,
    mlp,
    sharing_summary,
)
from .stats import mann_whitney_u
from .trainer import TrainConfig, TrainState, evaluate, init_state, make_batch, multi_task_loss, step_nes, step_sgd, train

__version__ = "0.1.0"
