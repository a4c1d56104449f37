"""Network topology, representation storage and parameter containers.

Conventions used throughout the package:

* node levels run ``0..L``; level 0 holds the data, levels ``1..L`` are
  transform nodes;
* ``forward[l]`` is the weight ``A_l`` of shape ``(M_{l+1}, M_l)`` that maps
  level ``l`` to level ``l+1``;
* ``backward(l)`` is the weight ``B_l`` of shape ``(M_l, M_{l+1})`` that maps
  level ``l+1`` back to level ``l``; with ``tie_backward`` it is always the
  live transpose ``A_l.T`` and never stored;
* representation matrices are ``(M_l, C*K)`` with class-major columns.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import ParameterError, TopologyError

# rng stream keys, combined with the user seed as ``default_rng([seed, key])``
INIT_STREAM = 0
MASK_STREAM = 1
BATCH_STREAM = 2


def column_index(c: int, k: int, num_classes: int, samples_per_class: int) -> int:
    """1-based class ``c`` and sample ``k`` to a 0-based column index."""
    if not 1 <= c <= num_classes:
        raise IndexError(f"class {c} outside 1..{num_classes}")
    if not 1 <= k <= samples_per_class:
        raise IndexError(f"sample {k} outside 1..{samples_per_class}")
    return (c - 1) * samples_per_class + (k - 1)


@dataclass
class RepresentationSet:
    """Per-sample column vectors laid out class by class."""

    data: np.ndarray
    num_classes: int
    samples_per_class: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise TopologyError("representation data must be a matrix")
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise ParameterError("num_classes and samples_per_class must be positive")
        if self.data.shape[1] != self.num_classes * self.samples_per_class:
            raise TopologyError(
                f"{self.data.shape[1]} columns, expected "
                f"{self.num_classes}*{self.samples_per_class}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("representation contains NaN or Inf")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]

    @property
    def labels(self) -> np.ndarray:
        """0-based class label of every column."""
        return np.repeat(np.arange(self.num_classes), self.samples_per_class)

    def column_index(self, c: int, k: int) -> int:
        return column_index(c, k, self.num_classes, self.samples_per_class)

    def class_of(self, j: int) -> int:
        self._check_column(j)
        return j // self.samples_per_class + 1

    def sample_of(self, j: int) -> int:
        self._check_column(j)
        return j % self.samples_per_class + 1

    def column(self, c: int, k: int) -> np.ndarray:
        return self.data[:, self.column_index(c, k)]

    def like(self, data: np.ndarray) -> RepresentationSet:
        """Same class layout, different values (and possibly dimension)."""
        return RepresentationSet(data, self.num_classes, self.samples_per_class)

    def _check_column(self, j: int):
        if not 0 <= j < self.num_samples:
            raise IndexError(f"column {j} outside 0..{self.num_samples - 1}")


@dataclass
class GntParams:
    """Per-sample parameters of the generalized soft-threshold transform."""

    thresholds: np.ndarray
    normalizers: np.ndarray
    correction: np.ndarray
    sparsity: float = 0.0

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.normalizers = np.asarray(self.normalizers, dtype=np.float64)
        self.correction = np.asarray(self.correction, dtype=np.float64)
        if np.any(self.thresholds < 0):
            raise ParameterError("gNT thresholds must be nonnegative")
        if self.sparsity < 0:
            raise ParameterError("sparsity weight must be nonnegative")

    @property
    def total_threshold(self) -> np.ndarray:
        return self.thresholds + self.sparsity

    @classmethod
    def identity(cls, dim: int, sparsity: float) -> GntParams:
        """Parameters under which the gNT coincides with the plain sNT."""
        return cls(np.zeros(dim), np.ones(dim), np.zeros(dim), sparsity)


@dataclass(frozen=True)
class NoGoal:
    """Reads as an all-zero desired representation."""


@dataclass(frozen=True)
class FixedGoal:
    target: RepresentationSet


@dataclass(frozen=True)
class DynamicGoal:
    """Goal recomputed from the node's linear representation every iteration."""

    discrimination: float
    sparsity: float
    sweeps: int = 3

    def __post_init__(self):
        if self.discrimination < 0 or self.sparsity < 0:
            raise ParameterError("goal weights must be nonnegative")
        if self.sweeps < 1:
            raise ParameterError("sweeps must be positive")


GoalSpec = Union[NoGoal, FixedGoal, DynamicGoal]


@dataclass(frozen=True)
class LevelLambdas:
    """Regularization weights of one node level.

    ``discrimination`` and ``sparsity`` weight the cross-class penalty and the
    l1 term on the node's representations; ``ridge``, ``coherence`` and
    ``logdet`` shape the forward weight; ``similarity`` ties the forward weight
    to the transposed backward weight; ``flow_prev`` / ``flow_next`` weight the
    goal errors propagated from levels ``l-1`` / ``l+1``.
    """

    discrimination: float = 0.0
    sparsity: float = 0.0
    ridge: float = 1.0
    coherence: float = 1.0
    logdet: float = 1.0
    similarity: float = 1.0
    flow_prev: float = 1.0
    flow_next: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ParameterError(f"{name} must be nonnegative, got {value}")

    @property
    def pi(self) -> float:
        return self.ridge + self.similarity - self.coherence


MODES = ("synchronous", "asynchronous")


@dataclass
class HyperParams:
    levels: tuple[LevelLambdas, ...]
    step: float = 0.5
    batch_fraction: float = 0.15
    iterations: int = 120
    mode: str = "synchronous"
    bernoulli_p: float = 0.5
    knn_k: int = 3
    seed: int = 0
    tie_backward: bool = True
    goal_stage: int = 1
    cycles: int = 1
    refine_steps: int = 20

    def __post_init__(self):
        self.levels = tuple(self.levels)
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if not 0 <= self.step <= 1:
            raise ParameterError("step must lie in [0, 1]")
        if not 0 < self.batch_fraction <= 1:
            raise ParameterError("batch_fraction must lie in (0, 1]")
        if not 0 < self.bernoulli_p <= 1:
            raise ParameterError("bernoulli_p must lie in (0, 1]")
        if self.iterations < 0 or self.knn_k < 1 or self.cycles < 1 or self.refine_steps < 0:
            raise ParameterError("iterations, knn_k, cycles or refine_steps out of range")
        if self.goal_stage not in (1, 2):
            raise ParameterError("goal_stage must be 1 or 2")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, l: int) -> LevelLambdas:
        if not 1 <= l <= len(self.levels):
            raise IndexError(f"level {l} outside 1..{len(self.levels)}")
        return self.levels[l - 1]

    def with_level(self, l: int, **changes) -> HyperParams:
        levels = list(self.levels)
        levels[l - 1] = replace(levels[l - 1], **changes)
        return replace(self, levels=tuple(levels))

    @classmethod
    def uniform(cls, depth: int, lambdas: LevelLambdas | None = None, **kwargs) -> HyperParams:
        return cls(levels=(lambdas or LevelLambdas(),) * depth, **kwargs)

    @classmethod
    def mnist_defaults(cls, dims, weight: float = 34.0, **kwargs) -> HyperParams:
        """Weights 34 everywhere, threshold M_l / (2 l), unit flow weights."""
        levels = tuple(
            LevelLambdas(
                discrimination=weight,
                sparsity=dims[l] / (2.0 * l),
                ridge=weight,
                coherence=weight,
                logdet=weight,
                similarity=weight,
                flow_prev=1.0,
                flow_next=1.0,
            )
            for l in range(1, len(dims))
        )
        return cls(levels=levels, **kwargs)


@dataclass
class NodeParams:
    """Read-only view of the parameters attached to node level ``l``."""

    level: int
    forward_weight: np.ndarray
    backward_weight: np.ndarray | None
    threshold: float
    goal: GoalSpec
    tied: bool


@dataclass
class Network:
    dims: tuple[int, ...]
    forward: list[np.ndarray]
    thresholds: list[float]
    goals: dict[int, GoalSpec] = field(default_factory=dict)
    tie_backward: bool = True
    _backward: list[np.ndarray | None] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.forward) != self.depth or len(self.thresholds) != self.depth:
            raise TopologyError("need one forward weight and threshold per level")
        for l, A in enumerate(self.forward):
            if A.shape != (self.dims[l + 1], self.dims[l]):
                raise TopologyError(
                    f"A_{l} has shape {A.shape}, expected {(self.dims[l + 1], self.dims[l])}"
                )
        if self.tie_backward:
            self._backward = [None] * self.depth
        elif len(self._backward) != self.depth:
            raise TopologyError("untied network needs one backward weight per level")
        if any(t < 0 for t in self.thresholds):
            raise ParameterError("thresholds must be nonnegative")

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    def backward(self, l: int) -> np.ndarray:
        """B_l, mapping level l+1 to level l."""
        if self.tie_backward:
            return self.forward[l].T
        return self._backward[l]

    def set_backward(self, l: int, B: np.ndarray):
        if self.tie_backward:
            raise TopologyError("tied network has no stored backward weights")
        if B.shape != (self.dims[l], self.dims[l + 1]):
            raise TopologyError(f"B_{l} has shape {B.shape}")
        self._backward[l] = B

    def threshold(self, l: int) -> float:
        return self.thresholds[l - 1]

    def goal(self, l: int) -> GoalSpec:
        return self.goals.get(l, NoGoal())

    def node(self, l: int) -> NodeParams:
        if not 1 <= l <= self.depth:
            raise IndexError(f"level {l} outside 1..{self.depth}")
        B = self.backward(l) if l < self.depth else None
        return NodeParams(l, self.forward[l - 1], B, self.threshold(l), self.goal(l),
                          self.tie_backward)

    def weights(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        """Independent copies of every (A_l, stored B_l) pair."""
        return [(A.copy(), None if B is None else B.copy())
                for A, B in zip(self.forward, self._backward)]

    def load_weights(self, weights):
        for l, (A, B) in enumerate(weights):
            self.forward[l] = A.copy()
            if not self.tie_backward:
                self._backward[l] = B.copy()

    def copy(self) -> Network:
        return copy.deepcopy(self)


def build_network(dims, hyper: HyperParams, goal_levels: dict[int, GoalSpec] | None = None) -> Network:
    """Gaussian-initialised chain network ``dims[0] -> ... -> dims[L]``."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise TopologyError("a network needs at least an input and one node level")
    if any(d < 1 for d in dims):
        raise TopologyError("all dimensions must be positive")
    depth = len(dims) - 1
    if hyper.depth != depth:
        raise TopologyError(f"hyperparameters cover {hyper.depth} levels, network has {depth}")
    goal_levels = dict(goal_levels or {})
    for l in goal_levels:
        if not 1 <= l <= depth:
            raise TopologyError(f"goal level {l} outside 1..{depth}")

    rng = np.random.default_rng([hyper.seed, INIT_STREAM])
    forward, backward = [], []
    for l in range(depth):
        forward.append(rng.standard_normal((dims[l + 1], dims[l])))
        if not hyper.tie_backward:
            backward.append(rng.standard_normal((dims[l], dims[l + 1])))
    thresholds = [hyper.level(l).sparsity for l in range(1, depth + 1)]
    return Network(tuple(dims), forward, thresholds, goal_levels, hyper.tie_backward, backward)
