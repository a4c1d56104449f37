"""Desired representations, error vectors and local-propagation quantities.

The cross-class discrimination penalty is taken over unordered pairs of
columns from different classes::

    D(G) = sum_{pairs (i, j), class(i) != class(j)}
               |g_i+ * g_j+|_1 + |g_i- * g_j-|_1 + |g_i * g_j|_2^2

so that, with every other column frozen, the part of ``D`` depending on one
column ``g`` is ``d+ . g+ + d- . g- + n . (g*g)`` with the aggregates below.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import DynamicGoal, RepresentationSet
from .errors import TopologyError
from .transforms import soft_threshold

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorPair:
    goal_error: np.ndarray
    transform_error: np.ndarray


@dataclass(frozen=True)
class DiscriminationAggregates:
    """Other-class sums for every column, stored as ``(M, N)`` matrices."""

    d_plus: np.ndarray
    d_minus: np.ndarray
    n_agg: np.ndarray

    def thresholds(self, w: np.ndarray, weight: float) -> np.ndarray:
        """Sign-selected linear penalty ``weight*(1[w>0] d+ + 1[w<0] d-)``."""
        return weight * ((w > 0) * self.d_plus + (w < 0) * self.d_minus)


def _same_shape(*mats):
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise TopologyError(f"shape mismatch: {sorted(shapes)}")


def compute_errors(U, G, Y, Q) -> ErrorPair:
    """Goal error ``U - G`` and transform error ``Y - Q``."""
    _same_shape(U, G)
    _same_shape(Y, Q)
    return ErrorPair(U - G, Y - Q)


def local_propagation(transform_error, A_prev, goal_error_prev, B_next, goal_error_next,
                      flow_prev: float, flow_next: float) -> tuple[float, float, float]:
    """Return ``(R3, F_b, F_f)``.

    ``F_b = Tr(te' A ge_prev)``, ``F_f = Tr(te' B ge_next)`` and
    ``R3 = flow_next*F_f + flow_prev*F_b``. Pass ``None`` for a missing
    neighbour; its term is zero.
    """
    te = transform_error
    f_b = _trace_inner(te, A_prev, goal_error_prev)
    f_f = _trace_inner(te, B_next, goal_error_next)
    return flow_next * f_f + flow_prev * f_b, f_b, f_f


def _trace_inner(te, W, ge) -> float:
    if W is None or ge is None:
        return 0.0
    if W.shape[1] != ge.shape[0] or W.shape[0] != te.shape[0] or ge.shape[1] != te.shape[1]:
        raise TopologyError(f"cannot form Tr(te' W ge) for {te.shape}, {W.shape}, {ge.shape}")
    # Tr(te' W ge) = sum(te * (W ge)) without the CK x CK product
    return float(np.sum(te * (W @ ge)))


def diffusion_term(A_prev, goal_error_prev, B_next, goal_error_next,
                   flow_prev: float, flow_next: float) -> np.ndarray:
    """``flow_next * B ge_next + flow_prev * A ge_prev``; missing neighbours drop out."""
    out = None
    if A_prev is not None and goal_error_prev is not None:
        out = flow_prev * (A_prev @ goal_error_prev)
    if B_next is not None and goal_error_next is not None:
        term = flow_next * (B_next @ goal_error_next)
        if out is not None and out.shape != term.shape:
            raise TopologyError(f"propagated errors disagree: {out.shape} vs {term.shape}")
        out = term if out is None else out + term
    if out is None:
        raise TopologyError("diffusion term needs at least one neighbour")
    return out


def discrimination_penalty(G: np.ndarray, labels: np.ndarray) -> float:
    """Cross-class penalty ``D`` over unordered different-class column pairs."""
    pos, neg = np.maximum(G, 0), np.maximum(-G, 0)
    sq = G * G
    total = 0.0
    classes = np.unique(labels)
    for c in classes:
        mine = labels == c
        rest = labels > c
        if not rest.any():
            continue
        total += np.sum(pos[:, mine].sum(1) * pos[:, rest].sum(1))
        total += np.sum(neg[:, mine].sum(1) * neg[:, rest].sum(1))
        total += np.sum(sq[:, mine].sum(1) * sq[:, rest].sum(1))
    return float(total)


def discrimination_aggregates(W: np.ndarray, labels: np.ndarray) -> DiscriminationAggregates:
    """For each column, sums of ``w+``, ``w-`` and ``w*w`` over other-class columns."""
    pos, neg, sq = np.maximum(W, 0), np.maximum(-W, 0), W * W
    classes, inverse = np.unique(labels, return_inverse=True)
    onehot = np.zeros((len(classes), W.shape[1]))
    onehot[inverse, np.arange(W.shape[1])] = 1.0

    def other_class(X):
        per_class = X @ onehot.T                      # (M, C)
        # clip cancellation noise; the exact difference is nonnegative
        return np.maximum(X.sum(1, keepdims=True) - per_class[:, inverse], 0.0)

    return DiscriminationAggregates(other_class(pos), other_class(neg), other_class(sq))


def penalized_goal_objective(Q, G, labels, discrimination, sparsity, frozen=None) -> float:
    """``1/2|Q-G|^2 + sparsity*|G|_1 + discrimination*D``.

    With ``frozen`` given, each column's discrimination term is evaluated
    against the other-class columns of ``frozen`` instead of ``G`` itself.
    """
    value = 0.5 * np.sum((Q - G) ** 2) + sparsity * np.sum(np.abs(G))
    if discrimination == 0:
        return float(value)
    if frozen is None:
        return float(value + discrimination * discrimination_penalty(G, labels))
    agg = discrimination_aggregates(frozen, labels)
    pair = (np.maximum(G, 0) * agg.d_plus + np.maximum(-G, 0) * agg.d_minus
            + G * G * agg.n_agg)
    return float(value + discrimination * np.sum(pair))


def solve_goal(Q: RepresentationSet, goal: DynamicGoal) -> RepresentationSet:
    """Desired representation close to ``Q`` that is sparse and class-separated.

    Jacobi sweeps: every column is replaced by the exact minimiser of its own
    penalized objective, with the discrimination aggregates taken from the
    previous sweep.
    """
    labels = Q.labels
    discrimination = goal.discrimination
    if discrimination > 0 and Q.num_classes < 2:
        log.warning("discrimination goal with fewer than two classes; skipping D term")
        discrimination = 0.0
    if discrimination == 0:
        return Q.like(soft_threshold(Q.data, goal.sparsity))

    q = Q.data
    G = soft_threshold(q, goal.sparsity)
    for _ in range(goal.sweeps):
        G = goal_sweep(q, G, labels, discrimination, goal.sparsity)
    return Q.like(G)


def goal_sweep(q, G_prev, labels, discrimination, sparsity) -> np.ndarray:
    agg = discrimination_aggregates(G_prev, labels)
    t = agg.thresholds(q, discrimination)
    return soft_threshold(q, sparsity + t) / (1.0 + 2.0 * discrimination * agg.n_agg)


def entanglement_diagnostics(Q, Y, diffusion, G, U) -> tuple[float, float, float]:
    """(model error, flow-change strength, goal error) at one node."""
    return (
        0.5 * float(np.sum((Q - Y) ** 2)),
        float(np.sum(diffusion ** 2)),
        0.5 * float(np.sum((G - U) ** 2)),
    )
