"""Soft-threshold transforms, network passes and the per-sample empirical risk."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GntParams, Network, RepresentationSet
from .errors import ParameterError, TopologyError


@dataclass(frozen=True)
class TransformOutput:
    values: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values)


def soft_threshold(q: np.ndarray, tau) -> np.ndarray:
    """sign(q) * max(|q| - tau, 0), elementwise; tau may broadcast."""
    return np.sign(q) * np.maximum(np.abs(q) - tau, 0.0)


def snt_apply(q, tau: float) -> TransformOutput:
    if tau < 0:
        raise ParameterError(f"threshold must be nonnegative, got {tau}")
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ParameterError("input contains NaN or Inf")
    return TransformOutput(soft_threshold(q, tau))


def gnt_apply(q, params: GntParams) -> TransformOutput:
    n = params.normalizers
    if np.any(n <= 0):
        raise ParameterError("gNT normalizers must be strictly positive")
    b = np.asarray(q, dtype=np.float64) - params.correction
    return TransformOutput(soft_threshold(b, params.total_threshold) / n)


def propagate(weights, thresholds, U: np.ndarray) -> list[np.ndarray]:
    """Chain ``U -> soft(W_i U, t_i)`` through ``weights``; returns every stage."""
    out = [U]
    for W, tau in zip(weights, thresholds):
        if W.shape[1] != out[-1].shape[0]:
            raise TopologyError(f"weight {W.shape} cannot act on {out[-1].shape[0]} rows")
        out.append(soft_threshold(W @ out[-1], tau))
    return out


def forward_pass(net: Network, Y0: RepresentationSet, up_to: int | None = None) -> list[RepresentationSet]:
    """[U_0, ..., U_up_to] with U_0 = Y0 and U_l = snt(A_{l-1} U_{l-1}, tau_l)."""
    up_to = net.depth if up_to is None else up_to
    if not 0 <= up_to <= net.depth:
        raise TopologyError(f"up_to={up_to} outside 0..{net.depth}")
    if Y0.dim != net.dims[0]:
        raise TopologyError(f"input has {Y0.dim} rows, network expects {net.dims[0]}")
    stages = propagate(net.forward[:up_to], net.thresholds[:up_to], Y0.data)
    return [Y0.like(U) for U in stages]


def backward_pass(net: Network, U_top: RepresentationSet, from_level: int,
                  down_to: int = 0) -> list[RepresentationSet]:
    """[U_from, U_{from-1}, ..., U_down_to] through the backward weights.

    Level 0 is the data level and carries no threshold.
    """
    if from_level < down_to:
        raise ParameterError(f"from_level={from_level} below down_to={down_to}")
    if down_to < 0 or from_level > net.depth:
        raise TopologyError("levels outside the network")
    if U_top.dim != net.dims[from_level]:
        raise TopologyError(f"top representation has {U_top.dim} rows, level "
                            f"{from_level} has {net.dims[from_level]}")
    out = [U_top.data]
    for l in range(from_level - 1, down_to - 1, -1):
        tau = net.threshold(l) if l >= 1 else 0.0
        out.append(soft_threshold(net.backward(l) @ out[-1], tau))
    return [U_top.like(U) for U in out]


def empirical_risk(u, params: GntParams):
    """t'|u| + nu'u + n'(u*u), per column when ``u`` is a matrix.

    ``params`` fields may be vectors or per-column matrices. The value is
    signed; nothing is clamped.
    """
    u = np.asarray(u, dtype=np.float64)
    t, nu, n = (_as_columns(x, u) for x in
                (params.thresholds, params.correction, params.normalizers))
    return (t * np.abs(u) + nu * u + n * u * u).sum(axis=0)


def _as_columns(x, u):
    x = np.asarray(x, dtype=np.float64)
    if u.ndim == 2 and x.ndim == 1:
        return x[:, None]
    return x


def dataset_risk(U, params: GntParams) -> tuple[np.ndarray, float]:
    """Per-sample risks of a representation matrix and their mean."""
    xi = empirical_risk(U, params)
    return xi, float(np.mean(xi))
