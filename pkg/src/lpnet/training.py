"""Two-stage training: forward propagation, then parallel local solves.

One outer iteration is

1. stage one: propagate the data through the soft-threshold transforms
   (in asynchronous mode each level uses its current or previous weight
   according to a Bernoulli mask) and refresh the goals;
2. stage two: every active level solves its own subproblem, reading only the
   frozen stage-one representations, so levels run concurrently;
3. batch smoothing ``W <- W_new - step * (W_new - W_old)``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (BATCH_STREAM, MASK_STREAM, DynamicGoal, FixedGoal, HyperParams, Network,
                   RepresentationSet)
from .errors import (DescentError, DivergenceError, LevelError, LPNetError, ParameterError,
                     SingularityError)
from .goals import solve_goal
from .solvers import (LocalProblem, ObjectiveBreakdown, estimate_backward_weight,
                      estimate_forward_weight, eval_objective_local, representation_gnt_params,
                      update_representation)
from .transforms import dataset_risk, propagate, soft_threshold

log = logging.getLogger(__name__)

DESCENT_RTOL = 1e-6


@dataclass
class TrainState:
    network: Network
    data: RepresentationSet
    hyper: HyperParams
    weights_t_minus_1: list
    U: list = field(default_factory=list)
    Y: dict = field(default_factory=dict)
    G: dict = field(default_factory=dict)
    iteration: int = 0
    mask_rng: np.random.Generator | None = None
    batch_rng: np.random.Generator | None = None
    metrics: list = field(default_factory=list)
    check_descent: bool = False

    @property
    def weights_t(self) -> list:
        return self.network.weights()

    @property
    def labels(self) -> np.ndarray:
        return self.data.labels

    def goal_error(self, l: int) -> np.ndarray:
        """``U_l - G_l``; levels without a goal read ``G_l = 0``."""
        G = self.G.get(l)
        return self.U[l] if G is None else self.U[l] - G


def init_state(net: Network, data: RepresentationSet, hyper: HyperParams,
               check_descent: bool = False) -> TrainState:
    if data.dim != net.dims[0]:
        raise ParameterError(f"data has {data.dim} rows, network input is {net.dims[0]}")
    return TrainState(
        network=net, data=data, hyper=hyper, weights_t_minus_1=net.weights(),
        mask_rng=np.random.default_rng([hyper.seed, MASK_STREAM]),
        batch_rng=np.random.default_rng([hyper.seed, BATCH_STREAM]),
        check_descent=check_descent,
    )


def draw_mask(rng: np.random.Generator, depth: int, p: float) -> np.ndarray:
    """psi in {-1,+1}^L with P(+1) = p."""
    return np.where(rng.random(depth) < p, 1, -1)


def _goal_for(state: TrainState, l: int, Q: np.ndarray) -> np.ndarray | None:
    goal = state.network.goal(l)
    if isinstance(goal, DynamicGoal):
        return solve_goal(state.data.like(Q), goal).data
    if isinstance(goal, FixedGoal):
        return goal.target.data
    return None


def stage_one(state: TrainState, mask: np.ndarray | None = None) -> TrainState:
    """Forward pass with the available weights; dynamic goals refreshed on the way."""
    net = state.network
    U = [state.data.data]
    for l in range(1, net.depth + 1):
        A = net.forward[l - 1]
        if mask is not None and mask[l - 1] < 0:
            A = state.weights_t_minus_1[l - 1][0]
        Q = A @ U[-1]
        if state.hyper.goal_stage == 1 or l not in state.G:
            state.G[l] = _goal_for(state, l, Q)
        U.append(soft_threshold(Q, net.threshold(l)))
    state.U = U
    for l in range(1, net.depth + 1):
        if l not in state.Y:
            state.Y[l] = U[l].copy()
    return state


def local_problem(state: TrainState, l: int) -> LocalProblem:
    net, hyper = state.network, state.hyper
    lam = hyper.level(l)
    tied = net.tie_backward
    has_next = l < net.depth
    carries_goal = isinstance(net.goal(l), DynamicGoal) and lam.discrimination > 0
    return LocalProblem(
        lambdas=lam,
        U_prev=state.U[l - 1],
        Y=state.Y[l],
        A=net.forward[l - 1],
        ge_prev=state.goal_error(l - 1),
        U_next=state.U[l + 1] if has_next else None,
        B=net.backward(l) if has_next else None,
        ge_next=state.goal_error(l + 1) if has_next else None,
        B_prev=None if tied else net.backward(l - 1),
        A_next=net.forward[l] if has_next else None,
        tied=tied,
        labels=state.labels if carries_goal else None,
    )


@dataclass
class LocalResult:
    Y: np.ndarray
    A: np.ndarray
    B: np.ndarray | None
    trace: list


def solve_local(p: LocalProblem, batch: np.ndarray, cycles: int = 1, refine_steps: int = 20,
                check_descent: bool = False) -> LocalResult:
    """Alternate representation, forward- and backward-weight steps.

    ``trace`` holds ``(step, before, after)`` local objective values; the
    representation step is measured on all columns, the weight steps on the
    batch they were fitted to.
    """
    trace = []
    full = batch.size == p.Y.shape[1]

    def objective(q):
        return eval_objective_local(q).total

    for _ in range(cycles):
        before = objective(p) if check_descent else np.nan
        p = replace(p, Y=update_representation(p))
        trace.append(("representation", before, objective(p) if check_descent else np.nan))

        sub = p if full else p.columns(batch)
        before = objective(sub) if check_descent else np.nan
        A = estimate_forward_weight(sub, current=p.A, refine_steps=refine_steps)
        p = replace(p, A=A)
        sub = p if full else p.columns(batch)
        trace.append(("forward", before, objective(sub) if check_descent else np.nan))

        if not p.tied and p.has_next:
            before = objective(sub) if check_descent else np.nan
            p = replace(p, B=estimate_backward_weight(sub))
            sub = p if full else p.columns(batch)
            trace.append(("backward", before, objective(sub) if check_descent else np.nan))

    if check_descent:
        for step, before, after in trace:
            if after > before + DESCENT_RTOL * max(1.0, abs(before)):
                raise DescentError(f"{step} step raised the local objective "
                                   f"from {before:.12g} to {after:.12g}")
    return LocalResult(p.Y, p.A, p.B if not p.tied else None, trace)


def draw_batch(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    size = max(1, math.ceil(fraction * n))
    if size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def stage_two(state: TrainState, mask: np.ndarray | None = None,
              parallel: bool = True) -> dict[int, LocalResult]:
    """Solve every active level's subproblem against the frozen stage-one state."""
    net, hyper = state.network, state.hyper
    active = [l for l in range(1, net.depth + 1) if mask is None or mask[l - 1] > 0]
    batch = draw_batch(state.batch_rng, state.data.num_samples, hyper.batch_fraction)
    problems = {l: local_problem(state, l) for l in active}

    def run(l):
        try:
            return solve_local(problems[l], batch, hyper.cycles, hyper.refine_steps,
                               state.check_descent)
        except LPNetError as exc:
            raise LevelError(l, exc) from exc

    if parallel and len(active) > 1:
        with ThreadPoolExecutor(max_workers=len(active)) as pool:
            results = dict(zip(active, pool.map(run, active)))
    else:
        results = {l: run(l) for l in active}

    for l, res in results.items():
        net.forward[l - 1] = res.A
        if res.B is not None:
            net.set_backward(l, res.B)
        state.Y[l] = res.Y
    if hyper.goal_stage == 2:
        for l in range(1, net.depth + 1):
            state.G[l] = _goal_for(state, l, net.forward[l - 1] @ state.U[l - 1])
    return results


def batch_smooth(weights_t: list, weights_t_minus_1: list, step: float) -> list:
    """``W_{t+1} = W_t - step * (W_t - W_{t-1})`` for every stored matrix."""
    if not 0 <= step <= 1:
        raise ParameterError("step must lie in [0, 1]")

    def mix(new, old):
        if new is None:
            return None
        if step == 0:
            return new.copy()
        return new - step * (new - old)

    return [(mix(A, A0), mix(B, B0)) for (A, B), (A0, B0) in zip(weights_t, weights_t_minus_1)]


def train_step(state: TrainState, parallel: bool = True) -> dict:
    """One outer iteration; returns its metrics record."""
    hyper, net = state.hyper, state.network
    start = time.perf_counter()
    mask = None
    if hyper.mode == "asynchronous":
        mask = draw_mask(state.mask_rng, net.depth, hyper.bernoulli_p)
    current = net.weights()
    stage_one(state, mask)
    results = stage_two(state, mask, parallel=parallel)
    solved = net.weights()
    net.load_weights(batch_smooth(solved, current, hyper.step))
    state.weights_t_minus_1 = current
    state.iteration += 1
    _check_finite(state)

    record = {
        "iteration": state.iteration,
        "mask": None if mask is None else mask.tolist(),
        "levels": {},
        "goal_errors": {},
        "traces": {l: r.trace for l, r in results.items()},
        "risk": {},
    }
    for l in range(1, net.depth + 1):
        p = local_problem(state, l)
        record["levels"][l] = _breakdown(p)
        record["risk"][l] = risk_diagnostic(p, record["levels"][l])
        if state.G.get(l) is not None:
            record["goal_errors"][l] = 0.5 * float(np.sum((state.G[l] - state.U[l]) ** 2))
    record["elapsed_ms"] = 1000.0 * (time.perf_counter() - start)
    state.metrics.append(record)
    return record


def risk_diagnostic(p: LocalProblem, breakdown: ObjectiveBreakdown) -> dict:
    """Mean per-sample gNT risk of ``Y`` next to the per-sample ``u_term + r3``.

    Both sides are reported for inspection; no relation between them is enforced.
    """
    _, mean_xi = dataset_risk(p.Y, representation_gnt_params(p))
    return {"mean_xi": mean_xi, "constraint": (breakdown.u_term + breakdown.r3) / p.Y.shape[1]}


def _breakdown(p: LocalProblem) -> ObjectiveBreakdown:
    """Local objective for logging; a singular smoothed weight logs ``r2 = inf``."""
    try:
        return eval_objective_local(p)
    except SingularityError:
        return replace(eval_objective_local(replace(p, lambdas=replace(p.lambdas, logdet=0.0))),
                       r2=np.inf)


def _check_finite(state: TrainState):
    for l, (A, B) in enumerate(state.network.weights()):
        if not np.all(np.isfinite(A)) or (B is not None and not np.all(np.isfinite(B))):
            raise DivergenceError(f"non-finite weight at level {l + 1}", state.iteration)
    for l, Y in state.Y.items():
        if not np.all(np.isfinite(Y)):
            raise DivergenceError(f"non-finite representation at level {l}", state.iteration)


def train(net: Network, data: RepresentationSet, hyper: HyperParams, callback=None,
          parallel: bool = True, check_descent: bool = False) -> TrainState:
    """Run ``hyper.iterations`` outer iterations on ``net`` (updated in place)."""
    state = init_state(net, data, hyper, check_descent=check_descent)
    for _ in range(hyper.iterations):
        record = train_step(state, parallel=parallel)
        log.info("iteration %d: %s", state.iteration,
                 {l: round(b.total, 4) for l, b in record["levels"].items()})
        if callback is not None:
            callback(state, record)
    return state


# --- goal propagation experiment -----------------------------------------------

@dataclass
class GoalPropagationReport:
    goal_level: int
    values: list[float]
    epsilon: float | None
    first_below: int | None
    hypothesis_ok: bool
    state: TrainState | None = None

    @property
    def reduction(self) -> float:
        """Final value over the iteration-1 value."""
        if not self.values or self.values[0] == 0:
            return float("nan")
        return self.values[-1] / self.values[0]


def propagated_goal_error(net: Network, data: RepresentationSet, goal_level: int,
                          goal: DynamicGoal) -> float:
    """``1/2 |D_L - U_L|^2`` with ``D_L`` the goal at ``goal_level`` pushed to level L."""
    U = propagate(net.forward, net.thresholds, data.data)
    Q = net.forward[goal_level - 1] @ U[goal_level - 1]
    G = solve_goal(data.like(Q), goal).data
    D = propagate(net.forward[goal_level:], net.thresholds[goal_level:], G)[-1]
    return 0.5 * float(np.sum((D - U[-1]) ** 2))


def theorem1_experiment(net: Network, data: RepresentationSet, hyper: HyperParams,
                        goal_level: int, epsilon: float | None = None,
                        parallel: bool = True, callback=None) -> GoalPropagationReport:
    """Train with a single dynamic goal and track the propagated goal error.

    ``net`` must carry a :class:`DynamicGoal` at ``goal_level`` only. The
    report records the error after every iteration and the first iteration
    at which it drops below ``epsilon``.
    """
    if not 1 <= goal_level <= net.depth:
        raise ParameterError(f"goal level {goal_level} outside 1..{net.depth}")
    goal = net.goal(goal_level)
    if not isinstance(goal, DynamicGoal):
        raise ParameterError("the goal level must carry a DynamicGoal")
    hypothesis_ok = all(lam.flow_prev > 0 and lam.flow_next > 0 for lam in hyper.levels)
    if not hypothesis_ok:
        log.warning("flow weights must be positive at every level; result is not covered")

    values = []

    def record(state, rec):
        values.append(propagated_goal_error(state.network, data, goal_level, goal))
        if callback is not None:
            callback(state, rec)

    state = train(net, data, hyper, callback=record, parallel=parallel)
    first = None
    if epsilon is not None:
        first = next((i + 1 for i, v in enumerate(values) if v < epsilon), None)
    return GoalPropagationReport(goal_level, values, epsilon, first, hypothesis_ok, state)
