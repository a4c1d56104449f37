"""The three alternating steps of one node's decoupled subproblem.

A node level ``l`` owns ``Y_l``, the forward weight ``A = A_{l-1}`` and (for
untied networks, ``l < L``) the backward weight ``B = B_l``. Its local
objective is::

    R1 = 1/2|A U_prev - Y|^2 + 1/2|B U_next - Y|^2
    R2 = V(A) + W(A, B_prev) + W(A_next, B)
    R3 = flow_next Tr(te' B ge_next) - flow_prev Tr(te' A ge_prev),  te = Y - A U_prev
    + sparsity |Y|_1 + discrimination D(Y)

The previous level's goal error enters with a negative weight. This is the
sign under which the representation closed form (correction
``nu = flow_next B ge_next - flow_prev A ge_prev``) and the forward-weight
quadratic are exact minimisers of the same objective; with the opposite
sign the forward step is concave along the data and training diverges.

Terms referring to a missing neighbour (no level ``L+1``) are dropped, and the
``W`` terms vanish when ``B`` is tied to ``A'``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import GntParams, LevelLambdas
from .errors import ConditioningError, ContextError, ParameterError, SingularityError, TopologyError
from .goals import discrimination_aggregates, discrimination_penalty, local_propagation
from .transforms import soft_threshold

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
ROOT_TOL = 1e-10


@dataclass(frozen=True)
class ObjectiveBreakdown:
    r1: float
    r2: float
    r3: float
    a_term: float
    u_term: float

    @property
    def total(self) -> float:
        return self.r1 + self.r2 + self.r3 + self.a_term + self.u_term

    def as_dict(self) -> dict:
        return {"r1": self.r1, "r2": self.r2, "r3": self.r3, "a_term": self.a_term,
                "u_term": self.u_term, "total": self.total}


@dataclass(frozen=True)
class LocalProblem:
    """Frozen inputs and current iterate of one node's subproblem.

    ``ge_prev``/``ge_next`` are the goal errors ``U - G`` of the neighbours.
    ``B_prev`` and ``A_next`` only matter for untied networks, where they
    enter the similarity terms. ``labels`` is set iff the node carries the
    discrimination term.
    """

    lambdas: LevelLambdas
    U_prev: np.ndarray
    Y: np.ndarray
    A: np.ndarray
    ge_prev: np.ndarray
    U_next: np.ndarray | None = None
    B: np.ndarray | None = None
    ge_next: np.ndarray | None = None
    B_prev: np.ndarray | None = None
    A_next: np.ndarray | None = None
    tied: bool = True
    labels: np.ndarray | None = None

    @property
    def has_next(self) -> bool:
        return self.B is not None and self.U_next is not None

    @property
    def backward_flow(self) -> float:
        """Signed weight of the coupling to the previous level's goal error."""
        return -self.lambdas.flow_prev

    @property
    def similarity(self) -> float:
        return 0.0 if self.tied else self.lambdas.similarity

    def columns(self, idx) -> LocalProblem:
        """Restrict every sample-indexed matrix to the columns ``idx``."""
        def sub(X):
            return None if X is None else X[:, idx]
        return replace(
            self, U_prev=self.U_prev[:, idx], Y=self.Y[:, idx], ge_prev=self.ge_prev[:, idx],
            U_next=sub(self.U_next), ge_next=sub(self.ge_next),
            labels=None if self.labels is None else self.labels[idx],
        )


def eval_regularizer_V(A: np.ndarray, ridge: float, coherence: float, logdet: float) -> float:
    """Ridge, orthogonality and log-determinant penalty on a forward weight."""
    value = 0.5 * ridge * np.sum(A * A)
    if coherence:
        value += 0.5 * coherence * np.sum((A @ A.T - np.eye(A.shape[0])) ** 2)
    if logdet:
        value -= logdet * log_gram_det(A)
    return float(value)


def log_gram_det(A: np.ndarray) -> float:
    """log det of the smaller Gram matrix (A'A for tall/square A, AA' otherwise)."""
    if A.shape[0] == A.shape[1]:
        # det(A'A) = det(A)^2, without forming the Gram matrix
        sign, value = np.linalg.slogdet(A)
        sign, value = sign * sign, 2.0 * value
    else:
        gram = A.T @ A if A.shape[0] > A.shape[1] else A @ A.T
        sign, value = np.linalg.slogdet(gram)
    if sign <= 0 or not np.isfinite(value) or value < np.log(1e-12):
        raise SingularityError("Gram matrix of the forward weight is singular")
    return float(value)


def similarity_terms(p: LocalProblem, A=None, B=None) -> float:
    if p.tied:
        return 0.0
    A = p.A if A is None else A
    B = p.B if B is None else B
    value = 0.0
    if p.B_prev is not None:
        value += 0.5 * p.lambdas.similarity * np.sum((A - p.B_prev.T) ** 2)
    if p.A_next is not None and B is not None:
        value += 0.5 * p.lambdas.similarity * np.sum((p.A_next - B.T) ** 2)
    return float(value)


def eval_objective_local(p: LocalProblem) -> ObjectiveBreakdown:
    if p.U_prev is None or p.ge_prev is None or p.Y is None or p.A is None:
        raise ContextError("local objective needs U_prev, ge_prev, Y and A")
    if (p.B is None) != (p.U_next is None) or (p.B is None) != (p.ge_next is None):
        raise ContextError("next-level state must be given all together or not at all")
    lam = p.lambdas
    Q = p.A @ p.U_prev
    te = p.Y - Q
    r1 = 0.5 * np.sum(te ** 2)
    if p.has_next:
        r1 += 0.5 * np.sum((p.B @ p.U_next - p.Y) ** 2)
    r2 = eval_regularizer_V(p.A, lam.ridge, lam.coherence, lam.logdet) + similarity_terms(p)
    r3, _, _ = local_propagation(te, p.A, p.ge_prev, p.B, p.ge_next, p.backward_flow, lam.flow_next)
    a_term = lam.sparsity * np.sum(np.abs(p.Y))
    u_term = 0.0
    if p.labels is not None and lam.discrimination:
        u_term = lam.discrimination * discrimination_penalty(p.Y, p.labels)
    return ObjectiveBreakdown(float(r1), r2, float(r3), float(a_term), float(u_term))


# --- representation step -----------------------------------------------------

def estimate_representation(x, t, nu, n, sparsity: float) -> np.ndarray:
    """Exact minimiser of ``1/2|x-y|^2 + nu'y + (sparsity+t)'|y| + n'(y*y)``.

    ``y = sign(x-nu) * max(|x-nu| - t - sparsity, 0) / (1 + 2n)``.
    Works elementwise, so matrices of stacked columns are accepted.
    """
    t = np.asarray(t, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if np.any(t < 0) or sparsity < 0:
        raise ParameterError("thresholds must be nonnegative")
    divisor = 1.0 + 2.0 * n
    if np.any(divisor <= 0):
        raise ParameterError("1 + 2n must be positive")
    b = np.asarray(x, dtype=np.float64) - nu
    return soft_threshold(b, t + sparsity) / divisor


def representation_objective(y, x, t, nu, n, sparsity: float) -> float:
    """Objective minimised by :func:`estimate_representation` (summed over columns)."""
    return float(np.sum(0.5 * (x - y) ** 2 + nu * y + (sparsity + t) * np.abs(y) + n * y * y))


def _representation_inputs(p: LocalProblem):
    """Data term ``x``, correction ``nu`` and base quadratic weight of the Y-step."""
    lam = p.lambdas
    x = p.A @ p.U_prev
    nu = p.backward_flow * (p.A @ p.ge_prev)
    terms = 1
    if p.has_next:
        x = x + p.B @ p.U_next
        nu = nu + lam.flow_next * (p.B @ p.ge_next)
        terms = 2
    # two data-fit terms contribute |y|^2 instead of 1/2|y|^2
    return x, nu, 0.5 * (terms - 1)


def _discrimination_weights(w, agg, discrimination, cols=slice(None)):
    t = discrimination * ((w > 0) * agg.d_plus[:, cols] + (w < 0) * agg.d_minus[:, cols])
    return t, discrimination * agg.n_agg[:, cols]


def representation_gnt_params(p: LocalProblem) -> GntParams:
    """Per-column gNT parameters of the Y-step at the current iterate.

    Thresholds and quadratic weights come from the discrimination aggregates of
    the current ``Y``; ``nu`` is the goal-error correction.
    """
    lam = p.lambdas
    x, nu, base_n = _representation_inputs(p)
    t, n = np.zeros_like(x), np.full_like(x, base_n)
    if p.labels is not None and lam.discrimination:
        agg = discrimination_aggregates(p.Y, p.labels)
        t, extra = _discrimination_weights(x - nu, agg, lam.discrimination)
        n = n + extra
    return GntParams(thresholds=t, normalizers=n, correction=nu, sparsity=lam.sparsity)


def update_representation(p: LocalProblem) -> np.ndarray:
    """Minimise the local objective over ``Y`` with the weights fixed.

    Without the discrimination term every column is solved independently in
    closed form. With it, columns of one class do not interact, so classes are
    updated one after another (block Gauss-Seidel), each block exactly, which
    keeps the step monotone.
    """
    lam = p.lambdas
    x, nu, base_n = _representation_inputs(p)
    if p.labels is None or lam.discrimination == 0:
        return estimate_representation(x, np.zeros_like(x), nu, np.full_like(x, base_n),
                                       lam.sparsity)

    Y = p.Y.copy()
    w = x - nu
    for c in np.unique(p.labels):
        cols = p.labels == c
        agg = discrimination_aggregates(Y, p.labels)
        t, extra = _discrimination_weights(w[:, cols], agg, lam.discrimination, cols)
        Y[:, cols] = estimate_representation(x[:, cols], t, nu[:, cols], base_n + extra,
                                             lam.sparsity)
    return Y


# --- forward weight ------------------------------------------------------------

@dataclass(frozen=True)
class ForwardForm:
    """``Tr(A R A') - <A, L> + c/2 |AA' - I|^2 - logdet*log det(Gram(A))`` + const."""

    R: np.ndarray
    L: np.ndarray
    coherence: float
    logdet: float


def forward_form(p: LocalProblem) -> ForwardForm:
    lam = p.lambdas
    U, Y = p.U_prev, p.Y
    sim = p.similarity if p.B_prev is not None else 0.0
    cross = p.ge_prev @ U.T
    R = (0.5 * (lam.ridge + sim) * np.eye(U.shape[0]) + 0.5 * (U @ U.T)
         - 0.5 * p.backward_flow * (cross + cross.T))
    L = Y @ U.T - p.backward_flow * (Y @ p.ge_prev.T)
    if sim:
        L = L + sim * p.B_prev.T
    if p.has_next:
        L = L + lam.flow_next * ((p.B @ p.ge_next) @ U.T)
    return ForwardForm(R, L, lam.coherence, lam.logdet)


def forward_objective(A: np.ndarray, p: LocalProblem) -> float:
    """A-dependent part of the local objective.

    Returns ``inf`` outside the log-determinant's domain.
    """
    lam = p.lambdas
    Q = A @ p.U_prev
    value = 0.5 * np.sum((Q - p.Y) ** 2)
    try:
        value += eval_regularizer_V(A, lam.ridge, lam.coherence, lam.logdet)
    except SingularityError:
        return np.inf
    if not p.tied and p.B_prev is not None:
        value += 0.5 * lam.similarity * np.sum((A - p.B_prev.T) ** 2)
    r3, _, _ = local_propagation(p.Y - Q, A, p.ge_prev, p.B, p.ge_next,
                                 p.backward_flow, lam.flow_next)
    return float(value + r3)


def _per_index_sigma(a2, a1, h, coherence, logdet) -> float:
    """Minimise ``a2 s^2 + a1 s + c/2 (h s^2 - 1)^2 - 2 logdet log s`` over s >= 0."""
    c4 = 0.5 * coherence * h * h
    roots = quartic_real_roots(4 * c4, 0.0, 2 * (a2 - coherence * h), a1, -2 * logdet)

    def phi(s):
        value = a2 * s * s + a1 * s + 0.5 * coherence * (h * s * s - 1) ** 2
        return value - 2 * logdet * np.log(s) if logdet else value

    # float64 so that overflow yields inf instead of raising
    candidates = [np.float64(s) for s in roots if (s > 0 if logdet else s >= 0)]
    if not logdet:
        candidates.append(np.float64(0.0))
    if not candidates:
        return SIGMA_FLOOR
    return min(candidates, key=phi)


def _is_bounded(form: ForwardForm, eig_min: float, scale: float) -> bool:
    if form.coherence > 0:
        return True
    return eig_min > 1e-10 * scale


def forward_candidates(form: ForwardForm, shape) -> list[np.ndarray]:
    """Closed-form estimates of the minimiser; more than one when they differ.

    The whitened estimate absorbs ``R`` exactly (needs ``R`` positive
    definite) and treats the orthogonality term per singular value; the
    direct estimate keeps orthogonality and log-determinant exact and
    approximates ``R`` by its diagonal in the singular basis of ``L``.
    """
    m, p = shape
    evals, evecs = np.linalg.eigh(form.R)
    scale = max(1.0, float(np.max(np.abs(evals))))
    if evals[0] < -1e-10 * scale and form.coherence == 0:
        raise ConditioningError("quadratic form has a negative eigenvalue and no quartic term")
    if not _is_bounded(form, evals[0], scale):
        raise ConditioningError("objective is unbounded below (singular quadratic, no quartic term)")

    out = []
    k = min(m, p)
    if evals[0] > 1e-10 * scale:
        inv_sqrt = 1.0 / np.sqrt(evals)
        P, s, Qt = np.linalg.svd((form.L @ evecs) * inv_sqrt, full_matrices=False)
        h = (Qt ** 2) @ (1.0 / evals)
        sig = np.array([_per_index_sigma(1.0, -s[i], h[i], form.coherence, form.logdet)
                        for i in range(k)])
        out.append(((P * sig) @ Qt * inv_sqrt) @ evecs.T)

    P, s, Qt = np.linalg.svd(form.L, full_matrices=False)
    r = np.sum((Qt @ form.R) * Qt, axis=1)
    sig = np.array([_per_index_sigma(r[i], -s[i], 1.0, form.coherence, form.logdet)
                    for i in range(k)])
    out.append((P * sig) @ Qt)
    return out


def estimate_forward_weight(p: LocalProblem, current: np.ndarray | None = None,
                            refine_steps: int = 20) -> np.ndarray:
    """Approximate closed-form minimiser of the local objective over ``A``.

    Among the closed-form candidates (and ``current`` when given) the one
    with the lowest objective is returned, optionally polished by
    ``refine_steps`` monotone gradient steps.
    """
    m, n = p.A.shape
    if p.U_prev.shape[0] != n or p.Y.shape[0] != m:
        raise TopologyError("forward weight does not match its neighbours")
    form = forward_form(p)
    candidates = forward_candidates(form, (m, n))
    if current is not None:
        candidates.append(current)
    values = [forward_objective(A, p) for A in candidates]
    best = int(np.argmin(values))
    A = candidates[best]
    if not np.isfinite(values[best]):
        raise SingularityError("no closed-form candidate lies in the log-det domain")
    if refine_steps:
        A, _ = gradient_refine(A, form, p, refine_steps)
    return A


def forward_gradient(A: np.ndarray, form: ForwardForm) -> np.ndarray:
    grad = 2.0 * A @ form.R - form.L
    if form.coherence:
        grad += 2.0 * form.coherence * (A @ A.T - np.eye(A.shape[0])) @ A
    if form.logdet:
        if A.shape[0] == A.shape[1]:
            grad -= 2.0 * form.logdet * np.linalg.inv(A).T
        elif A.shape[0] > A.shape[1]:
            grad -= 2.0 * form.logdet * np.linalg.solve(A.T @ A, A.T).T
        else:
            grad -= 2.0 * form.logdet * np.linalg.solve(A @ A.T, A)
    return grad


def gradient_refine(A, form: ForwardForm, p: LocalProblem, steps: int, step0: float = 1.0):
    """Gradient descent with Armijo backtracking; never increases the objective."""
    value = forward_objective(A, p)
    step = step0
    for _ in range(steps):
        grad = forward_gradient(A, form)
        gnorm2 = float(np.sum(grad * grad))
        if gnorm2 < 1e-24:
            break
        while step > 1e-16:
            trial = A - step * grad
            trial_value = forward_objective(trial, p)
            if trial_value <= value - 1e-4 * step * gnorm2:
                A, value = trial, trial_value
                step *= 2.0
                break
            step *= 0.5
        else:
            break
    return A, value


# --- backward weight ---------------------------------------------------------

def backward_objective(B: np.ndarray, p: LocalProblem) -> float:
    lam = p.lambdas
    te = p.Y - p.A @ p.U_prev
    value = 0.5 * np.sum((B @ p.U_next - p.Y) ** 2)
    value += 0.5 * lam.similarity * np.sum((p.A_next - B.T) ** 2)
    value += lam.flow_next * np.sum(te * (B @ p.ge_next))
    return float(value)


def estimate_backward_weight(p: LocalProblem) -> np.ndarray:
    """Exact minimiser of the local objective over ``B`` (untied networks).

    ``B (U_next U_next' + s I) = Y U_next' + s A_next' - flow_next (Y - A U_prev) ge_next'``.
    For tied networks the stored weight is ``A_next'`` and nothing is solved.
    """
    if p.tied:
        return p.A_next.T if p.A_next is not None else p.B
    if not p.has_next or p.A_next is None:
        raise ContextError("backward step needs the next level's state")
    lam = p.lambdas
    sim = lam.similarity
    te = p.Y - p.A @ p.U_prev
    gram = p.U_next @ p.U_next.T + sim * np.eye(p.U_next.shape[0])
    rhs = p.Y @ p.U_next.T + sim * p.A_next.T - lam.flow_next * (te @ p.ge_next.T)
    try:
        if sim == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise np.linalg.LinAlgError
        return np.linalg.solve(gram, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularityError("U_next U_next' is singular and similarity is zero") from exc


# --- quartic -----------------------------------------------------------------

def quartic_real_roots(c4: float, c3: float, c2: float, c1: float, c0: float) -> list[float]:
    """Real roots of ``c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0``, ascending.

    Leading zero coefficients reduce the degree. Companion-matrix roots are
    polished with Newton steps on the original polynomial.
    """
    coeffs = np.array([c4, c3, c2, c1, c0], dtype=np.float64)
    if not np.all(np.isfinite(coeffs)):
        raise ParameterError("quartic coefficients must be finite")
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        raise ParameterError("all quartic coefficients are zero")
    coeffs = coeffs[nz[0]:]
    if coeffs.size == 1:
        return []
    roots = np.roots(coeffs)
    scale = 1.0 + np.abs(roots)
    with np.errstate(over="ignore", invalid="ignore"):
        magnitude = np.polyval(np.abs(coeffs), np.abs(roots.real))
        residual_at_real = np.abs(np.polyval(coeffs, roots.real))
    # repeated roots come back as complex clusters; keep them when the real part is a root
    near_real = np.isfinite(magnitude) & (residual_at_real <= 1e-10 * magnitude)
    real = roots[(np.abs(roots.imag) <= 1e-7 * scale) | near_real].real
    deriv = np.polyder(coeffs)
    polished = []
    for x in real:
        residual = abs(np.polyval(coeffs, x))
        for _ in range(8):
            d = np.polyval(deriv, x)
            if d == 0 or residual == 0:
                break
            step = np.polyval(coeffs, x) / d
            trial = x - step
            trial_residual = abs(np.polyval(coeffs, trial))
            # Newton is erratic near repeated roots: accept only small improving steps
            if trial_residual >= residual or abs(step) > 1e-6 * (1 + abs(x)):
                break
            x, residual = trial, trial_residual
        polished.append(float(x))
    polished.sort()
    out = []
    for x in polished:
        if not out or abs(x - out[-1]) > ROOT_TOL * (1 + abs(x)):
            out.append(x)
    return out
