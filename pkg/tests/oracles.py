"""Independent reference computations and random instance generators.

Nothing here calls the closed forms under test: objectives are written out
term by term with explicit loops, minima come from grids or plain gradient
descent, and gradients from central differences.
"""

from __future__ import annotations

import numpy as np

from lpnet.core import LevelLambdas
from lpnet.solvers import LocalProblem

# seeds of the instance families whose oracle outputs are frozen
SEED_1D = 1000
SEED_FORWARD = 2000
SEED_DISCRIMINATION = 3000
SEED_KNN = 4000
N_1D = 200
N_FORWARD = 20


# --- instance generators -------------------------------------------------------

def representation_instance_1d(rng):
    return dict(x=rng.normal(0, 2), nu=rng.normal(0, 1), t=rng.uniform(0, 1),
                n=rng.uniform(0, 1), sparsity=rng.uniform(0, 1))


def representation_instance(rng, dim=32):
    return dict(x=rng.normal(0, 2, dim), nu=rng.normal(0, 1, dim), t=rng.uniform(0, 1, dim),
                n=rng.uniform(0, 1, dim), sparsity=rng.uniform(0, 1))


def random_lambdas(rng, **fixed) -> LevelLambdas:
    values = dict(discrimination=0.0, sparsity=rng.uniform(0, 0.5), ridge=rng.uniform(0.5, 2),
                  coherence=rng.uniform(0.1, 1), logdet=rng.uniform(0.1, 1),
                  similarity=rng.uniform(0.1, 1), flow_prev=rng.uniform(0, 1),
                  flow_next=rng.uniform(0, 1))
    values.update(fixed)
    return LevelLambdas(**values)


def local_instance(rng, m=8, p=8, q=8, N=30, tied=False, **fixed) -> LocalProblem:
    """Random interior-node subproblem: A is (m, p), B is (m, q)."""
    A_next = rng.standard_normal((q, m))
    B = A_next.T.copy() if tied else rng.standard_normal((m, q))
    return LocalProblem(
        lambdas=random_lambdas(rng, **fixed),
        U_prev=rng.standard_normal((p, N)),
        Y=rng.standard_normal((m, N)),
        A=rng.standard_normal((m, p)),
        ge_prev=0.5 * rng.standard_normal((p, N)),
        U_next=rng.standard_normal((q, N)),
        B=B,
        ge_next=0.5 * rng.standard_normal((q, N)),
        B_prev=None if tied else rng.standard_normal((p, m)),
        A_next=A_next,
        tied=tied,
    )


def discrimination_instance(seed, i):
    rng = np.random.default_rng([seed, i])
    labels = np.repeat(np.arange(3), 4)
    return rng.standard_normal((5, labels.size)), labels


def knn_instance(seed, i):
    rng = np.random.default_rng([seed, i])
    train = rng.standard_normal((4, 30))
    labels = rng.integers(0, 3, 30)
    test = rng.standard_normal((4, 20))
    return train, labels, test, int(rng.integers(1, 8))

# --- scalar representation problem ---------------------------------------------

def representation_objective_1d(y, x, nu, t, n, sparsity):
    return 0.5 * (x - y) ** 2 + nu * y + (sparsity + t) * abs(y) + n * y * y


def grid_minimum_1d(x, nu, t, n, sparsity, points=10_000):
    """Smallest objective over a uniform grid on [-5|x-nu|, 5|x-nu|]."""
    half = 5.0 * abs(x - nu)
    grid = np.linspace(-half, half, points)
    values = 0.5 * (x - grid) ** 2 + nu * grid + (sparsity + t) * np.abs(grid) + n * grid ** 2
    return float(values.min())


# --- objective pieces, written out naively -------------------------------------

def trace_product(te, W, ge):
    """Tr(te' W ge) by summing column inner products."""
    total = 0.0
    for j in range(te.shape[1]):
        total += float(te[:, j] @ (W @ ge[:, j]))
    return total


def brute_force_discrimination(G, labels):
    """Cross-class penalty summed over every unordered pair of columns."""
    total = 0.0
    N = G.shape[1]
    for i in range(N):
        for j in range(i + 1, N):
            if labels[i] == labels[j]:
                continue
            a, b = G[:, i], G[:, j]
            total += np.sum(np.maximum(a, 0) * np.maximum(b, 0))
            total += np.sum(np.maximum(-a, 0) * np.maximum(-b, 0))
            total += np.sum((a * b) ** 2)
    return float(total)


def naive_regularizer(A, ridge, coherence, logdet):
    m, p = A.shape
    value = 0.5 * ridge * sum(A[i, j] ** 2 for i in range(m) for j in range(p))
    G = A @ A.T
    value += 0.5 * coherence * sum((G[i, j] - (i == j)) ** 2 for i in range(m) for j in range(m))
    if logdet:
        gram = A.T @ A if m >= p else A @ A.T
        value -= logdet * np.log(np.linalg.det(gram))
    return float(value)


def naive_local_objective(p: LocalProblem) -> float:
    lam = p.lambdas
    Q = p.A @ p.U_prev
    te = p.Y - Q
    value = 0.5 * float(np.sum(te ** 2))
    if p.B is not None:
        value += 0.5 * float(np.sum((p.B @ p.U_next - p.Y) ** 2))
    value += naive_regularizer(p.A, lam.ridge, lam.coherence, lam.logdet)
    if not p.tied:
        if p.B_prev is not None:
            value += 0.5 * lam.similarity * float(np.sum((p.A - p.B_prev.T) ** 2))
        if p.A_next is not None and p.B is not None:
            value += 0.5 * lam.similarity * float(np.sum((p.A_next - p.B.T) ** 2))
    # previous-level goal error enters with a negative weight
    value -= lam.flow_prev * trace_product(te, p.A, p.ge_prev)
    if p.B is not None:
        value += lam.flow_next * trace_product(te, p.B, p.ge_next)
    value += lam.sparsity * float(np.sum(np.abs(p.Y)))
    if p.labels is not None and lam.discrimination:
        value += lam.discrimination * brute_force_discrimination(p.Y, p.labels)
    return value


# --- derivatives -----------------------------------------------------------------

def central_difference(f, X, h=1e-5):
    X = np.array(X, dtype=np.float64)
    grad = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        old = X[idx]
        X[idx] = old + h
        up = f(X)
        X[idx] = old - h
        down = f(X)
        X[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def forward_weight_value(A, p: LocalProblem) -> float:
    """The A-dependent part of the local objective (inf outside the log-det domain)."""
    lam = p.lambdas
    te = p.Y - A @ p.U_prev
    value = 0.5 * float(np.sum(te ** 2)) + 0.5 * lam.ridge * float(np.sum(A ** 2))
    value += 0.5 * lam.coherence * float(np.sum((A @ A.T - np.eye(A.shape[0])) ** 2))
    if lam.logdet:
        sign, logdet = np.linalg.slogdet(A.T @ A)
        if sign <= 0:
            return np.inf
        value -= lam.logdet * logdet
    if not p.tied and p.B_prev is not None:
        value += 0.5 * lam.similarity * float(np.sum((A - p.B_prev.T) ** 2))
    value -= lam.flow_prev * float(np.sum(te * (A @ p.ge_prev)))
    if p.B is not None:
        value += lam.flow_next * float(np.sum(te * (p.B @ p.ge_next)))
    return value


def forward_weight_gradient(A, p: LocalProblem) -> np.ndarray:
    """Analytic gradient of :func:`forward_weight_value` for square A."""
    lam = p.lambdas
    U, Y, gp = p.U_prev, p.Y, p.ge_prev
    te = Y - A @ U
    grad = -te @ U.T + lam.ridge * A
    grad += 2 * lam.coherence * (A @ A.T - np.eye(A.shape[0])) @ A
    if lam.logdet:
        grad -= 2 * lam.logdet * np.linalg.inv(A).T
    if not p.tied and p.B_prev is not None:
        grad += lam.similarity * (A - p.B_prev.T)
    # d/dA Tr((Y - AU)' A gp) = Y gp' - A gp U' - A U gp'
    grad -= lam.flow_prev * (Y @ gp.T - A @ gp @ U.T - A @ U @ gp.T)
    if p.B is not None:
        grad -= lam.flow_next * (p.B @ p.ge_next) @ U.T
    return grad


def forward_weight_oracle(p: LocalProblem, A0, steps=5000):
    """Gradient descent with backtracking that never leaves the log-det domain."""
    A = np.array(A0, dtype=np.float64)
    value = forward_weight_value(A, p)
    step = 1e-3
    for _ in range(steps):
        g = forward_weight_gradient(A, p)
        while step > 1e-14:
            trial = A - step * g
            trial_value = forward_weight_value(trial, p)
            if np.isfinite(trial_value) and trial_value < value:
                A, value = trial, trial_value
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    return A, value


def backward_weight_value(B, p: LocalProblem) -> float:
    lam = p.lambdas
    te = p.Y - p.A @ p.U_prev
    value = 0.5 * float(np.sum((B @ p.U_next - p.Y) ** 2))
    value += 0.5 * lam.similarity * float(np.sum((p.A_next - B.T) ** 2))
    value += lam.flow_next * trace_product(te, B, p.ge_next)
    return value


# --- k-NN --------------------------------------------------------------------------

def knn_by_hand(train, train_labels, test, k):
    """Loop-based k-NN with the documented tie-breaks."""
    preds = []
    for j in range(test.shape[1]):
        d = [float(np.sqrt(np.sum((train[:, i] - test[:, j]) ** 2))) for i in range(train.shape[1])]
        order = sorted(range(len(d)), key=lambda i: (d[i], i))[:k]
        votes = {}
        for i in order:
            votes.setdefault(int(train_labels[i]), []).append(d[i])
        best = max(len(v) for v in votes.values())
        tied = [c for c, v in votes.items() if len(v) == best]
        preds.append(min(tied, key=lambda c: (np.mean(votes[c]), c)))
    return np.array(preds)
