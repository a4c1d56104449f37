from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from lpnet.core import LevelLambdas
from lpnet.errors import ConditioningError, ContextError, ParameterError, SingularityError
from lpnet.solvers import (LocalProblem, estimate_backward_weight, estimate_forward_weight,
                           estimate_representation, eval_objective_local, eval_regularizer_V,
                           forward_objective, quartic_real_roots, representation_objective,
                           update_representation)
from lpnet.transforms import soft_threshold

seeds = st.integers(0, 2**32 - 1)


# --- objective -------------------------------------------------------------------

def test_zero_state_objective():
    m = 3
    lam = LevelLambdas(coherence=2.5, logdet=0.0)
    Z = np.zeros((m, m))
    p = LocalProblem(lam, U_prev=np.zeros((m, 4)), Y=np.zeros((m, 4)), A=Z,
                     ge_prev=np.zeros((m, 4)), U_next=np.zeros((m, 4)), B=Z,
                     ge_next=np.zeros((m, 4)))
    assert eval_objective_local(p).total == pytest.approx(0.5 * 2.5 * m)


def test_consistent_state_has_no_fit_or_flow(rng):
    A, B = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    U_prev = rng.standard_normal((4, 6))
    Y = A @ U_prev
    U_next = np.linalg.solve(B, Y)
    p = LocalProblem(LevelLambdas(), U_prev, Y, A, np.zeros_like(U_prev), U_next, B,
                     np.zeros_like(U_next))
    out = eval_objective_local(p)
    assert abs(out.r1) < 1e-18 + 1e-12 * np.sum(Y ** 2)
    assert out.r3 == 0.0


@pytest.mark.parametrize("tied", [True, False])
@pytest.mark.parametrize("with_labels", [True, False])
def test_objective_matches_naive_oracle(tied, with_labels):
    for i in range(10):
        rng = np.random.default_rng([7, i])
        p = oracles.local_instance(rng, m=4, p=4, q=4, N=6, tied=tied, discrimination=0.3)
        if with_labels:
            p = replace(p, labels=np.repeat(np.arange(3), 2))
        out = eval_objective_local(p)
        expected = oracles.naive_local_objective(p)
        assert out.total == pytest.approx(expected, rel=1e-12, abs=1e-12)
        parts = out.r1 + out.r2 + out.r3 + out.a_term + out.u_term
        assert out.total == pytest.approx(parts, rel=1e-12)


def test_objective_needs_consistent_neighbours(rng):
    p = oracles.local_instance(rng)
    with pytest.raises(ContextError):
        eval_objective_local(replace(p, U_next=None))
    with pytest.raises(ContextError):
        eval_objective_local(replace(p, A=None))


def test_regularizer_examples():
    assert eval_regularizer_V(np.eye(3), 2.0, 5.0, 7.0) == pytest.approx(3.0)
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    assert eval_regularizer_V(Q, 0.0, 3.0, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert eval_regularizer_V(2 * np.eye(2), 0.0, 1.0, 1.0) == pytest.approx(9 - np.log(16))
    with pytest.raises(SingularityError):
        eval_regularizer_V(np.zeros((2, 2)), 0.0, 0.0, 1.0)


def test_regularizer_rectangular_gram(rng):
    A = rng.standard_normal((3, 5))
    expected = oracles.naive_regularizer(A, 0.3, 0.7, 1.1)
    assert eval_regularizer_V(A, 0.3, 0.7, 1.1) == pytest.approx(expected, rel=1e-12)


# --- representation step -----------------------------------------------------------

def test_representation_reduces_to_soft_threshold(rng):
    x = rng.standard_normal(10)
    zeros = np.zeros(10)
    assert np.array_equal(estimate_representation(x, zeros, zeros, zeros, 0.4),
                          soft_threshold(x, 0.4))


def test_representation_without_penalties_is_shifted_input(rng):
    """With no thresholds, y = x - nu = A((1+fb)u_prev - fb g_prev) + B((1-ff)u_next + ff g_next)."""
    lam = LevelLambdas(sparsity=0.0, flow_prev=0.6, flow_next=0.3)
    p = oracles.local_instance(rng, m=5, p=5, q=5, N=4, tied=True, flow_prev=0.6, flow_next=0.3,
                               sparsity=0.0)
    G_prev, G_next = p.U_prev - p.ge_prev, p.U_next - p.ge_next
    x = p.A @ p.U_prev + p.B @ p.U_next
    nu = lam.flow_next * p.B @ p.ge_next - lam.flow_prev * p.A @ p.ge_prev
    zeros = np.zeros_like(x)
    y = estimate_representation(x, zeros, nu, zeros, 0.0)
    expected = (p.A @ ((1 + 0.6) * p.U_prev - 0.6 * G_prev)
                + p.B @ ((1 - 0.3) * p.U_next + 0.3 * G_next))
    assert np.allclose(y, expected, atol=1e-12)


def test_representation_rejects_bad_divisor():
    with pytest.raises(ParameterError):
        estimate_representation(np.ones(2), np.zeros(2), np.zeros(2), np.full(2, -0.5), 0.0)
    with pytest.raises(ParameterError):
        estimate_representation(np.ones(2), -np.ones(2), np.zeros(2), np.zeros(2), 0.0)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_representation_beats_grid(seed):
    inst = oracles.representation_instance_1d(np.random.default_rng(seed))
    y = float(estimate_representation(inst["x"], inst["t"], inst["nu"], inst["n"],
                                      inst["sparsity"]))
    assert oracles.representation_objective_1d(y, **inst) <= oracles.grid_minimum_1d(**inst) + 1e-9


@pytest.mark.parametrize("discrimination", [0.0, 0.4])
@pytest.mark.parametrize("tied", [True, False])
def test_update_representation_descends(discrimination, tied):
    for i in range(10):
        rng = np.random.default_rng([8, i])
        p = oracles.local_instance(rng, m=6, p=6, q=6, N=9, tied=tied,
                                   discrimination=discrimination)
        if discrimination:
            p = replace(p, labels=np.repeat(np.arange(3), 3))
        before = eval_objective_local(p).total
        Y = update_representation(p)
        after = eval_objective_local(replace(p, Y=Y)).total
        assert after <= before + 1e-9 * (1 + abs(before))
        for _ in range(5):
            delta = 1e-5 * rng.standard_normal(Y.shape)
            nearby = eval_objective_local(replace(p, Y=Y + delta)).total
            if not discrimination:
                assert nearby >= after - 1e-10


def test_update_representation_last_level(rng):
    p = oracles.local_instance(rng, m=4, p=4, N=5, tied=True)
    p = replace(p, U_next=None, B=None, ge_next=None, A_next=None)
    Y = update_representation(p)
    x = p.A @ p.U_prev + p.lambdas.flow_prev * p.A @ p.ge_prev
    assert np.allclose(Y, soft_threshold(x, p.lambdas.sparsity))


# --- forward weight -----------------------------------------------------------------

def test_forward_ridge_quadratic_normal_equations(rng):
    m = 5
    lam = LevelLambdas(ridge=1.0, similarity=1.0, coherence=0.0, logdet=0.0,
                       flow_prev=0.0, flow_next=0.0)
    Y, B_prev = rng.standard_normal((m, m)), rng.standard_normal((m, m))
    p = LocalProblem(lam, U_prev=np.eye(m), Y=Y, A=rng.standard_normal((m, m)),
                     ge_prev=rng.standard_normal((m, m)), B_prev=B_prev, tied=False)
    A = estimate_forward_weight(p, refine_steps=0)
    # A (UU' + (ridge + similarity) I) = Y U' + similarity B_prev'
    expected = np.linalg.solve(3.0 * np.eye(m), (Y + B_prev.T).T).T
    assert np.allclose(A, expected, atol=1e-12)


def test_forward_logdet_alone_is_flagged():
    m = 3
    lam = LevelLambdas(ridge=0.0, similarity=0.0, coherence=0.0, logdet=1.0,
                       flow_prev=0.0, flow_next=0.0)
    p = LocalProblem(lam, U_prev=np.zeros((m, 4)), Y=np.zeros((m, 4)), A=np.eye(m),
                     ge_prev=np.zeros((m, 4)))
    with pytest.raises(ConditioningError):
        estimate_forward_weight(p)


@settings(max_examples=20, deadline=None)
@given(seeds, st.booleans())
def test_forward_step_never_worse_than_current(seed, tied):
    p = oracles.local_instance(np.random.default_rng(seed), tied=tied)
    A = estimate_forward_weight(p, current=p.A, refine_steps=3)
    assert forward_objective(A, p) <= forward_objective(p.A, p)


@pytest.mark.parametrize("shape", [(6, 4), (4, 6)])
def test_forward_rectangular(shape, rng):
    m, n = shape
    p = oracles.local_instance(rng, m=m, p=n, q=m, tied=True)
    A = estimate_forward_weight(p, current=p.A)
    assert A.shape == shape
    assert forward_objective(A, p) <= forward_objective(p.A, p)


def test_forward_objective_matches_oracle(rng):
    p = oracles.local_instance(rng, tied=False)
    assert forward_objective(p.A, p) == pytest.approx(oracles.forward_weight_value(p.A, p),
                                                      rel=1e-12)


def test_oracle_gradient_is_consistent(rng):
    p = oracles.local_instance(rng, m=5, p=5, q=5, N=7, tied=False)
    grad = oracles.forward_weight_gradient(p.A, p)
    fd = oracles.central_difference(lambda X: oracles.forward_weight_value(X, p), p.A)
    assert np.allclose(grad, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


# --- backward weight ----------------------------------------------------------------

def test_backward_recovers_transpose_without_next_signal(rng):
    p = oracles.local_instance(rng, m=4, p=4, q=4, tied=False)
    p = replace(p, U_next=np.zeros_like(p.U_next), ge_next=np.zeros_like(p.ge_next))
    assert np.allclose(estimate_backward_weight(p), p.A_next.T, rtol=1e-14, atol=0)


def test_backward_tied_is_skipped(rng):
    p = oracles.local_instance(rng, tied=True)
    assert np.array_equal(estimate_backward_weight(p), p.A_next.T)


def test_backward_singular_without_similarity(rng):
    p = oracles.local_instance(rng, m=4, p=4, q=4, tied=False, similarity=0.0)
    U_next = np.zeros_like(p.U_next)
    U_next[0] = 1.0
    with pytest.raises(SingularityError):
        estimate_backward_weight(replace(p, U_next=U_next))


def test_backward_needs_next_level(rng):
    p = oracles.local_instance(rng, tied=False)
    with pytest.raises(ContextError):
        estimate_backward_weight(replace(p, U_next=None, B=None, ge_next=None))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_backward_gradient_vanishes(seed):
    p = oracles.local_instance(np.random.default_rng(seed), m=6, p=6, q=6, tied=False)
    B = estimate_backward_weight(p)
    f = lambda X: oracles.backward_weight_value(X, p)  # noqa: E731
    grad = oracles.central_difference(f, B)
    at_zero = oracles.central_difference(f, np.zeros_like(B))
    assert np.linalg.norm(grad) <= 1e-6 * (1 + np.linalg.norm(at_zero))


# --- quartic --------------------------------------------------------------------------

def test_quartic_examples():
    assert quartic_real_roots(1, 0, -5, 0, 4) == pytest.approx([-2, -1, 1, 2])
    assert quartic_real_roots(0, 0, 1, 0, -9) == pytest.approx([-3, 3])
    assert quartic_real_roots(1, 0, 0, 0, 1) == []
    assert quartic_real_roots(0, 0, 0, 0, 5) == []
    with pytest.raises(ParameterError):
        quartic_real_roots(0, 0, 0, 0, 0)
    with pytest.raises(ParameterError):
        quartic_real_roots(np.nan, 0, 0, 0, 1)


@settings(max_examples=200)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=4), st.floats(0.1, 10))
def test_quartic_recovers_real_roots(roots, lead):
    coeffs = lead * np.poly(roots)
    padded = np.concatenate([np.zeros(5 - coeffs.size), coeffs])
    found = quartic_real_roots(*padded)
    for r in found:
        assert abs(np.polyval(coeffs, r)) <= 1e-6 * (1 + np.polyval(np.abs(coeffs), abs(r)))
    for r in roots:
        assert min(abs(np.array(found) - r)) <= 1e-3 * (1 + abs(r))


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_representation_is_columnwise(seed):
    inst = oracles.representation_instance(np.random.default_rng(seed))
    rng = np.random.default_rng(seed)
    cols = [oracles.representation_instance(rng) for _ in range(4)]
    stacked = [np.stack([c[k] for c in cols], axis=1) for k in ("x", "t", "nu", "n")]
    whole = estimate_representation(*stacked, inst["sparsity"])
    for j, c in enumerate(cols):
        single = estimate_representation(c["x"], c["t"], c["nu"], c["n"], inst["sparsity"])
        assert np.array_equal(whole[:, j], single)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_backward_weight_beats_perturbations(seed):
    rng = np.random.default_rng(seed)
    p = oracles.local_instance(rng, m=5, p=5, q=5, tied=False)
    B = estimate_backward_weight(p)
    best = oracles.backward_weight_value(B, p)
    for _ in range(10):
        delta = rng.standard_normal(B.shape) * 10.0 ** rng.uniform(-4, 0)
        assert best <= oracles.backward_weight_value(B + delta, p) + 1e-9 * (1 + abs(best))


@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_regularizer_invariant_under_column_permutation(seed, m, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n)) + 3 * np.eye(m, n)
    perm = rng.permutation(n)
    args = (0.7, 2.0, 0.5)
    try:
        expected = eval_regularizer_V(A, *args)
    except SingularityError:
        return
    assert eval_regularizer_V(A[:, perm], *args) == pytest.approx(expected, rel=1e-10, abs=1e-10)
