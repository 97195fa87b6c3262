"""Softmax geometry and the closed-form direction gradients, checked
against explicit Jacobian computations and finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from sdmax.core import SeededRng
from sdmax.errors import ContractViolationError, SingularityError
from sdmax.probability import (
    ce_loss,
    direction_cosine,
    direction_inner_product,
    grad_raise_ptau,
    grad_reduce_py,
    label_info,
    phi_sq_sum,
    sample_simplex_interior,
    softmax,
    softmax_batch,
    tau_batch,
)


def test_softmax_normalizes_and_is_shift_invariant():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.normal(0, 3, size=7)
        p = softmax(s)
        assert p.min() > 0
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.max(np.abs(softmax(s + 7.3) - p)) < 1e-12


def test_softmax_uniform_case():
    p = softmax(np.zeros(10))
    assert np.allclose(p, 0.1, rtol=0, atol=1e-15)


def test_softmax_matches_direct_ratio():
    s = np.array([0.2, -1.0, 2.5, 0.0])
    direct = np.exp(s) / np.exp(s).sum()
    assert np.max(np.abs(softmax(s) - direct)) < 1e-12


def test_softmax_survives_huge_logits():
    p = softmax(np.array([1000.0, 999.0, 998.0]))
    assert np.all(np.isfinite(p))
    assert abs(p.sum() - 1.0) < 1e-12


def test_ce_loss_uniform_and_direct():
    assert ce_loss(np.zeros(10), 3) == pytest.approx(np.log(10.0), abs=1e-12)
    s = np.array([0.5, 1.5, -0.25])
    assert ce_loss(s, 1) == pytest.approx(-np.log(softmax(s)[1]), abs=1e-12)
    assert np.isfinite(ce_loss(np.array([2000.0, 0.0, -2000.0]), 2))


def test_ce_loss_rejects_bad_label():
    with pytest.raises(ContractViolationError):
        ce_loss(np.zeros(3), 3)


def test_label_info_basic():
    info = label_info(np.array([0.5, 0.3, 0.2]), y=0)
    assert info.tau == 1
    assert np.array_equal(info.sorted_p, [0.5, 0.3, 0.2])
    assert info.n_index(1) == 0
    assert info.nth_largest(3) == pytest.approx(0.2)


def test_label_info_tie_breaks_stably():
    info = label_info(np.array([0.4, 0.4, 0.2]), y=2)
    assert info.tau == 0


def test_label_info_bounds():
    info = label_info(np.array([0.6, 0.4]), y=0)
    with pytest.raises(ContractViolationError):
        info.n_index(0)
    with pytest.raises(ContractViolationError):
        info.n_index(3)
    with pytest.raises(ContractViolationError):
        label_info(np.array([1.0]), y=0)


def test_tau_batch_matches_single():
    rng = SeededRng(3, stream=1)
    p = sample_simplex_interior(rng, 6, 40)
    y = SeededRng(4, stream=1).integers(0, 6, size=40)
    taus = tau_batch(p, y)
    for i in range(40):
        assert taus[i] == label_info(p[i], int(y[i])).tau


def test_phi_sq_sum_bounds():
    assert phi_sq_sum(np.full(10, 0.1)) == pytest.approx(0.1)
    one_hot = np.zeros(5)
    one_hot[2] = 1.0
    assert phi_sq_sum(one_hot) == pytest.approx(1.0)
    rng = SeededRng(5, stream=1)
    p = sample_simplex_interior(rng, 7, 200)
    phis = np.sum(p * p, axis=1)
    assert np.all(phis >= 1.0 / 7 - 1e-12)
    assert np.all(phis <= 1.0)


def test_grad_reduce_py_uniform():
    g = grad_reduce_py(np.full(3, 1.0 / 3.0), y=1)
    assert np.allclose(g, [0.5, -1.0, 0.5], rtol=0, atol=1e-12)


def test_grad_raise_ptau_direct_substitution():
    g = grad_raise_ptau(np.array([0.2, 0.5, 0.3]), tau=1)
    assert np.allclose(g, [-0.4, 1.0, -0.6], rtol=0, atol=1e-12)


def test_grad_raise_ptau_uniform_sign():
    # raising the competitor means its own component carries the positive
    # weight: (p - e_tau)/(p_tau - 1) at uniform K=3 is (1, -0.5, -0.5)
    g = grad_raise_ptau(np.full(3, 1.0 / 3.0), tau=0)
    assert np.allclose(g, [1.0, -0.5, -0.5], rtol=0, atol=1e-12)


def test_direction_gradients_sum_to_zero():
    rng = SeededRng(6, stream=1)
    p = sample_simplex_interior(rng, 8, 100)
    for row in p:
        assert abs(grad_reduce_py(row, 2).sum()) < 1e-12
        assert abs(grad_raise_ptau(row, 5).sum()) < 1e-12


def _softmax_jacobian(p: np.ndarray) -> np.ndarray:
    k = p.shape[0]
    jac = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            jac[i, j] = p[i] * ((1.0 if i == j else 0.0) - p[j])
    return jac


def test_closed_forms_match_explicit_jacobian():
    rng = SeededRng(7, stream=1)
    p_rows = sample_simplex_interior(rng, 6, 50)
    for p in p_rows:
        jac = _softmax_jacobian(p)
        y, tau = 1, 4
        # v^T J / (P_y (1 - P_y)) for v = -e_y reproduces the closed form
        reduce_oracle = (-jac[y]) / (p[y] * (1.0 - p[y]))
        raise_oracle = jac[tau] / (p[tau] * (1.0 - p[tau]))
        assert np.max(np.abs(reduce_oracle - grad_reduce_py(p, y))) < 1e-12
        assert np.max(np.abs(raise_oracle - grad_raise_ptau(p, tau))) < 1e-12


def test_grad_reduce_py_matches_finite_differences():
    rng = SeededRng(8, stream=1)
    s = np.asarray(rng.normal(0.0, 1.5, size=6))
    y = 2
    p = softmax(s)
    h = 1e-6
    fd = np.empty(6)
    for j in range(6):
        sp, sm = s.copy(), s.copy()
        sp[j] += h
        sm[j] -= h
        fd[j] = (-softmax(sp)[y] + softmax(sm)[y]) / (2 * h)
    oracle = fd / (p[y] * (1.0 - p[y]))
    got = grad_reduce_py(p, y)
    assert np.max(np.abs(oracle - got)) / np.max(np.abs(got)) < 1e-6


def test_singularities_raise():
    one_hot = np.zeros(4)
    one_hot[1] = 1.0
    with pytest.raises(SingularityError):
        grad_reduce_py(one_hot, 1)
    with pytest.raises(SingularityError):
        grad_raise_ptau(one_hot, 1)
    with pytest.raises(SingularityError):
        direction_inner_product(one_hot, 1, 2)


def test_inner_product_uniform_golden():
    p = np.full(10, 0.1)
    assert direction_inner_product(p, 0, 1) == pytest.approx(10.0 / 81.0, abs=1e-12)


def test_cosine_uniform_goldens():
    assert direction_cosine(np.full(10, 0.1), 0, 1) == pytest.approx(1.0 / 9.0, abs=1e-12)
    assert direction_cosine(np.full(3, 1.0 / 3.0), 0, 1) == pytest.approx(0.5, abs=1e-12)


def test_inner_product_and_cosine_match_vector_oracles():
    rng = SeededRng(9, stream=1)
    p_rows = sample_simplex_interior(rng, 9, 200)
    for p in p_rows:
        order = np.argsort(-p)
        y, tau = int(order[0]), int(order[1])
        gy = grad_reduce_py(p, y)
        gt = grad_raise_ptau(p, tau)
        dot = float(gy @ gt)
        cos = dot / (np.linalg.norm(gy) * np.linalg.norm(gt))
        assert direction_inner_product(p, y, tau) == pytest.approx(dot, abs=1e-12)
        assert direction_cosine(p, y, tau) == pytest.approx(cos, abs=1e-12)
        assert dot > 0
        assert 0 < cos < 1


def test_inner_product_rejects_equal_labels():
    with pytest.raises(ContractViolationError):
        direction_inner_product(np.full(3, 1.0 / 3.0), 1, 1)


def test_simplex_sampler_contract():
    rng = SeededRng(10, stream=1)
    p = sample_simplex_interior(rng, 5, 300)
    assert p.shape == (300, 5)
    assert np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-9)
    assert p.min() >= 1e-6
    again = sample_simplex_interior(SeededRng(10, stream=1), 5, 300)
    assert np.array_equal(p, again)
