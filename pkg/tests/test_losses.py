"""Loss values against hand arithmetic and loss gradients against
independently built frozen-context finite-difference oracles."""

from __future__ import annotations

import numpy as np
import pytest

from sdmax.core import SeededRng
from sdmax.errors import ContractViolationError
from sdmax.losses import (
    DEFAULT_ZETA,
    DpdrContext,
    LossKind,
    dpdr_loss,
    dpdr_loss_batch,
    dpdr_phi,
    loss_grad_scores_batch,
    loss_grad_wrt_scores,
    loss_value,
    margin_loss,
    nprob_loss,
    stage_loss,
    tie_counter,
)
from sdmax.probability import label_info, softmax, softmax_batch, tau_batch


def test_loss_kind_validation():
    assert LossKind.dpdr(3).n == 3
    with pytest.raises(ContractViolationError):
        LossKind.dpdr(1)
    with pytest.raises(ContractViolationError):
        LossKind("entropy")
    with pytest.raises(ContractViolationError):
        LossKind("ce", n=2)


def test_stage_loss_sequence():
    assert stage_loss(1) == LossKind.nprob()
    assert stage_loss(2) == LossKind.dpdr(2)
    assert stage_loss(5) == LossKind.dpdr(5)
    with pytest.raises(ContractViolationError):
        stage_loss(0)


def test_dpdr_context_validation():
    DpdrContext(phi=0.0)
    with pytest.raises(ContractViolationError):
        DpdrContext(phi=0.1, zeta=0.0)
    with pytest.raises(ContractViolationError):
        DpdrContext(phi=-0.1)


def test_nprob_loss_values():
    p = np.array([0.3, 0.4, 0.3])
    assert nprob_loss(p, 0) == pytest.approx(-0.3)
    one_hot = np.zeros(4)
    one_hot[1] = 1.0
    assert nprob_loss(one_hot, 1) == -1.0


def test_dpdr_phi_single_example():
    p = np.array([[0.5, 0.3, 0.2]])
    assert dpdr_phi(p, np.array([0]), n=3) == pytest.approx(0.05, abs=1e-15)


def test_dpdr_phi_batch_takes_max_gap():
    # gaps: A has p_tau - 3rd largest = 0.30, B has 0.20
    a = np.array([0.5, 0.4, 0.1])
    b = np.array([0.45, 0.3, 0.25])
    phi = dpdr_phi(np.vstack([a, b]), np.array([0, 0]), n=3)
    assert phi == pytest.approx(0.15, abs=1e-15)


def test_dpdr_phi_zero_in_failed_regime():
    # with n=2 and the true label on top, p_tau is itself the 2nd largest
    p = np.array([[0.6, 0.25, 0.15], [0.5, 0.3, 0.2]])
    assert dpdr_phi(p, np.array([0, 0]), n=2) == 0.0


def test_dpdr_phi_rejects_bad_stage():
    p = np.array([[0.5, 0.3, 0.2]])
    with pytest.raises(ContractViolationError):
        dpdr_phi(p, np.array([0]), n=1)
    with pytest.raises(ContractViolationError):
        dpdr_phi(p, np.array([0]), n=4)


def test_dpdr_loss_failure_branch_example():
    ctx = DpdrContext(phi=0.05)
    val = dpdr_loss(np.array([0.5, 0.3, 0.2]), y=0, n=3, ctx=ctx)
    assert val == pytest.approx(-0.2 / (0.1 + ctx.zeta), abs=1e-12)


def test_dpdr_loss_success_branch_example():
    ctx = DpdrContext(phi=0.15)
    val = dpdr_loss(np.array([0.25, 0.45, 0.30]), y=0, n=3, ctx=ctx)
    assert val == pytest.approx(0.2 / (0.1 + ctx.zeta), abs=1e-12)


def test_dpdr_loss_boundary_is_exactly_zero():
    # equal top-two logits give p_tau == p_y exactly, so the sign is 0
    s = np.array([1.25, 1.25, -0.5, -1.0])
    p = softmax(s)
    assert p[0] == p[1]
    ctx = DpdrContext(phi=dpdr_phi(p[None, :], np.array([0]), 2))
    assert dpdr_loss(p, y=0, n=2, ctx=ctx) == 0.0


def test_margin_loss_values():
    assert margin_loss(np.array([1.0, 3.0, 0.5]), 0) == pytest.approx(2.0)
    assert margin_loss(np.array([4.0, 3.0, 0.5]), 0) < 0
    # printed-score row: strongest competitor trails the true label by 0.402
    row = np.array([0.314, -1.267, -0.126, 1.438, 0.264, 1.036, 0.191, -0.118, -0.498, -1.041])
    assert margin_loss(row, 3) == pytest.approx(-0.402, abs=1e-12)


def test_ce_gradient_uniform_case():
    g = loss_grad_wrt_scores(LossKind.ce(), np.zeros(3), 0)
    assert np.allclose(g, [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], rtol=0, atol=1e-12)


def test_ce_gradient_components_sum_to_zero():
    rng = SeededRng(21, stream=1)
    for _ in range(20):
        s = np.asarray(rng.normal(0.0, 2.0, size=6))
        g = loss_grad_wrt_scores(LossKind.ce(), s, 2)
        assert abs(g.sum()) < 1e-12


def test_margin_gradient_is_indicator_difference():
    s = np.array([1.0, 3.0, 0.5])
    g = loss_grad_wrt_scores(LossKind.margin(), s, 0)
    assert np.array_equal(g, [-1.0, 1.0, 0.0])


# -- frozen-context finite-difference oracles ------------------------------
# Independent reconstruction of each loss as a plain function of the
# logits, with the non-smooth pieces (competitor index, compressed rank,
# sign, bias) frozen at the center point, then differentiated centrally.
# Bias values are chosen to keep the frozen denominator away from zero so
# the difference quotient is well conditioned; the gradient contract must
# hold for any nonnegative bias.


def _frozen_scalar_loss(kind: LossKind, s0: np.ndarray, y: int, ctx):
    p0 = softmax(s0)
    if kind.name == "ce":
        return lambda s: float(np.log(np.sum(np.exp(s - s.max()))) + s.max() - s[y])
    if kind.name == "nprob":
        return lambda s: -float(softmax(s)[y])
    if kind.name == "margin":
        masked = s0.copy()
        masked[y] = -np.inf
        kstar = int(np.argmax(masked))
        return lambda s: float(s[kstar] - s[y])
    info = label_info(p0, y)
    tau = info.tau
    idx_n = info.n_index(kind.n)
    sgn = float(np.sign(p0[tau] - p0[y]))

    def frozen(s):
        p = softmax(s)
        num = p[tau] - p[y]
        den = ctx.phi - sgn * (p[tau] - p[idx_n] - ctx.phi) + ctx.zeta
        return float(num / den)

    return frozen


def _central_diff(fn, s: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.empty_like(s)
    for j in range(s.shape[0]):
        sp, sm = s.copy(), s.copy()
        sp[j] += h
        sm[j] -= h
        g[j] = (fn(sp) - fn(sm)) / (2 * h)
    return g


def _well_separated_logits(rng: SeededRng, k: int, min_gap: float = 2e-3) -> np.ndarray:
    # shuffled even spacing plus jitter keeps all sorted-probability gaps
    # comfortably wide, so frozen ranks stay meaningful near the center
    while True:
        base = np.linspace(0.0, 3.0, k) + np.asarray(rng.uniform(-0.15, 0.15, size=k))
        s = base[np.asarray(rng.permutation(k))]
        p = np.sort(softmax(s))
        if np.min(np.diff(p)) > min_gap:
            return s


@pytest.mark.parametrize("kind_name", ["ce", "nprob", "margin", "dpdr"])
def test_score_gradients_match_frozen_finite_differences(kind_name):
    rng = SeededRng(22, stream=1)
    pick = SeededRng(23, stream=1)
    for _ in range(30):
        k = 4 + int(pick.integers(0, 4))
        s = _well_separated_logits(rng, k)
        y = int(pick.integers(0, k))
        h = 1e-5
        if kind_name == "dpdr":
            n = 2 + int(pick.integers(0, k - 1))
            kind = LossKind.dpdr(n)
            info = label_info(softmax(s), y)
            gap = float(info.p[info.tau] - info.sorted_p[n - 1])
            ctx = DpdrContext(phi=max(gap, 0.0) + 0.25)
            h = 1e-6
        else:
            kind = LossKind(kind_name)
            ctx = None
        analytic = loss_grad_wrt_scores(kind, s, y, ctx)
        numeric = _central_diff(_frozen_scalar_loss(kind, s, y, ctx), s, h)
        denom = max(float(np.max(np.abs(analytic))), 1e-12)
        assert np.max(np.abs(analytic - numeric)) / denom < 1e-6


def test_dpdr_gradient_at_boundary_reduces_to_numerator_term():
    s = np.array([0.75, 0.75, -0.6, -1.2])
    p = softmax(s)
    y, tau = 0, 1
    assert p[tau] == p[y]
    ctx = DpdrContext(phi=0.3)
    got = loss_grad_wrt_scores(LossKind.dpdr(2), s, y, ctx)
    # sign = 0 kills the denominator term, leaving J^T (e_tau - e_y) / (phi + zeta)
    v = np.zeros(4)
    v[tau], v[y] = 1.0, -1.0
    jac = np.array([[p[i] * ((i == j) - p[j]) for j in range(4)] for i in range(4)])
    expected = (v @ jac) / (ctx.phi + ctx.zeta)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_dpdr_denominator_stays_positive_small_sweep():
    rng = SeededRng(24, stream=1)
    for _ in range(200):
        s = np.asarray(rng.normal(0.0, 2.0, size=(6, 5)))
        p = softmax_batch(s)
        y = np.asarray(SeededRng(25, stream=1).integers(0, 5, size=6))
        for n in (2, 3, 5):
            phi = dpdr_phi(p, y, n)
            ctx = DpdrContext(phi=phi)
            tau = tau_batch(p, y)
            rows = np.arange(6)
            sorted_p = -np.sort(-p, axis=1)
            gap = p[rows, tau] - sorted_p[:, n - 1]
            den = phi - np.sign(p[rows, tau] - p[rows, y]) * (gap - phi) + ctx.zeta
            assert np.all(den >= ctx.zeta)
            assert np.all(np.isfinite(dpdr_loss_batch(p, y, n, ctx)))


def test_directional_consistency_of_dpdr_gradient():
    # frozen-context FD gradient in probability space must correlate
    # positively with the direction that widens p_tau - p_y
    rng = SeededRng(26, stream=1)
    checked = 0
    while checked < 100:
        p = np.asarray(rng.dirichlet(np.ones(5)))
        if p.min() < 1e-3 or np.min(np.diff(np.sort(p))) < 1e-3:
            continue
        y = int(np.argsort(-p)[1]) if checked % 2 else int(np.argmax(p))
        info = label_info(p, y)
        tau = info.tau
        n = 2 + checked % 4
        gap = float(p[tau] - info.sorted_p[n - 1])
        ctx = DpdrContext(phi=max(gap, 0.0) + 0.25)
        idx_n = info.n_index(n)
        sgn = float(np.sign(p[tau] - p[y]))

        def frozen(q):
            num = q[tau] - q[y]
            den = ctx.phi - sgn * (q[tau] - q[idx_n] - ctx.phi) + ctx.zeta
            return float(num / den)

        g = _central_diff(frozen, p, h=1e-7)
        assert g[tau] - g[y] > 0
        checked += 1


def test_tie_counter_flags_exact_rank_ties():
    tie_counter.reset()
    s = np.array([[1.0, 1.0, 0.0, -0.5]])
    p = softmax_batch(s)
    assert p[0, 0] == p[0, 1]
    ctx = DpdrContext(phi=dpdr_phi(p, np.array([2]), 2))
    loss_grad_scores_batch(LossKind.dpdr(2), s, np.array([2]), ctx)
    assert tie_counter.count >= 1
    tie_counter.reset()
    assert tie_counter.count == 0


def test_batch_and_single_apis_agree():
    rng = SeededRng(27, stream=1)
    s = np.asarray(rng.normal(0.0, 1.0, size=(10, 6)))
    y = np.asarray(SeededRng(28, stream=1).integers(0, 6, size=10))
    p = softmax_batch(s)
    for kind in (LossKind.ce(), LossKind.nprob(), LossKind.margin(), LossKind.dpdr(3)):
        ctx = DpdrContext(phi=dpdr_phi(p, y, 3)) if kind.name == "dpdr" else None
        batch = loss_grad_scores_batch(kind, s, y, ctx)
        values = _batch_values(kind, s, y, ctx)
        for i in range(10):
            single = loss_grad_wrt_scores(kind, s[i], int(y[i]), ctx)
            scale = max(1.0, float(np.max(np.abs(batch[i]))))
            assert np.max(np.abs(batch[i] - single)) <= 1e-12 * scale
            assert loss_value(kind, s[i], int(y[i]), ctx) == pytest.approx(
                float(values[i]), rel=1e-12, abs=1e-12
            )


def _batch_values(kind, s, y, ctx):
    from sdmax.losses import loss_values_batch

    return loss_values_batch(kind, s, y, ctx)


def test_dpdr_needs_context():
    with pytest.raises(ContractViolationError):
        loss_grad_wrt_scores(LossKind.dpdr(2), np.zeros(4), 0, None)
