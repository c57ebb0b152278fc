import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idat.distill import DistillPlan, loss_ce, loss_cos, loss_kl, loss_mae, loss_mse, loss_total
from idat.errors import ConfigError, DataError, DimensionError
from idat.tensor import Tape, Tensor, log_softmax, precision, softmax, sum_

mpmath.mp.dps = 30


def pair(seed, b=3, k=5, s=2.0):
    g = np.random.default_rng(seed)
    return g.normal(size=(b, k)) * s, g.normal(size=(b, k)) * s


logits = st.integers(0, 2**32 - 1).map(pair)


# --- cross-entropy -------------------------------------------------------


def test_ce_uniform_is_log_k():
    assert abs(loss_ce(Tensor(np.zeros((3, 4))), [0, 1, 3]).item() - math.log(4)) <= 1e-6


def test_ce_log_sum_exp_oracle():
    oracle = float(mpmath.log(sum(mpmath.e**k for k in (1, 2, 3))) - 3)
    assert abs(oracle - 0.40761) < 1e-5
    assert abs(loss_ce(Tensor([[1.0, 2.0, 3.0]]), [2]).item() - oracle) <= 1e-6


def test_ce_vanishes_with_margin():
    vals = [loss_ce(Tensor([[m, 0.0, 0.0]]), [0]).item() for m in (1.0, 5.0, 20.0, 80.0)]
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] < 1e-30


def test_ce_bad_label():
    with pytest.raises(DataError, match="index 1"):
        loss_ce(Tensor(np.zeros((2, 3))), [0, 3])


# --- regression-style losses --------------------------------------------


def test_simple_arithmetic():
    a, b = Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])
    assert loss_mse(a, b).item() == 1.0
    assert loss_mae(a, b).item() == 1.0
    assert loss_cos(a, b).item() == 1.0


@settings(max_examples=30, deadline=None, derandomize=True)
@given(logits)
def test_losses_match_loop_oracles(ys_yt):
    ys, yt = ys_yt
    b, k = ys.shape
    mse = sum((ys[i, j] - yt[i, j]) ** 2 for i in range(b) for j in range(k)) / (b * k)
    mae = sum(abs(ys[i, j] - yt[i, j]) for i in range(b) for j in range(k)) / (b * k)
    cos = 0.0
    for i in range(b):
        dot = sum(ys[i, j] * yt[i, j] for j in range(k))
        cos += 1 - dot / (math.sqrt(sum(v * v for v in ys[i])) * math.sqrt(sum(v * v for v in yt[i])))
    cos /= b
    with precision(np.float64):
        s, t = Tensor(ys), Tensor(yt)
        assert abs(loss_mse(s, t).item() - mse) <= 1e-6
        assert abs(loss_mae(s, t).item() - mae) <= 1e-6
        assert abs(loss_cos(s, t).item() - cos) <= 1e-6


@settings(max_examples=30, deadline=None, derandomize=True)
@given(logits)
def test_symmetry(ys_yt):
    a, b = (Tensor(v) for v in ys_yt)
    for fn in (loss_mse, loss_mae, loss_cos):
        assert fn(a, b).item() == pytest.approx(fn(b, a).item(), rel=1e-6, abs=1e-7)


def test_kl_is_not_symmetric():
    a, b = Tensor([[0.0, 0.0]]), Tensor([[math.log(2), 0.0]])
    assert abs(loss_kl(a, b, 1.0).item() - loss_kl(b, a, 1.0).item()) > 1e-3


@settings(max_examples=30, deadline=None, derandomize=True)
@given(logits, st.floats(0.1, 10), st.floats(0.1, 10))
def test_cos_scale_invariance(ys_yt, alpha, beta):
    ys, yt = ys_yt
    base = loss_cos(Tensor(ys), Tensor(yt)).item()
    assert loss_cos(Tensor(alpha * ys), Tensor(beta * yt)).item() == pytest.approx(base, abs=2e-6)


def test_cos_zero_row():
    with pytest.raises(DataError):
        loss_cos(Tensor([[1.0, 2.0], [0.0, 0.0]]), Tensor(np.ones((2, 2))))


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        loss_mse(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


# --- KL ------------------------------------------------------------------


def test_kl_high_precision_oracle():
    oracle = float(mpmath.mpf("0.5") * mpmath.log(mpmath.mpf(9) / 8))
    assert abs(oracle - 0.05889) < 1e-5
    out = loss_kl(Tensor([[0.0, 0.0]]), Tensor([[math.log(2), 0.0]]), 1.0).item()
    assert abs(out - oracle) <= 1e-6


def test_kl_default_form_weights_by_untempered_student():
    ys, yt = pair(3, b=2, k=4)
    T = 4.0

    def lsm(v):
        v = v - v.max(-1, keepdims=True)
        return v - np.log(np.exp(v).sum(-1, keepdims=True))

    w = np.exp(lsm(ys))
    oracle = (w * (lsm(ys / T) - lsm(yt / T))).sum(-1).mean()
    std = T * T * (np.exp(lsm(yt / T)) * (lsm(yt / T) - lsm(ys / T))).sum(-1).mean()
    with precision(np.float64):
        assert loss_kl(Tensor(ys), Tensor(yt), T).item() == pytest.approx(oracle, rel=1e-10)
        assert loss_kl(Tensor(ys), Tensor(yt), T, "standard").item() == pytest.approx(std, rel=1e-10)


@settings(max_examples=40, deadline=None, derandomize=True)
@given(logits, st.sampled_from([0.5, 1.0, 5.0, 20.0]))
def test_kl_self_is_zero(ys_yt, T):
    y = Tensor(ys_yt[0])
    assert abs(loss_kl(y, y, T).item()) <= 1e-7
    assert abs(loss_kl(y, y, T, "standard").item()) <= 1e-7


def test_kl_nonnegative_at_unit_temperature():
    g = np.random.default_rng(0)
    ys = Tensor(g.normal(size=(10_000, 6)) * 3)
    yt = Tensor(g.normal(size=(10_000, 6)) * 3)
    rows = sum_(softmax(ys) * (log_softmax(ys) - log_softmax(yt)), axis=1).data
    assert rows.min() >= -1e-7


def test_kl_bad_temperature():
    with pytest.raises(ConfigError):
        loss_kl(Tensor([[0.0, 1.0]]), Tensor([[1.0, 0.0]]), 0.0)
    with pytest.raises(ConfigError):
        DistillPlan(loss_kind="kl", temperature=-1.0)


# --- combined objective --------------------------------------------------


def test_total_none_is_sum_of_ce():
    ys, yt = pair(1)
    labels = [0, 4, 2]
    total, parts = loss_total(Tensor(ys), Tensor(yt), labels, DistillPlan(loss_kind="none"))
    ce = loss_ce(Tensor(ys), labels) + loss_ce(Tensor(yt), labels)
    assert total.item() == ce.item()
    assert parts.distill is None


@pytest.mark.parametrize("kind", ["kl", "mse", "mae", "cos"])
def test_zero_lambda_matches_none_bitwise(kind):
    ys, yt = pair(2)
    labels = [1, 1, 3]
    a, _ = loss_total(Tensor(ys), Tensor(yt), labels, DistillPlan(loss_kind=kind, lam=0.0))
    b, _ = loss_total(Tensor(ys), Tensor(yt), labels, DistillPlan(loss_kind="none"))
    assert a.data.tobytes() == b.data.tobytes()


@settings(max_examples=30, deadline=None, derandomize=True)
@given(logits, st.sampled_from(["kl", "mse", "mae", "cos"]), st.floats(0, 2))
def test_parts_recombine_to_total(ys_yt, kind, lam):
    ys, yt = ys_yt
    labels = [0, 1, 2]
    _, p = loss_total(Tensor(ys), Tensor(yt), labels, DistillPlan(loss_kind=kind, lam=lam))
    assert abs(p.ce_s + p.ce_t + lam * p.distill - p.total) <= 1e-6 * max(1.0, abs(p.total))


def test_no_teacher_requires_none():
    ys = Tensor(np.zeros((2, 3)))
    with pytest.raises(ConfigError):
        loss_total(ys, None, [0, 1], DistillPlan())
    total, p = loss_total(ys, None, [0, 1], DistillPlan(loss_kind="none"))
    assert p.ce_t is None and p.total == total.item()


@pytest.mark.parametrize("detach", [False, True])
def test_distillation_gradient_reaches_teacher_unless_detached(detach):
    ys, yt = pair(4)
    s, t = Tensor(ys, requires_grad=True), Tensor(yt, requires_grad=True)
    plan = DistillPlan(loss_kind="mse", lam=1.0, detach_teacher=detach)
    with Tape() as tape:
        total, _ = loss_total(s, t, [0, 1, 2], plan)
    tape.backward(total)
    with Tape() as tape2:
        ce = loss_ce(t, [0, 1, 2])
    ce_only = t.grad.copy()
    tape2.backward(ce)
    assert np.allclose(ce_only, t.grad, atol=1e-7) == detach
