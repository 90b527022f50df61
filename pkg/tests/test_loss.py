import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from marginnet.loss import (LossKind, batch_loss_and_grad, competitor, cross_entropy, loss_and_grad, loss_value,
                            penalty_c1, penalty_c2, softmax)

P = np.array([0.5, 0.3, 0.2])


def fd_grad(kind, f, y, step=1e-5):
    g = np.zeros_like(f)
    for i in range(len(f)):
        fp, fm = f.copy(), f.copy()
        fp[i] += step
        fm[i] -= step
        g[i] = (loss_value(kind, fp, y) - loss_value(kind, fm, y)) / (2 * step)
    return g


def mp_loss(kind, f, y):
    """The same losses evaluated independently at the ambient mpmath precision."""
    f = [mpmath.mpf(v) for v in f]
    top = max(f)
    e = [mpmath.exp(v - top) for v in f]
    p = [v / sum(e) for v in e]
    ce = -mpmath.log(p[y - 1])
    v = f if kind.raw else p
    gaps = [v[y - 1] - v[k] for k in range(len(v)) if k != y - 1]
    if kind.name == "c1":
        return ce + kind.lam * (1 - min(gaps)) ** 2
    if kind.name == "c2":
        return ce + kind.lam * sum((1 - g) ** 2 for g in gaps) / len(gaps)
    return ce


def mp_grad(kind, f, y):
    with mpmath.workdps(40):
        out = []
        for i in range(len(f)):
            def along(t, i=i):
                g = [mpmath.mpf(v) for v in f]
                g[i] = t
                return mp_loss(kind, g, y)
            out.append(float(mpmath.diff(along, mpmath.mpf(f[i]))))
    return np.array(out)


def rel_err(a, n, floor=1e-7):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-16)

    def test_shift_invariance(self):
        f = np.array([0.2, -1.0, 3.0])
        np.testing.assert_allclose(softmax(f + 17.0), softmax(f), rtol=1e-14)

    def test_ln2(self):
        # exp(ln 2) / (exp(ln 2) + 1) = 2/3
        np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], rtol=1e-15)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
    def test_normalized(self, f):
        assert abs(softmax(f).sum() - 1.0) <= 1e-12

    def test_batch(self):
        f = np.array([[0.0, 0.0], [math.log(2), 0.0]])
        np.testing.assert_allclose(softmax(f), [[0.5, 0.5], [2 / 3, 1 / 3]], rtol=1e-15)


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy([1 / 3] * 3, 2) == pytest.approx(math.log(3), rel=1e-15)

    def test_confident(self):
        assert cross_entropy([1 - 1e-12, 1e-12], 1) == pytest.approx(0.0, abs=1e-11)

    def test_value(self):
        assert cross_entropy(P, 1) == pytest.approx(0.6931471805599453, rel=1e-15)

    def test_clamp(self):
        assert cross_entropy([1.0, 0.0], 2) == pytest.approx(-math.log(1e-300))

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(P, 4)
        with pytest.raises(ValueError):
            cross_entropy(P, 0)


class TestPenalties:
    def test_c1_value(self):
        assert penalty_c1(P, 1, 1.0) == pytest.approx(0.64, rel=1e-14)

    def test_c1_zero_lambda(self):
        assert penalty_c1(P, 1, 0.0) == 0.0

    def test_c1_symmetric(self):
        assert penalty_c1([0.5, 0.5], 1, 2.0) == 2.0

    def test_c2_value(self):
        # (1 - 0.2)^2 + (1 - 0.3)^2 = 0.64 + 0.49, averaged over K-1 = 2
        assert penalty_c2(P, 1, 1.0) == pytest.approx(0.565, rel=1e-14)

    def test_c2_zero_lambda(self):
        assert penalty_c2(P, 1, 0.0) == 0.0

    @given(st.floats(0.01, 0.99), st.integers(1, 2), st.floats(0, 10))
    def test_k2_degeneracy(self, a, y, lam):
        p = [a, 1 - a]
        assert penalty_c2(p, y, lam) == pytest.approx(penalty_c1(p, y, lam), rel=1e-14, abs=1e-300)

    def test_competitor_ties_lowest(self):
        assert competitor([0.2, 0.4, 0.4], 1) == 1
        assert competitor([0.4, 0.2, 0.4], 2) == 0


probs_strategy = st.integers(2, 10).flatmap(
    lambda k: st.tuples(st.lists(st.floats(-5, 5), min_size=k, max_size=k), st.integers(1, k)))


@settings(max_examples=200)
@given(probs_strategy, st.floats(0, 10))
def test_penalty_sandwich(case, lam):
    f, y = case
    p = softmax(f)
    k = len(f)
    c1, c2 = penalty_c1(p, y, lam), penalty_c2(p, y, lam)
    assert c2 <= c1 * (1 + 1e-12) + 1e-15
    assert c1 <= (k - 1) * c2 * (1 + 1e-12) + 1e-15


@settings(max_examples=200)
@given(probs_strategy, st.floats(0, 10), st.sampled_from(["c1", "c2"]))
def test_nonnegative_and_dominates_ce(case, lam, name):
    f, y = case
    kind = LossKind(name, lam)
    value, _ = loss_and_grad(kind, np.array(f), y)
    assert value.base_ce >= 0 and value.penalty >= 0
    assert value.total >= value.base_ce
    assert value.total == value.base_ce + value.penalty


class TestLossAndGrad:
    def test_ce_uniform_grad(self):
        _, g = loss_and_grad(LossKind("c"), np.zeros(2), 1)
        np.testing.assert_allclose(g, [-0.5, 0.5], rtol=1e-15)

    @pytest.mark.parametrize("name", ["c1", "c2"])
    def test_zero_lambda_reduces(self, name, rng):
        f = rng.normal(size=(7, 4))
        y = rng.integers(1, 5, size=7)
        v0, g0 = batch_loss_and_grad(LossKind("c"), f, y)
        v1, g1 = batch_loss_and_grad(LossKind(name, 0.0), f, y)
        assert v0 == v1
        np.testing.assert_array_equal(g0, g1)

    def test_c2_finite_differences(self, rng):
        f = rng.normal(size=4)
        kind = LossKind("c2", 0.8)
        _, g = loss_and_grad(kind, f, 3)
        assert rel_err(g, fd_grad(kind, f, 3)) < 1e-7

    @pytest.mark.parametrize("kind", [LossKind("c"), LossKind("c1", 3.0), LossKind("c2", 0.7)])
    def test_high_precision_oracle(self, kind, rng):
        f = rng.normal(scale=3.0, size=6)
        with mpmath.workdps(40):
            reference = float(mp_loss(kind, f, 4))
        assert loss_value(kind, f, 4) == pytest.approx(reference, rel=1e-13)
        assert rel_err(loss_and_grad(kind, f, 4)[1], mp_grad(kind, f, 4)) < 1e-10

    def test_value_matches_scalar_functions(self, rng):
        f = rng.normal(size=5)
        for kind in (LossKind("c"), LossKind("c1", 0.3), LossKind("c2", 2.0)):
            v, _ = loss_and_grad(kind, f, 2)
            assert v.total == pytest.approx(loss_value(kind, f, 2), rel=1e-14)

    def test_batch_mean(self, rng):
        f = rng.normal(size=(3, 3))
        y = [1, 2, 3]
        kind = LossKind("c1", 0.5)
        v, g = batch_loss_and_grad(kind, f, y)
        singles = [loss_and_grad(kind, f[i], y[i]) for i in range(3)]
        assert v.total == pytest.approx(np.mean([s[0].total for s in singles]), rel=1e-14)
        np.testing.assert_allclose(g, np.array([s[1] for s in singles]) / 3, rtol=1e-13)

    def test_raw_mode(self, rng):
        f = rng.normal(size=3)
        kind = LossKind("c1", 0.5, raw=True)
        v, g = loss_and_grad(kind, f, 1)
        rho = f[0] - max(f[1], f[2])
        assert v.penalty == pytest.approx(0.5 * (1 - rho) ** 2, rel=1e-14)
        assert rel_err(g, fd_grad(kind, f, 1)) < 1e-7
        assert rel_err(g, mp_grad(kind, f, 1)) < 1e-12


@settings(max_examples=150, deadline=None)
@given(k=st.sampled_from([2, 3, 10]), name=st.sampled_from(["c", "c1", "c2"]), seed=st.integers(0, 2**32 - 1),
       lam=st.floats(0.01, 5))
def test_gradient_consistency(k, name, seed, lam):
    r = np.random.default_rng(seed)
    f = r.normal(scale=2.0, size=k)
    y = int(r.integers(1, k + 1))
    kind = LossKind(name, 0.0 if name == "c" else lam)
    if name == "c1":
        p = np.sort(np.delete(softmax(f), y - 1))
        assume(k == 2 or p[-1] - p[-2] > 1e-4)  # away from competitor ties
    _, g = loss_and_grad(kind, f, y)
    assert rel_err(g, mp_grad(kind, f, y)) < 1e-7


class TestParse:
    @pytest.mark.parametrize("text,kind", [("c", LossKind("c")), ("c1:0.5", LossKind("c1", 0.5)),
                                           ("C2:10", LossKind("c2", 10.0)), ("c1:1:raw", LossKind("c1", 1.0, True))])
    def test_parse(self, text, kind):
        assert LossKind.parse(text) == kind

    @pytest.mark.parametrize("text", ["c3", "c1", "c1:x", "c:1", "c2:-1"])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            LossKind.parse(text)

    def test_round_trip(self):
        for s in ("c", "c1:0.1", "c2:10"):
            assert str(LossKind.parse(s)) == s
