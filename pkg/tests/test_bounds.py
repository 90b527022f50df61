import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marginnet.bounds import (BettiBoundParams, HypothesisError, MarginBoundParams, PfaffianComplexity,
                              RaBoundParams, UnsupportedActivation, betti_bound_exact, betti_log_bound,
                              log_ra_upper_bound, margin_bound, margin_bound_terms, pfaffian_for_activation,
                              ra_upper_bound)
from marginnet.margin import MarginCurve

mpmath.mp.dps = 40

# high-precision reference values, evaluated once with mpmath and frozen
RA_EXAMPLE = 0.4192588295872819785964950013293460063213
BETTI_EXAMPLE = 15.27472818975612900086462068888131119279
MARGIN_EXAMPLE = 0.2179065612689831725484393490489879091935
MARGIN_TERMS = (0.1, 0.096, 0.008325546111576977563531646448952010476305797,
                0.01358101515740619498490770260003589871719131)

TANH = PfaffianComplexity(2, 1, 1)


def ra(**kw):
    base = dict(c=1.0, M=1.0, d=3, m=100, p=2, L_phi=1.0, A=1.0, L=2)
    base.update(kw)
    return RaBoundParams(**base)


def rel(a, b):
    return abs(a - b) / abs(b)


class TestRaBound:
    def test_example(self):
        assert rel(ra_upper_bound(ra()), RA_EXAMPLE) < 1e-9

    def test_example_matches_hand_form(self):
        assert rel(ra_upper_bound(ra()), 4 * math.sqrt(math.log(3) / 100)) < 1e-15

    def test_doubling_m(self):
        assert rel(ra_upper_bound(ra(m=200)), ra_upper_bound(ra()) / math.sqrt(2)) < 1e-14

    def test_unit_product_independent_of_depth(self):
        values = [ra_upper_bound(ra(p=1, A=1.0, L=L)) for L in range(1, 8)]
        assert max(values) == min(values)

    def test_small_d(self):
        with pytest.raises(ValueError):
            ra_upper_bound(ra(d=1))

    @pytest.mark.parametrize("field", ["M", "A", "c", "L_phi"])
    def test_nonpositive(self, field):
        with pytest.raises(ValueError):
            ra_upper_bound(ra(**{field: 0.0}))

    def test_log_form(self):
        assert rel(log_ra_upper_bound(ra(A=1.7, L=5)), math.log(ra_upper_bound(ra(A=1.7, L=5)))) < 1e-13

    def test_log_form_survives_overflow(self):
        p = ra(A=1e10, L=40)
        with pytest.raises(OverflowError):
            ra_upper_bound(p)
        assert math.isfinite(log_ra_upper_bound(p))

    def test_layerwise_variant(self):
        # c*A*M*sqrt(ln d/m)*(2pL_phi*A)^(L-1) at A=1, p=2, L=2 gives 4x the base, same as the headline form
        assert rel(ra_upper_bound(ra(), "layerwise"), RA_EXAMPLE) < 1e-9
        assert rel(ra_upper_bound(ra(L=3), "layerwise"), 2 * ra_upper_bound(ra(L=3))) < 1e-14
        with pytest.raises(ValueError):
            ra_upper_bound(ra(), "other")

    @settings(max_examples=100)
    @given(c=st.floats(0.1, 10), M=st.floats(0.1, 10), d=st.integers(2, 5000), m=st.integers(1, 10**6),
           p=st.integers(1, 9), L_phi=st.floats(0.1, 2), A=st.floats(0.1, 3), L=st.integers(1, 8))
    def test_mpmath_oracle(self, c, M, d, m, p, L_phi, A, L):
        mp = mpmath.mpf
        expected = mp(c) * mp(M) * mpmath.sqrt(mpmath.log(d) / m) * (p * mp(L_phi) * mp(A)) ** L
        value = ra_upper_bound(RaBoundParams(M=M, d=d, m=m, A=A, L=L, p=p, L_phi=L_phi, c=c))
        assert rel(value, float(expected)) < 1e-12

    @settings(max_examples=100)
    @given(c=st.floats(0.1, 10), M=st.floats(0.1, 10), d=st.integers(2, 5000), m=st.integers(1, 10**6),
           p=st.integers(1, 4), A=st.floats(0.1, 3), L=st.integers(1, 8), factor=st.floats(1.01, 3))
    def test_monotone(self, c, M, d, m, p, A, L, factor):
        base = RaBoundParams(M=M, d=d, m=m, A=A, L=L, p=p, c=c)
        v = ra_upper_bound(base)
        assert ra_upper_bound(RaBoundParams(M=M, d=d, m=m, A=A * factor, L=L, p=p, c=c)) > v
        assert ra_upper_bound(RaBoundParams(M=M * factor, d=d, m=m, A=A, L=L, p=p, c=c)) > v
        assert ra_upper_bound(RaBoundParams(M=M, d=d, m=m, A=A, L=L, p=p, c=c * factor)) > v
        assert ra_upper_bound(RaBoundParams(M=M, d=d, m=m, A=A, L=L, p=p + 1, c=c)) > v
        deeper = ra_upper_bound(RaBoundParams(M=M, d=d, m=m, A=A, L=L + 1, p=p, c=c))
        if p * A > 1:
            assert deeper > v
        elif p * A < 1:
            assert deeper < v


class TestPfaffian:
    def test_table(self):
        assert pfaffian_for_activation("arctan") == PfaffianComplexity(3, 1, 2)
        assert pfaffian_for_activation("tanh") == PfaffianComplexity(2, 1, 1)

    @pytest.mark.parametrize("name", ["relu", "sigmoid", "identity"])
    def test_unsupported(self, name):
        with pytest.raises(UnsupportedActivation):
            pfaffian_for_activation(name)

    def test_invalid_triple(self):
        with pytest.raises(ValueError):
            PfaffianComplexity(0, 1, 1)


class TestBettiBound:
    def test_example(self):
        value = betti_log_bound(BettiBoundParams(K=2, d=2, h=3, L=2, pf=TANH))
        assert rel(value, BETTI_EXAMPLE) < 1e-9
        assert betti_bound_exact(BettiBoundParams(K=2, d=2, h=3, L=2, pf=TANH)) == 8 * 14**5

    def test_two_classes_drop_the_class_term(self):
        p2 = betti_log_bound(BettiBoundParams(K=2, d=2, h=3, L=2, pf=TANH))
        p3 = betti_log_bound(BettiBoundParams(K=3, d=2, h=3, L=2, pf=TANH))
        assert rel(p3 - p2, 3 * math.log(2)) < 1e-12

    def test_hypothesis_violation(self):
        with pytest.raises(HypothesisError):
            betti_log_bound(BettiBoundParams(K=2, d=4, h=3, L=2, pf=TANH))
        # arctan has eta=2, so the same d is admissible
        betti_log_bound(BettiBoundParams(K=2, d=4, h=3, L=2, pf=PfaffianComplexity(3, 1, 2)))

    @pytest.mark.parametrize("kw", [dict(K=1), dict(L=1), dict(h=0)])
    def test_invalid(self, kw):
        base = dict(K=2, d=1, h=3, L=2, pf=TANH)
        base.update(kw)
        with pytest.raises(ValueError):
            betti_log_bound(BettiBoundParams(**base))

    @settings(max_examples=100)
    @given(K=st.integers(2, 10), h=st.integers(1, 200), L=st.integers(2, 20), d_frac=st.floats(0, 1),
           act=st.sampled_from(["tanh", "arctan"]))
    def test_monotone_in_depth_and_width(self, K, h, L, d_frac, act):
        pf = pfaffian_for_activation(act)
        d = max(1, int(d_frac * h * pf.eta))
        v = betti_log_bound(BettiBoundParams(K, d, h, L, pf))
        assert betti_log_bound(BettiBoundParams(K, d, h, L + 1, pf)) > v
        assert betti_log_bound(BettiBoundParams(K, d, h + 1, L, pf)) > v

    @settings(max_examples=100)
    @given(K=st.integers(2, 5), h=st.integers(1, 4), L=st.integers(2, 5), d=st.integers(1, 8),
           act=st.sampled_from(["tanh", "arctan"]))
    def test_log_matches_exact(self, K, h, L, d, act):
        pf = pfaffian_for_activation(act)
        params = BettiBoundParams(K, d, h, L, pf)
        try:
            exact = betti_bound_exact(params)
        except HypothesisError:
            return
        if exact < 10**15:
            assert rel(math.exp(betti_log_bound(params)), exact) < 1e-12


class TestMarginBound:
    def test_example(self):
        curve = MarginCurve((0.5,), (0.1,))
        value, gamma = margin_bound(MarginBoundParams(0.05, 10000, 2, 0.001, curve))
        assert rel(value, MARGIN_EXAMPLE) < 1e-9
        assert gamma == 0.5

    def test_example_terms(self):
        terms = margin_bound_terms(0.5, 0.1, 0.001, 2, 10000, 0.05)
        for got, want in zip(terms, MARGIN_TERMS):
            assert rel(got, want) < 1e-9

    def test_confidence_terms_only(self):
        curve = MarginCurve((0.25,), (0.0,))
        value, _ = margin_bound(MarginBoundParams(0.1, 500, 3, 0.0, curve))
        expected = math.sqrt(math.log(math.log2(8)) / 500) + math.sqrt(math.log(20) / 1000)
        assert rel(value, expected) < 1e-14

    def test_dominated_point(self):
        # larger gamma shrinks the capacity and log-log terms; equal err so gamma=0.5 dominates
        curve = MarginCurve((0.25, 0.5), (0.2, 0.2))
        assert margin_bound(MarginBoundParams(0.05, 1000, 2, 0.01, curve))[1] == 0.5
        curve = MarginCurve((0.25, 0.5), (0.0, 0.9))
        assert margin_bound(MarginBoundParams(0.05, 1000, 2, 0.0, curve))[1] == 0.25

    def test_gamma_one_rejected(self):
        with pytest.raises(ValueError):
            margin_bound(MarginBoundParams(0.05, 100, 2, 0.0, MarginCurve((0.5, 1.0), (0.0, 0.0))))

    @pytest.mark.parametrize("kw", [dict(delta=0.0), dict(delta=1.0), dict(m=0), dict(K=1), dict(R=-1.0)])
    def test_invalid(self, kw):
        base = dict(delta=0.05, m=100, K=2, R=0.0, curve=MarginCurve((0.5,), (0.0,)))
        base.update(kw)
        with pytest.raises(ValueError):
            margin_bound(MarginBoundParams(**base))

    @settings(max_examples=100)
    @given(errors=st.lists(st.floats(0, 1), min_size=19, max_size=19), R=st.floats(0, 1),
           K=st.integers(2, 10), m=st.integers(1, 10**6), delta=st.floats(1e-6, 0.99))
    def test_dominates_empirical_term(self, errors, R, K, m, delta):
        errors = np.maximum.accumulate(errors)
        gammas = tuple(round(0.05 * i, 2) for i in range(1, 20))
        curve = MarginCurve(gammas, tuple(errors))
        value, gamma = margin_bound(MarginBoundParams(delta, m, K, R, curve))
        assert value >= curve.errors[gammas.index(gamma)]
        pointwise = [sum(margin_bound_terms(g, e, R, K, m, delta)) for g, e in zip(gammas, curve.errors)]
        assert value == min(pointwise)
        assert gamma == gammas[pointwise.index(value)]
