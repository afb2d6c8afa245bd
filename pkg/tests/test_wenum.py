import csv
import io
import itertools
import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from oracles import even_array_count, lifted_spectrum_uncoupled, regular_r
from scconnect.protograph import Protograph, build_chain, build_loop, build_uncoupled
from scconnect.wenum import (
    WeightProblem, check_enumerator_rate, curve_csv, entropy, exact_small_lift_enumerator,
    growth_rate, min_distance_growth, parity_patterns,
)


def test_even_array_count_brute_force():
    for M, ws in ((3, (1, 1, 2)), (4, (2, 1, 1, 0)), (3, (3, 3))):
        d = len(ws)
        n = 0
        for bits in itertools.product((0, 1), repeat=M * d):
            a = np.array(bits).reshape(M, d)
            n += bool(np.all(a.sum(0) == ws) and np.all(a.sum(1) % 2 == 0))
        assert n == even_array_count(M, ws)


def test_parity_patterns():
    pat = parity_patterns(4, 0)
    assert len(pat) == 8 and np.all(pat.sum(1) % 2 == 0)
    assert np.all(parity_patterns(3, 1).sum(1) % 2 == 1)


def test_trivial_check_values():
    assert check_enumerator_rate([0.0, 0.0, 0.0]) == 0.0
    assert check_enumerator_rate([1.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert check_enumerator_rate([1.0, 0.0, 0.0]) == -math.inf
    for d in (0.01, 0.2, 0.5, 0.8):
        assert check_enumerator_rate([d, d]) == pytest.approx(entropy(d), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=2, max_size=7), st.randoms())
def test_check_rate_permutation_symmetry(deltas, rnd):
    shuffled = list(deltas)
    rnd.shuffle(shuffled)
    assert check_enumerator_rate(shuffled) == pytest.approx(check_enumerator_rate(deltas), abs=1e-9)


@pytest.mark.parametrize("fracs", [(0.2, 0.3, 0.5), (0.1, 0.1, 0.2, 0.4), (0.25, 0.25),
                                   (0.1, 0.2, 0.3, 0.4, 0.5, 0.5), (0.15, 0.25, 0.35)])
def test_check_rate_against_exact_counts(fracs):
    # ln A_M - M a_c = -beta ln M + c + O(1/M) with beta half the rank of the
    # active patterns; a second difference over M, 2M, 4M cancels both beta and c
    # and leaves M times any error in a_c
    a = check_enumerator_rate(list(fracs))
    s = []
    for M in (120, 240, 480):
        A = even_array_count(M, [round(f * M) for f in fracs])
        s.append(math.log(A) - M * a)
    assert abs((s[2] - s[1]) - (s[1] - s[0])) < 0.02
    beta = -(s[2] - s[1]) / math.log(2)
    assert abs(2 * beta - round(2 * beta)) < 0.05


def test_two_variable_check_finite_count():
    # repetition through a degree-2 check: C(M, w) arrays
    for M, w in ((10, 3), (40, 10)):
        assert even_array_count(M, [w, w]) == comb(M, w)


def test_objective_gradient_and_hessian():
    prob = WeightProblem(build_chain(3, 6, 5))
    rng = np.random.default_rng(0)
    theta = rng.uniform(0.05, 0.4, prob.num_groups)
    f, g, h = prob.evaluate(theta, hessian=True)
    eps = 1e-5
    for i in range(prob.num_groups):
        e = np.zeros(prob.num_groups)
        e[i] = eps
        fp, gp, _ = prob.evaluate(theta + e)
        fm, gm, _ = prob.evaluate(theta - e)
        assert (fp - fm) / (2 * eps) == pytest.approx(g[i], rel=1e-5, abs=1e-6)
        assert np.allclose((gp - gm) / (2 * eps), h[:, i], rtol=1e-4, atol=1e-4)


def test_uncoupled_matches_one_dimensional_oracle():
    # by symmetry the optimum of a regular ensemble puts equal weight everywhere
    p = build_uncoupled(3, 6)
    deltas = [0.005, 0.02, 0.05, 0.1, 0.3]
    curve = growth_rate(p, deltas)
    for s in curve.samples:
        assert s.r_bits == pytest.approx(regular_r(s.delta, 3, 6) / math.log(2), abs=1e-7)
    oracle = brentq(lambda d: regular_r(d, 3, 6), 1e-3, 0.2, xtol=1e-12)
    res = min_distance_growth(p, tol=1e-7)
    assert res.asymptotically_good
    assert res.delta_min == pytest.approx(oracle, abs=2e-6)
    assert oracle == pytest.approx(0.02273, abs=1e-5)


def test_curve_basics_and_csv():
    p = build_chain(3, 6, 6)
    curve = growth_rate(p, [0.0, 0.001, 0.01, 0.1, 0.3])
    assert curve.samples[0].r_bits == 0.0
    assert np.all(np.isfinite(curve.r))
    assert curve.r[1] < 0 < curve.r[-1]
    text = curve_csv(curve)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["delta", "r_delta_bits", "converged"]
    assert len(rows) == 6
    with pytest.raises(ValueError):
        growth_rate(p, [0.1, 1.5])


def test_seed_agreement():
    p = build_loop(3, 6, 12)
    deltas = [0.005, 0.0109, 0.03, 0.1]
    a = growth_rate(p, deltas, seed=0).r
    b = growth_rate(p, deltas, seed=123).r
    assert np.max(np.abs(a - b)) < 1e-4


def test_exact_enumerator_m1_is_base_null_space():
    p = build_chain(3, 6, 3)
    b = p.base_matrix % 2
    n = p.num_vars
    want = np.zeros(n + 1)
    for bits in itertools.product((0, 1), repeat=n):
        x = np.array(bits)
        if not np.any(b @ x % 2):
            want[x.sum()] += 1
    assert np.array_equal(exact_small_lift_enumerator(p, 1), want)


def test_exact_enumerator_degree_two_check():
    p = Protograph("rep", 1, 2, ((0, 0, 1), (0, 1, 1)))
    # every lift is a pair of 2x2 permutations, so x2 is a permutation of x1
    assert exact_small_lift_enumerator(p, 2).tolist() == [1, 0, 2, 0, 1]


def test_exact_enumerator_uncoupled_36():
    M = 3
    spec = exact_small_lift_enumerator(build_uncoupled(3, 6), M)
    # expected count: sum over (w1, w2) of A(w1 x3, w2 x3) / (C(M,w1) C(M,w2))^2
    want = lifted_spectrum_uncoupled(M)
    assert np.allclose(spec, want, atol=1e-12)
    assert spec[0] == 1.0
    # weight 2 by hand: (2,0) and (0,2) give 6 arrays / C(3,2)^2 each; (1,1) gives
    # 183 even-row placements of 6 columns on 3 rows over C(3,1)^4
    assert spec[2] == pytest.approx(2 * 6 / 9 + 183 / 81) == 97 / 27


def test_exact_enumerator_guards():
    with pytest.raises(ValueError):
        exact_small_lift_enumerator(build_uncoupled(3, 6), 5)
    with pytest.raises(ValueError):
        exact_small_lift_enumerator(build_chain(3, 6, 6), 2)


def test_small_lift_spectrum_structure():
    # odd variable degrees force even weight; all-ones is a codeword of every lift
    spec = exact_small_lift_enumerator(build_uncoupled(3, 6), 3)
    assert not spec[1::2].any()
    assert np.allclose(spec, spec[::-1])
    assert spec.sum() > 1
