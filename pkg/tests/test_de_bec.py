import csv
import io
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scconnect.de_bec import (
    EdgeGraph, bit_erasure, check_update, de_step, de_trace_csv, exclusive_products,
    initial_state, run_de, threshold_bec,
)
from scconnect.protograph import (
    Protograph, build_chain, build_loop, build_loop48, build_uncoupled,
)


def position_means(p, pb):
    d = defaultdict(list)
    for v, key in p.positions.items():
        d[key].append(pb[v])
    return {k: float(np.mean(x)) for k, x in d.items()}


def test_exclusive_products_brute_force():
    rng = np.random.default_rng(1)
    x = rng.random((5, 4))
    got = exclusive_products(x)
    for i in range(5):
        for j in range(4):
            assert got[i, j] == pytest.approx(np.prod(np.delete(x[i], j)))


def test_eps_zero_and_one():
    g = EdgeGraph(build_chain(3, 6, 8))
    s = de_step(g, initial_state(g, 0.0), 0.0)
    assert not s.p.any() and not s.pb.any()
    assert not bit_erasure(g, s, 0.0).any()
    s = initial_state(g, 1.0)
    for _ in range(5):
        s = de_step(g, s, 1.0)
    assert np.all(s.p == 1.0)
    res = run_de(build_chain(3, 6, 8), 0.0)
    assert res.converged and res.iterations_used == 1


def test_bad_eps():
    g = EdgeGraph(build_uncoupled(3, 6))
    with pytest.raises(ValueError):
        de_step(g, initial_state(g, 0.3), 1.5)
    with pytest.raises(ValueError):
        run_de(g, -0.1)


def test_at_threshold_stall():
    g = EdgeGraph(build_uncoupled(3, 6))
    s = initial_state(g, 0.4294)
    prev = s.p.copy()
    for _ in range(10):
        s = de_step(g, s, 0.4294)
        assert np.all(s.p < prev)
        prev = s.p.copy()
    assert s.p.min() > 1e-2


def test_degree_one_check_sends_zero():
    p = Protograph("deg1", 2, 1, ((0, 0, 1), (1, 0, 2)))
    g = EdgeGraph(p)
    q = check_update(g, np.full(g.num_edges, 0.7))
    assert q[g.edge_check == 0][0] == 0.0


def test_pb_bounded_by_eps():
    p = build_loop(3, 6, 12)
    g = EdgeGraph(p)
    s = initial_state(g, 0.5)
    for _ in range(20):
        s = de_step(g, s, 0.5)
        assert np.all(s.pb <= 0.5) and np.all(s.q >= 0) and np.all(s.q <= 1)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["chain", "loop", "loop48"]), st.floats(0.3, 0.6))
def test_monotone_in_iteration(kind, eps):
    p = {"chain": build_chain(3, 6, 9), "loop": build_loop(3, 6, 12),
         "loop48": build_loop48("B", 9)}[kind]
    g = EdgeGraph(p)
    s = initial_state(g, eps)
    for _ in range(30):
        t = de_step(g, s, eps)
        assert np.all(t.p <= s.p + 1e-15)
        assert np.all(t.pb <= s.pb + 1e-15)
        if s.iteration:
            assert np.all(t.q <= s.q + 1e-15)
        s = t
    run_de(g, eps, max_iters=500, check_monotone=True)


def test_converged_iff_target():
    for eps in (0.45, 0.49, 0.5):
        res = run_de(build_chain(3, 6, 12), eps)
        assert res.converged == (res.max_pb_final <= 1e-6)


def test_chain_bell_shape():
    p = build_chain(3, 6, 15)
    g = EdgeGraph(p)
    s = initial_state(g, 0.488)
    for _ in range(36):
        s = de_step(g, s, 0.488)
        m = position_means(p, s.pb)
        assert m[(0, 1)] < m[(0, 8)] and m[(0, 15)] < m[(0, 8)]


def test_loop_connection_dip():
    p = build_loop(3, 6, 15)
    g = EdgeGraph(p)
    s = de_step(g, initial_state(g, 0.488), 0.488)
    m = position_means(p, s.pb)
    window = [m[(0, t)] for t in (4, 5, 6)]
    assert max(window) < min(m[(0, 3)], m[(0, 7)])


def test_chain_12_brackets():
    p = build_chain(3, 6, 12)
    assert run_de(p, 0.49).converged
    assert not run_de(p, 0.50).converged


def test_loop_needs_fewer_iterations():
    a = run_de(build_loop(3, 6, 15), 0.488)
    b = run_de(build_chain(3, 6, 15), 0.488)
    assert a.converged and b.converged
    assert a.iterations_used < b.iterations_used


def test_uncoupled_threshold():
    res = threshold_bec(build_uncoupled(3, 6))
    assert res.epsilon_star == pytest.approx(0.4294, abs=5e-4)
    assert res.hi - res.lo <= 1e-4
    # bracket endpoints behave as the predicate says
    assert run_de(build_uncoupled(3, 6), res.lo).converged
    assert not run_de(build_uncoupled(3, 6), res.hi).converged
    assert set(res.to_json()) == {"ensemble", "epsilon_star", "tol", "iterations"}


def test_threshold_insensitive_to_stopping_rule():
    p = build_chain(3, 6, 9)
    a = threshold_bec(p).epsilon_star
    b = threshold_bec(p, target_pb=5e-7).epsilon_star
    assert abs(a - b) <= 1e-4


def test_relabel_keeps_threshold():
    p = build_chain(3, 6, 6)
    rng = np.random.default_rng(7)
    q = p.relabel(rng.permutation(p.num_checks).tolist(), rng.permutation(p.num_vars).tolist())
    assert threshold_bec(q).epsilon_star == threshold_bec(p).epsilon_star


def test_trace_csv():
    text = de_trace_csv(build_chain(3, 6, 15), 0.488, list(range(1, 37, 5)))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["iteration", "chain", "position", "mean_pb", "log10_mean_pb"]
    iters = sorted({int(r["iteration"]) for r in rows})
    assert iters == [1, 6, 11, 16, 21, 26, 31, 36]
    for it in iters:
        # the bell is concave on the log scale the curves are drawn in
        y = np.array([float(r["log10_mean_pb"]) for r in rows if int(r["iteration"]) == it])
        assert np.all(np.diff(y, 2) <= 1e-12)


def test_trace_csv_eps_zero_and_missing_positions():
    text = de_trace_csv(build_chain(3, 6, 6), 0.0, [1])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert all(float(r["mean_pb"]) == 0.0 for r in rows)
    with pytest.raises(ValueError):
        de_trace_csv(Protograph("bare", 1, 2, ((0, 0, 3), (0, 1, 3))), 0.3, [1])


def test_b_connection_decodes_faster():
    def first_hit(p, level):
        g = EdgeGraph(p)
        s = initial_state(g, 0.514)
        for _ in range(2000):
            s = de_step(g, s, 0.514)
            if s.pb.max() <= level:
                return s.iteration
        return None
    for level in (1e-2, 1e-4, 1e-6):
        a = first_hit(build_loop48("A", 12), level)
        b = first_hit(build_loop48("B", 12), level)
        assert b is not None and (a is None or b <= a)
