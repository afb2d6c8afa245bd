"""Protograph density evolution on the binary erasure channel."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .protograph import Protograph

TARGET_PB = 1e-6
MAX_ITERS = 100_000
STALL = 1e-12


class EdgeGraph:
    """Edge-instance view of a protograph used by every message-passing routine.

    Parallel edges are separate instances. ``check_slots[c]`` and
    ``var_slots[v]`` list a node's edge ids, padded with ``num_edges`` which
    indexes a neutral sentinel entry.
    """

    def __init__(self, p: Protograph):
        self.protograph = p
        self.edge_check, self.edge_var = p.edge_instances()
        self.num_edges = len(self.edge_check)
        self.num_checks = p.num_checks
        self.num_vars = p.num_vars
        self.check_slots = _slots(self.edge_check, p.num_checks, self.num_edges)
        self.var_slots = _slots(self.edge_var, p.num_vars, self.num_edges)
        # position of each edge inside its node's slot row
        self.check_col = _cols(self.check_slots, self.num_edges)
        self.var_col = _cols(self.var_slots, self.num_edges)
        self.channel_mask = np.ones(p.num_vars, dtype=bool)
        for v in p.punctured:
            self.channel_mask[v] = False


def _slots(owner: np.ndarray, n: int, pad: int) -> np.ndarray:
    deg = np.bincount(owner, minlength=n)
    slots = np.full((n, max(int(deg.max(initial=0)), 1)), pad, dtype=np.int64)
    fill = np.zeros(n, dtype=np.int64)
    for e, o in enumerate(owner):
        slots[o, fill[o]] = e
        fill[o] += 1
    return slots


def _cols(slots: np.ndarray, num_edges: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(slots < num_edges)
    order = np.argsort(slots[rows, cols])
    return rows[order], cols[order]


def exclusive_products(values: np.ndarray) -> np.ndarray:
    """Product over each row of all entries except the one in that column."""
    n, d = values.shape
    left = np.ones((n, d + 1))
    right = np.ones((n, d + 1))
    np.cumprod(values, axis=1, out=left[:, 1:])
    np.cumprod(values[:, ::-1], axis=1, out=right[:, 1:])
    return left[:, :d] * right[:, d - 1::-1]


@dataclass
class ErasureDEState:
    q: np.ndarray   # check -> var erasure probability per edge instance
    p: np.ndarray   # var -> check erasure probability per edge instance
    pb: np.ndarray  # bit erasure probability per variable
    iteration: int = 0


def channel_vector(g: EdgeGraph, eps: float) -> np.ndarray:
    return np.where(g.channel_mask, eps, 1.0)


def initial_state(g: EdgeGraph, eps: float) -> ErasureDEState:
    ch = channel_vector(g, eps)
    return ErasureDEState(q=np.ones(g.num_edges), p=ch[g.edge_var].copy(),
                          pb=ch.copy(), iteration=0)


def check_update(g: EdgeGraph, p_edge: np.ndarray) -> np.ndarray:
    ok = np.append(1.0 - p_edge, 1.0)[g.check_slots]
    excl = exclusive_products(ok)
    rows, cols = g.check_col
    return 1.0 - excl[rows, cols]


def var_update(g: EdgeGraph, q_edge: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    ch = channel_vector(g, eps)
    qq = np.append(q_edge, 1.0)[g.var_slots]
    excl = exclusive_products(qq)
    rows, cols = g.var_col
    p_edge = ch[g.edge_var] * excl[rows, cols]
    pb = ch * qq.prod(axis=1)
    return p_edge, pb


def de_step(g: EdgeGraph, state: ErasureDEState, eps: float) -> ErasureDEState:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"erasure probability {eps} outside [0, 1]")
    q = check_update(g, state.p)
    p, pb = var_update(g, q, eps)
    return ErasureDEState(q=q, p=p, pb=pb, iteration=state.iteration + 1)


def bit_erasure(g: EdgeGraph, state: ErasureDEState, eps: float) -> np.ndarray:
    ch = channel_vector(g, eps)
    return ch * np.append(state.q, 1.0)[g.var_slots].prod(axis=1)


@dataclass
class DERunResult:
    converged: bool
    iterations_used: int
    max_pb_final: float
    trace: list[np.ndarray] = field(default_factory=list)


def run_de(g: EdgeGraph | Protograph, eps: float, target_pb: float = TARGET_PB,
           max_iters: int = MAX_ITERS, keep_trace: bool = False,
           check_monotone: bool = False) -> DERunResult:
    """Iterate until max pb <= target_pb, a stall (no variable improves), or max_iters."""
    if isinstance(g, Protograph):
        g = EdgeGraph(g)
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"erasure probability {eps} outside [0, 1]")
    ch = channel_vector(g, eps)
    ch_edge = ch[g.edge_var]
    p = ch_edge.copy()
    trace = []
    prev_pb = ch.copy()
    prev_p = p
    prev_q = np.ones(g.num_edges)
    rows_c, cols_c = g.check_col
    rows_v, cols_v = g.var_col
    it = 0
    max_pb = float(ch.max(initial=0.0))
    while it < max_iters:
        it += 1
        excl = exclusive_products(np.append(1.0 - p, 1.0)[g.check_slots])
        q = 1.0 - excl[rows_c, cols_c]
        qq = np.append(q, 1.0)[g.var_slots]
        p = ch_edge * exclusive_products(qq)[rows_v, cols_v]
        pb = ch * qq.prod(axis=1)
        if check_monotone and (np.any(p > prev_p + 1e-15) or np.any(q > prev_q + 1e-15)
                               or np.any(pb > prev_pb + 1e-15)):
            raise AssertionError(f"erasure probability increased at iteration {it}")
        prev_p, prev_q = p, q
        max_pb = float(pb.max(initial=0.0))
        if keep_trace:
            trace.append(pb)
        if max_pb <= target_pb:
            return DERunResult(True, it, max_pb, trace)
        # stalled once no variable improves; the max alone can sit on a
        # plateau while a decoding wave is still moving along a long chain
        if float((prev_pb - pb).max(initial=0.0)) < STALL:
            break
        prev_pb = pb
    return DERunResult(False, it, max_pb, trace)


@dataclass
class ThresholdResult:
    ensemble: str
    epsilon_star: float
    tol: float
    iterations: int
    lo: float
    hi: float

    def to_json(self) -> dict:
        return {"ensemble": self.ensemble, "epsilon_star": self.epsilon_star,
                "tol": self.tol, "iterations": self.iterations}


def threshold_bec(p: Protograph, tol: float = 1e-4, target_pb: float = TARGET_PB,
                  max_iters: int = MAX_ITERS, check_monotone: bool = False) -> ThresholdResult:
    """Bisection on the DE convergence predicate over [0, 1].

    With ``check_monotone`` every probe asserts that no message erasure
    probability grows from one iteration to the next.
    """
    g = EdgeGraph(p)
    lo, hi = 0.0, 1.0
    iters = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        res = run_de(g, mid, target_pb, max_iters, check_monotone=check_monotone)
        iters += res.iterations_used
        if res.converged:
            lo = mid
        else:
            hi = mid
    return ThresholdResult(p.name, 0.5 * (lo + hi), tol, iters, lo, hi)


def de_trace_csv(p: Protograph, eps: float, iterations: list[int]) -> str:
    """Per-position mean bit erasure probability at the requested iterations."""
    if not p.positions:
        raise ValueError(f"protograph {p.name!r} has no position metadata")
    g = EdgeGraph(p)
    wanted = sorted(set(iterations))
    groups: dict[tuple[int, int], list[int]] = {}
    for v, key in p.positions.items():
        groups.setdefault(key, []).append(v)
    keys = sorted(groups)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["iteration", "chain", "position", "mean_pb", "log10_mean_pb"])
    state = initial_state(g, eps)
    for target in wanted:
        while state.iteration < target:
            state = de_step(g, state, eps)
        for key in keys:
            m = float(np.mean(state.pb[groups[key]]))
            w.writerow([target, key[0], key[1], repr(m),
                        repr(math.log10(m)) if m > 0 else "-inf"])
    return out.getvalue()
