"""Lifting protographs to parity-check matrices and Monte Carlo BP decoding.

Each edge instance becomes an M x M permutation. The default draws circulant
shifts edge by edge and skips any shift that would close a 4-cycle with the
edges already placed; a fully random permutation mode with a repair loop is
also available. Simulation transmits the all-zero word, so every decoded 1
is a bit error.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from .de_awgn import noise_variance
from .protograph import Protograph, design_rate

CIRCULANT = "circulant"
RANDOM = "random"
GIRTH_RETRIES = 50
AWGN_MAX_ITERS = 200
LLR_CLIP = 40.0
BLOCK = 32


class LiftError(RuntimeError):
    """No lift meeting the girth constraint was found within the retry budget."""


@dataclass(frozen=True, eq=False)
class SparseParityCheck:
    n: int
    m: int
    M: int
    row_ptr: np.ndarray
    cols: np.ndarray
    name: str = ""
    seed: int | None = None
    girth6: bool = False
    rate: float = 0.0

    def __post_init__(self):
        if len(self.row_ptr) != self.m + 1 or self.row_ptr[-1] != len(self.cols):
            raise ValueError("inconsistent row pointer")
        if len(self.cols) and (self.cols.min() < 0 or self.cols.max() >= self.n):
            raise ValueError("column index out of range")

    @property
    def num_edges(self) -> int:
        return len(self.cols)

    def rows(self):
        for i in range(self.m):
            yield self.cols[self.row_ptr[i]:self.row_ptr[i + 1]]

    def matrix(self) -> sp.csr_matrix:
        data = np.ones(len(self.cols), dtype=np.int64)
        return sp.csr_matrix((data, self.cols, self.row_ptr), shape=(self.m, self.n))

    def to_dense(self) -> np.ndarray:
        return self.matrix().toarray().astype(np.uint8)

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def column_degrees(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n)

    def syndrome(self, x: np.ndarray) -> np.ndarray:
        return (self.matrix() @ np.asarray(x, dtype=np.int64)) % 2

    def same_as(self, other: "SparseParityCheck") -> bool:
        return (self.n, self.m) == (other.n, other.m) and np.array_equal(self.row_ptr, other.row_ptr) \
            and np.array_equal(self.cols, other.cols)


def from_rows(rows: list, n: int, **kw) -> SparseParityCheck:
    ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(r) for r in rows])
    cols = np.concatenate([np.sort(np.asarray(r, dtype=np.int64)) for r in rows]) if rows else np.zeros(0, np.int64)
    return SparseParityCheck(n, len(rows), kw.pop("M", 1), ptr, cols, **kw)


def four_cycle_count(h: SparseParityCheck) -> int:
    """Number of column pairs sharing at least two rows."""
    a = h.matrix()
    overlap = (a.T @ a).tocoo()
    mask = (overlap.row < overlap.col) & (overlap.data >= 2)
    return int(mask.sum())


def _forbidden_shifts(e: int, inst_c, inst_v, shift, at_check, at_var, M: int) -> set[int]:
    """Shifts for edge instance e that would close a 4-cycle (or cancel a parallel edge)."""
    c, v = inst_c[e], inst_v[e]
    bad = set()
    for e2 in at_var[v]:
        if e2 == e or shift[e2] < 0:
            continue
        c2 = inst_c[e2]
        if c2 == c:
            bad.add(shift[e2])  # parallel instances must not coincide
        for e3 in at_check[c2]:
            if e3 == e2 or shift[e3] < 0:
                continue
            v2 = inst_v[e3]
            for e4 in at_check[c]:
                if e4 == e or e4 == e3 or shift[e4] < 0 or inst_v[e4] != v2:
                    continue
                bad.add((shift[e2] - shift[e3] + shift[e4]) % M)
    # cycles through e twice: e, e2, e, e4 with e2, e4 parallel to e
    par = [f for f in at_var[v] if f != e and inst_c[f] == c and shift[f] >= 0]
    for e2 in par:
        for e4 in par:
            t = (shift[e2] + shift[e4]) % M
            for s in range(M):
                if (2 * s) % M == t:
                    bad.add(s)
    return bad


def _circulant_shifts(p: Protograph, M: int, rng: np.random.Generator, girth6: bool) -> np.ndarray:
    inst_c, inst_v = p.edge_instances()
    n_inst = len(inst_c)
    at_check = [[] for _ in range(p.num_checks)]
    at_var = [[] for _ in range(p.num_vars)]
    for e in range(n_inst):
        at_check[inst_c[e]].append(e)
        at_var[inst_v[e]].append(e)
    shift = -np.ones(n_inst, dtype=np.int64)
    for e in range(n_inst):
        if girth6:
            bad = _forbidden_shifts(e, inst_c, inst_v, shift, at_check, at_var, M)
        else:
            bad = {int(shift[f]) for f in at_var[inst_v[e]] if inst_c[f] == inst_c[e] and shift[f] >= 0}
        allowed = np.setdiff1d(np.arange(M), np.fromiter(bad, dtype=np.int64, count=len(bad)))
        if len(allowed) == 0:
            return None
        shift[e] = int(rng.choice(allowed))
    return shift


def _random_perms(p: Protograph, M: int, rng: np.random.Generator) -> list[np.ndarray]:
    inst_c, inst_v = p.edge_instances()
    perms: list[np.ndarray] = []
    for e in range(len(inst_c)):
        par = [perms[f] for f in range(e) if inst_c[f] == inst_c[e] and inst_v[f] == inst_v[e]]
        for _ in range(1000):
            pi = rng.permutation(M)
            if all(not np.any(pi == q) for q in par):
                break
        else:
            raise LiftError("cannot keep parallel edges disjoint")
        perms.append(pi)
    return perms


def _assemble(p: Protograph, M: int, perms: list[np.ndarray], **kw) -> SparseParityCheck:
    inst_c, inst_v = p.edge_instances()
    rows: list[list[int]] = [[] for _ in range(p.num_checks * M)]
    for (c, v), pi in zip(zip(inst_c, inst_v), perms):
        for i in range(M):
            rows[c * M + i].append(v * M + int(pi[i]))
    return from_rows(rows, p.num_vars * M, M=M, **kw)


def _repair(p: Protograph, M: int, perms: list[np.ndarray], rng: np.random.Generator, **kw):
    """Swap entries of permutations touching 4-cycles until none remain or the budget runs out."""
    inst_c, inst_v = p.edge_instances()
    by_var = [[e for e in range(len(inst_c)) if inst_v[e] == v] for v in range(p.num_vars)]
    for _ in range(GIRTH_RETRIES * 20):
        h = _assemble(p, M, perms, **kw)
        a = h.matrix()
        ov = (a.T @ a).tocoo()
        mask = (ov.row < ov.col) & (ov.data >= 2)
        if not mask.any():
            return h
        for col in np.unique(ov.row[mask]):
            v, j = divmod(int(col), M)
            e = int(rng.choice(by_var[v]))
            pi = perms[e]
            i = int(np.flatnonzero(pi == j)[0])
            k = int(rng.integers(M))
            pi[i], pi[k] = pi[k], pi[i]
    return None


def lift(p: Protograph, M: int, seed: int = 0, girth6: bool = False,
         mode: str = CIRCULANT) -> SparseParityCheck:
    """Deterministic lift of ``p`` by factor M from ``seed``."""
    if M < 1:
        raise ValueError("lifting factor must be at least 1")
    kw = dict(name=p.name, seed=seed, girth6=girth6, rate=design_rate(p).value)
    rng = np.random.default_rng(seed)
    if mode == CIRCULANT:
        for _ in range(GIRTH_RETRIES):
            shift = _circulant_shifts(p, M, rng, girth6)
            if shift is not None:
                perms = [(np.arange(M) + s) % M for s in shift]
                return _assemble(p, M, perms, **kw)
        raise LiftError(f"{p.name}: no 4-cycle-free circulant lift with M={M} in {GIRTH_RETRIES} tries")
    if mode == RANDOM:
        perms = _random_perms(p, M, rng)
        if not girth6:
            return _assemble(p, M, perms, **kw)
        h = _repair(p, M, perms, rng, **kw)
        if h is None:
            raise LiftError(f"{p.name}: 4-cycles remain after repair with M={M}")
        return h
    raise ValueError(f"unknown lifting mode {mode!r}")


def export_h(h: SparseParityCheck) -> str:
    lines = [f"{h.n} {h.m}"]
    lines += [" ".join(str(int(c)) for c in row) for row in h.rows()]
    return "\n".join(lines) + "\n"


def import_h(text: str) -> SparseParityCheck:
    lines = text.strip("\n").split("\n")
    try:
        n, m = (int(x) for x in lines[0].split())
        rows = [[int(x) for x in ln.split()] for ln in lines[1:1 + m]]
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed parity-check file: {exc}") from None
    if len(rows) != m:
        raise ValueError(f"expected {m} rows, found {len(rows)}")
    return from_rows(rows, n)


# ---------------------------------------------------------------- decoders

@dataclass(frozen=True, eq=False)
class _Tanner:
    row_ptr: np.ndarray
    edge_var: np.ndarray
    var_ptr: np.ndarray
    var_edges: np.ndarray


def _tanner(h: SparseParityCheck) -> _Tanner:
    order = np.argsort(h.cols, kind="stable")
    counts = np.bincount(h.cols, minlength=h.n)
    var_ptr = np.zeros(h.n + 1, dtype=np.int64)
    var_ptr[1:] = np.cumsum(counts)
    return _Tanner(h.row_ptr.astype(np.int64), h.cols.astype(np.int64), var_ptr, order.astype(np.int64))


@numba.njit(cache=True)
def _peel(row_ptr, edge_var, var_ptr, var_edges, edge_check, erased, order):
    m = len(row_ptr) - 1
    left = np.zeros(m, dtype=np.int64)
    for c in range(m):
        for k in range(row_ptr[c], row_ptr[c + 1]):
            if erased[edge_var[k]]:
                left[c] += 1
    stack = np.empty(m + len(edge_var), dtype=np.int64)
    top = 0
    for c in order[::-1]:
        if left[c] == 1:
            stack[top] = c
            top += 1
    while top > 0:
        top -= 1
        c = stack[top]
        if left[c] != 1:
            continue
        for k in range(row_ptr[c], row_ptr[c + 1]):
            v = edge_var[k]
            if erased[v]:
                erased[v] = False
                for q in range(var_ptr[v], var_ptr[v + 1]):
                    c2 = edge_check[var_edges[q]]
                    left[c2] -= 1
                    if left[c2] == 1:
                        stack[top] = c2
                        top += 1
                break
    return erased


def decode_bec(h: SparseParityCheck, erased: np.ndarray, order: np.ndarray | None = None,
               tanner: _Tanner | None = None) -> np.ndarray:
    """Peeling decoder; returns the mask of bits still erased at the fixpoint.

    ``order`` sets the order in which initially solvable checks are visited;
    the residual set does not depend on it.
    """
    t = tanner or _tanner(h)
    erased = np.array(erased, dtype=np.bool_)
    if erased.shape != (h.n,):
        raise ValueError("erasure mask has the wrong length")
    order = np.arange(h.m, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    edge_check = np.repeat(np.arange(h.m, dtype=np.int64), np.diff(t.row_ptr))
    return _peel(t.row_ptr, t.edge_var, t.var_ptr, t.var_edges, edge_check, erased, order)


@numba.njit(cache=True)
def _syndrome_ok(row_ptr, edge_var, hard):
    for c in range(len(row_ptr) - 1):
        s = 0
        for k in range(row_ptr[c], row_ptr[c + 1]):
            s ^= hard[edge_var[k]]
        if s:
            return False
    return True


@numba.njit(cache=True)
def _sum_product(row_ptr, edge_var, var_ptr, var_edges, llr, max_iters, clip):
    n = len(llr)
    n_edges = len(edge_var)
    hard = np.zeros(n, dtype=np.uint8)
    for v in range(n):
        hard[v] = 1 if llr[v] < 0 else 0
    if _syndrome_ok(row_ptr, edge_var, hard):
        return hard, 0, True
    v2c = np.empty(n_edges)
    for k in range(n_edges):
        v2c[k] = llr[edge_var[k]]
    c2v = np.zeros(n_edges)
    t = np.empty(n_edges)
    th = np.empty(n_edges)
    total = np.empty(n)
    for it in range(1, max_iters + 1):
        for c in range(len(row_ptr) - 1):
            a, b = row_ptr[c], row_ptr[c + 1]
            # exclusive products of tanh(m/2) via prefix and suffix passes
            acc = 1.0
            for k in range(a, b):
                th[k] = math.tanh(0.5 * v2c[k])
                t[k] = acc
                acc *= th[k]
            acc = 1.0
            for k in range(b - 1, a - 1, -1):
                x = t[k] * acc
                acc *= th[k]
                if x > 0.9999999999999:
                    x = 0.9999999999999
                elif x < -0.9999999999999:
                    x = -0.9999999999999
                c2v[k] = 2.0 * math.atanh(x)
        for v in range(n):
            s = llr[v]
            for q in range(var_ptr[v], var_ptr[v + 1]):
                s += c2v[var_edges[q]]
            total[v] = s
            hard[v] = 1 if s < 0 else 0
            for q in range(var_ptr[v], var_ptr[v + 1]):
                k = var_edges[q]
                x = s - c2v[k]
                v2c[k] = min(max(x, -clip), clip)
        if _syndrome_ok(row_ptr, edge_var, hard):
            return hard, it, True
    return hard, max_iters, False


def decode_awgn(h: SparseParityCheck, llr: np.ndarray, max_iters: int = AWGN_MAX_ITERS,
                tanner: _Tanner | None = None) -> tuple[np.ndarray, int, bool]:
    """Flooding sum-product. Returns (hard decision, iterations, zero syndrome)."""
    llr = np.asarray(llr, dtype=float)
    if llr.shape != (h.n,) or not np.all(np.isfinite(llr)):
        raise ValueError("LLR vector must be finite with one entry per column")
    t = tanner or _tanner(h)
    hard, its, ok = _sum_product(t.row_ptr, t.edge_var, t.var_ptr, t.var_edges, llr,
                                 max_iters, LLR_CLIP)
    return hard, int(its), bool(ok)


# -------------------------------------------------------------- simulation

BEC = "bec"
AWGN = "awgn"


@dataclass
class SimPoint:
    snr_or_eps: float
    frames: int
    bit_errors: int
    frame_errors: int
    iterations: int
    n: int

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.frames * self.n) if self.frames else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0

    @property
    def avg_iters(self) -> float:
        return self.iterations / self.frames if self.frames else 0.0


@dataclass
class SimReport:
    channel: str
    points: list[SimPoint]
    seed: int
    config: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["snr_or_eps", "frames", "bit_errors", "frame_errors", "ber", "fer", "avg_iters"])
        for p in self.points:
            w.writerow([repr(p.snr_or_eps), p.frames, p.bit_errors, p.frame_errors,
                        repr(p.ber), repr(p.fer), repr(p.avg_iters)])
        return out.getvalue()


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    """Independent stream for one frame, a function of (seed, frame) only."""
    return np.random.default_rng([seed, frame])


def _run_block(args):
    h, channel, value, seed, start, stop, max_iters, rate = args
    t = _tanner(h)
    edge_check = np.repeat(np.arange(h.m, dtype=np.int64), np.diff(t.row_ptr))
    order = np.arange(h.m, dtype=np.int64)
    bits = frames = iters = 0
    for f in range(start, stop):
        rng = frame_rng(seed, f)
        if channel == BEC:
            erased = rng.random(h.n) < value
            res = _peel(t.row_ptr, t.edge_var, t.var_ptr, t.var_edges, edge_check, erased, order)
            e = int(res.sum())
        else:
            sigma = math.sqrt(noise_variance(value, rate))
            y = 1.0 + sigma * rng.standard_normal(h.n)
            hard, its, _ = _sum_product(t.row_ptr, t.edge_var, t.var_ptr, t.var_edges,
                                        2.0 * y / sigma ** 2, max_iters, LLR_CLIP)
            e = int(hard.sum())
            iters += its
        bits += e
        frames += int(e > 0)
    return bits, frames, iters


def simulate(h: SparseParityCheck, channel: str, values, min_frame_errors: int = 100,
             max_frames: int = 100_000, seed: int = 0, workers: int = 1,
             max_iters: int = AWGN_MAX_ITERS, rate: float | None = None) -> SimReport:
    """Error counts per channel value, all-zero word transmitted.

    Frames run in blocks of BLOCK in index order and the stop rule is checked
    only at block boundaries, so the counts do not depend on ``workers``.
    AWGN values are Eb/N0 in dB with the noise variance set from ``rate``
    (default: the design rate the lift recorded).
    """
    if channel not in (BEC, AWGN):
        raise ValueError(f"unknown channel {channel!r}")
    rate = h.rate if rate is None else rate
    if channel == AWGN and not rate > 0:
        raise ValueError("AWGN simulation needs a positive code rate")
    points = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for value in values:
            if channel == BEC and not 0 <= value <= 1:
                raise ValueError("erasure probability must lie in [0, 1]")
            bits = ferr = iters = done = 0
            while done < max_frames and ferr < min_frame_errors:
                starts = range(done, min(done + BLOCK * max(workers, 1), max_frames), BLOCK)
                jobs = [(h, channel, value, seed, s, min(s + BLOCK, max_frames), max_iters, rate)
                        for s in starts]
                results = pool.map(_run_block, jobs) if pool else map(_run_block, jobs)
                for job, (b, f, it) in zip(jobs, results):
                    if ferr >= min_frame_errors:
                        break  # blocks past the stopping boundary are discarded
                    bits, ferr, iters, done = bits + b, ferr + f, iters + it, job[5]
            points.append(SimPoint(float(value), done, bits, ferr, iters, h.n))
    finally:
        if pool:
            pool.shutdown()
    cfg = dict(min_frame_errors=min_frame_errors, max_frames=max_frames, max_iters=max_iters,
               rate=rate, block=BLOCK)
    return SimReport(channel, points, seed, cfg)


def snr_gain(chain: SimReport, loop: SimReport, ber: float) -> float | None:
    """Horizontal distance (dB) between two BER curves at ``ber``, by log-linear interpolation."""
    def crossing(rep):
        pts = [(p.snr_or_eps, p.ber) for p in rep.points if p.ber > 0]
        for (x0, b0), (x1, b1) in itertools.pairwise(pts):
            if b0 >= ber >= b1 and b0 != b1:
                f = (math.log(b0) - math.log(ber)) / (math.log(b0) - math.log(b1))
                return x0 + f * (x1 - x0)
        return None
    a, b = crossing(chain), crossing(loop)
    return None if a is None or b is None else a - b
