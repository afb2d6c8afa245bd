"""Asymptotic weight enumerator of protograph ensembles and the growth rate delta_min.

For a lifting factor M and per-variable weight fractions delta_v, the ensemble
average number of codewords grows like exp(M * F(delta)) with

    F(delta) = sum_c a_c(delta on the edges of c) - sum_v (d_v - 1) H(delta_v)

where a_c is the exponent of the number of even-parity M x d_c binary arrays
with column weights M*delta_i,

    a_c(delta) = inf_{x > 0} ln((prod(1 + x_i) + prod(1 - x_i)) / 2) - sum delta_i ln x_i.

Writing x_i = exp(s_i) turns the infimum into a smooth convex problem over the
even-weight patterns; its value is the largest entropy of a distribution on
even patterns with bit marginals delta, which is how it is computed here.
The growth rate r(delta) maximizes F / n_proto over delta_v with a fixed mean.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .protograph import Protograph

LN2 = math.log(2.0)
NEWTON_TOL = 1e-11
NEWTON_ITERS = 200
S_LIMIT = 200.0
FLOOR = 1e-300
# stop once F per variable has gained less than this (nats) over STALL_WINDOW steps
VALUE_TOL = 1e-8
STALL_WINDOW = 5


class EnumeratorError(RuntimeError):
    """Inner minimization failed to converge."""


class AmbiguousCurveError(ValueError):
    """The sampled curve does not pin down a root."""


def entropy(d):
    """Binary entropy in nats, with H(0) = H(1) = 0."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -d * np.log(d) - (1 - d) * np.log1p(-d)
    return np.where((d <= 0) | (d >= 1), 0.0, h)


def parity_patterns(d: int, parity: int = 0) -> np.ndarray:
    """All length-d binary rows with the given weight parity."""
    rows = [r for r in itertools.product((0, 1), repeat=d) if sum(r) % 2 == parity]
    return np.array(rows, dtype=float).reshape(len(rows), d)


def _lse(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp and the softmax weights."""
    top = z.max(axis=1, keepdims=True)
    e = np.exp(z - top)
    tot = e.sum(axis=1, keepdims=True)
    return (top + np.log(tot))[:, 0], e / tot


def _maxent(pat: np.ndarray, delta: np.ndarray, s0: np.ndarray | None = None,
            tol: float = NEWTON_TOL, max_iters: int = NEWTON_ITERS):
    """Damped Newton on ln sum_p exp(s.p) - delta.s for a batch of rows.

    Returns (values, s, ok, cov) where cov is the pattern covariance at the
    solution. Rows whose marginals cannot be matched (delta outside the
    pattern hull) come back with ok False and value -inf.
    """
    b, d = delta.shape
    s = np.zeros((b, d)) if s0 is None else s0.copy()

    def objective(s):
        lse, w = _lse(s @ pat.T)
        return lse - np.einsum("ij,ij->i", delta, s), w

    val, w = objective(s)
    for _ in range(max_iters):
        m = w @ pat
        cov = np.einsum("bp,pi,pj->bij", w, pat, pat) - m[:, :, None] * m[:, None, :]
        grad = m - delta
        ok = np.abs(grad).max(axis=1) < tol
        if ok.all() or np.abs(s).max() > S_LIMIT:
            break
        step = -np.linalg.solve(cov + 1e-13 * np.eye(d), grad[:, :, None])[:, :, 0]
        t = np.ones(b)
        for _ in range(40):
            trial = s + t[:, None] * step
            tval, _ = objective(trial)
            good = ok | (tval <= val + 1e-13 * (1.0 + np.abs(val)))
            if good.all():
                break
            t = np.where(good, t, 0.5 * t)
        s = np.where(ok[:, None], s, trial)
        val, w = objective(s)
    return np.where(ok, val, -np.inf), s, ok, cov


def check_enumerator_rate(deltas, tol: float = NEWTON_TOL) -> float:
    """a_c in nats per lifted copy for one check with edge fractions ``deltas``.

    Edges at weight 0 drop out and edges at weight 1 flip the parity that the
    remaining edges must carry. Returns -inf when no pattern mixture has the
    requested marginals.
    """
    delta = np.asarray(deltas, dtype=float)
    if np.any((delta < 0) | (delta > 1)):
        raise ValueError("edge weight fractions must lie in [0, 1]")
    ones = delta >= 1
    free = delta[(delta > 0) & ~ones]
    parity = int(ones.sum()) % 2
    if free.size == 0:
        return 0.0 if parity == 0 else -math.inf
    pat = parity_patterns(free.size, parity)
    if len(pat) == 0:
        return -math.inf
    val, _, ok, _ = _maxent(pat, free[None, :], tol=tol)
    if not ok[0] and np.isfinite(val[0]):
        raise EnumeratorError(f"inner minimization did not converge for {deltas}")
    return float(val[0])


class WeightProblem:
    """F(delta) and its gradient for a protograph.

    Variables tied together by a degree-2 check with two distinct neighbours
    must carry equal weight, so the free parameters are per tie group.
    """

    def __init__(self, p: Protograph):
        if p.punctured:
            raise ValueError("punctured protographs are not supported")
        self.protograph = p
        self.n = p.num_vars
        self.var_deg = np.array(p.var_degrees, dtype=float)
        rows: dict[int, list[int]] = {}
        for c, v, m in sorted(p.edges):
            rows.setdefault(c, []).extend([v] * m)
        by_deg: dict[int, list[list[int]]] = {}
        for c in range(p.num_checks):
            r = rows.get(c, [])
            if r:
                by_deg.setdefault(len(r), []).append(r)
        self.groups_by_degree = [(parity_patterns(d), np.array(rs)) for d, rs in sorted(by_deg.items())]

        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for _, idx in self.groups_by_degree:
            if idx.shape[1] == 2:
                for a, b in idx:
                    parent[find(a)] = find(b)
        roots = sorted({find(v) for v in range(self.n)})
        label = {r: k for k, r in enumerate(roots)}
        self.tie = np.array([label[find(v)] for v in range(self.n)])
        self.num_groups = len(roots)
        self.group_size = np.bincount(self.tie, minlength=self.num_groups).astype(float)
        self._warm: list[np.ndarray | None] = [None] * len(self.groups_by_degree)

    def expand(self, theta: np.ndarray) -> np.ndarray:
        return theta[self.tie]

    def evaluate(self, theta: np.ndarray, hessian: bool = False):
        """F, dF/dtheta and optionally d2F/dtheta2, all per tie group.

        F is -inf (with None derivatives) outside the feasible set. Each check
        contributes -s to the gradient and, by implicit differentiation of its
        inner problem, -cov^-1 to the Hessian.
        """
        g_n = self.num_groups
        dv = self.expand(theta)
        total = -float(np.dot(self.var_deg - 1, entropy(dv)))
        logit = np.log(dv) - np.log1p(-dv)
        grad_v = (self.var_deg - 1) * logit
        hess = np.zeros((g_n, g_n)) if hessian else None
        diag_v = (self.var_deg - 1) / (dv * (1 - dv))
        warm = []
        for k, (pat, idx) in enumerate(self.groups_by_degree):
            if idx.shape[1] == 2:
                # both ends carry the same fraction: a_c = H(delta)
                v = idx[:, 0]
                total += float(entropy(dv[v]).sum())
                np.add.at(grad_v, v, -logit[v])
                np.subtract.at(diag_v, v, 1.0 / (dv[v] * (1 - dv[v])))
                warm.append(None)
                continue
            val, s, ok, cov = _maxent(pat, dv[idx], self._warm[k])
            if not ok.all():
                return -math.inf, None, None
            warm.append(s)
            total += float(val.sum())
            np.add.at(grad_v, idx.ravel(), -s.ravel())
            if hessian:
                try:
                    inv = np.linalg.inv(cov)
                except np.linalg.LinAlgError:
                    inv = np.linalg.pinv(cov, hermitian=True)
                gi = self.tie[idx]
                d = idx.shape[1]
                np.add.at(hess, (np.repeat(gi, d, axis=1).ravel(), np.tile(gi, (1, d)).ravel()),
                          -inv.ravel())
        self._warm = warm
        grad = np.bincount(self.tie, weights=grad_v, minlength=g_n)
        if hessian:
            hess += np.diag(np.bincount(self.tie, weights=diag_v, minlength=g_n))
        return total, grad, hess

    def reset(self):
        self._warm = [None] * len(self.groups_by_degree)


@dataclass
class AscentResult:
    value: float
    theta: np.ndarray
    iterations: int
    converged: bool


def _project_budget(theta: np.ndarray, size: np.ndarray, budget: float) -> np.ndarray:
    """Rescale a positive vector onto sum(size * theta) == budget inside (0, 1)."""
    theta = np.clip(theta, FLOOR, None)
    t = theta * budget / np.dot(size, theta)
    if t.max() < 1:
        return t
    # cap at just below one and spread the excess over the rest
    lo, hi = 0.0, budget / np.dot(size, theta) * 1e6
    for _ in range(200):
        c = 0.5 * (lo + hi)
        if np.dot(size, np.minimum(c * theta, 1 - 1e-9)) > budget:
            hi = c
        else:
            lo = c
    return np.minimum(lo * theta, 1 - 1e-9)


def maximize(prob: WeightProblem, delta: float, theta0: np.ndarray,
             max_iters: int = 200, tol: float = 1e-10) -> AscentResult:
    """Local maximum of F on {sum_v delta_v = delta * n}, 0 < delta_v < 1.

    Steps are Newton steps in the relative coordinates theta_g * (1 + phi_g),
    restricted to the constraint plane; the Hessian is shifted when it is not
    negative definite there, and a backtracking line search keeps every
    accepted point feasible and uphill.
    """
    size = prob.group_size
    budget = delta * prob.n
    theta = _project_budget(np.asarray(theta0, dtype=float), size, budget)
    prob.reset()
    val, grad, hess = prob.evaluate(theta, hessian=True)
    if not np.isfinite(val):
        return AscentResult(-math.inf, theta, 0, False)
    g_n = len(theta)
    history = [val]
    for it in range(1, max_iters + 1):
        # relative coordinates: theta_new = theta * (1 + phi)
        g = grad * theta
        h = hess * np.outer(theta, theta)
        w = size * theta
        w = w / np.linalg.norm(w)
        proj = np.eye(g_n) - np.outer(w, w)
        gp = proj @ g
        if np.abs(gp).max() < tol * max(1.0, abs(val)):
            return AscentResult(val, theta, it, True)
        hp = proj @ h @ proj
        top = np.linalg.eigvalsh(0.5 * (hp + hp.T))
        # largest eigenvalue on the plane (the normal direction gives a zero)
        shift = max(0.0, top[-1] + 1e-8 * max(1.0, abs(top[0]))) if g_n > 1 else 0.0
        kkt = np.zeros((g_n + 1, g_n + 1))
        kkt[:g_n, :g_n] = h - shift * np.eye(g_n) - 1e-12 * np.eye(g_n)
        kkt[:g_n, g_n] = w
        kkt[g_n, :g_n] = w
        rhs = np.concatenate([-g, [0.0]])
        try:
            phi = np.linalg.solve(kkt, rhs)[:g_n]
        except np.linalg.LinAlgError:
            phi = gp
        if np.dot(phi, g) <= 0:
            phi = gp / max(1.0, np.abs(gp).max())
        alpha = 1.0
        low = phi.min()
        if low < -0.9:
            alpha = 0.9 / -low
        high = np.max(theta * phi / np.maximum(1 - theta, FLOOR))
        if high > 0.9:
            alpha = min(alpha, 0.9 / high)
        slope = float(np.dot(g, phi))
        while True:
            trial = _project_budget(theta * (1 + alpha * phi), size, budget)
            tval, tgrad, thess = prob.evaluate(trial, hessian=True)
            if np.isfinite(tval) and tval >= val + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
            if alpha < 1e-12:
                prob.evaluate(theta)
                return AscentResult(val, theta, it, False)
        if shift > 0 and alpha == 1.0:
            # positive curvature on the plane: the shifted step is too timid
            while True:
                alpha *= 2.0
                if phi.min() * alpha < -0.99 or np.max(theta * phi) * alpha > 0.9:
                    break
                nxt = _project_budget(theta * (1 + alpha * phi), size, budget)
                nval, ngrad, nhess = prob.evaluate(nxt, hessian=True)
                if not (np.isfinite(nval) and nval > tval):
                    break
                trial, tval, tgrad, thess = nxt, nval, ngrad, nhess
        theta, val, grad, hess = trial, tval, tgrad, thess
        history.append(val)
        if len(history) > STALL_WINDOW and history[-1] - history[-1 - STALL_WINDOW] < VALUE_TOL * prob.n:
            return AscentResult(val, theta, it, True)
    return AscentResult(val, theta, max_iters, False)


def _random_starts(prob: WeightProblem, delta: float, count: int, rng: np.random.Generator,
                   spread: float = 0.5) -> list[np.ndarray]:
    """Uniform start plus ``count`` log-normal perturbations pulled towards it until feasible."""
    uniform = np.full(prob.num_groups, delta)
    starts = [uniform]
    for _ in range(count):
        noise = rng.normal(0.0, spread, prob.num_groups)
        for _ in range(30):
            th = _project_budget(delta * np.exp(noise), prob.group_size, delta * prob.n)
            if np.isfinite(prob.evaluate(th)[0]):
                break
            noise *= 0.5
        starts.append(th)
    return starts


@dataclass
class GrowthSample:
    delta: float
    r_bits: float
    converged: bool
    best_start: int
    iterations: int


@dataclass
class GrowthRateCurve:
    ensemble: str
    samples: list[GrowthSample]
    delta_min: float | None = None
    starts: int = 0
    seed: int = 0
    thetas: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def deltas(self) -> np.ndarray:
        return np.array([s.delta for s in self.samples])

    @property
    def r(self) -> np.ndarray:
        return np.array([s.r_bits for s in self.samples])


def default_grid(points: int = 200, lo: float = 1e-4, hi: float = 0.5) -> np.ndarray:
    return np.geomspace(lo, hi, points)


class _Tracker:
    """Multi-start maximization carried along increasing delta.

    Every start is continued from its own optimum at the previous delta, so
    each optimum moves a little per step and the ascent stays short.
    """

    def __init__(self, prob: WeightProblem, starts: int, seed: int):
        self.prob = prob
        self.starts = starts
        self.rng = np.random.default_rng(seed)
        self.thetas: list[np.ndarray] | None = None
        self.delta = None

    def sample(self, delta: float, thetas: list[np.ndarray] | None = None,
               commit: bool = True) -> tuple[GrowthSample, list[np.ndarray]]:
        prob = self.prob
        if delta <= 0:
            return GrowthSample(0.0, 0.0, True, 0, 0), []
        base = thetas if thetas is not None else self.thetas
        if base is None:
            inits = _random_starts(prob, delta, self.starts, self.rng)
        else:
            inits = [np.full(prob.num_groups, delta)] + [th for th in base[1:]]
        best, best_k, iters, conv, out = -math.inf, 0, 0, False, []
        for k, th in enumerate(inits):
            res = maximize(prob, delta, th)
            if not np.isfinite(res.value) and k > 0:
                # a continued start fell outside the feasible set: restart it
                res = maximize(prob, delta, _random_starts(prob, delta, 1, self.rng)[1])
            out.append(res.theta)
            iters += res.iterations
            if res.value > best:
                best, best_k, conv = res.value, k, res.converged
        if commit:
            self.thetas, self.delta = out, delta
        return GrowthSample(delta, best / prob.n / LN2, conv, best_k, iters), out


def growth_rate(p: Protograph, deltas: Sequence[float] | None = None, starts: int = 8,
                seed: int = 0) -> GrowthRateCurve:
    """r(delta) in bits on a grid, each point the best of ``starts`` + 1 local maxima."""
    grid = np.sort(np.asarray(default_grid() if deltas is None else deltas, dtype=float))
    if np.any(grid < 0) or np.any(grid > 1):
        raise ValueError("delta grid must lie in [0, 1]")
    tracker = _Tracker(WeightProblem(p), starts, seed)
    samples, thetas = [], []
    for d in grid:
        smp, th = tracker.sample(float(d))
        samples.append(smp)
        thetas.append(th)
    curve = GrowthRateCurve(p.name, samples, starts=starts, seed=seed, thetas=thetas)
    curve.delta_min = _first_root(curve, tracker, tol=None)
    return curve


def _first_root(curve: GrowthRateCurve, tracker: _Tracker | None, tol: float | None):
    """Bisection between the first negative-to-nonnegative pair of samples."""
    s = [x for x in curve.samples if x.delta > 0]
    for k in range(1, len(s)):
        if s[k - 1].r_bits < 0 <= s[k].r_bits:
            lo, hi = s[k - 1].delta, s[k].delta
            if tol is None or tracker is None:
                # linear interpolation on the samples alone
                r0, r1 = s[k - 1].r_bits, s[k].r_bits
                return lo + (hi - lo) * (-r0) / (r1 - r0)
            base = curve.thetas[curve.samples.index(s[k - 1])]
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                smp, _ = tracker.sample(mid, base, commit=False)
                if smp.r_bits < 0:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)
    return None


@dataclass
class MinDistanceResult:
    ensemble: str
    delta_min: float
    asymptotically_good: bool
    curve: GrowthRateCurve

    def to_json(self) -> dict:
        return {"ensemble": self.ensemble, "delta_min": self.delta_min,
                "asymptotically_good": self.asymptotically_good}


def min_distance_growth(p: Protograph, probe: float = 0.1, step: float = 0.001,
                        starts: int = 8, seed: int = 0, tol: float = 1e-6) -> MinDistanceResult:
    """delta_min: first sign change of r on (0, probe], refined by bisection.

    The scan is linear with spacing ``step`` after a short logarithmic lead-in,
    so the dip near zero is resolved.
    """
    lead = np.geomspace(step / 100, step, 5, endpoint=False)
    grid = np.concatenate([lead, np.arange(step, probe + step / 2, step)])
    tracker = _Tracker(WeightProblem(p), starts, seed)
    samples, thetas = [], []
    for d in grid:
        smp, th = tracker.sample(float(d))
        samples.append(smp)
        thetas.append(th)
        if smp.r_bits >= 0 and len(samples) > 1:
            break
    curve = GrowthRateCurve(p.name, samples, starts=starts, seed=seed, thetas=thetas)
    neg = [x.r_bits < 0 for x in samples]
    if not any(neg):
        curve.delta_min = 0.0
        return MinDistanceResult(p.name, 0.0, False, curve)
    if all(neg):
        raise AmbiguousCurveError(f"{p.name}: r(delta) stays negative up to {probe}")
    if not neg[0]:
        raise AmbiguousCurveError(f"{p.name}: r(delta) changes sign more than once near zero")
    curve.delta_min = _first_root(curve, tracker, tol)
    return MinDistanceResult(p.name, curve.delta_min, True, curve)


def curve_csv(curve: GrowthRateCurve) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["delta", "r_delta_bits", "converged"])
    for s in curve.samples:
        w.writerow([repr(s.delta), repr(s.r_bits), int(s.converged)])
    return out.getvalue()


MAX_EXACT_LIFTS = 300_000
MAX_EXACT_BITS = 16


def exact_small_lift_enumerator(p: Protograph, M: int) -> np.ndarray:
    """Average number of codewords of each weight over all lifts of size M.

    Every edge instance takes each of the M! permutations with equal
    probability; parallel edges add modulo 2. Entry w of the result is the
    average count of weight-w codewords.
    """
    if not 1 <= M <= 4:
        raise ValueError("M must be between 1 and 4")
    ec, ev = p.edge_instances()
    perms = list(itertools.permutations(range(M)))
    n, m = M * p.num_vars, M * p.num_checks
    lifts = len(perms) ** len(ec)
    if lifts > MAX_EXACT_LIFTS or n > MAX_EXACT_BITS:
        raise ValueError(f"too large for exhaustive enumeration: {lifts} lifts, {n} bits")
    words = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(np.int64)
    weights = words.sum(axis=1)
    total = np.zeros(n + 1)
    for choice in itertools.product(range(len(perms)), repeat=len(ec)):
        h = np.zeros((m, n), dtype=np.int64)
        for (c, v), k in zip(zip(ec, ev), choice):
            pi = perms[k]
            for i in range(M):
                h[c * M + i, v * M + pi[i]] ^= 1
        ok = ~((words @ h.T) & 1).any(axis=1)
        total += np.bincount(weights[ok], minlength=n + 1)
    return total / lifts
