"""Discretized density evolution for protographs on the binary-input AWGN channel.

Message densities live on a uniform LLR grid ``k * dq`` for ``|k| <= R_LLR/dq``
with saturating end bins. Variable-node updates are exact grid convolutions
(FFT, clamped at the ends after summing). Check-node updates apply the
quantized two-input rule ``2 atanh(tanh(a/2) tanh(b/2))`` pairwise through a
precomputed table. For ``|a| - |b|`` beyond ``ln(2/dq)`` the rule rounds to
``|b|``'s own bin, so only a band around the diagonal is stored; the rest is
handled with suffix sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy.special import ndtr

from .protograph import Protograph, design_rate
from .symmetry import EdgeClasses

DEFAULT_DQ = 0.05
DEFAULT_RANGE = 30.0
TARGET_PE = 1e-6
MAX_ITERS = 10_000
STALL = 1e-12
UPPER_DB = 6.0
LOWER_DB = -2.0


class GridMismatchError(ValueError):
    pass


class BracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class LLRGrid:
    dq: float = DEFAULT_DQ
    r_llr: float = DEFAULT_RANGE

    @property
    def n_half(self) -> int:
        return int(round(self.r_llr / self.dq))

    @property
    def size(self) -> int:
        return 2 * self.n_half + 1

    @property
    def values(self) -> np.ndarray:
        return np.arange(-self.n_half, self.n_half + 1) * self.dq


@dataclass
class QuantizedDensity:
    grid: LLRGrid
    mass: np.ndarray

    def __post_init__(self):
        if len(self.mass) != self.grid.size:
            raise GridMismatchError("mass vector does not match grid size")

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def mean(self) -> float:
        return float(self.mass @ self.grid.values)

    def variance(self) -> float:
        x = self.grid.values
        m = self.mean()
        return float(self.mass @ (x - m) ** 2)

    def error_prob(self) -> float:
        return error_prob(self.mass, self.grid.n_half)

    @classmethod
    def point(cls, grid: LLRGrid, llr: float) -> "QuantizedDensity":
        m = np.zeros(grid.size)
        k = int(np.clip(round(llr / grid.dq), -grid.n_half, grid.n_half))
        m[k + grid.n_half] = 1.0
        return cls(grid, m)


def error_prob(mass: np.ndarray, n_half: int) -> float:
    """Mass strictly below zero plus half the mass at exactly zero."""
    return float(mass[:n_half].sum() + 0.5 * mass[n_half])


def noise_variance(ebn0_db: float, rate: float) -> float:
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return 1.0 / (2.0 * rate * 10.0 ** (ebn0_db / 10.0))


def channel_density(ebn0_db: float, rate: float, grid: LLRGrid = LLRGrid(),
                    punctured: bool = False) -> QuantizedDensity:
    """Quantized LLR density of BPSK over AWGN, all-zero codeword sent."""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if punctured:
        return QuantizedDensity.point(grid, 0.0)
    s2 = noise_variance(ebn0_db, rate)
    mu, sd = 2.0 / s2, 2.0 / math.sqrt(s2)
    nh = grid.n_half
    edges = (np.arange(-nh, nh) + 0.5) * grid.dq
    cdf = ndtr((edges - mu) / sd)
    mass = np.diff(np.concatenate(([0.0], cdf, [1.0])))
    return QuantizedDensity(grid, np.maximum(mass, 0.0))


# ---------------------------------------------------------------------------
# Variable node: convolution with saturation


def bec_channel(grid: LLRGrid, eps: float) -> np.ndarray:
    """Erasure channel on the grid: mass eps at LLR 0, the rest in the top bin."""
    if not 0 <= eps <= 1:
        raise ValueError("erasure probability must lie in [0, 1]")
    mass = np.zeros(grid.size)
    mass[grid.n_half] = eps
    mass[-1] += 1.0 - eps
    return mass


def _clamp(full: np.ndarray, offset: int, n_half: int) -> np.ndarray:
    """Fold a density indexed from -offset into the saturating grid."""
    lo = offset - n_half
    out = full[lo:lo + 2 * n_half + 1].copy()
    out[0] += full[:lo].sum()
    out[-1] += full[lo + 2 * n_half + 1:].sum()
    # FFT round-off leaves ~1e-17 negatives; mass drift would otherwise be
    # amplified by (dc-1)(dv-1) every iteration
    np.maximum(out, 0.0, out=out)
    out /= out.sum()
    return out


def vn_update(incoming: list[np.ndarray], channel: np.ndarray, n_half: int,
              with_total: bool = False):
    """Per-edge outgoing densities of a variable node (excluding each target edge).

    ``incoming`` are the check-to-variable densities of the node's edges.
    With ``with_total`` the full a-posteriori density is returned as well.
    """
    size = 2 * n_half + 1
    for x in incoming:
        if len(x) != size:
            raise GridMismatchError("density length does not match grid")
    if len(channel) != size:
        raise GridMismatchError("channel density length does not match grid")
    d = len(incoming)
    terms = d + 1
    nfft = _fft_len(terms * (size - 1) + 1)
    spectra = [np.fft.rfft(x, nfft) for x in incoming]
    ch = np.fft.rfft(channel, nfft)
    prefix = [ch]
    for s in spectra[:-1]:
        prefix.append(prefix[-1] * s)
    suffix = [np.ones_like(ch)]
    for s in spectra[:0:-1]:
        suffix.append(suffix[-1] * s)
    suffix = suffix[::-1]
    outs = []
    for e in range(d):
        full = np.fft.irfft(prefix[e] * suffix[e], nfft)
        # prefix[e] * suffix[e] combines d terms: channel plus d-1 messages
        outs.append(_clamp(full[:d * (size - 1) + 1], d * n_half, n_half))
    if not with_total:
        return outs
    full = np.fft.irfft(prefix[-1] * spectra[-1] if d else ch, nfft)
    total = _clamp(full[:terms * (size - 1) + 1], terms * n_half, n_half)
    return outs, total


@lru_cache(maxsize=None)
def _fft_len(n: int) -> int:
    from scipy.fft import next_fast_len
    return next_fast_len(n, real=True)


# ---------------------------------------------------------------------------
# Check node: banded quantized table


def _pair_llr(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """2 atanh(tanh(x/2) tanh(y/2)) for x, y >= 0, evaluated stably."""
    return (np.minimum(x, y) + np.log1p(np.exp(-(x + y)))
            - np.log1p(np.exp(-np.abs(x - y))))


@dataclass(frozen=True)
class CheckTable:
    """Banded two-input check table on magnitudes 0..n_half.

    ``band[j, k]`` is the output bin of magnitudes (j + k, j) for
    ``k < width[j]``; for larger k the output bin is j itself.
    """

    n_half: int
    width: np.ndarray
    band: np.ndarray


@lru_cache(maxsize=8)
def check_table(grid: LLRGrid) -> CheckTable:
    nh, dq = grid.n_half, grid.dq
    wmax = int(math.ceil(math.log(2.0 / dq) / dq)) + 4
    j = np.arange(nh + 1)[:, None]
    k = np.arange(wmax)[None, :]
    i = j + k
    t = np.floor(_pair_llr(i * dq, j * dq) / dq + 0.5).astype(np.int64)
    # saturated magnitudes past the grid edge behave like the edge bin
    t = np.where(i > nh, -1, t)
    hit = (t == j) | (i > nh)
    if not np.all(hit.any(axis=1)):
        raise RuntimeError("check table band too narrow")
    width = hit.argmax(axis=1).astype(np.int64)
    return CheckTable(nh, width, t.astype(np.int64))


@njit(cache=True)
def _cn_pair_kernel(a, b, nh, width, band, out):
    out[:] = 0.0
    za = a[nh]
    zb = b[nh]
    ta = a.sum()
    tb = b.sum()
    out[nh] = za * tb + zb * ta - za * zb
    sap = np.zeros(nh + 2)
    san = np.zeros(nh + 2)
    sbp = np.zeros(nh + 2)
    sbn = np.zeros(nh + 2)
    for m in range(nh, 0, -1):
        sap[m] = sap[m + 1] + a[nh + m]
        san[m] = san[m + 1] + a[nh - m]
        sbp[m] = sbp[m + 1] + b[nh + m]
        sbn[m] = sbn[m + 1] + b[nh - m]
    # pairs with |a| >= |b| = j
    for j in range(1, nh + 1):
        bp = b[nh + j]
        bn = b[nh - j]
        if bp == 0.0 and bn == 0.0:
            continue
        w = width[j]
        for k in range(w):
            i = j + k
            ap = a[nh + i]
            an = a[nh - i]
            t = band[j, k]
            pos = ap * bp + an * bn
            neg = ap * bn + an * bp
            if t == 0:
                out[nh] += pos + neg
            else:
                out[nh + t] += pos
                out[nh - t] += neg
        i0 = j + w
        if i0 <= nh:
            sp = sap[i0]
            sn = san[i0]
            out[nh + j] += sp * bp + sn * bn
            out[nh - j] += sp * bn + sn * bp
    # pairs with |b| > |a| = i
    for i in range(1, nh + 1):
        ap = a[nh + i]
        an = a[nh - i]
        if ap == 0.0 and an == 0.0:
            continue
        w = width[i]
        for k in range(1, w):
            j = i + k
            if j > nh:
                break
            bp = b[nh + j]
            bn = b[nh - j]
            t = band[i, k]
            pos = ap * bp + an * bn
            neg = ap * bn + an * bp
            if t == 0:
                out[nh] += pos + neg
            else:
                out[nh + t] += pos
                out[nh - t] += neg
        j0 = i + max(w, 1)
        if j0 <= nh:
            sp = sbp[j0]
            sn = sbn[j0]
            out[nh + i] += ap * sp + an * sn
            out[nh - i] += ap * sn + an * sp


def cn_pair(a: np.ndarray, b: np.ndarray, table: CheckTable) -> np.ndarray:
    """Density of the check combination of two independent quantized LLRs."""
    size = 2 * table.n_half + 1
    if len(a) != size or len(b) != size:
        raise GridMismatchError("density length does not match check table")
    out = np.empty(size)
    _cn_pair_kernel(a, b, table.n_half, table.width, table.band, out)
    out /= out.sum()
    return out


def cn_update(incoming: list[np.ndarray], table: CheckTable) -> list[np.ndarray]:
    """Per-edge outgoing densities of a check node, each excluding its own edge."""
    d = len(incoming)
    if d == 1:
        out = np.zeros(2 * table.n_half + 1)
        out[table.n_half] = 1.0
        return [out]
    prefix = [incoming[0]]
    for x in incoming[1:-1]:
        prefix.append(cn_pair(prefix[-1], x, table))
    suffix = [incoming[-1]]
    for x in incoming[-2:0:-1]:
        suffix.append(cn_pair(suffix[-1], x, table))
    suffix = suffix[::-1]  # suffix[e] combines incoming[e+1:]
    outs = [suffix[0]]
    for e in range(1, d - 1):
        outs.append(cn_pair(prefix[e - 1], suffix[e], table))
    outs.append(prefix[d - 2])
    return outs


def cn_pair_reference(a: np.ndarray, b: np.ndarray, grid: LLRGrid) -> np.ndarray:
    """Full N x N table evaluation of the quantized check rule (slow, for testing)."""
    nh, dq = grid.n_half, grid.dq
    x = grid.values
    sa = np.sign(x)[:, None] * np.sign(x)[None, :]
    mag = _pair_llr(np.abs(x)[:, None], np.abs(x)[None, :])
    t = (np.floor(mag / dq + 0.5).astype(np.int64) * sa.astype(np.int64)) + nh
    out = np.zeros(grid.size)
    np.add.at(out, t.ravel(), np.outer(a, b).ravel())
    return out


# ---------------------------------------------------------------------------
# Protograph DE and threshold search


@dataclass
class AwgnRunResult:
    converged: bool
    iterations_used: int
    max_pe_final: float
    pe: np.ndarray = field(repr=False, default=None)


class AwgnDE:
    """Reusable discretized-DE engine for one protograph and grid."""

    def __init__(self, p: Protograph, grid: LLRGrid = LLRGrid()):
        self.protograph = p
        self.grid = grid
        self.rate = design_rate(p).value
        self.classes = EdgeClasses(p)
        self.table = check_table(grid)

    def run(self, ebn0_db: float, target: float = TARGET_PE, max_iters: int = MAX_ITERS,
            channel: np.ndarray | None = None) -> AwgnRunResult:
        """Flooding DE; ``channel`` overrides the Gaussian channel density."""
        grid, cls, nh = self.grid, self.classes, self.grid.n_half
        if channel is None:
            channel = channel_density(ebn0_db, self.rate, grid).mass
        erased = QuantizedDensity.point(grid, 0.0).mass
        chans = [erased if punct else channel for punct in cls.var_class_punctured]
        v2c = [chans[cls.edge_var_class[e]] for e in range(cls.num_edge_classes)]
        c2v = [None] * cls.num_edge_classes
        prev = None
        pe = np.ones(len(cls.var_reps))
        for it in range(1, max_iters + 1):
            for c, ecls in cls.check_reps:
                outs = cn_update([v2c[e] for e in ecls], self.table)
                for e, o in zip(ecls, outs):
                    c2v[e] = o
            new_v2c = list(v2c)
            pe = np.empty(len(cls.var_reps))
            for r, (v, ecls) in enumerate(cls.var_reps):
                outs, total = vn_update([c2v[e] for e in ecls], chans[r], nh, with_total=True)
                for e, o in zip(ecls, outs):
                    new_v2c[e] = o
                pe[r] = error_prob(total, nh)
            v2c = new_v2c
            worst = float(pe.max())
            if worst <= target:
                return AwgnRunResult(True, it, worst, pe)
            if prev is not None and float(np.max(prev - pe)) < STALL:
                return AwgnRunResult(False, it, worst, pe)
            prev = pe
        return AwgnRunResult(False, max_iters, float(pe.max()), pe)


@dataclass
class AwgnThreshold:
    ensemble: str
    ebn0_star_db: float
    tol_db: float
    grid: LLRGrid
    iterations: int
    lo: float
    hi: float

    def to_json(self) -> dict:
        return {"ensemble": self.ensemble, "ebn0_star_db": self.ebn0_star_db,
                "tol_db": self.tol_db,
                "grid": {"dq": self.grid.dq, "range": self.grid.r_llr},
                "iterations": self.iterations}


def threshold_awgn(p: Protograph, tol_db: float = 0.01, grid: LLRGrid = LLRGrid(),
                   lo: float = LOWER_DB, hi: float = UPPER_DB, target: float = TARGET_PE,
                   max_iters: int = MAX_ITERS) -> AwgnThreshold:
    """Bisection in Eb/N0 (dB) on the DE convergence predicate."""
    de = AwgnDE(p, grid)
    total = 0
    top = de.run(hi, target, max_iters)
    total += top.iterations_used
    if not top.converged:
        raise BracketError(f"{p.name}: DE does not converge at the upper bracket {hi} dB")
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        res = de.run(mid, target, max_iters)
        total += res.iterations_used
        if res.converged:
            hi = mid
        else:
            lo = mid
    return AwgnThreshold(p.name, 0.5 * (lo + hi), tol_db, grid, total, lo, hi)
