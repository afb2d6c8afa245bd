"""Protograph data model and builders for coupled and connected chain ensembles.

Indices are 0-based everywhere in code. Chain positions stored in
``Protograph.positions`` are 1-based so that traces line up with the usual
"position t = 1..L" plots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


class ProtographError(ValueError):
    """Invalid builder parameters or malformed protograph data."""


class UnsupportedProfileError(ProtographError):
    pass


class GeometryError(ProtographError):
    pass


@dataclass(frozen=True)
class Protograph:
    name: str
    num_checks: int
    num_vars: int
    edges: tuple[tuple[int, int, int], ...]
    punctured: frozenset[int] = frozenset()
    positions: dict[int, tuple[int, int]] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        seen = set()
        for c, v, m in self.edges:
            if not (0 <= c < self.num_checks and 0 <= v < self.num_vars):
                raise ProtographError(f"edge ({c}, {v}) out of range")
            if m < 1 or int(m) != m:
                raise ProtographError(f"edge ({c}, {v}) has invalid multiplicity {m}")
            if (c, v) in seen:
                raise ProtographError(f"duplicate edge ({c}, {v})")
            seen.add((c, v))
        for v in self.punctured:
            if not 0 <= v < self.num_vars:
                raise ProtographError(f"punctured index {v} out of range")

    @property
    def base_matrix(self) -> np.ndarray:
        B = np.zeros((self.num_checks, self.num_vars), dtype=np.int64)
        for c, v, m in self.edges:
            B[c, v] = m
        return B

    @property
    def var_degrees(self) -> np.ndarray:
        return self.base_matrix.sum(axis=0)

    @property
    def check_degrees(self) -> np.ndarray:
        return self.base_matrix.sum(axis=1)

    @property
    def num_edges(self) -> int:
        return sum(m for _, _, m in self.edges)

    def edge_instances(self) -> tuple[np.ndarray, np.ndarray]:
        """Check and variable index of every edge, parallel edges expanded."""
        cs, vs = [], []
        for c, v, m in self.edges:
            cs.extend([c] * m)
            vs.extend([v] * m)
        return np.asarray(cs, dtype=np.int64), np.asarray(vs, dtype=np.int64)

    def relabel(self, check_perm: Sequence[int], var_perm: Sequence[int]) -> "Protograph":
        """Return the same graph with check c renamed check_perm[c], var v renamed var_perm[v]."""
        edges = sorted((check_perm[c], var_perm[v], m) for c, v, m in self.edges)
        return Protograph(
            name=self.name,
            num_checks=self.num_checks,
            num_vars=self.num_vars,
            edges=tuple(edges),
            punctured=frozenset(var_perm[v] for v in self.punctured),
            positions={var_perm[v]: pos for v, pos in self.positions.items()},
        )


@dataclass(frozen=True)
class DesignRate:
    numerator: int
    denominator: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def value(self) -> float:
        return self.numerator / self.denominator


def design_rate(p: Protograph) -> DesignRate:
    transmitted = p.num_vars - len(p.punctured)
    if transmitted <= 0:
        raise ProtographError("protograph has no transmitted variables")
    r = Fraction(p.num_vars - p.num_checks, transmitted)
    return DesignRate(r.numerator, r.denominator)


# ---------------------------------------------------------------------------
# Builders


@dataclass(frozen=True)
class ChainRef:
    """Index bookkeeping for one coupled chain inside a builder."""

    chain_id: int
    J: int
    K: int
    L: int
    var_offset: int
    check_offset: int

    @property
    def b(self) -> int:
        return self.K // self.J

    @property
    def num_checks(self) -> int:
        return self.L + self.J - 1

    def vars_at(self, t: int) -> list[int]:
        if not 1 <= t <= self.L:
            raise GeometryError(f"position {t} outside chain of length {self.L}")
        base = self.var_offset + (t - 1) * self.b
        return list(range(base, base + self.b))

    def check(self, c: int) -> int:
        """Global index of the chain's check c (1-based, 1..L+J-1)."""
        return self.check_offset + c - 1

    def head_checks(self) -> list[int]:
        """Deficient leading checks, most deficient first."""
        return [self.check(c) for c in range(1, self.J)]

    def tail_checks(self) -> list[int]:
        """Deficient trailing checks, most deficient first."""
        return [self.check(self.L + self.J - c) for c in range(1, self.J)]


class ProtographBuilder:
    """Mutable accumulator used while wiring chains together."""

    def __init__(self, name: str):
        self.name = name
        self.num_checks = 0
        self.num_vars = 0
        self.mult: dict[tuple[int, int], int] = {}
        self.positions: dict[int, tuple[int, int]] = {}
        self.chains: list[ChainRef] = []
        # host variables already used by a connection, with the increment they received
        self.raised: dict[int, int] = {}

    def add_edge(self, c: int, v: int, m: int = 1) -> None:
        self.mult[(c, v)] = self.mult.get((c, v), 0) + m

    def add_chain(self, J: int, K: int, L: int) -> ChainRef:
        _check_profile(J, K)
        if L < J:
            raise ProtographError(f"chain length L={L} shorter than J={J}")
        ref = ChainRef(len(self.chains), J, K, L, self.num_vars, self.num_checks)
        self.num_vars += ref.b * L
        self.num_checks += ref.num_checks
        for t in range(1, L + 1):
            for v in ref.vars_at(t):
                self.positions[v] = (ref.chain_id, t)
                for c in range(t, t + J):
                    self.add_edge(ref.check(c), v)
        self.chains.append(ref)
        return ref

    def check_degree(self, c: int) -> int:
        return sum(m for (cc, _), m in self.mult.items() if cc == c)

    def build(self) -> Protograph:
        edges = tuple(sorted((c, v, m) for (c, v), m in self.mult.items()))
        return Protograph(self.name, self.num_checks, self.num_vars, edges,
                          frozenset(), dict(self.positions))


def _check_profile(J: int, K: int) -> None:
    if J < 1 or K < 1 or K % J != 0:
        raise UnsupportedProfileError(f"({J},{K}) profile needs K divisible by J")


def build_uncoupled(J: int, K: int) -> Protograph:
    _check_profile(J, K)
    b = K // J
    edges = tuple((0, v, J) for v in range(b))
    return Protograph(f"uncoupled({J},{K})", 1, b, edges, frozenset(),
                      {v: (0, 1) for v in range(b)})


def build_chain(J: int, K: int, L: int) -> Protograph:
    bld = ProtographBuilder(f"C({J},{K},{L})")
    bld.add_chain(J, K, L)
    return bld.build()


FULL = "full"      # raise every donor check to degree K, one new edge per host variable
DOUBLE = "double"  # (4,8) type A: raise donor checks to degree 8, two new edges per host variable


def attach_chain_end(
    bld: ProtographBuilder,
    donor_end: Sequence[int],
    host: ChainRef,
    center: int,
    style: str = FULL,
    reverse: bool = False,
) -> int:
    """Connect a chain end's deficient checks into the window center-1..center+1 of host.

    ``donor_end`` lists the donor's deficient checks most deficient first. The
    host variables of the window are ordered by position (descending when
    ``reverse``); the most deficient check takes the first free variables in
    that order. Returns the number of edges added.
    """
    window = [center - 1, center, center + 1]
    if window[0] < 1 or window[-1] > host.L:
        raise GeometryError(f"window {window} outside host chain of length {host.L}")
    if reverse:
        window = window[::-1]
    host_vars = [v for t in window for v in host.vars_at(t)]
    for v in host_vars:
        if v in bld.raised:
            raise GeometryError(f"host variable {v} already raised by another connection")

    if style == FULL:
        per_var = 1
    elif style == DOUBLE:
        per_var = 2
    else:
        raise ProtographError(f"unknown connection style {style!r}")

    # each pass over the window hands one new edge to every host variable, so a
    # check's share never lands twice on the same variable
    slots = host_vars * per_var
    degrees = [bld.check_degree(c) for c in donor_end]
    target = _fill_level(degrees, len(slots))
    needs = [max(target - d, 0) for d in degrees]
    k = 0
    for c, need in zip(donor_end, needs):
        for v in slots[k:k + need]:
            bld.add_edge(c, v)
        k += need
    for v in host_vars:
        bld.raised[v] = per_var
    return len(slots)


def _fill_level(degrees: Sequence[int], edges: int) -> int:
    """Common degree reached when ``edges`` new edges top up the lowest checks."""
    for target in range(max(degrees), max(degrees) + edges + 1):
        total = sum(max(target - d, 0) for d in degrees)
        if total == edges:
            return target
        if total > edges:
            break
    raise GeometryError(f"cannot spread {edges} edges evenly over checks of degree {list(degrees)}")


def build_loop(J: int, K: int, L: int, h: int | None = None, style: str = FULL,
               name: str | None = None) -> Protograph:
    """Two C(J,K,L) chains joined end-into-interior in a 180-degree symmetric loop.

    Chain 2's head attaches into chain 1 around position h; chain 1's tail
    attaches into chain 2 around position L-h+1. The default h is L/3
    rounded half up.
    """
    if h is None:
        h = default_offset(L)
    if not 2 <= h <= L - 1:
        raise GeometryError(f"connection offset h={h} needs 2 <= h <= L-1 (L={L})")
    bld = ProtographBuilder(name or f"L({J},{K},{L},h={h})")
    c1 = bld.add_chain(J, K, L)
    c2 = bld.add_chain(J, K, L)
    attach_chain_end(bld, c2.head_checks(), c1, h, style, reverse=True)
    attach_chain_end(bld, c1.tail_checks(), c2, L - h + 1, style)
    return bld.build()


def default_offset(L: int) -> int:
    return (2 * L + 3) // 6


def build_loop48(variant: str, L: int, h: int | None = None) -> Protograph:
    """(4,8) loops with connection type A (12 edges per end) or B (6 edges per end)."""
    styles = {"A": DOUBLE, "B": FULL}
    if variant not in styles:
        raise ProtographError(f"(4,8) connection type must be A or B, got {variant!r}")
    return build_loop(4, 8, L, h, styles[variant], name=f"L{variant}(4,8,{L})")


def build_square(L: int) -> Protograph:
    """Two horizontal C(3,6,L) chains joined by two C(3,6,L/2) bridges."""
    if L % 2 or L < 8:
        raise GeometryError(f"square needs even L >= 8, got {L}")
    d = L // 4
    bld = ProtographBuilder(f"S(3,6,{L})")
    top = bld.add_chain(3, 6, L)
    bottom = bld.add_chain(3, 6, L)
    for center in (d, L + 1 - d):
        bridge = bld.add_chain(3, 6, L // 2)
        attach_chain_end(bld, bridge.head_checks(), top, center, reverse=True)
        attach_chain_end(bld, bridge.tail_checks(), bottom, center)
    return bld.build()


def build_mixed_loop(variant: str, L: int) -> Protograph:
    """Loop of a (3,6) chain (chain 0) and a (4,8) chain (chain 1) of equal length.

    The (3,6) tail attaches into the (4,8) chain with six edges as in the
    (3,6) loop. L1 raises the (4,8) head checks to degree 8 with twelve edges
    into the (3,6) window starting at position L//3; L2 spreads the same twelve edges over
    (3,6) positions L-2, 3 and 2.
    """
    if variant not in ("L1", "L2"):
        raise ProtographError(f"mixed loop variant must be L1 or L2, got {variant!r}")
    if L < 6:
        raise GeometryError(f"mixed loop needs L >= 6, got {L}")
    h = L // 3
    bld = ProtographBuilder(f"{variant}(3,6,4,8,{L})")
    c36 = bld.add_chain(3, 6, L)
    c48 = bld.add_chain(4, 8, L)
    attach_chain_end(bld, c36.tail_checks(), c48, L - h + 1, FULL)
    if variant == "L1":
        attach_chain_end(bld, c48.head_checks(), c36, h + 1, DOUBLE, reverse=True)
    else:
        if len({L - 2, 3, 2}) < 3 or L - 2 <= 3:
            raise GeometryError(f"L2 anchors collide for L={L}")
        deg2, deg4, deg6 = c48.head_checks()
        for check, t, m in ((deg2, L - 2, 3), (deg4, 3, 2), (deg6, 2, 1)):
            for v in c36.vars_at(t):
                bld.add_edge(check, v, m)
    return bld.build()


# ---------------------------------------------------------------------------
# Validation and file format


@dataclass
class ValidationReport:
    var_degrees: list[int]
    check_degrees: list[int]
    connected: bool
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def validate(p: Protograph) -> ValidationReport:
    failures = []
    vdeg = [0] * p.num_vars
    cdeg = [0] * p.num_checks
    pairs = [(c, v) for c, v, _ in p.edges]
    if len(set(pairs)) != len(pairs):
        failures.append("duplicate (check, var) pairs")
    for c, v, m in p.edges:
        vdeg[v] += m
        cdeg[c] += m
    failures += [f"isolated variable {v}" for v, d in enumerate(vdeg) if d == 0]
    failures += [f"isolated check {c}" for c, d in enumerate(cdeg) if d == 0]

    # union-find over checks (0..C-1) and variables (C..C+V-1)
    parent = list(range(p.num_checks + p.num_vars))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c, v, _ in p.edges:
        parent[find(c)] = find(p.num_checks + v)
    roots = {find(x) for x in range(len(parent))}
    connected = len(roots) == 1
    if not connected:
        failures.append(f"graph has {len(roots)} components")
    return ValidationReport(vdeg, cdeg, connected, failures)


def to_dict(p: Protograph) -> dict:
    return {
        "version": FORMAT_VERSION,
        "name": p.name,
        "num_checks": p.num_checks,
        "num_vars": p.num_vars,
        "edges": [list(e) for e in sorted(p.edges)],
        "punctured": sorted(p.punctured),
        "positions": {str(v): list(pos) for v, pos in sorted(p.positions.items())},
    }


def from_dict(d: dict) -> Protograph:
    if not isinstance(d, dict):
        raise ProtographError("protograph file must hold a JSON object")
    if d.get("version") != FORMAT_VERSION:
        raise ProtographError(f"unsupported protograph format version {d.get('version')!r}")
    try:
        edges = []
        for e in d["edges"]:
            c, v, m = (int(x) for x in e)
            if m < 1:
                raise ProtographError(f"edge {e} has non-positive multiplicity")
            edges.append((c, v, m))
        return Protograph(
            name=str(d.get("name", "")),
            num_checks=int(d["num_checks"]),
            num_vars=int(d["num_vars"]),
            edges=tuple(sorted(edges)),
            punctured=frozenset(int(v) for v in d.get("punctured", [])),
            positions={int(v): (int(pos[0]), int(pos[1]))
                       for v, pos in d.get("positions", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ProtographError):
            raise
        raise ProtographError(f"malformed protograph data: {exc}") from exc


def save(path: str | Path, p: Protograph) -> None:
    Path(path).write_text(json.dumps(to_dict(p), indent=1) + "\n", encoding="utf-8")


def load(path: str | Path) -> Protograph:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ProtographError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(data)
