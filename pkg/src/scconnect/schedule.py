"""Selective node-update schedule on BEC density evolution and its update count.

Each sweep updates checks, then variables, in index order (the flooding order
of :mod:`scconnect.de_bec`). A node is skipped when

* (i) it is a variable whose bit erasure probability is already below
  ``pb_max``;
* (ii) none of its neighbours was updated in the neighbours' most recent
  phase (for checks: the previous sweep's variable phase; for variables:
  this sweep's check phase);
* (iii) it is a variable whose relative improvement
  ``(pb_old - pb_new) / pb_old`` would be below ``theta``.

A skipped variable keeps emitting its last messages.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .de_bec import EdgeGraph, channel_vector, exclusive_products
from .protograph import Protograph


@dataclass(frozen=True)
class ScheduleConfig:
    pb_max: float = 1e-5
    theta: float = 1e-2
    max_sweeps: int = 100_000
    rule_target: bool = True
    rule_neighbourhood: bool = True
    rule_improvement: bool = True

    def __post_init__(self):
        if not self.pb_max > 0:
            raise ValueError("pb_max must be positive")
        if not 0 <= self.theta < 1:
            raise ValueError("theta must lie in [0, 1)")

    @classmethod
    def flooding(cls, pb_max: float = 1e-5, max_sweeps: int = 100_000) -> "ScheduleConfig":
        """All suppression rules off: plain flooding DE."""
        return cls(pb_max, 0.0, max_sweeps, False, False, False)


@dataclass
class ComplexityReport:
    converged: bool
    sweeps: int
    check_updates: np.ndarray
    var_updates: np.ndarray
    trace: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def total_updates(self) -> int:
        return int(self.check_updates.sum() + self.var_updates.sum())

    @property
    def num_nodes(self) -> int:
        return len(self.check_updates) + len(self.var_updates)

    @property
    def i_eff_exact(self) -> Fraction:
        return Fraction(self.total_updates, self.num_nodes)

    @property
    def i_eff(self) -> float:
        return self.total_updates / self.num_nodes


def scheduled_de(p: Protograph | EdgeGraph, eps: float, cfg: ScheduleConfig = ScheduleConfig(),
                 keep_trace: bool = False) -> ComplexityReport:
    g = p if isinstance(p, EdgeGraph) else EdgeGraph(p)
    ch = channel_vector(g, eps)
    ch_edge = ch[g.edge_var]
    rows_c, cols_c = g.check_col
    rows_v, cols_v = g.var_col
    pad = g.num_edges

    q = np.ones(g.num_edges)
    pmsg = ch_edge.copy()
    pb = ch.copy()
    check_updates = np.zeros(g.num_checks, dtype=np.int64)
    var_updates = np.zeros(g.num_vars, dtype=np.int64)
    # initialization counts as the variables' previous update
    var_updated = np.ones(g.num_vars, dtype=bool)
    trace = []
    # neighbour lookups through the padded slot tables; pad maps to False
    check_nbr_vars = np.append(g.edge_var, 0)[g.check_slots]
    check_nbr_valid = g.check_slots < pad
    var_nbr_checks = np.append(g.edge_check, 0)[g.var_slots]
    var_nbr_valid = g.var_slots < pad

    sweep = 0
    converged = bool(np.all(pb < cfg.pb_max))
    while not converged and sweep < cfg.max_sweeps:
        sweep += 1
        # check phase
        if cfg.rule_neighbourhood:
            active_c = np.any(var_updated[check_nbr_vars] & check_nbr_valid, axis=1)
        else:
            active_c = np.ones(g.num_checks, dtype=bool)
        q_new = 1.0 - exclusive_products(np.append(1.0 - pmsg, 1.0)[g.check_slots])[rows_c, cols_c]
        q = np.where(active_c[g.edge_check], q_new, q)
        check_updates += active_c

        # variable phase
        qq = np.append(q, 1.0)[g.var_slots]
        pb_new = ch * qq.prod(axis=1)
        active_v = np.ones(g.num_vars, dtype=bool)
        if cfg.rule_neighbourhood:
            active_v &= np.any(active_c[var_nbr_checks] & var_nbr_valid, axis=1)
        if cfg.rule_target:
            active_v &= ~(pb < cfg.pb_max)
        if cfg.rule_improvement:
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = np.where(pb > 0, (pb - pb_new) / pb, 0.0)
            active_v &= ~(gain < cfg.theta)
        p_new = ch_edge * exclusive_products(qq)[rows_v, cols_v]
        pmsg = np.where(active_v[g.edge_var], p_new, pmsg)
        pb = np.where(active_v, pb_new, pb)
        var_updates += active_v
        var_updated = active_v
        if keep_trace:
            trace.append(pb.copy())

        converged = bool(np.all(pb < cfg.pb_max))
        if not active_c.any() and not active_v.any():
            break
    return ComplexityReport(converged, sweep, check_updates, var_updates, trace)


@dataclass
class SweepRow:
    epsilon: float
    i_eff: float
    converged: bool
    sweeps: int


def complexity_sweep(p: Protograph, eps_grid: list[float],
                     cfg: ScheduleConfig = ScheduleConfig()) -> tuple[list[SweepRow], float | None]:
    """One scheduled run per grid point, plus the largest converged epsilon."""
    g = EdgeGraph(p)
    rows = []
    for eps in sorted(eps_grid):
        rep = scheduled_de(g, eps, cfg)
        rows.append(SweepRow(eps, rep.i_eff, rep.converged, rep.sweeps))
    ok = [r.epsilon for r in rows if r.converged]
    return rows, (max(ok) if ok else None)


def sweep_csv(rows: list[SweepRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["epsilon", "i_eff", "converged", "sweeps"])
    for r in rows:
        w.writerow([repr(r.epsilon), repr(r.i_eff), int(r.converged), r.sweeps])
    return out.getvalue()
