"""Message classes of a protograph under color refinement.

Two directed edges whose endpoints carry the same stable colors have identical
computation trees, so density evolution only needs one representative per
class. This is what keeps quantized DE affordable for loops and squares,
whose chains are images of each other.
"""

from __future__ import annotations

from .protograph import Protograph


def refine_colors(p: Protograph) -> tuple[list[int], list[int]]:
    """Stable (equitable) coloring of variables and checks."""
    vnb: list[list[tuple[int, int]]] = [[] for _ in range(p.num_vars)]
    cnb: list[list[tuple[int, int]]] = [[] for _ in range(p.num_checks)]
    for c, v, m in p.edges:
        vnb[v].append((c, m))
        cnb[c].append((v, m))
    vcol = [1 if v in p.punctured else 0 for v in range(p.num_vars)]
    ccol = [0] * p.num_checks
    count = (len(set(vcol)), 1)
    while True:
        vsig = [(vcol[v], tuple(sorted((ccol[c], m) for c, m in vnb[v])))
                for v in range(p.num_vars)]
        csig = [(ccol[c], tuple(sorted((vcol[v], m) for v, m in cnb[c])))
                for c in range(p.num_checks)]
        vcol = _relabel(vsig)
        ccol = _relabel(csig)
        new_count = (len(set(vcol)), len(set(ccol)))
        if new_count == count:
            return vcol, ccol
        count = new_count


def _relabel(sigs: list) -> list[int]:
    ids: dict = {}
    return [ids.setdefault(s, len(ids)) for s in sigs]


class EdgeClasses:
    """Representatives of check colors, variable colors and edge classes.

    ``check_reps`` and ``var_reps`` hold ``(node, [edge class per edge
    instance])``; ``var_reps`` is indexed by variable color.
    """

    def __init__(self, p: Protograph):
        vcol, ccol = refine_colors(p)
        self.var_color = vcol
        self.check_color = ccol
        ec, ev = p.edge_instances()
        ids: dict[tuple[int, int], int] = {}
        self.edge_class = [ids.setdefault((ccol[c], vcol[v]), len(ids)) for c, v in zip(ec, ev)]
        self.num_edge_classes = len(ids)
        self.edge_var_class = [0] * len(ids)
        for (_, vc), e in ids.items():
            self.edge_var_class[e] = vc

        per_check: dict[int, list[int]] = {}
        per_var: dict[int, list[int]] = {}
        for idx, (c, v) in enumerate(zip(ec, ev)):
            per_check.setdefault(int(c), []).append(self.edge_class[idx])
            per_var.setdefault(int(v), []).append(self.edge_class[idx])
        first_check: dict[int, int] = {}
        for c in range(p.num_checks):
            first_check.setdefault(ccol[c], c)
        first_var: dict[int, int] = {}
        for v in range(p.num_vars):
            first_var.setdefault(vcol[v], v)
        self.check_reps = [(c, per_check.get(c, [])) for _, c in sorted(first_check.items())]
        self.var_reps = [(v, per_var.get(v, [])) for _, v in sorted(first_var.items())]
        self.var_class_punctured = [v in p.punctured for v, _ in self.var_reps]
        # multiplicity of each variable color, for averaging over all variables
        self.var_class_size = [vcol.count(k) for k in range(len(self.var_reps))]
