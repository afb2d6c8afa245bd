"""Command-line front end: ``scconnect <subcommand> ...``.

Ensemble arguments are protograph JSON files or spec strings such as
``chain:3,6,12``, ``loop:3,6,15,h=5``, ``square:3,6,16``, ``loop48:B,12``,
``mixed:L2,15`` or ``uncoupled:3,6``. Every command that writes files also
writes ``<output>.manifest.json`` describing how to regenerate it.
"""

from __future__ import annotations

import json
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import __version__, de_awgn, de_bec, lift_sim, protograph, schedule, wenum
from .protograph import Protograph

WORKERS_ENV = "SCCONNECT_WORKERS"


class SpecError(click.UsageError):
    pass


def tool_version() -> str:
    return __version__


def _ints(body: str, n: int, spec: str) -> list[int]:
    parts = body.split(",")
    if len(parts) != n or not all(re.fullmatch(r"\d+", x.strip()) for x in parts):
        raise SpecError(f"bad ensemble spec {spec!r}")
    return [int(x) for x in parts]


def parse_spec(spec: str) -> Protograph:
    """Build a protograph from the ensemble mini-grammar."""
    kind, sep, body = spec.strip().partition(":")
    if not sep:
        raise SpecError(f"bad ensemble spec {spec!r}: expected kind:params")
    kind = kind.lower()
    if kind == "uncoupled":
        return protograph.build_uncoupled(*_ints(body, 2, spec))
    if kind == "chain":
        return protograph.build_chain(*_ints(body, 3, spec))
    if kind == "loop":
        parts = body.split(",")
        h = None
        if parts and parts[-1].strip().startswith("h="):
            h = _ints(parts.pop().strip()[2:], 1, spec)[0]
        J, K, L = _ints(",".join(parts), 3, spec)
        return protograph.build_loop(J, K, L, h)
    if kind == "square":
        J, K, L = _ints(body, 3, spec)
        if (J, K) != (3, 6):
            raise SpecError("square ensembles are defined for (3,6) chains only")
        return protograph.build_square(L)
    if kind in ("loop48", "mixed"):
        variant, _, rest = body.partition(",")
        return (protograph.build_loop48 if kind == "loop48" else protograph.build_mixed_loop)(
            variant.strip(), _ints(rest, 1, spec)[0])
    raise SpecError(f"unknown ensemble kind {kind!r}")


def load_ensemble(arg: str) -> Protograph:
    path = Path(arg)
    if path.exists():
        return protograph.load(path)
    if ":" in arg:
        return parse_spec(arg)
    raise click.BadParameter(f"no such protograph file: {arg}")


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise click.BadParameter(f"{name} must be a comma-separated list of numbers") from None
    if not vals:
        raise click.BadParameter(f"{name} is empty")
    return vals


class Run:
    """Collects output files for one invocation; removes them if it fails."""

    def __init__(self, ctx: click.Context, params: dict):
        self.command = ctx.info_name
        self.params = params
        self.seed = params.get("seed")
        self.outputs: list[Path] = []
        self.start = time.time()

    def write(self, path: str | Path, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        path.write_text(text)
        return path

    def write_json(self, path: str | Path, obj: dict) -> Path:
        obj = dict(obj, manifest=Path(str(path) + ".manifest.json").name)
        return self.write(path, json.dumps(obj, indent=2) + "\n")

    def finish(self) -> None:
        manifest = {
            "subcommand": self.command,
            "parameters": self.params,
            "seed": self.seed,
            "tool_version": tool_version(),
            "outputs": [str(p) for p in self.outputs],
            "wall_time_s": round(time.time() - self.start, 3),
        }
        for p in list(self.outputs):
            self.write(str(p) + ".manifest.json", json.dumps(manifest, indent=2) + "\n")

    def abort(self) -> None:
        for p in self.outputs:
            for q in (p, Path(str(p) + ".manifest.json")):
                if q.exists():
                    q.unlink()


def _run(ctx: click.Context, params: dict, body) -> None:
    run = Run(ctx, params)
    try:
        body(run)
        run.finish()
    except (click.UsageError, click.BadParameter):
        run.abort()
        raise
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        run.abort()
        click.echo(f"error: {exc}", err=True)
        ctx.exit(2)


def _emit(run: Run, out: str | None, text: str) -> None:
    if out:
        run.write(out, text)
    else:
        click.echo(text, nl=False)


def _emit_json(run: Run, out: str | None, obj: dict) -> None:
    if out:
        run.write_json(out, obj)
    else:
        click.echo(json.dumps(obj, indent=2))


def _pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


workers_opt = click.option("--workers", type=click.IntRange(1), default=_default_workers,
                           show_default="1 or $" + WORKERS_ENV, help="Process count for sweeps.")
out_opt = click.option("--out", type=click.Path(dir_okay=False), default=None,
                       help="Output file (stdout when omitted).")


@click.group()
@click.version_option(__version__, prog_name="scconnect")
def main():
    """Connected spatially coupled LDPC ensembles: build, analyze, simulate."""


@main.command()
@click.argument("spec")
@out_opt
@click.pass_context
def build(ctx, spec, out):
    """Write the protograph for an ensemble SPEC."""
    def body(run):
        p = parse_spec(spec)
        text = json.dumps(protograph.to_dict(p), indent=1) + "\n"
        _emit(run, out, text)
    _run(ctx, dict(spec=spec, out=out), body)


@main.command()
@click.argument("ensemble")
@out_opt
@click.pass_context
def rate(ctx, ensemble, out):
    """Design rate of an ensemble."""
    def body(run):
        p = load_ensemble(ensemble)
        r = protograph.design_rate(p)
        _emit_json(run, out, {"ensemble": p.name, "numerator": r.numerator,
                              "denominator": r.denominator, "rate": round(r.value, 4)})
    _run(ctx, dict(ensemble=ensemble, out=out), body)


@main.command("threshold-bec")
@click.argument("ensemble")
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=1e-4, show_default=True)
@click.option("--pbmax", type=click.FloatRange(min=0, min_open=True), default=de_bec.TARGET_PB,
              show_default=True, help="Target bit erasure probability.")
@out_opt
@click.pass_context
def threshold_bec(ctx, ensemble, tol, pbmax, out):
    """BEC density-evolution threshold by bisection."""
    def body(run):
        p = load_ensemble(ensemble)
        res = de_bec.threshold_bec(p, tol=tol, target_pb=pbmax)
        _emit_json(run, out, res.to_json())
    _run(ctx, dict(ensemble=ensemble, tol=tol, pbmax=pbmax, out=out), body)


DEFAULT_GRID = f"{de_awgn.DEFAULT_DQ},{de_awgn.DEFAULT_RANGE}"


def _grid(text: str | None) -> de_awgn.LLRGrid:
    if not text:
        return de_awgn.LLRGrid()
    vals = _floats(text, "--grid")
    if len(vals) != 2:
        raise click.BadParameter("--grid takes DQ,RANGE")
    return de_awgn.LLRGrid(*vals)


@main.command("threshold-awgn")
@click.argument("ensemble")
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=0.01, show_default=True,
              help="Bisection tolerance in dB.")
@click.option("--grid", default=None, help=f"LLR quantization DQ,RANGE (default "
              f"{de_awgn.DEFAULT_DQ},{de_awgn.DEFAULT_RANGE}).")
@click.option("--lo", type=float, default=de_awgn.LOWER_DB, show_default=True)
@click.option("--hi", type=float, default=de_awgn.UPPER_DB, show_default=True)
@out_opt
@click.pass_context
def threshold_awgn(ctx, ensemble, tol, grid, lo, hi, out):
    """AWGN threshold (Eb/N0 in dB) from quantized density evolution."""
    def body(run):
        p = load_ensemble(ensemble)
        res = de_awgn.threshold_awgn(p, tol_db=tol, grid=_grid(grid), lo=lo, hi=hi)
        _emit_json(run, out, res.to_json())
    _run(ctx, dict(ensemble=ensemble, tol=tol, grid=grid or DEFAULT_GRID, lo=lo, hi=hi, out=out),
         body)


@main.command("de-trace")
@click.argument("ensemble")
@click.option("--eps", type=click.FloatRange(0, 1), required=True)
@click.option("--iterations", default="0,10,20,50,100", show_default=True)
@out_opt
@click.pass_context
def de_trace(ctx, ensemble, eps, iterations, out):
    """Per-position bit erasure probability at selected DE iterations."""
    def body(run):
        its = [int(x) for x in _floats(iterations, "--iterations")]
        if min(its) < 0:
            raise click.BadParameter("iterations must be non-negative")
        _emit(run, out, de_bec.de_trace_csv(load_ensemble(ensemble), eps, its))
    _run(ctx, dict(ensemble=ensemble, eps=eps, iterations=iterations, out=out), body)


@main.command()
@click.argument("ensemble")
@click.option("--eps", "eps_list", default="0.45,0.46,0.47,0.48", show_default=True)
@click.option("--theta", type=click.FloatRange(0, 1, max_open=True), default=1e-2, show_default=True)
@click.option("--pbmax", type=click.FloatRange(min=0, min_open=True), default=1e-5, show_default=True)
@out_opt
@click.pass_context
def complexity(ctx, ensemble, eps_list, theta, pbmax, out):
    """I_eff of the selective update schedule over a list of erasure probabilities."""
    def body(run):
        p = load_ensemble(ensemble)
        cfg = schedule.ScheduleConfig(pb_max=pbmax, theta=theta)
        rows, best = schedule.complexity_sweep(p, _floats(eps_list, "--eps"), cfg)
        _emit(run, out, schedule.sweep_csv(rows))
        click.echo(f"{p.name}: largest converged epsilon {best}", err=True)
    _run(ctx, dict(ensemble=ensemble, eps=eps_list, theta=theta, pbmax=pbmax, out=out), body)


@main.command("growth-rate")
@click.argument("ensemble")
@click.option("--grid", default=None, help="LO,HI,POINTS for a log-spaced delta grid "
              "(default 1e-4,0.5,200).")
@click.option("--starts", type=click.IntRange(8), default=8, show_default=True,
              help="Random starts per point (plus the uniform start).")
@click.option("--seed", type=int, default=0, show_default=True)
@out_opt
@click.pass_context
def growth_rate(ctx, ensemble, grid, starts, seed, out):
    """r(delta) in bits as CSV; delta_min goes to OUT.json (or stderr)."""
    def body(run):
        p = load_ensemble(ensemble)
        if grid:
            lo, hi, pts = _floats(grid, "--grid")
            deltas = wenum.default_grid(int(pts), lo, hi)
        else:
            deltas = None
        curve = wenum.growth_rate(p, deltas, starts=starts, seed=seed)
        _emit(run, out, wenum.curve_csv(curve))
        summary = {"ensemble": p.name, "delta_min": curve.delta_min}
        if out:
            run.write_json(Path(out).with_suffix(".json"), summary)
        else:
            click.echo(json.dumps(summary), err=True)
    _run(ctx, dict(ensemble=ensemble, grid=grid or "1e-4,0.5,200", starts=starts, seed=seed,
                   out=out), body)


@main.command()
@click.argument("ensemble")
@click.option("-M", "--lifting", "M", type=click.IntRange(1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--girth6/--no-girth6", default=True, show_default=True)
@click.option("--mode", type=click.Choice([lift_sim.CIRCULANT, lift_sim.RANDOM]),
              default=lift_sim.CIRCULANT, show_default=True)
@out_opt
@click.pass_context
def lift(ctx, ensemble, M, seed, girth6, mode, out):
    """Lift to a parity-check matrix (``n m`` header, one row per line)."""
    def body(run):
        h = lift_sim.lift(load_ensemble(ensemble), M, seed, girth6, mode)
        _emit(run, out, lift_sim.export_h(h))
        click.echo(f"{h.name}: n={h.n} m={h.m} rate={h.rate:.4f} 4-cycles="
                   f"{lift_sim.four_cycle_count(h)}", err=True)
    _run(ctx, dict(ensemble=ensemble, M=M, seed=seed, girth6=girth6, mode=mode, out=out), body)


@main.command()
@click.argument("hfile", type=click.Path(exists=True, dir_okay=False))
@click.option("--channel", type=click.Choice([lift_sim.AWGN, lift_sim.BEC]), default=lift_sim.AWGN,
              show_default=True)
@click.option("--points", required=True, help="Eb/N0 values in dB (AWGN) or erasure probabilities.")
@click.option("--rate", type=click.FloatRange(0, 1, min_open=True), default=None,
              help="Code rate for the noise variance (default 1 - m/n).")
@click.option("--min-errors", type=click.IntRange(1), default=100, show_default=True)
@click.option("--max-frames", type=click.IntRange(1), default=100_000, show_default=True)
@click.option("--max-iters", type=click.IntRange(1), default=lift_sim.AWGN_MAX_ITERS, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@workers_opt
@out_opt
@click.pass_context
def simulate(ctx, hfile, channel, points, rate, min_errors, max_frames, max_iters, seed, workers, out):
    """Monte Carlo BER/FER of a lifted code with BP decoding."""
    def body(run):
        h = lift_sim.import_h(Path(hfile).read_text())
        r = rate if rate is not None else 1.0 - h.m / h.n
        rep = lift_sim.simulate(h, channel, _floats(points, "--points"), min_errors, max_frames,
                                seed, workers, max_iters, rate=r)
        _emit(run, out, rep.to_csv())
    _run(ctx, dict(hfile=hfile, channel=channel, points=points, rate=rate, min_errors=min_errors,
                   max_frames=max_frames, max_iters=max_iters, seed=seed, workers=workers,
                   out=out), body)


# ------------------------------------------------------------- reproduce

BEC_TABLES = {
    "table1": ["loop:3,6,12", "chain:3,6,12", "loop:3,6,15", "chain:3,6,15", "loop:3,6,18",
               "chain:3,6,18"],
    "table3": ["square:3,6,8", "chain:3,6,6", "square:3,6,12", "chain:3,6,9", "square:3,6,16",
               "chain:3,6,12", "square:3,6,20", "chain:3,6,15", "square:3,6,24", "chain:3,6,18"],
    "table5": ["loop:3,9,6", "chain:3,9,6", "loop:3,9,8", "chain:3,9,8", "loop:3,9,12",
               "chain:3,9,12", "loop:3,9,100", "chain:3,9,100"],
    "table6": [f"loop:3,6,15,h={h}" for h in range(2, 10)],
    "loop48": [f"loop48:{v},{L}" for L in (6, 9, 12, 15) for v in "AB"]
              + [f"chain:4,8,{L}" for L in (6, 9, 12, 15)],
    "mixed": ["mixed:L1,15", "mixed:L2,15"],
}
AWGN_TABLES = {
    "table2": ["loop:3,6,12", "chain:3,6,12", "loop:3,6,15", "chain:3,6,15", "loop:3,6,18",
               "chain:3,6,18"],
    "table4": ["square:3,6,8", "chain:3,6,6", "square:3,6,12", "chain:3,6,9", "square:3,6,16",
               "square:3,6,20", "square:3,6,24"],
}
GROWTH = ["square:3,6,8", "square:3,6,12", "square:3,6,16", "square:3,6,20", "square:3,6,24",
          "loop:3,6,12", "loop:3,6,15", "loop:3,6,18"]


def _bec_row(args):
    spec, tol = args
    p = parse_spec(spec)
    r = de_bec.threshold_bec(p, tol=tol)
    return [spec, p.name, f"{protograph.design_rate(p).value:.4f}", f"{r.epsilon_star:.4f}"]


def _awgn_row(args):
    spec, tol, dq, rng = args
    p = parse_spec(spec)
    r = de_awgn.threshold_awgn(p, tol_db=tol, grid=de_awgn.LLRGrid(dq, rng), lo=0.0, hi=3.0)
    return [spec, p.name, f"{protograph.design_rate(p).value:.4f}", f"{r.ebn0_star_db:.4f}"]


def _growth_row(args):
    spec, seed = args
    p = parse_spec(spec)
    r = wenum.min_distance_growth(p, seed=seed, tol=1e-5)
    return [spec, p.name, f"{protograph.design_rate(p).value:.4f}", f"{r.delta_min:.5f}"]


@main.command()
@click.argument("table", type=click.Choice(sorted([*BEC_TABLES, *AWGN_TABLES, "growth"])))
@click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Threshold tolerance (default 1e-4 for BEC, 0.01 dB for AWGN).")
@click.option("--grid", default=None, help="AWGN LLR grid DQ,RANGE.")
@click.option("--seed", type=int, default=0, show_default=True)
@workers_opt
@out_opt
@click.pass_context
def reproduce(ctx, table, tol, grid, seed, workers, out):
    """Recompute one of the published tables as CSV."""
    def body(run):
        if table in BEC_TABLES:
            rows = _pmap(_bec_row, [(s, tol) for s in BEC_TABLES[table]], workers)
            head = "spec,ensemble,rate,epsilon_star"
        elif table in AWGN_TABLES:
            g = _grid(grid)
            rows = _pmap(_awgn_row, [(s, tol, g.dq, g.r_llr) for s in AWGN_TABLES[table]],
                         workers)
            head = "spec,ensemble,rate,ebn0_star_db"
        else:
            rows = _pmap(_growth_row, [(s, seed) for s in GROWTH], workers)
            head = "spec,ensemble,rate,delta_min"
        lines = [head] + [",".join(f'"{x}"' if "," in x else x for x in r) for r in rows]
        _emit(run, out, "\n".join(lines) + "\n")
    if tol is None:
        tol = 0.01 if table in AWGN_TABLES else 1e-4
    if table in AWGN_TABLES and not grid:
        grid = DEFAULT_GRID
    _run(ctx, dict(table=table, tol=tol, grid=grid, seed=seed, workers=workers, out=out), body)


if __name__ == "__main__":
    sys.exit(main())
