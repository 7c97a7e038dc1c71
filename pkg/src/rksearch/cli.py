"""Command-line front end: ``trees``, ``search``, ``refine``, ``check``, ``bench``.

Exit codes: 0 success or pass, 1 fail or infeasible, 2 usage error, 3 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import objective as ob
from .integrate import default_h_grid, fehlberg_problem, mpf, records_to_csv, work_precision
from .optimizer import (CONVERGED, STATIONARY, SearchOptions, promote,
                        refine_error, rung_threshold, search_batch)
from .program import build_program
from .tableau import (DEFAULT_DIGITS, Tableau, TableauParseError, builtin, format_tableau, read_tableau,
                      write_text_atomic)
from .trees import MAX_ORDER, tree_counts
from .verify import check_order

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

# Smallest stage counts known to reach each order (p: s), as tabulated for
# the condition/variable counts.
BEST_STAGES = {1: 1, 2: 2, 3: 3, 4: 4, 5: 6, 6: 7, 7: 9, 8: 11, 9: 13, 10: 16}

PROBLEMS = {"fehlberg": fehlberg_problem}


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    p: Optional[int]
    s: Optional[int]
    precision: tuple[int, ...]
    seed: int
    count: int
    fraction: Optional[float]
    max_iters: int
    inputs: tuple[str, ...]
    out: Optional[str]
    problem: str
    h_grid: Optional[tuple[float, ...]]
    tol: Optional[float]
    workers: int
    methods: tuple[str, ...]
    exact: bool

    def options(self) -> SearchOptions:
        return SearchOptions(max_iterations=self.max_iters, precision=self.precision,
                             seed=self.seed, workers=self.workers)


def parse_ladder(text: str) -> tuple[int, ...]:
    try:
        ladder = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--precision expects comma-separated limb counts, got {text!r}") from None
    if not ladder or any(k < 1 or k > 8 for k in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise UsageError(f"--precision must be an increasing list of limb counts in 1..8, got {text!r}")
    return ladder


def parse_h_grid(text: str, t_end: float = 5.0) -> tuple[float, ...]:
    """``k=4..14`` (h = t_end / 2**k) or a comma-separated list of step sizes."""
    text = text.strip()
    if text.startswith("k="):
        try:
            lo, hi = (int(v) for v in text[2:].split(".."))
        except ValueError:
            raise UsageError(f"--h-grid range must look like k=4..14, got {text!r}") from None
        if lo > hi or lo < 0:
            raise UsageError(f"empty --h-grid range {text!r}")
        return tuple(default_h_grid(t_end, lo, hi))
    try:
        grid = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--h-grid expects k=LO..HI or step sizes, got {text!r}") from None
    if any(not h > 0 for h in grid):
        raise UsageError("--h-grid step sizes must be positive")
    return grid


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-p", "--order", type=int, help="order p")
    common.add_argument("-s", "--stages", type=int, help="stage count s")
    common.add_argument("--seed", type=int, default=0, help="base PRNG seed (candidate i uses seed+i)")
    common.add_argument("--count", type=int, default=10, help="number of candidate searches")
    common.add_argument("--precision", default=None,
                        help="limb ladder such as 1,2,4 (1 is binary64); check defaults to exact rationals")
    common.add_argument("--max-iters", type=int, default=10_000, help="iteration limit per search")
    common.add_argument("--out", help="output path (directory for search)")
    common.add_argument("--problem", default="fehlberg", help="benchmark problem (fehlberg)")
    common.add_argument("--h-grid", default=None, help="k=LO..HI for h=5/2^k, or a list of step sizes")
    common.add_argument("--tol", type=float, default=None, help="defect tolerance for check/refine")
    common.add_argument("--workers", type=int, default=1, help="worker processes (0 = all cores)")

    parser = argparse.ArgumentParser(prog="rksearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("trees", parents=[common], help="tree counts and condition/variable table")
    sp = sub.add_parser("search", parents=[common], help="random-start BFGS search for (p, s) methods")
    sp.add_argument("--promote", type=float, default=None, metavar="FRACTION",
                    help="re-run the best FRACTION of candidates one rung higher")
    rp = sub.add_parser("refine", parents=[common], help="decrease sqrt(E) on the solution variety")
    rp.add_argument("input", help="tableau file")
    cp = sub.add_parser("check", parents=[common], help="verify the order of a tableau file")
    cp.add_argument("input", help="tableau file or built-in method name")
    bp = sub.add_parser("bench", parents=[common], help="work-precision CSV")
    bp.add_argument("inputs", nargs="*", help="tableau files")
    bp.add_argument("--method", action="append", default=[],
                    help="built-in: euler, heun, midpoint, ralston, rk4, euler-extrapolated:P (repeatable)")
    return parser


def make_config(args) -> RunConfig:
    cmd = args.subcommand
    exact = args.precision is None and cmd in ("check",)
    ladder = parse_ladder(args.precision) if args.precision else ((1, 2) if cmd != "bench" else (1,))
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    if args.max_iters < 1:
        raise UsageError("--max-iters must be at least 1")
    p, s = args.order, args.stages
    if p is not None and p < 1:
        raise UsageError("--order must be positive")
    if s is not None and s < 1:
        raise UsageError("--stages must be positive")
    if cmd == "trees" and p is not None and p > MAX_ORDER:
        raise UsageError(f"--order must be at most {MAX_ORDER} for trees")
    if cmd == "search" and (p is None or s is None):
        raise UsageError("search needs --order and --stages")
    if cmd in ("check", "refine") and p is None:
        raise UsageError(f"{cmd} needs --order")
    fraction = getattr(args, "promote", None)
    if fraction is not None and not 0 < fraction <= 1:
        raise UsageError("--promote must be in (0, 1]")
    if args.problem not in PROBLEMS:
        raise UsageError(f"unknown --problem {args.problem!r}; known: {', '.join(PROBLEMS)}")
    grid = parse_h_grid(args.h_grid) if args.h_grid else None
    inputs = tuple(getattr(args, "inputs", ()) or ((args.input,) if hasattr(args, "input") else ()))
    return RunConfig(
        subcommand=cmd, p=p, s=s, precision=ladder, seed=args.seed, count=args.count,
        fraction=fraction, max_iters=args.max_iters, inputs=inputs, out=args.out,
        problem=args.problem, h_grid=grid, tol=args.tol, workers=args.workers,
        methods=tuple(getattr(args, "method", ())), exact=exact,
    )


# -- subcommands -------------------------------------------------------------

def cmd_trees(cfg: RunConfig, out=sys.stdout) -> int:
    p = cfg.p or 10
    counts = tree_counts(p)
    out.write(f"{'n':>3} {'|T_n|':>8} {'conditions':>11} {'s':>4} {'variables':>10}\n")
    total = 0
    for n, c in enumerate(counts, start=1):
        total += c
        s = cfg.s if (cfg.s and n == p) else BEST_STAGES.get(n)
        s_txt = str(s) if s else "-"
        v_txt = str(ob.param_count(s)) if s else "-"
        out.write(f"{n:>3} {c:>8} {total:>11} {s_txt:>4} {v_txt:>10}\n")
    return EXIT_OK


def _summary_line(rank, c) -> str:
    extra = ""
    if c.infeasible:
        extra = f" infeasible(path defect {c.barrier_defect})"
    return f"{rank} {c.seed} {c.f:.6e} {c.status} {c.iterations} {c.precision}{extra}"


def cmd_search(cfg: RunConfig, out=sys.stdout) -> int:
    program = build_program(cfg.p, cfg.s)
    opts = cfg.options()
    outdir = Path(cfg.out or f"search-p{cfg.p}-s{cfg.s}")
    outdir.mkdir(parents=True, exist_ok=True)

    def save(c, tag=""):
        tab = Tableau.from_params(c.x, name=f"p{cfg.p}-s{cfg.s}-seed{c.seed}{tag}")
        write_text_atomic(outdir / f"seed-{c.seed}{tag}.tab", format_tableau(tab))

    results = search_batch(cfg.count, program, opts, on_result=save, log_dir=str(outdir))
    lines = ["# rank seed f status iterations K"]
    lines += [_summary_line(i + 1, c) for i, c in enumerate(results)]
    if cfg.fraction:
        top = cfg.precision[-1]
        nxt = (top * 2,) if top * 2 <= 8 else (top,)
        promoted = promote(results, cfg.fraction, program, replace(opts, precision=nxt),
                           on_result=lambda c: save(c, "-promoted"), log_dir=None)
        lines.append(f"# promoted top {len(promoted)} at K={nxt[0]}")
        lines += [_summary_line(i + 1, c) for i, c in enumerate(promoted)]
        results = promoted
    infeasible = all(c.infeasible for c in results)
    if infeasible:
        d = results[0].barrier_defect
        lines.append(f"# infeasible: s={cfg.s} < p={cfg.p}; the order-{cfg.p} path tree has defect {d} "
                     f"for every tableau, so R >= {float(d) ** 2:.6e}")
    converged = sum(c.status == CONVERGED for c in results)
    lines.append(f"# converged {converged} of {len(results)}")
    text = "\n".join(lines) + "\n"
    write_text_atomic(outdir / "summary.txt", text)
    out.write(text)
    return EXIT_OK if converged and not infeasible else EXIT_FAIL


def _load(name: str) -> Tableau:
    if os.path.exists(name):
        return read_tableau(name)
    try:
        return builtin(name)
    except KeyError:
        raise FileNotFoundError(f"no such tableau file or built-in method: {name}") from None


# Tableau files hold DEFAULT_DIGITS significant digits, so even a perfect
# method read from disk carries defects near 10**-DEFAULT_DIGITS.
EXACT_TOLERANCE = 10.0 ** -(DEFAULT_DIGITS - 10)


def default_tolerance(K: Optional[int]) -> float:
    """Defect tolerance for ``check``: file round-off when exact, else the rung's R threshold."""
    return EXACT_TOLERANCE if K is None else math.sqrt(rung_threshold(K))


def cmd_check(cfg: RunConfig, out=sys.stdout) -> int:
    tab = _load(cfg.inputs[0])
    K = None if cfg.exact else cfg.precision[-1]
    tol = cfg.tol if cfg.tol is not None else default_tolerance(K)
    report = check_order(tab, cfg.p, tol=tol, precision=K)
    out.write(f"# {tab.name or cfg.inputs[0]} at {'exact rationals' if K is None else f'K={K}'}\n")
    out.write("\n".join(report.lines()) + "\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_refine(cfg: RunConfig, out=sys.stdout) -> int:
    tab = _load(cfg.inputs[0])
    opts = cfg.options()
    K = opts.precision[-1]
    program = build_program(cfg.p, tab.s, include_error_order=True)
    x0 = tab.params(K)
    r0 = float(ob.residual(program, x0).to_float() if K > 1 else ob.residual(program, x0))
    if not r0 < opts.success_threshold:
        report = check_order(tab, cfg.p, tol=math.sqrt(opts.success_threshold), precision=K)
        out.write(f"refused: R = {r0:.3e} is not below {opts.success_threshold:.1e}\n")
        out.write("\n".join(report.lines()) + "\n")
        return EXIT_FAIL
    out.write("# iteration E R step\n")
    res = refine_error(x0, program, opts, log=lambda line: out.write(line + "\n"))
    accepted = len(res.history) > 1
    result_tab = Tableau.from_params(res.x, name=tab.name) if accepted else tab
    out.write(f"status {res.status}; sqrt(E) {math.sqrt(res.history[0][1]):.6e} -> {math.sqrt(res.error):.6e}; "
              f"R {res.residual:.3e}\n")
    target = cfg.out or (str(cfg.inputs[0]) + ".refined")
    write_text_atomic(target, format_tableau(result_tab))
    return EXIT_OK if res.status in (STATIONARY, "iteration-limit") else EXIT_FAIL


def cmd_bench(cfg: RunConfig, out=sys.stdout) -> int:
    tabs = [read_tableau(p) for p in cfg.inputs]
    tabs = [t if t.name else replace(t, name=Path(p).stem) for t, p in zip(tabs, cfg.inputs)]
    names = cfg.methods or (() if tabs else ("euler", "heun", "midpoint", "rk4"))
    tabs += [builtin(n) for n in names]
    grid = cfg.h_grid or tuple(default_h_grid())
    K = cfg.precision[-1]
    if K == 1:
        records = work_precision(tabs, PROBLEMS[cfg.problem](), list(grid))
    else:
        import mpmath

        mpmath.mp.prec = 53 * K
        records = work_precision(tabs, PROBLEMS[cfg.problem](), list(grid), convert=mpf,
                                 max_digits=math.floor((53 * K - 2) * math.log10(2)))
    text = records_to_csv(records)
    if cfg.out:
        write_text_atomic(cfg.out, text)
    else:
        out.write(text)
    return EXIT_OK


COMMANDS = {"trees": cmd_trees, "search": cmd_search, "refine": cmd_refine,
            "check": cmd_check, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        cfg = make_config(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    try:
        return COMMANDS[cfg.subcommand](cfg, out)
    except TableauParseError as exc:
        sys.stderr.write(f"parse error: {exc}\n")
        return EXIT_IO
    except KeyError as exc:
        sys.stderr.write(f"error: {exc.args[0]}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
