"""Work-precision table on the Fehlberg problem, plus fitted slopes per method.

Writes the CSV (method,h,fevals,error,digits) and prints the least-squares
slope of log error against log h over the points above the round-off floor.
"""

import argparse
import math

import numpy as np

from rksearch.integrate import default_h_grid, fehlberg_problem, records_to_csv, work_precision
from rksearch.tableau import builtin, write_text_atomic

DEFAULT_METHODS = ("euler", "heun", "midpoint", "ralston", "rk4", "euler-extrapolated:6")


def slopes(records):
    out = {}
    for name in dict.fromkeys(r.method for r in records):
        pts = [(r.h, r.error) for r in records if r.method == name and 1e-13 < r.error < 1 and math.isfinite(r.error)]
        if len(pts) >= 3:
            hs, es = zip(*pts)
            out[name] = float(np.polyfit(np.log(hs), np.log(es), 1)[0])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--method", action="append", default=[])
    ap.add_argument("--kmin", type=int, default=4)
    ap.add_argument("--kmax", type=int, default=14)
    ap.add_argument("--out", default=None)
    a = ap.parse_args()
    tabs = [builtin(m) for m in (a.method or DEFAULT_METHODS)]
    recs = work_precision(tabs, fehlberg_problem(), default_h_grid(5.0, a.kmin, a.kmax))
    text = records_to_csv(recs)
    if a.out:
        write_text_atomic(a.out, text)
    else:
        print(text, end="")
    for name, v in slopes(recs).items():
        print(f"# slope {name}: {v:.3f}")


if __name__ == "__main__":
    main()
