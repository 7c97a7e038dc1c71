"""Success-rate harness: how many seeded random starts converge at (p, s)."""

import argparse
import json
import os
import time
from dataclasses import asdict, dataclass

from rksearch.optimizer import CONVERGED, SearchOptions, search_batch
from rksearch.program import build_program


@dataclass(frozen=True)
class HarnessConfig:
    order: int = 3
    stages: int = 3
    count: int = 100
    seed: int = 0
    max_iterations: int = 10_000
    precision: tuple = (1, 2)
    workers: int = 0


def run(cfg: HarnessConfig) -> dict:
    opts = SearchOptions(max_iterations=cfg.max_iterations, precision=cfg.precision,
                         seed=cfg.seed, workers=cfg.workers or os.cpu_count() or 1)
    t0 = time.perf_counter()
    res = search_batch(cfg.count, build_program(cfg.order, cfg.stages), opts)
    wall = time.perf_counter() - t0
    conv = [c for c in res if c.status == CONVERGED]
    return {
        "config": asdict(cfg),
        "converged": len(conv),
        "count": len(res),
        "median_iterations_converged": sorted(c.iterations for c in conv)[len(conv) // 2] if conv else None,
        "statuses": {s: sum(c.status == s for c in res) for s in {c.status for c in res}},
        "best_f": res[0].f,
        "infeasible": all(c.infeasible for c in res),
        "seconds": round(wall, 2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-p", "--order", type=int, default=3)
    ap.add_argument("-s", "--stages", type=int, default=3)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iters", type=int, default=10_000)
    ap.add_argument("--precision", default="1,2")
    ap.add_argument("--workers", type=int, default=0)
    a = ap.parse_args()
    cfg = HarnessConfig(a.order, a.stages, a.count, a.seed, a.max_iters,
                        tuple(int(k) for k in a.precision.split(",")), a.workers)
    print(json.dumps(run(cfg), indent=2))


if __name__ == "__main__":
    main()
