"""Compare the tuning strategies on the synthetic objective suite.

Every strategy gets the same 100-evaluation budget.  The table shows the
median best value found over a handful of seeds (lower is better).
"""

import sys
import time

import numpy as np

from emsforecast.hyperopt import Partition, bo_dropout_run, bo_run, hierarchical_bo_run, random_search
from emsforecast.hyperopt.benchmarks import objective_suite

N_SEEDS = int(sys.argv[1]) if len(sys.argv) > 1 else 3
M = 10


def strategies(obj):
    sp = obj.space
    names = sp.names
    h = len(names) // 2 or 1
    part = Partition([names[:h], names[h:]], [5, 5], [40, 40], ["gp", "gp"], init_random=M)
    return {
        "random": lambda rng: random_search(obj, sp, 100, rng),
        "bo-gp": lambda rng: bo_run(obj, sp, M, 100 - M, "gp", rng),
        "bo-rf": lambda rng: bo_run(obj, sp, M, 100 - M, "rf", rng),
        "bo-et": lambda rng: bo_run(obj, sp, M, 100 - M, "et", rng),
        "bo-dropout": lambda rng: bo_dropout_run(obj, sp, M, 100 - M, 0.5, 0.1, rng),
        "bo-hier": lambda rng: hierarchical_bo_run(obj, sp, part, rng),
    }


finals = {}
t0 = time.time()
for seed in range(N_SEEDS):
    for obj in objective_suite(seed):
        for name, run in strategies(obj).items():
            finals.setdefault(obj.name, {}).setdefault(name, []).append(run(np.random.default_rng(seed)).best_value)

cols = list(next(iter(finals.values())))
print(f"{'objective':<26}" + "".join(f"{c:>12}" for c in cols))
for obj, by in finals.items():
    print(f"{obj:<26}" + "".join(f"{np.median(by[c]):>12.4g}" for c in cols))
print(f"\n{N_SEEDS} seeds in {time.time() - t0:.0f} s")
