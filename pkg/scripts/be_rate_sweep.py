"""Distances and fitted rates for one interval config at several Monte Carlo budgets.

    python3 scripts/be_rate_sweep.py doubling_cos --N 10000 100000 --seeds 1 2
"""
import argparse

from seqlimits import limits, martingale
from seqlimits.config import build_system, load_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--N", type=int, nargs="+", default=[100_000])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--n-max-log2", type=int, default=12)
    args = ap.parse_args()
    cfg = load_config(args.config)
    system = build_system(cfg)
    n_list = [2 ** k for k in range(4, args.n_max_log2 + 1)]
    keys = ("kolm", "d_p3", "l1", "l2", "w1", "w2")
    print("N,seed," + ",".join(keys) + ",moment_trend")
    for N in args.N:
        for seed in args.seeds:
            sets = limits.simulate(system, n_list, N, seed, strict=N >= 10_000)
            reps = [limits.distance_report(sets[n]) for n in n_list]
            slopes = [limits.rate_fit([(r.sigma_n, getattr(r, k)) for r in reps])["slope"] for k in keys]
            mom = martingale.moment_ratio({n: sets[n].values * sets[n].sigma for n in n_list})
            print(f"{N},{seed}," + ",".join(f"{s:.4f}" for s in slopes) + f",{mom['slope']:.4f}", flush=True)


if __name__ == "__main__":
    main()
