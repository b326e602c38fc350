"""Long overdamped Langevin reference for the SO(10) quadratic energy.

Also integrates the exact X_11 marginal: under Haar measure on SO(n) the
entry X_11 has density proportional to (1 - x^2)^((n-3)/2), so the target
marginal is that tilted by exp(10 x^2).

    python3 scripts/so10_langevin_oracle.py --steps 100000 --chains 64
"""

import argparse
import json
import math
import time

import numpy as np
from scipy.integrate import quad

from tied import NoiseSchedule, SamplerConfig, langevin_sample, make_group
from tied.energies import SO10_QUADRATIC


def exact_marginal_stats(n=10, coef=10.0):
    w = lambda x: math.exp(coef * x * x) * (1 - x * x) ** ((n - 3) / 2)
    z = quad(w, -1, 1, epsabs=1e-13)[0]
    abs_mean = 2 * quad(lambda x: x * w(x), 0, 1, epsabs=1e-13)[0] / z
    second = quad(lambda x: x * x * w(x), -1, 1, epsabs=1e-13)[0] / z
    return {"abs_mean": abs_mean, "second_moment": second}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--chains", type=int, default=64)
    ap.add_argument("--step-size", type=float, default=1e-3)
    ap.add_argument("--burn", type=int, default=10_000)
    ap.add_argument("--record-every", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    exact = exact_marginal_stats()
    print("exact  E|X11| = %.5f  E[X11^2] = %.5f" % (exact["abs_mean"], exact["second_moment"]))

    group = make_group("so", 10)
    cfg = SamplerConfig(NoiseSchedule(0.01, 10.0), 1 / 100, chains=args.chains, seed=args.seed,
                        block_size=args.chains)
    t0 = time.perf_counter()
    batch = langevin_sample(SO10_QUADRATIC, group, args.steps, args.step_size, cfg, init="haar",
                            record_every=args.record_every)
    secs = time.perf_counter() - t0
    keep = batch.times >= args.burn
    x = batch.trace[:, keep, 0, 0]
    # batch means over chains give an honest standard error under autocorrelation
    per_chain = np.abs(x).mean(axis=1)
    res = {
        "steps": args.steps,
        "chains": args.chains,
        "step_size": args.step_size,
        "seconds": secs,
        "langevin_abs_mean": float(per_chain.mean()),
        "langevin_abs_mean_se": float(per_chain.std(ddof=1) / math.sqrt(len(per_chain))),
        "langevin_second_moment": float((x**2).mean()),
        "langevin_mean": float(x.mean()),
        "exact": exact,
    }
    print(json.dumps(res, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
