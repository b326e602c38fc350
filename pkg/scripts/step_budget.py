"""TV to the SO(2) bimodal oracle versus step count: TIED against overdamped Langevin.

TIED spends N energy-gradient calls per step; analytic Langevin spends one.

    python3 scripts/step_budget.py --out results/step_budget.json
"""

import argparse
import json
import time
from pathlib import Path

from tied import NoiseSchedule, SamplerConfig, langevin_sample, make_group, tied_sample
from tied.energies import bimodal_circle_energy, oracle_density_circle
from tied.experiment import angle_histogram, tv_distance


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--chains", type=int, default=4000)
    ap.add_argument("--bins", type=int, default=64)
    ap.add_argument("--tied-steps", type=int, nargs="+", default=[10, 25, 50, 100])
    ap.add_argument("--langevin-steps", type=int, nargs="+", default=[100, 1000, 10_000, 100_000])
    ap.add_argument("--step-size", type=float, default=0.01)
    ap.add_argument("--mc-samples", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    so2, energy = make_group("so2"), bimodal_circle_energy(4.0)
    oracle = oracle_density_circle(energy).bin_masses(args.bins)
    sched = NoiseSchedule(0.1, 10.0)
    rows = []
    for steps in args.tied_steps:
        t0 = time.perf_counter()
        b = tied_sample(energy, so2, SamplerConfig(sched, 1 / steps, args.mc_samples, chains=args.chains,
                                                   seed=args.seed))
        rows.append({"method": "tied", "steps": steps, "energy_calls": b.diagnostics["energy_calls_per_chain"],
                     "tv": tv_distance(angle_histogram(b.samples, args.bins), oracle),
                     "seconds": time.perf_counter() - t0})
        print(rows[-1])
    for steps in args.langevin_steps:
        t0 = time.perf_counter()
        b = langevin_sample(energy, so2, steps, args.step_size, SamplerConfig(sched, 0.01, 1, chains=args.chains,
                                                                              seed=args.seed))
        rows.append({"method": "langevin", "steps": steps, "energy_calls": steps,
                     "tv": tv_distance(angle_histogram(b.samples, args.bins), oracle),
                     "seconds": time.perf_counter() - t0})
        print(rows[-1])
    if args.out:
        Path(args.out).write_text(json.dumps({"chains": args.chains, "bins": args.bins, "rows": rows},
                                             indent=2) + "\n")


if __name__ == "__main__":
    main()
