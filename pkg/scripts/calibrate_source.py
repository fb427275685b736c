"""Fit a noise strength to a target singlet fidelity and check it against a sampled reconstruction."""

import argparse

import numpy as np

from qvortex.channel import NoiseKind
from qvortex.experiment import Scenario, ScenarioConfig, calibrate_source_noise, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fidelity", type=float, default=0.935)
    ap.add_argument("--kind", choices=[k.value for k in NoiseKind if k is not NoiseKind.NONE], default="DEPOLARIZING")
    ap.add_argument("--shots-per-basis", type=float, default=1e5)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    noise = calibrate_source_noise(args.fidelity, NoiseKind(args.kind))
    print(f"{noise.kind.value} strength p = {noise.strength:.6f}")
    fids, svals = [], []
    for seed in range(args.seeds):
        rep = run_scenario(ScenarioConfig(Scenario.SOURCE, noise=noise, seed=seed,
                                          shots_per_basis=args.shots_per_basis, bootstrap_resamples=0))
        fids.append(rep.results["tomography"]["corrected"]["fidelity"])
        svals.append(rep.results["chsh"]["corrected"])
        print(f"seed {seed}: F = {fids[-1]:.4f}  S = {svals[-1]:.4f}")
    print(f"mean F = {np.mean(fids):.4f} +- {np.std(fids, ddof=1) if len(fids) > 1 else 0:.4f}, mean S = {np.mean(svals):.4f}")
    if noise.kind is NoiseKind.DEPOLARIZING:
        print(f"Werner prediction S = {2 * np.sqrt(2) * (4 * args.fidelity - 1) / 3:.4f}")


if __name__ == "__main__":
    main()
