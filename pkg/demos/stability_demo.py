"""Measure how a spectrally bounded perturbation moves the network.

Applies W' with spectral norm tau0/sqrt(m) at several widths and prints
how the hidden-state movement, mask flips, and backward-row differences
scale with m.
"""

import math

import numpy as np

from elmanlab.data import generate_dataset
from elmanlab.network import forward, init_params
from elmanlab.probes_stability import (PerturbationSpec,
                                       backward_stability_probe,
                                       forward_stability_probe, perturb)
from elmanlab.reporting import scaling_fit
from elmanlab.rng import SeededRng


def main():
    n, L, d_x, d, delta = 4, 5, 4, 2, 0.5
    m_grid = [256, 512, 1024, 2048]
    per_m = {"h_prime": {}, "mask_flips": {}, "back_ad": {}}
    for m in m_grid:
        for seed in range(3):
            rng = SeededRng(seed)
            dataset = generate_dataset(n, L, d_x, d, delta, rng.split("data"))
            params = init_params(m, d_x, d, rng.split(("init", m)))
            trace = forward(params, dataset)
            spec = PerturbationSpec(kind="random_spectral", tau0=1.0)
            pert, _ = perturb(params, spec, rng.split(("pert", m)))
            pert_trace = forward(pert, dataset)

            deltas, _ = forward_stability_probe(trace, pert_trace)
            per_m["h_prime"].setdefault(m, []).append(
                float(np.median(deltas.h_prime_norm[:, 1:])))
            per_m["mask_flips"].setdefault(m, []).append(
                float(np.median(deltas.mask_flips[:, 1:])))

            gen = rng.split("a").generator()
            a = gen.normal(size=(1, d))
            a /= np.linalg.norm(a)
            rep = backward_stability_probe(params, pert, trace, pert_trace,
                                           0, a, pairs=[(1, L)])
            by = {r.indices["pairing"]: r.measured for r in rep.records}
            per_m["back_ad"].setdefault(m, []).append(
                0.5 * (by["a"] + by["d"]))

    expected = {"h_prime": -0.5, "mask_flips": 2 / 3, "back_ad": 1 / 3}
    for kind, data in per_m.items():
        points = [(math.log(m), math.log(np.median(v)))
                  for m, v in sorted(data.items())]
        fit = scaling_fit(points)
        print(f"{kind}: slope vs log m = {fit.slope:+.3f} "
              f"(expected {expected[kind]:+.3f}), R^2={fit.r_squared:.3f}")


if __name__ == "__main__":
    main()
