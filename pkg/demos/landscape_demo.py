"""Explore the optimization landscape around initialization.

Verifies the exact expansion identities, fits the semi-smoothness
envelope along a random direction, and tracks the gradient-dominance
ratio along a short training run.
"""

import math

import numpy as np

from elmanlab.data import generate_dataset
from elmanlab.linalg import spectral_norm
from elmanlab.network import init_params
from elmanlab.probes_landscape import (decomposition_identity_probe,
                                       pl_ratio_probe, semi_smoothness_probe)
from elmanlab.rng import SeededRng
from elmanlab.training import TrainConfig, default_learning_rate, gd_train


def main():
    n, L, d_x, d, m, delta = 4, 5, 4, 2, 512, 0.5
    rng = SeededRng(0)
    dataset = generate_dataset(n, L, d_x, d, delta, rng.split("data"))
    params = init_params(m, d_x, d, rng.split("init"))

    gen = rng.split("dir").generator()
    direction = gen.normal(size=(m, m))
    direction /= spectral_norm(direction, rng=rng.split("norm")).value

    identities = decomposition_identity_probe(
        params, direction / math.sqrt(m), dataset
    )
    worst = max(r.measured for r in identities.records
                if r.indices["kind"] != "sign_change_count")
    print(f"expansion identities: worst relative residual {worst:.2e}")

    taus = np.geomspace(1e-4, 1e-1, 10) / math.sqrt(m)
    envelope = semi_smoothness_probe(params, dataset, direction, taus)
    print(f"semi-smoothness: a={envelope.extras['a']:.4f} "
          f"b={envelope.extras['b']:.4f} "
          f"first-order consistent: {envelope.extras['first_order_consistent']}")

    eta = default_learning_rate(m, n, L, d, delta, calib=300.0)
    log, final = gd_train(params, dataset,
                          TrainConfig(eta=eta, max_steps=500))
    ratios = [g ** 2 / (m * f) for g, f in zip(log.grad_fro, log.f) if f > 0]
    print(f"gradient dominance along GD ({log.status}): "
          f"r(0)={ratios[0]:.3e}, min r(t)={min(ratios):.3e}")

    report = pl_ratio_probe(final, dataset)
    values = {r.indices["kind"]: r.measured for r in report.records
              if "i" not in r.indices}
    print(f"at the endpoint: f={values.get('f', 0):.3e}")


if __name__ == "__main__":
    main()
