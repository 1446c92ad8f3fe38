"""Probe a freshly initialized network.

Checks forward norm control, fresh randomness of hidden states,
pairwise separability of projected states, and the spectral norms of the
masked-matrix chains.
"""

from elmanlab.data import generate_dataset
from elmanlab.network import forward, init_params
from elmanlab.probes_init import (forward_norm_probe, fresh_randomness_probe,
                                  intermediate_spectral_probe,
                                  separability_probe)
from elmanlab.rng import SeededRng


def main():
    n, L, d_x, d, m, delta = 4, 5, 4, 2, 1024, 0.5
    rng = SeededRng(0)
    dataset = generate_dataset(n, L, d_x, d, delta, rng.split("data"))
    params = init_params(m, d_x, d, rng.split("init"))
    trace = forward(params, dataset)

    norms = forward_norm_probe(trace)
    agg = norms.aggregate()
    print(f"forward norms: pass fraction {agg['pass_fraction']:.3f} "
          f"over {agg['count']} checks")

    fresh = fresh_randomness_probe(trace, rng=rng.split("fresh"))
    smallest = min(r.measured for r in fresh.records)
    print(f"fresh randomness: smallest residual {smallest:.4f} "
          f"(reference threshold {fresh.extras['reference_threshold']:.2e})")

    sep = separability_probe(trace, delta, rng.split("sep"))
    worst = min(r.measured for r in sep.records)
    print(f"separability: worst projected distance {worst:.4f} "
          f"(target {delta / 2})")

    chains = intermediate_spectral_probe(params, trace, 0,
                                         rng=rng.split("chains"))
    longest = max(chains.records, key=lambda r: r.indices["length"])
    print(f"chain norms: max {max(r.measured for r in chains.records):.3f}, "
          f"length-{longest.indices['length']} chain at {longest.measured:.3f}")


if __name__ == "__main__":
    main()
