"""Monte-Carlo checks of the concentration toolkit.

Runs each tail-bound check at moderate trial counts and prints the
empirical frequency next to the closed-form bound.  Also demonstrates
the exact rank-one randomness decomposition.
"""

from elmanlab.prob_toolkit import (McConfig, alpha_sigma_good_mc,
                                   chi_square_tail_mc,
                                   decomposition_statistics,
                                   gaussian_percentile_check,
                                   norm_concentration_mc,
                                   relu_gaussian_norm_mc,
                                   truncated_square_sum_mc)
from elmanlab.rng import SeededRng


def show(name, result):
    print(f"{name}: empirical {result['empirical']:.4f} "
          f"vs bound {result['bound']:.4f} -> verdict {result['verdict']}")


def main():
    cfg = McConfig(trials=20000, rng=SeededRng(0))

    chi = chi_square_tail_mc(10, 1.0, cfg)
    show("chi-square upper tail", chi["upper"])
    show("chi-square lower tail", chi["lower"])
    show("squared-norm concentration", norm_concentration_mc(256, 4.0, cfg))
    show("truncated square sum", truncated_square_sum_mc(64, cfg))
    show("relu norm (vector)", relu_gaussian_norm_mc(400, 1.0, 0.2, cfg))
    show("relu norm (matrix rows)",
         relu_gaussian_norm_mc(32, 1.0, 0.2, cfg, matrix_m=256))
    show("good-vector failure rate", alpha_sigma_good_mc(1024, 0.1, 1.0, cfg))

    pct = gaussian_percentile_check(0.5, cfg)
    lo, hi = pct["interval"]
    print(f"percentile bracket: {pct['empirical']:.4f} in "
          f"[{lo:.4f}, {hi:.4f}] -> verdict {pct['verdict']}")

    stats = decomposition_statistics(1024, 0.1, 20, SeededRng(1))
    print(f"rank-one decomposition: KS pass fraction "
          f"{stats['ks_pass_fraction']:.2f}, sign fractions "
          f"+{stats['sign_positive_fraction']:.3f} / "
          f"-{stats['sign_negative_fraction']:.3f}")


if __name__ == "__main__":
    main()
