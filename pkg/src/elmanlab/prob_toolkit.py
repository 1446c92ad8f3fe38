"""Monte-Carlo verification of the concentration toolkit.

Each check estimates a tail probability by simulation and compares it to
the stated closed-form bound plus a slack of a few MC standard errors.
Also houses the exact randomness-decomposition constructions used by the
landscape analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .rng import SeededRng


@dataclass(frozen=True)
class McConfig:
    trials: int
    rng: SeededRng
    bound_slack: float = 3.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")

    @property
    def verdict_ready(self):
        return self.trials >= 1000


def _standard_error(p_hat, trials):
    return math.sqrt(max(p_hat * (1 - p_hat), 1.0 / trials) / trials)


def _check(empirical, bound, cfg: McConfig):
    slack = cfg.bound_slack * _standard_error(empirical, cfg.trials)
    verdict = empirical <= bound + slack if cfg.verdict_ready else None
    return {
        "empirical": empirical,
        "bound": bound,
        "slack": slack,
        "trials": cfg.trials,
        "verdict": verdict,
    }


def chi_square_tail_mc(k, t, cfg: McConfig) -> dict:
    """Tails of chi-square(k): upper Pr[X - k >= 2 sqrt(kt) + 2t] and
    lower Pr[k - X >= 2 sqrt(kt)], each against e^{-t}."""
    gen = cfg.rng.split(("chi2", k, t)).generator()
    x = gen.chisquare(k, size=cfg.trials)
    bound = math.exp(-t)
    upper = _check(float(np.mean(x - k >= 2 * math.sqrt(k * t) + 2 * t)), bound, cfg)
    lower = _check(float(np.mean(k - x >= 2 * math.sqrt(k * t))), bound, cfg)
    return {"upper": upper, "lower": lower}


def norm_concentration_mc(n, b, cfg: McConfig) -> dict:
    """Pr[| ||x||^2 - n sigma^2 | >= (n/b) sigma^2] <= 2 e^{-n/(8 b^2)}
    for standard Gaussian x (sigma = 1), with b >= 1."""
    if b < 1:
        raise ValueError("b must be at least 1")
    gen = cfg.rng.split(("norm-conc", n, b)).generator()
    sq = gen.chisquare(n, size=cfg.trials)
    empirical = float(np.mean(np.abs(sq - n) >= n / b))
    return _check(empirical, 2 * math.exp(-n / (8 * b ** 2)), cfg)


def truncated_square_sum_mc(m, cfg: McConfig, rate=0.25) -> dict:
    """Pr[sum_i max(x_i^2 - log m, 0) >= 2 sqrt(m)] for standard Gaussians.

    The decay is exponential in sqrt(m) with an unspecified constant;
    rate fixes the constant used in the comparison bound
    exp(-rate * sqrt(m)), chosen conservatively (the measured frequency
    sits orders of magnitude below it at moderate m).
    """
    gen = cfg.rng.split(("trunc-sq", m)).generator()
    hits = 0
    batch = max(1, min(cfg.trials, 10 ** 7 // max(m, 1)))
    done = 0
    while done < cfg.trials:
        count = min(batch, cfg.trials - done)
        x = gen.normal(size=(count, m))
        y = np.maximum(x ** 2 - math.log(m), 0.0)
        hits += int(np.count_nonzero(y.sum(axis=1) >= 2 * math.sqrt(m)))
        done += count
    empirical = hits / cfg.trials
    bound = math.exp(-rate * math.sqrt(m))
    return {**_check(empirical, bound, cfg), "rate": rate}


def relu_gaussian_norm_mc(n, sigma, eps, cfg: McConfig, matrix_m=None) -> dict:
    """Two-sided exceedance of ||relu(x)|| around sqrt(n/2) sigma.

    Checks Pr[||relu(x)|| outside (1 +- eps) sqrt(n/2) sigma] against
    2 e^{-eps^2 n / 100}.  With matrix_m set, x = A u for a fixed unit u
    and A with i.i.d. N(0, 2 sigma^2 / m) entries in R^{m x n}, and the
    center is sqrt(m/2) * sqrt(2/m) sigma scaling, i.e. the bound uses m.
    """
    if not (0 < eps):
        raise ValueError("eps must be positive")
    gen = cfg.rng.split(("relu-norm", n, sigma, eps, matrix_m)).generator()
    if matrix_m is None:
        dim = n
        entry_sigma = sigma
        center = math.sqrt(n / 2.0) * sigma
    else:
        # A u for a unit u and A with i.i.d. N(0, 2 sigma^2 / m) entries
        # has i.i.d. N(0, 2 sigma^2 / m) coordinates, so sample the
        # product vector directly; the exceedance bound uses m
        dim = matrix_m
        entry_sigma = math.sqrt(2.0 / matrix_m) * sigma
        center = sigma
    bound = 2 * math.exp(-eps ** 2 * dim / 100.0)
    outside = 0
    batch = max(1, min(cfg.trials, 10 ** 7 // max(dim, 1)))
    done = 0
    while done < cfg.trials:
        count = min(batch, cfg.trials - done)
        x = gen.normal(0.0, entry_sigma, size=(count, dim))
        norms = np.linalg.norm(np.maximum(x, 0.0), axis=1)
        outside += int(np.count_nonzero(
            (norms <= (1 - eps) * center) | (norms >= (1 + eps) * center)
        ))
        done += count
    return _check(outside / cfg.trials, bound, cfg)


def gaussian_percentile_check(t_over_sigma, cfg: McConfig) -> dict:
    """Pr[x >= t] for x ~ N(0, 1) against [1/2 (1 - 4t/5), 1/2 (1 - 2t/3)]."""
    if not (0 < t_over_sigma <= 1):
        raise ValueError("t/sigma must lie in (0, 1]")
    gen = cfg.rng.split(("percentile", t_over_sigma)).generator()
    x = gen.normal(size=cfg.trials)
    empirical = float(np.mean(x >= t_over_sigma))
    lo = 0.5 * (1 - 4 * t_over_sigma / 5)
    hi = 0.5 * (1 - 2 * t_over_sigma / 3)
    slack = cfg.bound_slack * _standard_error(empirical, cfg.trials)
    verdict = (lo - slack <= empirical <= hi + slack) if cfg.verdict_ready else None
    return {
        "empirical": empirical, "interval": (lo, hi), "slack": slack,
        "trials": cfg.trials, "verdict": verdict,
    }


def alpha_sigma_good_test(w, alpha, sigma) -> bool:
    """At least (1-alpha)/2 of the coordinates >= alpha sigma, and the
    same fraction <= -alpha sigma."""
    if not (0 < alpha < 0.5):
        raise ValueError("alpha must lie in (0, 1/2)")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    w = np.asarray(w, dtype=float)
    m = w.size
    need = 0.5 * (1 - alpha) * m
    return bool(
        np.count_nonzero(w >= alpha * sigma) >= need
        and np.count_nonzero(w <= -alpha * sigma) >= need
    )


def alpha_sigma_good_mc(m, alpha, sigma, cfg: McConfig) -> dict:
    """Frequency with which a N(0, sigma^2 I_m) vector is (alpha, sigma/4)-good."""
    gen = cfg.rng.split(("good-vec", m, alpha, sigma)).generator()
    threshold = alpha * sigma / 4.0
    need = 0.5 * (1 - alpha) * m
    hits = 0
    batch = max(1, min(cfg.trials, 10 ** 7 // max(m, 1)))
    done = 0
    while done < cfg.trials:
        count = min(batch, cfg.trials - done)
        w = gen.normal(0.0, sigma, size=(count, m))
        up = np.count_nonzero(w >= threshold, axis=1) >= need
        down = np.count_nonzero(w <= -threshold, axis=1) >= need
        hits += int(np.count_nonzero(up & down))
        done += count
    empirical = 1.0 - hits / cfg.trials
    return _check(empirical, math.exp(-alpha ** 2 * m / 100.0), cfg)


def heavy_light_decompose(y, beta):
    """Split y into a clamped light part (sup-norm <= beta) and the rest."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    y = np.asarray(y, dtype=float)
    y2 = np.clip(y, -beta, beta)
    y1 = y - y2
    return y1, y2


def heavy_light_mc(m, cfg: McConfig, s=1) -> dict:
    """Scaling of ||y1|| and ||y2||_inf for y = W x, W with N(0, 2/m) entries.

    Uses beta = log(m)/sqrt(m) * ||x||; the reference scalings are
    sqrt(s) log^2(m)/sqrt(m) * ||x|| for ||y1|| and beta for ||y2||_inf.
    """
    gen = cfg.rng.split(("heavy-light", m, s)).generator()
    x = gen.normal(size=m)
    x /= np.linalg.norm(x)
    beta = math.log(m) / math.sqrt(m)
    max_y1 = 0.0
    for _ in range(cfg.trials):
        w_rows = gen.normal(0.0, math.sqrt(2.0 / m), size=(m, m))
        y = w_rows @ x
        y1, y2 = heavy_light_decompose(y, beta)
        max_y1 = max(max_y1, float(np.linalg.norm(y1)))
    reference = math.sqrt(s) * math.log(m) ** 2 / math.sqrt(m)
    return {
        "max_heavy_norm": max_y1,
        "reference_scale": reference,
        "beta": beta,
        "trials": cfg.trials,
    }


def mcdiarmid_mc(sample_fn, c_constants, t, cfg: McConfig, mean=None) -> dict:
    """Pr[f - E f >= t] <= exp(-2 t^2 / sum c_i^2) for a bounded-difference f.

    sample_fn(generator) -> one realization of f.  The mean is estimated
    on an independent stream unless given.
    """
    gen = cfg.rng.split("mcdiarmid-main").generator()
    values = np.array([sample_fn(gen) for _ in range(cfg.trials)])
    if mean is None:
        gen2 = cfg.rng.split("mcdiarmid-mean").generator()
        mean = float(np.mean([sample_fn(gen2) for _ in range(cfg.trials)]))
    empirical = float(np.mean(values - mean >= t))
    bound = math.exp(-2 * t ** 2 / float(np.sum(np.asarray(c_constants) ** 2)))
    return _check(empirical, bound, cfg)


def mcdiarmid_extension_mc(sample_fn, mu, cfg: McConfig) -> dict:
    """Empirical Pr[f >= mu/2] for functions with rare unbounded
    coordinates; the floor constant is unexposed, so the check records
    the frequency for monotone-consistency fits."""
    gen = cfg.rng.split("mcdiarmid-ext").generator()
    values = np.array([sample_fn(gen) for _ in range(cfg.trials)])
    return {
        "empirical": float(np.mean(values >= mu / 2.0)),
        "mu": mu,
        "trials": cfg.trials,
    }


@dataclass(frozen=True)
class DecompositionResult:
    """W = W2 + u v^T with W2 v refreshed to a clean Gaussian."""

    w2: np.ndarray
    u: np.ndarray
    v: np.ndarray
    theta: float

    def reconstruct(self):
        return self.w2 + np.outer(self.u, self.v)


def randomness_decompose(w, v, theta, rng: SeededRng) -> DecompositionResult:
    """Split off a rank-one piece of W along v via Gaussian coupling.

    With g = W v (i.i.d. N(0, 2/m) entries when W is at initialization),
    draws a fresh g2 ~ N(0, 2/m I), sets g1 = (g - theta g2)/sqrt(1 -
    theta^2) and u = theta g2 - (1 - sqrt(1 - theta^2)) g1.  Then W2 = W
    - u v^T satisfies W2 v = g1, again exactly N(0, 2/m I), and the
    reconstruction W2 + u v^T = W is exact.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    m = w.shape[0]
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("v must be a unit vector")
    if not (0 < theta <= 0.5):
        raise ValueError("theta must lie in (0, 1/2]")
    gen = rng.split("decompose-g2").generator()
    g = w @ v
    g2 = gen.normal(0.0, math.sqrt(2.0 / m), size=m)
    root = math.sqrt(1.0 - theta ** 2)
    g1 = (g - theta * g2) / root
    u = theta * g2 - (1.0 - root) * g1
    w2 = w - np.outer(u, v)
    return DecompositionResult(w2=w2, u=u, v=v.copy(), theta=theta)


def decomposition_statistics(m, theta, batches, rng: SeededRng,
                             ks_level=0.01) -> dict:
    """Distribution checks for the decomposition over repeated draws.

    Per batch: draws a fresh W at initialization scale, decomposes along
    a fixed random unit v, and KS-tests the entries of W2 v against
    N(0, 2/m).  Also accumulates the sign frequencies of u beyond
    +-theta/(2 sqrt(m)) and the sup-norm of u.
    """
    gen = rng.split("stats-v").generator()
    v = gen.normal(size=m)
    v /= np.linalg.norm(v)
    sigma = math.sqrt(2.0 / m)

    ks_passes = 0
    pos = neg = total = 0
    max_u_inf = 0.0
    half = theta / (2.0 * math.sqrt(m))
    for batch in range(batches):
        batch_rng = rng.split(("stats-batch", batch))
        w = batch_rng.split("w").generator().normal(0.0, sigma, size=(m, m))
        result = randomness_decompose(w, v, theta, batch_rng)
        g1 = result.w2 @ v
        _, pvalue = stats.kstest(g1, "norm", args=(0.0, sigma))
        ks_passes += pvalue >= ks_level
        pos += int(np.count_nonzero(result.u > half))
        neg += int(np.count_nonzero(result.u < -half))
        total += result.u.size
        max_u_inf = max(max_u_inf, float(np.max(np.abs(result.u))))

    return {
        "ks_pass_fraction": ks_passes / batches,
        "sign_positive_fraction": pos / total,
        "sign_negative_fraction": neg / total,
        "max_u_inf": max_u_inf,
        "batches": batches,
    }


def coordinate_split(result: DecompositionResult, coords) -> dict:
    """Split the rank-one piece by coordinate support.

    Returns the three equivalent reconstructions of W: base plus a single
    coordinate, base plus the support set, and base plus support plus
    complement.
    """
    m = result.u.size
    coords = np.asarray(sorted(set(int(c) for c in coords)), dtype=int)
    in_set = np.zeros(m, dtype=bool)
    in_set[coords] = True

    u_set = np.where(in_set, result.u, 0.0)
    u_rest = result.u - u_set
    w_prime_set = np.outer(u_set, result.v)
    w_prime_rest = np.outer(u_rest, result.v)

    k = int(coords[0]) if coords.size else 0
    u_k = np.zeros(m)
    u_k[k] = result.u[k]
    w_prime_k = np.outer(u_k, result.v)
    w0 = result.w2 + np.outer(result.u - u_k, result.v)
    w1 = result.w2 + w_prime_rest

    return {
        "single": (w0, w_prime_k),
        "support": (w1, w_prime_set),
        "full": (result.w2, w_prime_set, w_prime_rest),
    }
