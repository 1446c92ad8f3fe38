"""Optimization-landscape probes.

Gradient lower/upper bound ratios, semi-smoothness of the objective along
fixed directions, coordinate-level sign and backward bounds, and the
exact decomposition identities behind the semi-smoothness expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .network import (ForwardTrace, NetworkParams, backward_sums,
                      fake_gradient, forward, max_loss_norm,
                      objective)
from .reporting import ProbeReport, ScaleParams


@dataclass(frozen=True)
class LandscapeParams:
    """Threshold scales for the coordinate-level probes.

    beta_plus = delta/rho^2 and beta_minus = delta/rho^10 split "clearly
    nonzero" from "flippable" pre-activation coordinates (at the scale
    1/sqrt(m)); theta sits in [rho^4 beta_minus, beta_plus/rho^3]; n_flip
    = rho^22/beta_minus^2 clamped to m is the flip-budget size.
    """

    beta_plus: float
    beta_minus: float
    theta: float
    n_flip: int

    @classmethod
    def from_scales(cls, scales: ScaleParams, theta=None):
        rho = scales.rho
        beta_plus = scales.delta / rho ** 2
        beta_minus = scales.delta / rho ** 10
        lo, hi = rho ** 4 * beta_minus, beta_plus / rho ** 3
        if theta is None:
            theta = math.sqrt(lo * hi) if lo < hi else lo
        n_flip = min(int(rho ** 22 / beta_minus ** 2), scales.m)
        return cls(beta_plus, beta_minus, theta, n_flip)


def pl_ratio_probe(params: NetworkParams, dataset: Dataset,
                   trace: ForwardTrace | None = None) -> ProbeReport:
    """The gradient-dominance ratio r = ||grad f||_F^2 / (m f(W))."""
    if trace is None:
        trace = forward(params, dataset)
    f_val = objective(trace)
    report = ProbeReport("pl_ratio", "gradient-dominance")
    if f_val == 0:
        report.extras["undefined"] = True
        report.add({"kind": "grad_sq"}, 0.0)
        return report
    grad = fake_gradient(params, trace, trace.loss)
    grad_sq = float(np.sum(grad ** 2))
    m = params.m
    report.add({"kind": "ratio"}, grad_sq / (m * f_val))
    report.add({"kind": "grad_sq"}, grad_sq)
    report.add({"kind": "f"}, f_val)
    mln = max_loss_norm(trace)
    if mln > 0:
        report.add({"kind": "max_loss_ratio"}, grad_sq / (m * mln ** 2))
    for i in range(dataset.n):
        gi = fake_gradient(params, trace, trace.loss, samples=[i])
        report.add(
            {"kind": "per_sample_ratio", "i": i},
            float(np.sum(gi ** 2)) / (m * f_val),
        )
    return report


def fit_envelope(taus, residuals):
    """a*tau + b*tau^2 envelope above the residuals, with b >= 0.

    The linear coefficient must reflect the tau -> 0 limit of r/tau, so
    (a, b) are anchored on the two smallest grid points; any residual
    mass above that local fit (higher-order growth at larger tau) is
    absorbed by raising the curvature term, never the linear one.  a may
    take either sign.
    """
    taus = np.asarray(taus, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    order = np.argsort(taus)
    taus, residuals = taus[order], residuals[order]
    slopes = residuals / taus
    if len(taus) == 1:
        return float(slopes[0]), 0.0
    b_fit = max((slopes[1] - slopes[0]) / (taus[1] - taus[0]), 0.0)
    a_fit = float(slopes[0] - b_fit * taus[0])
    # cover every grid point by lifting the curvature
    shortfall = (slopes - a_fit - b_fit * taus) / taus
    worst = float(np.max(shortfall))
    if worst > 0:
        b_fit += worst
    return a_fit, float(b_fit)


def semi_smoothness_probe(params: NetworkParams, dataset: Dataset, w_prime,
                          scales_grid) -> ProbeReport:
    """First-order expansion residual r(tau) along a unit-spectral direction.

    r(tau) = f(W + tau W') - f(W) - <grad f(W), tau W'>.  Fits the
    envelope a tau + b tau^2 >= r pointwise with b >= 0 and checks
    first-order consistency of a against r(tau)/tau at the smallest tau.
    """
    trace = forward(params, dataset)
    f0 = objective(trace)
    grad = fake_gradient(params, trace, trace.loss)
    w_prime = np.asarray(w_prime, dtype=float)
    inner = float(np.sum(grad * w_prime))

    taus = sorted(float(t) for t in scales_grid)
    residuals = []
    for tau in taus:
        f_tau = objective(forward(params.with_w(params.w + tau * w_prime), dataset))
        residuals.append(f_tau - f0 - tau * inner)

    a_fit, b_fit = fit_envelope(taus, residuals)
    report = ProbeReport("semi_smoothness", "semi-smoothness")
    report.extras.update({"a": a_fit, "b": b_fit, "f0": f0})
    for tau, r in zip(taus, residuals):
        envelope = a_fit * tau + b_fit * tau ** 2
        report.add(
            {"tau": tau, "envelope": envelope}, r, envelope,
            r <= envelope + 1e-12 * max(1.0, abs(envelope)),
        )
    # r(tau)/tau at the smallest tau deviates from a by the known
    # second-order term b*tau; compare after removing it
    slope_small = residuals[0] / taus[0]
    gap = abs(slope_small - a_fit - b_fit * taus[0])
    tol = 0.05 * max(abs(a_fit), abs(slope_small),
                     1e-9 * max(f0, 1.0) / taus[0])
    report.extras["first_order_gap"] = gap
    report.extras["first_order_consistent"] = gap <= tol
    return report


def sign_change_matrix(g_check, g_pert):
    """Diagonal correction D'' with relu(a) - relu(b) = (D + D'')(a - b).

    a is the checkpoint pre-activation (whose sign mask D is 1 at a >= 0)
    and b is the perturbed one.  Entries lie in [-1, 1] and are nonzero
    only where the two sign masks differ.
    """
    a, b = np.asarray(g_check, dtype=float), np.asarray(g_pert, dtype=float)
    d_second = np.zeros_like(a)
    flip_down = (a >= 0) & (b < 0)
    flip_up = (a < 0) & (b >= 0)
    d_second[flip_down] = b[flip_down] / (a[flip_down] - b[flip_down])
    d_second[flip_up] = b[flip_up] / (b[flip_up] - a[flip_up])
    return d_second


def decomposition_identity_probe(params: NetworkParams, w_prime,
                                 dataset: Dataset, rel_tol=1e-8) -> ProbeReport:
    """Exact algebraic identities behind the semi-smoothness expansion.

    Verifies, per sample: (1) the pointwise sign-change identity, (2) the
    telescoped expression for h - h_check, (3) the rearrangement of
    f(W + W') - f(W) - <grad f, W'> into loss-weighted and quadratic
    terms.  Any residual above rel_tol is a hard failure (a bug, not a
    theory violation).
    """
    w_prime = np.asarray(w_prime, dtype=float)
    pert_params = params.with_w(params.w + w_prime)
    check = forward(params, dataset)
    pert = forward(pert_params, dataset)
    n, L = check.n, check.L

    report = ProbeReport("decomposition_identity", "expansion-identities")

    def rel(residual, scale):
        return residual / max(scale, 1e-300)

    # (1) pointwise identity and (2) telescoping, per sample
    d_second_all = np.zeros_like(check.g)
    for i in range(n):
        for l in range(L):
            a = check.g[i, l]
            b = pert.g[i, l]
            d_second = sign_change_matrix(a, b)
            d_second_all[i, l] = d_second
            d_mask = (a >= 0).astype(float)
            lhs = np.maximum(a, 0.0) - np.maximum(b, 0.0)
            rhs = (d_mask + d_second) * (a - b)
            residual = float(np.linalg.norm(lhs - rhs))
            scale = max(float(np.linalg.norm(lhs)), float(np.linalg.norm(a - b)))
            report.add(
                {"i": i, "step": l + 1, "kind": "pointwise"},
                rel(residual, scale) if scale > 0 else residual,
                rel_tol, (rel(residual, scale) if scale > 0 else residual) <= rel_tol,
            )
            report.add(
                {"i": i, "step": l + 1, "kind": "sign_change_count"},
                int(np.count_nonzero(d_second)),
            )

        # telescoped sum for the last step's state difference
        target = pert.h[i, L - 1] - check.h[i, L - 1]
        total = np.zeros(check.m)
        for a_step in range(1, L):
            # term: [prod_{s=L}^{a+2} (D+D'')W] (D_{a+1}+D'') W' h_a(pert)
            vec = w_prime @ pert.h[i, a_step - 1]
            for s in range(a_step + 1, L + 1):
                d_eff = (check.g[i, s - 1] >= 0).astype(float) + d_second_all[i, s - 1]
                vec = d_eff * vec
                if s < L:
                    vec = params.w @ vec
            total += vec
        residual = float(np.linalg.norm(total - target))
        scale = max(float(np.linalg.norm(target)), 1.0e-30)
        report.add(
            {"i": i, "kind": "telescoping"},
            rel(residual, scale), rel_tol, rel(residual, scale) <= rel_tol,
        )

    # (3) rearrangement of the expansion residual
    f_check = objective(check)
    f_pert = objective(pert)
    grad = fake_gradient(params, check, check.loss)
    lhs = f_pert - f_check - float(np.sum(grad * w_prime))

    masks = check.masks_bool().astype(float)
    rhs = 0.0
    for i in range(n):
        for step in range(2, L + 1):
            delta_h = pert.h[i, step - 1] - check.h[i, step - 1]
            linear = np.zeros(check.m)
            for a_step in range(1, step):
                vec = masks[i, a_step] * (w_prime @ check.h[i, a_step - 1])
                for s in range(a_step + 2, step + 1):
                    vec = masks[i, s - 1] * (params.w @ vec)
                linear += vec
            loss_vec = check.loss[i, step - 2]
            rhs += float(loss_vec @ (params.b @ (delta_h - linear)))
            rhs += 0.5 * float(np.sum((params.b @ delta_h) ** 2))
    scale = max(abs(lhs), abs(rhs), abs(f_pert - f_check), 1e-30)
    residual = abs(lhs - rhs)
    report.add(
        {"kind": "rearrangement"}, rel(residual, scale), rel_tol,
        rel(residual, scale) <= rel_tol,
    )
    return report


def indicator_coordinate_probe(trace: ForwardTrace, i_star, l_star,
                               landscape: LandscapeParams, candidate_set=None,
                               small_threshold=None, large_threshold=None
                               ) -> ProbeReport:
    """Count candidate coordinates that are flippable at (i*, l*) only.

    A coordinate k counts when |g_{i*, l*+1}[k]| is below the small
    threshold while |g_{i, l+1}[k]| clears the large threshold for every
    other sample at step l* and every sample at later steps.  Default
    thresholds are beta_minus/sqrt(m) and beta_plus/sqrt(m); these
    underflow at desk widths, so empirical |g| quantiles can override.
    """
    n, L, m = trace.n, trace.L, trace.m
    if not (1 <= l_star <= L - 1):
        raise IndexError("l_star must lie in [1, L-1]")
    if candidate_set is None:
        candidate_set = np.arange(m)
    candidate_set = np.asarray(candidate_set, dtype=int)
    sqrt_m = math.sqrt(m)
    small = landscape.beta_minus / sqrt_m if small_threshold is None else small_threshold
    large = landscape.beta_plus / sqrt_m if large_threshold is None else large_threshold

    g_star = np.abs(trace.g[i_star, l_star, candidate_set])
    ok = g_star <= small
    for i in range(n):
        for l in range(l_star, L):
            if l == l_star and i == i_star:
                continue
            if l > l_star or i != i_star:
                ok &= np.abs(trace.g[i, l, candidate_set]) >= large
    count = int(np.count_nonzero(ok))
    fraction = count / len(candidate_set)
    bound = landscape.beta_minus / (64 * L)

    report = ProbeReport("indicator_coordinate", "flippable-coordinates")
    report.extras.update({
        "small_threshold": small, "large_threshold": large,
        "candidates": len(candidate_set),
    })
    report.add(
        {"i_star": i_star, "l_star": l_star, "count": count},
        fraction, bound, fraction >= bound,
    )
    return report


def argmax_loss(fixed_loss):
    """(i*, step*) maximizing the loss norm; lexicographic tie-break."""
    norms = np.linalg.norm(np.asarray(fixed_loss, dtype=float), axis=2)
    best = (0, 0)
    best_val = -1.0
    for i in range(norms.shape[0]):
        for j in range(norms.shape[1]):
            if norms[i, j] > best_val:
                best_val = norms[i, j]
                best = (i, j + 2)
    return best


def backward_coordinate_probe(params: NetworkParams, trace: ForwardTrace,
                              fixed_loss, denominator="sqrt_dnl"
                              ) -> ProbeReport:
    """Fraction of coordinates of the backward sum clearing a loss threshold.

    At (i*, step*) = argmax of the loss norm, counts coordinates k with
    |v_k| >= ||loss|| / (6 sqrt(d n L)) (or the 6 n L sqrt(d) reading)
    against the expected fraction 1 - 1/(2 n L).  Both denominator
    readings are reported.
    """
    fixed_loss = np.asarray(fixed_loss, dtype=float)
    n, L, m = trace.n, trace.L, trace.m
    d = params.d
    i_star, step_star = argmax_loss(fixed_loss)
    loss_norm = float(np.linalg.norm(fixed_loss[i_star, step_star - 2]))

    report = ProbeReport("backward_coordinate", "backward-coordinates")
    if loss_norm == 0:
        report.extras["degenerate"] = True
        report.add({"i_star": i_star, "step_star": step_star}, 1.0, 1.0, True)
        return report

    v = backward_sums(params, trace, fixed_loss)[i_star, step_star - 2]
    denominators = {
        "sqrt_dnl": 6.0 * math.sqrt(d * n * L),
        "nl_sqrt_d": 6.0 * n * L * math.sqrt(d),
    }
    if denominator not in denominators:
        raise ValueError("denominator must be 'sqrt_dnl' or 'nl_sqrt_d'")
    target = 1.0 - 1.0 / (2 * n * L)
    for name, denom in denominators.items():
        threshold = loss_norm / denom
        fraction = float(np.count_nonzero(np.abs(v) >= threshold)) / m
        report.add(
            {"i_star": i_star, "step_star": step_star, "reading": name,
             "threshold": threshold},
            fraction, target,
            fraction >= target if name == denominator else None,
        )
    return report


def fake_gradient_bound_probe(params: NetworkParams, trace: ForwardTrace,
                              fixed_loss) -> ProbeReport:
    """Lower/upper ratio structure of the fixed-loss gradient norm."""
    fixed_loss = np.asarray(fixed_loss, dtype=float)
    grad = fake_gradient(params, trace, fixed_loss)
    m = params.m
    max_norm = float(np.max(np.linalg.norm(fixed_loss, axis=2)))
    report = ProbeReport("fake_gradient_bound", "fixed-loss-gradient-bounds")
    if max_norm == 0:
        report.extras["degenerate"] = True
        report.add({"kind": "grad_fro"}, 0.0)
        return report
    fro = float(np.linalg.norm(grad))
    row_max = float(np.max(np.linalg.norm(grad, axis=1)))
    report.add({"kind": "lower_ratio"}, fro ** 2 / (m * max_norm ** 2))
    report.add({"kind": "upper_fro_ratio"}, fro / (math.sqrt(m) * max_norm))
    report.add({"kind": "upper_row_ratio"}, row_max / max_norm)
    return report


def gradient_upper_bound_probe(params: NetworkParams, dataset: Dataset,
                               trace: ForwardTrace | None = None
                               ) -> ProbeReport:
    """The same ratio structure evaluated with the true loss."""
    if trace is None:
        trace = forward(params, dataset)
    return fake_gradient_bound_probe(params, trace, trace.loss)
