"""Probes at random initialization.

Measure forward norm control, fresh randomness of hidden states,
layerwise separability of projected states, and spectral behavior of the
masked-matrix chains, against their expected bound expressions.
"""

from __future__ import annotations

import math

import numpy as np

from . import linalg
from .linalg import spectral_norm
from .network import ForwardTrace, NetworkParams
from .reporting import ProbeReport
from .rng import SeededRng


def forward_norm_probe(trace: ForwardTrace, L=None) -> ProbeReport:
    """Check (1-1/(4L))^(l+1) <= ||h_{i,l+1}|| <= 2l+4, ||g_{i,l+1}|| <= 4l+8.

    The lower-bound exponent counts the state index (l+1 for the state
    produced at step l+1), matching what the layer induction actually
    gives; an exponent of l would put the first state's bound at exactly
    1, the center of its fluctuation.
    """
    if L is None:
        L = trace.L
    report = ProbeReport("forward_norm", "forward-norms")
    for i in range(trace.n):
        for l in range(L):
            h_norm = float(np.linalg.norm(trace.h[i, l]))
            g_norm = float(np.linalg.norm(trace.g[i, l]))
            lower = (1.0 - 1.0 / (4 * L)) ** (l + 1)
            upper_h = 2.0 * l + 4.0
            upper_g = 4.0 * l + 8.0
            report.add(
                {"i": i, "l": l, "kind": "h", "lower": lower, "upper": upper_h},
                h_norm, upper_h, lower <= h_norm <= upper_h,
            )
            report.add(
                {"i": i, "l": l, "kind": "g", "upper": upper_g},
                g_norm, upper_g, g_norm <= upper_g,
            )
    return report


def _hidden_state_bases(trace: ForwardTrace, rng: SeededRng):
    """Yield (l, basis of all hidden states up to layer l) for l = 0..L-1.

    Columns are ordered h_{1,1}, ..., h_{n,1}, h_{1,2}, ..., h_{n,l}.
    """
    basis = linalg.empty_basis(trace.m)
    for l in range(trace.L):
        yield l, basis
        if l < trace.L - 1:
            for i in range(trace.n):
                basis = linalg.extend_basis(basis, trace.h[i, l], rng)


def fresh_randomness_probe(trace: ForwardTrace, floor=0.0,
                           rng: SeededRng | None = None) -> ProbeReport:
    """Residual norms ||(I - U_l U_l^T) h_{i,l+1}|| against a positivity floor.

    The reference threshold 1/(2e6 L^2 log^3 m) is recorded as a ratio; it
    is a worst-case constant far below typical residuals, so pass/fail
    uses positivity plus the configurable floor.
    """
    if rng is None:
        rng = SeededRng(0xF3, 0x01)
    L, m = trace.L, trace.m
    threshold = 1.0 / (2e6 * L ** 2 * math.log(m) ** 3)
    report = ProbeReport("fresh_randomness", "fresh-randomness")
    report.extras["reference_threshold"] = threshold
    for l, basis in _hidden_state_bases(trace, rng):
        for i in range(trace.n):
            residual = float(
                np.linalg.norm(linalg.project_complement(basis, trace.h[i, l]))
            )
            report.add(
                {"i": i, "l": l, "ratio_to_reference": residual / threshold},
                residual, max(floor, 0.0), residual > floor,
            )
    return report


def _one_sided_separability(x, y):
    """||(I - y y^T / ||y||^2) x||; 0 when y is degenerate."""
    ny = np.linalg.norm(y)
    if ny == 0:
        return 0.0
    y_hat = y / ny
    return float(np.linalg.norm(x - (y_hat @ x) * y_hat))


def separability_probe(trace: ForwardTrace, delta, rng: SeededRng | None = None
                       ) -> ProbeReport:
    """Pairwise separability of complement-projected hidden states.

    For every layer l and ordered pair i != j, projects h_{i,l+1} and
    h_{j,l+1} away from the span of all earlier hidden states, then
    records the one-sided separability against delta/2.
    """
    if rng is None:
        rng = SeededRng(0xF3, 0x02)
    bound = delta / 2.0
    report = ProbeReport("separability", "hidden-separability")
    for l, basis in _hidden_state_bases(trace, rng):
        projected = [
            linalg.project_complement(basis, trace.h[i, l])
            for i in range(trace.n)
        ]
        for i in range(trace.n):
            for j in range(trace.n):
                if i == j:
                    continue
                value = _one_sided_separability(projected[i], projected[j])
                report.add({"i": i, "j": j, "l": l}, value, bound, value >= bound)
    return report


def chain_operator(params: NetworkParams, trace: ForwardTrace, i, l1, l2):
    """Matvec/rmatvec closures for D_{i,l2} W ... D_{i,l1} W (1-based steps)."""
    masks = [trace.mask(i, s).astype(float) for s in range(l1, l2 + 1)]
    w = params.w

    def matvec(v):
        for mask in masks:
            v = mask * (w @ v)
        return v

    def rmatvec(v):
        for mask in reversed(masks):
            v = w.T @ (mask * v)
        return v

    return matvec, rmatvec


def intermediate_spectral_probe(params: NetworkParams, trace: ForwardTrace, i,
                                bound=None, rng: SeededRng | None = None,
                                pairs=None, rel_tol=1e-6) -> ProbeReport:
    """Spectral norms of the masked chains D_{l2} W ... D_{l1} W.

    The chains are applied as operators, never materialized.  `pairs`
    optionally restricts the (l1, l2) grid; `bound` sets the pass
    threshold (None records values only).
    """
    if rng is None:
        rng = SeededRng(0xF3, 0x03)
    L = trace.L
    if pairs is None:
        pairs = [(l1, l2) for l1 in range(1, L + 1) for l2 in range(l1, L + 1)]
    report = ProbeReport("intermediate_spectral", "chain-spectral-norms")
    for l1, l2 in pairs:
        matvec, rmatvec = chain_operator(params, trace, i, l1, l2)
        est = spectral_norm(
            None, rel_tol=rel_tol, rng=rng.split((i, l1, l2)),
            matvec=matvec, rmatvec=rmatvec, shape=(trace.m, trace.m),
        )
        report.add(
            {"i": i, "l1": l1, "l2": l2, "length": l2 - l1 + 1,
             "converged": est.converged},
            est.value, bound, None if bound is None else est.value <= bound,
        )
    return report


def _sparse_unit_vector(gen, m, s):
    support = gen.choice(m, size=s, replace=False)
    vals = gen.normal(size=s)
    nrm = np.linalg.norm(vals)
    if nrm == 0:
        vals = np.ones(s)
        nrm = math.sqrt(s)
    v = np.zeros(m)
    v[support] = vals / nrm
    return v, support


def _restricted_max(matvec, rmatvec, m, support_y, support_z, iters, gen):
    """Power-iteration estimate of max |z^T M y| over unit vectors with
    the given supports, for the operator M given by matvec."""
    y = np.zeros(m)
    y[support_y] = gen.normal(size=len(support_y))
    nrm = np.linalg.norm(y)
    if nrm == 0:
        return 0.0
    y /= nrm
    value = 0.0
    for _ in range(iters):
        w = matvec(y)
        z = np.zeros(m)
        z[support_z] = w[support_z]
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0
        z /= nz
        back = rmatvec(z)
        y = np.zeros(m)
        y[support_y] = back[support_y]
        ny = np.linalg.norm(y)
        if ny == 0:
            return value
        y /= ny
        value = float(z @ matvec(y))
    return abs(value)


def sparse_spectral_probe(params: NetworkParams, trace: ForwardTrace, i, s,
                          trials, rng: SeededRng, chain=None) -> ProbeReport:
    """Max |z^T W (D W ... D W) y| over random s-sparse unit pairs.

    Records the observed maxima next to the two reference scalings:
    s log(m)/m^(1/6) for general s-sparse pairs, and rho/sqrt(m) for the
    1-sparse variant.  These are fit across m sweeps, not thresholded
    per run.
    """
    m, L = trace.m, trace.L
    if chain is None:
        chain = (2, L)
    l1, l2 = chain
    inner_mat, inner_rmat = chain_operator(params, trace, i, l1, l2)
    w = params.w
    matvec = lambda v: w @ inner_mat(v)
    rmatvec = lambda v: inner_rmat(w.T @ v)

    gen = rng.split(("sparse", i, s)).generator()
    best = 0.0
    for _ in range(trials):
        y, sy = _sparse_unit_vector(gen, m, s)
        z, sz = _sparse_unit_vector(gen, m, s)
        best = max(best, abs(float(z @ matvec(y))))
    # adversarial refinement on one random support pair
    _, sy = _sparse_unit_vector(gen, m, s)
    _, sz = _sparse_unit_vector(gen, m, s)
    best = max(best, _restricted_max(matvec, rmatvec, m, sy, sz, 30, gen))

    report = ProbeReport("sparse_spectral", "sparse-chain-bilinear")
    scale = s * math.log(m) / m ** (1.0 / 6.0)
    report.add(
        {"i": i, "s": s, "l1": l1, "l2": l2, "trials": trials,
         "reference_scale": scale}, best,
    )
    return report


def backward_sparse_probe(params: NetworkParams, trace: ForwardTrace, i, s,
                          trials, rng: SeededRng, chain=None) -> ProbeReport:
    """Max |a^T B (D W ... D W) y| for unit a in R^d and s-sparse unit y.

    Reference scalings: s m^(1/3) log(m) for sparse y, rho ||a|| ||y|| for
    dense y (recorded, fit across sweeps).
    """
    m, L, d = trace.m, trace.L, params.d
    if chain is None:
        chain = (2, L)
    l1, l2 = chain
    inner_mat, _ = chain_operator(params, trace, i, l1, l2)
    b = params.b

    gen = rng.split(("backward-sparse", i, s)).generator()
    best_sparse = 0.0
    best_dense = 0.0
    for _ in range(trials):
        a = gen.normal(size=d)
        a /= np.linalg.norm(a)
        y, _ = _sparse_unit_vector(gen, m, s)
        best_sparse = max(best_sparse, abs(float(a @ (b @ inner_mat(y)))))
        y_dense = gen.normal(size=m)
        y_dense /= np.linalg.norm(y_dense)
        best_dense = max(best_dense, abs(float(a @ (b @ inner_mat(y_dense)))))

    report = ProbeReport("backward_sparse", "backward-chain-bilinear")
    report.add(
        {"i": i, "s": s, "l1": l1, "l2": l2, "trials": trials, "kind": "sparse",
         "reference_scale": s * m ** (1.0 / 3.0) * math.log(m)}, best_sparse,
    )
    report.add(
        {"i": i, "s": s, "l1": l1, "l2": l2, "trials": trials, "kind": "dense"},
        best_dense,
    )
    return report
