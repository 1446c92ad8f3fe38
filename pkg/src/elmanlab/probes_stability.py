"""Perturbation stability probes.

Apply a spectrally bounded perturbation W' to an initialized network and
measure how pre-activations, hidden states, sign masks, intermediate
chains, and backward rows move.  The bounds fix scaling exponents in m,
so per-run probes record values and the sweep harness fits slopes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import spectral_norm
from .network import ForwardTrace, NetworkParams
from .reporting import ProbeReport
from .rng import SeededRng


@dataclass(frozen=True)
class PerturbationSpec:
    """Shape of W': random_spectral, rank_one, or from_training.

    tau0 sets the spectral budget tau0/sqrt(m).  N is the rank-one
    support size.  delta_w supplies the direction for from_training
    (typically trained W minus initial W), rescaled to the budget.
    """

    kind: str
    tau0: float
    N: int = 1
    delta_w: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("random_spectral", "rank_one", "from_training"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.tau0 < 0:
            raise ValueError("tau0 must be nonnegative")
        if self.kind == "from_training" and self.delta_w is None:
            raise ValueError("from_training needs delta_w")


def perturb(params: NetworkParams, spec: PerturbationSpec, rng: SeededRng,
            rel_tol=1e-9):
    """Return (perturbed params, realized W')."""
    m = params.m
    budget = spec.tau0 / math.sqrt(m)
    if spec.tau0 == 0:
        w_prime = np.zeros((m, m))
    elif spec.kind == "random_spectral":
        gen = rng.split("perturb-direction").generator()
        w_prime = gen.normal(size=(m, m))
        est = spectral_norm(w_prime, rel_tol=rel_tol,
                            rng=rng.split("perturb-norm"))
        w_prime *= budget / est.value
    elif spec.kind == "rank_one":
        gen = rng.split("perturb-rank-one").generator()
        support = gen.choice(m, size=spec.N, replace=False)
        y = np.zeros(m)
        y[support] = budget * gen.choice([-1.0, 1.0], size=spec.N)
        z = gen.normal(size=m)
        z /= np.linalg.norm(z)
        w_prime = np.outer(y, z)
    else:  # from_training
        direction = np.asarray(spec.delta_w, dtype=float)
        est = spectral_norm(direction, rel_tol=rel_tol,
                            rng=rng.split("perturb-norm"))
        if est.value == 0:
            w_prime = np.zeros((m, m))
        else:
            w_prime = direction * (budget / est.value)
    return params.with_w(params.w + w_prime), w_prime


def flip_targeted_perturbation(params: NetworkParams, trace, i, step, tau0,
                               margin=0.5):
    """Rank-one W' that maximizes sign flips at one (sample, step).

    The mask-sparsity bound is a supremum over all W' with spectral norm
    tau0/sqrt(m); a generic random direction flips only ~sqrt(m)
    coordinates, while the extremal direction concentrates its budget on
    the coordinates whose pre-activations sit closest to zero.  This
    builds that direction: z points along the feeding hidden state and y
    spends the budget flipping pre-activations in increasing order of
    magnitude, each pushed `margin` past the crossing.

    Returns (perturbed params, W', planned flip count).
    """
    if step < 2:
        raise ValueError("step must be at least 2 (step 1 ignores W)")
    m = params.m
    budget = tau0 / math.sqrt(m)
    h_prev = trace.h[i, step - 2]
    scale = float(np.linalg.norm(h_prev))
    if scale == 0:
        raise ValueError("feeding hidden state is zero")
    z = h_prev / scale
    g = trace.g[i, step - 1]
    # per-coordinate cost of a flip, cheapest first
    cost = (1.0 + margin) * np.abs(g) / scale
    order = np.argsort(np.abs(g))
    affordable = np.cumsum(cost[order] ** 2) <= budget ** 2
    n_flip = int(np.count_nonzero(affordable))
    y = np.zeros(m)
    chosen = order[:n_flip]
    y[chosen] = -np.sign(g[chosen]) * cost[chosen]
    w_prime = np.outer(y, z)
    return params.with_w(params.w + w_prime), w_prime, n_flip


@dataclass(frozen=True)
class StabilityDeltas:
    """Per (sample, step) movement between a base and a perturbed trace.

    Arrays have shape (n, L): Euclidean norms of g' and h', the number of
    flipped sign-mask entries, and the norm of the mask difference applied
    to the perturbed pre-activation.
    """

    g_prime_norm: np.ndarray
    h_prime_norm: np.ndarray
    mask_flips: np.ndarray
    masked_g_norm: np.ndarray


def stability_deltas(before: ForwardTrace, after: ForwardTrace) -> StabilityDeltas:
    if before.g.shape != after.g.shape:
        raise ValueError("traces have mismatched shapes")
    g_prime = np.linalg.norm(after.g - before.g, axis=2)
    h_prime = np.linalg.norm(after.h - before.h, axis=2)
    flips = np.bitwise_count(
        np.bitwise_xor(before.masks_packed, after.masks_packed)
    ).sum(axis=-1)
    d_prime = after.masks_bool().astype(float) - before.masks_bool().astype(float)
    masked_g = np.linalg.norm(d_prime * after.g, axis=2)
    return StabilityDeltas(g_prime, h_prime, flips, masked_g)


def forward_stability_probe(before: ForwardTrace, after: ForwardTrace):
    """Record ||g'||, ||h'||, ||D'||_0, ||D' g|| per (sample, step)."""
    deltas = stability_deltas(before, after)
    report = ProbeReport("forward_stability", "forward-stability")
    for i in range(before.n):
        for l in range(before.L):
            idx = {"i": i, "step": l + 1}
            report.add({**idx, "kind": "g_prime"}, deltas.g_prime_norm[i, l])
            report.add({**idx, "kind": "h_prime"}, deltas.h_prime_norm[i, l])
            report.add({**idx, "kind": "mask_flips"}, deltas.mask_flips[i, l])
            report.add({**idx, "kind": "masked_g"}, deltas.masked_g_norm[i, l])
    return deltas, report


def _chain_closures(w, masks):
    """Operator closures for D_{l2} W ... D_{l1} W given a mask list."""

    def matvec(v):
        for mask in masks:
            v = mask * (w @ v)
        return v

    def rmatvec(v):
        for mask in reversed(masks):
            v = w.T @ (mask * v)
        return v

    return matvec, rmatvec


def _mask_list(trace: ForwardTrace, i, l1, l2):
    return [trace.mask(i, s).astype(float) for s in range(l1, l2 + 1)]


def intermediate_stability_probe(params_before: NetworkParams,
                                 params_after: NetworkParams,
                                 trace_before: ForwardTrace,
                                 trace_after: ForwardTrace,
                                 i, rng: SeededRng, pairs=None,
                                 bound=None, rel_tol=1e-6) -> ProbeReport:
    """Chain norms with perturbed masks, under the original and perturbed W."""
    L, m = trace_before.L, trace_before.m
    if pairs is None:
        pairs = [(l1, l2) for l1 in range(1, L + 1) for l2 in range(l1, L + 1)]
    report = ProbeReport("intermediate_stability", "chain-stability")
    for l1, l2 in pairs:
        masks = _mask_list(trace_after, i, l1, l2)
        for tag, w in (("orig_w", params_before.w), ("pert_w", params_after.w)):
            matvec, rmatvec = _chain_closures(w, masks)
            est = spectral_norm(
                None, rel_tol=rel_tol, rng=rng.split((tag, i, l1, l2)),
                matvec=matvec, rmatvec=rmatvec, shape=(m, m),
            )
            report.add(
                {"i": i, "l1": l1, "l2": l2, "w": tag,
                 "length": l2 - l1 + 1, "converged": est.converged},
                est.value, bound,
                None if bound is None else est.value <= bound,
            )
    return report


def _backward_row(w, masks, b, a_vec):
    """Row vector a^T B D_{l2} W ... D_{l1} W as a length-m array."""
    _, rmatvec = _chain_closures(w, masks)
    return rmatvec(b.T @ a_vec)


# the four pairings of (masks, W) whose backward-row differences the
# stability analysis controls
BACKWARD_PAIRINGS = (
    ("a", ("orig", "orig"), ("pert", "orig")),
    ("b", ("pert", "orig"), ("pert", "pert")),
    ("c", ("orig", "orig"), ("orig", "pert")),
    ("d", ("orig", "pert"), ("pert", "pert")),
)


def backward_stability_probe(params_before: NetworkParams,
                             params_after: NetworkParams,
                             trace_before: ForwardTrace,
                             trace_after: ForwardTrace,
                             i, a_vectors, pairs=None) -> ProbeReport:
    """Norms of the four backward-row differences per (l1, l2, a)."""
    L = trace_before.L
    if pairs is None:
        pairs = [(l1, l2) for l1 in range(1, L + 1) for l2 in range(l1, L + 1)]
    w_of = {"orig": params_before.w, "pert": params_after.w}
    trace_of = {"orig": trace_before, "pert": trace_after}
    b = params_before.b

    report = ProbeReport("backward_stability", "backward-stability")
    for l1, l2 in pairs:
        masks_of = {
            tag: _mask_list(trace_of[tag], i, l1, l2) for tag in ("orig", "pert")
        }
        for a_idx, a_vec in enumerate(a_vectors):
            a_vec = np.asarray(a_vec, dtype=float)
            rows = {}
            for mask_tag, w_tag in {p for _, x, y in BACKWARD_PAIRINGS for p in (x, y)}:
                rows[(mask_tag, w_tag)] = _backward_row(
                    w_of[w_tag], masks_of[mask_tag], b, a_vec
                )
            for name, first, second in BACKWARD_PAIRINGS:
                diff = float(np.linalg.norm(rows[first] - rows[second]))
                report.add(
                    {"i": i, "l1": l1, "l2": l2, "a": a_idx, "pairing": name},
                    diff,
                )
    return report


def rank_one_probes(params_before: NetworkParams, params_after: NetworkParams,
                    w_prime, trace_before: ForwardTrace,
                    trace_after: ForwardTrace, i, k_set,
                    a_vectors=None, pairs=None) -> ProbeReport:
    """Coordinate-level effects of a rank-one perturbation.

    Records |((W + W') h'_{i,l})_k| for k in k_set, and the per-coordinate
    backward-row differences for the (orig masks vs pert masks, orig W)
    and (pert masks, orig W vs pert W) pairings.
    """
    if np.linalg.matrix_rank(np.atleast_2d(w_prime)) > 1:
        raise ValueError("rank_one_probes needs a rank-one perturbation")
    L = trace_before.L
    k_set = np.asarray(k_set, dtype=int)
    report = ProbeReport("rank_one", "rank-one-coordinates")

    h_prime = trace_after.h - trace_before.h
    for l in range(L):
        vec = params_after.w @ h_prime[i, l]
        for k in k_set:
            report.add(
                {"i": i, "step": l + 1, "k": int(k), "kind": "forward"},
                abs(float(vec[k])),
            )

    if a_vectors is None:
        a_vectors = np.eye(params_before.d)[:1]
    if pairs is None:
        pairs = [(2, L)]
    w_of = {"orig": params_before.w, "pert": params_after.w}
    trace_of = {"orig": trace_before, "pert": trace_after}
    b = params_before.b
    coordinate_pairings = (
        ("mask_change", ("orig", "orig"), ("pert", "orig")),
        ("w_change", ("pert", "orig"), ("pert", "pert")),
    )
    for l1, l2 in pairs:
        masks_of = {
            tag: _mask_list(trace_of[tag], i, l1, l2) for tag in ("orig", "pert")
        }
        for a_idx, a_vec in enumerate(np.asarray(a_vectors, dtype=float)):
            rows = {
                (mt, wt): _backward_row(w_of[wt], masks_of[mt], b, a_vec)
                for mt, wt in {p for _, x, y in coordinate_pairings for p in (x, y)}
            }
            for name, first, second in coordinate_pairings:
                diff = rows[first] - rows[second]
                for k in k_set:
                    report.add(
                        {"i": i, "l1": l1, "l2": l2, "a": a_idx, "k": int(k),
                         "kind": name},
                        abs(float(diff[k])),
                    )
    return report
