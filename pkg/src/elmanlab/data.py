"""Dataset construction and validation.

Sequences follow the normalization used throughout the library: first
tokens are unit vectors whose last coordinate is fixed to 1/sqrt(2), with
pairwise distance at least delta between distinct first tokens; later
tokens live in the unit ball.  Labels are uniform in a ball of a
configurable radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import SeededRng

_MAX_ATTEMPTS_PER_SAMPLE = 10000


class InfeasibleDataError(Exception):
    """Raised when rejection sampling cannot satisfy the separation."""


@dataclass(frozen=True)
class Dataset:
    """n sequences of L tokens in R^d_x with labels in R^d for steps 2..L.

    tokens has shape (n, L, d_x); labels has shape (n, L-1, d) where
    labels[i, j] is the target for step j+2.
    """

    tokens: np.ndarray
    labels: np.ndarray
    delta: float

    @property
    def n(self):
        return self.tokens.shape[0]

    @property
    def L(self):
        return self.tokens.shape[1]

    @property
    def d_x(self):
        return self.tokens.shape[2]

    @property
    def d(self):
        return self.labels.shape[2]


def _uniform_ball(gen, count, dim, radius):
    """Uniform samples from the ball of the given radius."""
    directions = gen.normal(size=(count, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * gen.random(size=(count, 1)) ** (1.0 / dim)
    return directions / norms * radii


def generate_inputs(n, L, d_x, delta, rng: SeededRng) -> np.ndarray:
    """Token array (n, L, d_x) satisfying the first-token constraints.

    First tokens: uniform on the sphere of radius 1/sqrt(2) in the first
    d_x-1 coordinates, last coordinate exactly 1/sqrt(2), accepted by
    rejection until all pairwise distances are >= delta.  Later tokens:
    uniform in the unit ball.
    """
    if d_x < 3:
        raise ValueError("d_x must be at least 3")
    if not (0 <= delta <= 1):
        raise ValueError("delta must lie in [0, 1]")
    gen = rng.split("inputs").generator()

    half = 1.0 / math.sqrt(2.0)
    firsts = []
    attempts = 0
    max_attempts = _MAX_ATTEMPTS_PER_SAMPLE * n
    while len(firsts) < n:
        if attempts >= max_attempts:
            raise InfeasibleDataError(
                f"could not place {n} first tokens with separation "
                f"{delta} in d_x={d_x} after {max_attempts} attempts"
            )
        attempts += 1
        head = gen.normal(size=d_x - 1)
        nrm = np.linalg.norm(head)
        if nrm == 0:
            continue
        cand = np.concatenate([head / nrm * half, [half]])
        if all(np.linalg.norm(cand - f) >= delta for f in firsts):
            firsts.append(cand)

    tokens = np.zeros((n, L, d_x))
    tokens[:, 0, :] = np.array(firsts)
    if L > 1:
        tokens[:, 1:, :] = _uniform_ball(gen, n * (L - 1), d_x, 1.0).reshape(
            n, L - 1, d_x
        )
    return tokens


def generate_labels(n, L, d, scale, rng: SeededRng) -> np.ndarray:
    """Labels (n, L-1, d), i.i.d. uniform in the ball of radius scale."""
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    if scale == 0:
        return np.zeros((n, L - 1, d))
    gen = rng.split("labels").generator()
    return _uniform_ball(gen, n * (L - 1), d, scale).reshape(n, L - 1, d)


def generate_dataset(n, L, d_x, d, delta, rng: SeededRng, label_scale=1.0):
    tokens = generate_inputs(n, L, d_x, delta, rng)
    labels = generate_labels(n, L, d, label_scale, rng)
    return Dataset(tokens=tokens, labels=labels, delta=delta)


def verify_separability(dataset: Dataset) -> dict:
    """Exhaustive check of the dataset invariants.

    Returns a report dict; violations are flagged, never raised.
    """
    tokens = dataset.tokens
    n = dataset.n
    half = 1.0 / math.sqrt(2.0)

    min_pair = math.inf
    for i in range(n):
        for j in range(i + 1, n):
            min_pair = min(
                min_pair, float(np.linalg.norm(tokens[i, 0] - tokens[j, 0]))
            )
    first_norms = np.linalg.norm(tokens[:, 0, :], axis=1)
    all_norms = np.linalg.norm(tokens, axis=2)
    norm_residual = float(np.max(np.abs(first_norms - 1.0)))
    last_residual = float(np.max(np.abs(tokens[:, 0, -1] - half)))
    max_norm = float(np.max(all_norms))

    flags = []
    if n > 1 and min_pair < dataset.delta:
        flags.append("first-token separation below delta")
    if norm_residual > 1e-12:
        flags.append("first-token norm not 1")
    if last_residual > 1e-12:
        flags.append("first-token last coordinate not 1/sqrt(2)")
    if max_norm > 1.0 + 1e-12:
        flags.append("token norm above 1")

    return {
        "min_first_token_distance": min_pair if n > 1 else math.inf,
        "max_first_token_norm_residual": norm_residual,
        "max_last_coordinate_residual": last_residual,
        "max_token_norm": max_norm,
        "flags": flags,
        "ok": not flags,
    }


def dataset_to_json(dataset: Dataset) -> str:
    doc = {
        "dims": {
            "n": dataset.n,
            "L": dataset.L,
            "d_x": dataset.d_x,
            "d": dataset.d,
        },
        "delta": dataset.delta,
        "tokens": dataset.tokens.tolist(),
        "labels": dataset.labels.tolist(),
    }
    return json.dumps(doc)


def dataset_from_json(text: str) -> Dataset:
    doc = json.loads(text)
    tokens = np.asarray(doc["tokens"], dtype=float)
    labels = np.asarray(doc["labels"], dtype=float)
    dims = doc["dims"]
    if tokens.shape != (dims["n"], dims["L"], dims["d_x"]):
        raise ValueError("token shape does not match dims")
    if labels.shape != (dims["n"], dims["L"] - 1, dims["d"]):
        raise ValueError("label shape does not match dims")
    return Dataset(tokens=tokens, labels=labels, delta=float(doc["delta"]))
