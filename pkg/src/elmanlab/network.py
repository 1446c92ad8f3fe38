"""The Elman network: forward pass, loss, backward operators, gradients.

Layer steps are numbered 1..L in the math; arrays store step s at slot
s-1.  Loss vectors exist for steps 2..L and are stored at slot s-2.  The
hidden state before step 1 is zero.  Only W carries gradient; A and B
stay frozen at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .linalg import gaussian_matrix
from .rng import SeededRng


@dataclass(frozen=True)
class NetworkParams:
    """Weights (w: m x m recurrent, a: m x d_x input, b: d x m output)."""

    w: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def m(self):
        return self.w.shape[0]

    @property
    def d_x(self):
        return self.a.shape[1]

    @property
    def d(self):
        return self.b.shape[0]

    def __post_init__(self):
        m = self.w.shape[0]
        if self.w.shape != (m, m):
            raise ValueError("w must be square")
        if self.a.shape[0] != m or self.b.shape[1] != m:
            raise ValueError("a and b must match the hidden width")

    def with_w(self, w_new) -> "NetworkParams":
        return NetworkParams(w=np.asarray(w_new, dtype=float), a=self.a, b=self.b)


def init_params(m, d_x, d, rng: SeededRng) -> NetworkParams:
    """Random initialization: W, A entries N(0, 2/m); B entries N(0, 1/d)."""
    w = gaussian_matrix(m, m, 2.0 / m, rng.split("w"))
    a = gaussian_matrix(m, d_x, 2.0 / m, rng.split("a"))
    b = gaussian_matrix(d, m, 1.0 / d, rng.split("b"))
    return NetworkParams(w=w, a=a, b=b)


def pack_masks(bool_masks) -> np.ndarray:
    """Pack a (..., m) boolean array into bits along the last axis."""
    return np.packbits(np.asarray(bool_masks, dtype=bool), axis=-1)


def unpack_masks(packed, m) -> np.ndarray:
    """Inverse of pack_masks, returning a (..., m) boolean array."""
    return np.unpackbits(packed, axis=-1, count=m).astype(bool)


@dataclass(frozen=True)
class ForwardTrace:
    """Per (sample, step) activations.

    g, h: (n, L, m); masks_packed: bit-packed sign masks (g >= 0);
    y: (n, L, d); loss: (n, L-1, d) for steps 2..L.
    """

    g: np.ndarray
    h: np.ndarray
    masks_packed: np.ndarray
    y: np.ndarray
    loss: np.ndarray

    @property
    def n(self):
        return self.g.shape[0]

    @property
    def L(self):
        return self.g.shape[1]

    @property
    def m(self):
        return self.g.shape[2]

    def mask(self, i, step) -> np.ndarray:
        """Boolean sign mask for 1-based (sample i, step)."""
        return unpack_masks(self.masks_packed[i, step - 1], self.m)

    def masks_bool(self) -> np.ndarray:
        """All sign masks as a (n, L, m) boolean array."""
        return unpack_masks(self.masks_packed, self.m)


def forward(params: NetworkParams, dataset: Dataset) -> ForwardTrace:
    """Run the recurrence h_s = relu(W h_{s-1} + A x_s) and collect loss."""
    if dataset.d_x != params.d_x:
        raise ValueError("token dimension does not match input matrix")
    if dataset.d != params.d:
        raise ValueError("label dimension does not match output matrix")
    n, L, m = dataset.n, dataset.L, params.m

    g = np.zeros((n, L, m))
    h = np.zeros((n, L, m))
    hidden = np.zeros((n, m))
    for s in range(L):
        pre = hidden @ params.w.T + dataset.tokens[:, s, :] @ params.a.T
        g[:, s, :] = pre
        hidden = np.maximum(pre, 0.0)
        h[:, s, :] = hidden

    y = h @ params.b.T
    loss = y[:, 1:, :] - dataset.labels
    return ForwardTrace(
        g=g, h=h, masks_packed=pack_masks(g >= 0), y=y, loss=loss
    )


def objective(trace: ForwardTrace) -> float:
    """f(W) = sum_i (1/2) sum_{s=2}^L ||loss_{i,s}||^2."""
    return float(0.5 * np.sum(trace.loss ** 2))


def max_loss_norm(trace: ForwardTrace) -> float:
    if trace.loss.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(trace.loss, axis=2)))


def back_operator(params: NetworkParams, trace: ForwardTrace, i, step, a):
    """The d x m backward map B D_a W ... D_{step+1} W (1-based steps).

    a == step returns B exactly.
    """
    L = trace.L
    if not (1 <= step <= a <= L):
        raise IndexError("need 1 <= step <= a <= L")
    if not (0 <= i < trace.n):
        raise IndexError("sample index out of range")
    result = params.b.copy()
    for t in range(a, step, -1):
        result = (result * trace.mask(i, t)) @ params.w
    return result


def backward_sums(params: NetworkParams, trace: ForwardTrace, fixed_loss):
    """Accumulated backward vectors v_{i,s} = sum_{a>=s} Back_{i,s->a}^T loss_{i,a}.

    fixed_loss has the trace.loss shape (n, L-1, d), covering steps 2..L.
    Returns a (n, L-1, m) array with v for step s at slot s-2, computed by
    the reverse recurrence v_s = B^T loss_s + W^T D_{s+1} v_{s+1}.
    """
    fixed_loss = np.asarray(fixed_loss, dtype=float)
    if fixed_loss.shape != trace.loss.shape:
        raise ValueError("fixed_loss shape must match the trace loss shape")
    n, L, m = trace.n, trace.L, trace.m
    masks = trace.masks_bool()

    v = np.zeros((n, L - 1, m))
    v[:, L - 2, :] = fixed_loss[:, L - 2, :] @ params.b
    for s in range(L - 1, 1, -1):
        masked = np.where(masks[:, s, :], v[:, s - 1, :], 0.0)
        v[:, s - 2, :] = fixed_loss[:, s - 2, :] @ params.b + masked @ params.w
    return v


def fake_gradient(params: NetworkParams, trace: ForwardTrace, fixed_loss,
                  samples=None) -> np.ndarray:
    """Gradient of f in W with the loss vectors replaced by fixed ones.

    With fixed_loss equal to the true trace loss this is the exact
    (sub)gradient.  `samples` optionally restricts the sum to a subset of
    sample indices.
    """
    v = backward_sums(params, trace, fixed_loss)
    masks = trace.masks_bool()
    n, L, m = trace.n, trace.L, trace.m
    idx = np.arange(n) if samples is None else np.asarray(samples, dtype=int)

    grad = np.zeros((m, m))
    for s in range(1, L):
        masked = np.where(masks[idx, s, :], v[idx, s - 1, :], 0.0)
        grad += masked.T @ trace.h[idx, s - 1, :]
    return grad


def gradient(params: NetworkParams, dataset: Dataset,
             trace: ForwardTrace | None = None) -> np.ndarray:
    """Exact analytic (sub)gradient of the objective in W."""
    if trace is None:
        trace = forward(params, dataset)
    return fake_gradient(params, trace, trace.loss)


def gradient_per_sample(params: NetworkParams, dataset: Dataset, i,
                        trace: ForwardTrace | None = None) -> np.ndarray:
    """Gradient of the single-sample objective f_i in W."""
    if trace is None:
        trace = forward(params, dataset)
    if not (0 <= i < trace.n):
        raise IndexError("sample index out of range")
    return fake_gradient(params, trace, trace.loss, samples=[i])
