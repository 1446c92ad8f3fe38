"""Gradient descent and minibatch SGD on the recurrent weight matrix.

Only W is updated; A and B stay at their initial values.  Every step is
logged: objective, worst per-pair loss norm, gradient Frobenius norm, and
Frobenius distance from initialization.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .network import (NetworkParams, forward, fake_gradient,
                      max_loss_norm, objective)
from .rng import SeededRng

CSV_HEADER = "step,f,max_loss_norm,grad_fro,movement_fro,wall_ms"


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    max_steps: int
    target_eps: float = 1e-3
    batch_size: int | None = None  # None means full batch
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class TrainLog:
    """Per-step rows plus a terminal status.

    status is one of "converged", "max_steps", "diverged".  grad_fro is
    the norm of the step direction actually taken (stochastic for SGD).
    """

    steps: list = field(default_factory=list)
    f: list = field(default_factory=list)
    max_loss_norm: list = field(default_factory=list)
    grad_fro: list = field(default_factory=list)
    movement_fro: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    status: str = "max_steps"

    def append(self, step, f_val, mln, gf, mf, wall):
        self.steps.append(step)
        self.f.append(f_val)
        self.max_loss_norm.append(mln)
        self.grad_fro.append(gf)
        self.movement_fro.append(mf)
        self.wall_ms.append(wall)

    def to_csv(self, include_wall=True) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER.split(","))
        for i in range(len(self.steps)):
            writer.writerow([
                self.steps[i], repr(self.f[i]), repr(self.max_loss_norm[i]),
                repr(self.grad_fro[i]), repr(self.movement_fro[i]),
                repr(self.wall_ms[i]) if include_wall else "0.0",
            ])
        return buf.getvalue()


def default_learning_rate(m, n, L, d, delta, calib=1.0) -> float:
    """Learning-rate shape calib * delta / (m * n * L^2 * d).

    The 1/m factor matches the width scaling of the landscape; calib
    absorbs the unknown constants and is found by the tuner.
    """
    if calib <= 0:
        raise ValueError("calib must be positive")
    return calib * delta / (m * n * L ** 2 * d)


def _train(params, dataset, config, step_direction):
    w = params.w.copy()
    w0 = params.w
    log = TrainLog()
    current = params
    f_ceiling = None
    for t in range(config.max_steps + 1):
        t0 = time.perf_counter()
        trace = forward(current, dataset)
        f_val = objective(trace)
        if f_ceiling is None:
            f_ceiling = 1e12 * (f_val + 1.0)
        if not math.isfinite(f_val) or f_val > f_ceiling:
            log.status = "diverged"
            break
        direction = step_direction(t, current, trace)
        gf = float(np.linalg.norm(direction))
        mf = float(np.linalg.norm(w - w0))
        wall = (time.perf_counter() - t0) * 1000.0
        log.append(t, f_val, max_loss_norm(trace), gf, mf, wall)
        if f_val <= config.target_eps:
            log.status = "converged"
            break
        if t == config.max_steps:
            log.status = "max_steps"
            break
        w = w - config.eta * direction
        current = params.with_w(w)
    return log, current


def gd_train(params: NetworkParams, dataset: Dataset, config: TrainConfig):
    """Full-batch gradient descent until f <= target_eps or max_steps."""

    def direction(t, current, trace):
        return fake_gradient(current, trace, trace.loss)

    return _train(params, dataset, config, direction)


def sgd_train(params: NetworkParams, dataset: Dataset, config: TrainConfig):
    """Minibatch SGD: uniform batches without replacement, unbiased scaling.

    Step direction is (n / |S|) * sum_{i in S} grad_i; batch_size == n
    reproduces the GD step exactly.
    """
    n = dataset.n
    batch = config.batch_size if config.batch_size is not None else n
    if not (1 <= batch <= n):
        raise ValueError("batch_size must lie in [1, n]")
    gen = SeededRng(config.seed).split("sgd-batches").generator()

    def direction(t, current, trace):
        chosen = gen.choice(n, size=batch, replace=False)
        chosen = np.sort(chosen)
        return (n / batch) * fake_gradient(
            current, trace, trace.loss, samples=chosen
        )

    return _train(params, dataset, config, direction)


def tune_learning_rate(params, dataset, eta_start, probe_steps=50,
                       target_drop=0.5, max_halvings=12):
    """Geometric back-off tuner: halve eta until a short run descends.

    A candidate passes when the probe run neither diverges nor ends above
    target_drop times the initial objective.  Returns the accepted eta.
    """
    eta = eta_start
    f0 = objective(forward(params, dataset))
    for _ in range(max_halvings):
        cfg = TrainConfig(eta=eta, max_steps=probe_steps, target_eps=0.0)
        log, _ = gd_train(params, dataset, cfg)
        if log.status != "diverged" and log.f[-1] <= target_drop * f0:
            return eta
        eta /= 2.0
    return eta


def descending_phase(log: TrainLog, start_fraction=0.5):
    """Index range of the linear-rate phase of a training log.

    The phase starts at the first step where f has dropped below
    start_fraction of its initial value (the burn-in before that point
    mixes transients of all the dead-or-alive units) and runs to the end
    of the log.  Returns (lo, hi) slice bounds; lo is 0 when the run
    never reaches the threshold.
    """
    if not log.f:
        return 0, 0
    threshold = start_fraction * log.f[0]
    lo = 0
    for idx, value in enumerate(log.f):
        if value <= threshold:
            lo = idx
            break
    return lo, len(log.f)


def log_linear_fit(log: TrainLog, start_fraction=0.5):
    """Least-squares fit of log f versus step over the descending phase.

    Returns a dict with slope, intercept, r_squared and the fitted index
    range.  Steps with nonpositive f are excluded.
    """
    lo, hi = descending_phase(log, start_fraction)
    xs = [log.steps[i] for i in range(lo, hi) if log.f[i] > 0]
    ys = [math.log(log.f[i]) for i in range(lo, hi) if log.f[i] > 0]
    if len(xs) < 3:
        raise ValueError("need at least 3 positive-f steps to fit")
    slope, intercept = np.polyfit(xs, ys, 1)
    predicted = np.polyval([slope, intercept], xs)
    resid = np.array(ys) - predicted
    total = np.array(ys) - np.mean(ys)
    denom = float(total @ total)
    r_squared = 1.0 if denom == 0 else 1.0 - float(resid @ resid) / denom
    return {"slope": float(slope), "intercept": float(intercept),
            "r_squared": r_squared, "range": (lo, hi)}


def movement_check(log: TrainLog, tau0, m):
    """Whether the trajectory stayed within tau0/sqrt(m) of initialization."""
    max_move = max(log.movement_fro) if log.movement_fro else 0.0
    bound = tau0 / math.sqrt(m)
    return {"max_movement": max_move, "bound": bound, "passed": max_move <= bound}
