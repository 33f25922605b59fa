"""Disentanglement quality metrics and the mismatched-decoding probe.

The headline metric is the absolute Pearson correlation between the hidden
residual factor and the recovered one on held-out data. A collapsed
(constant) model output raises instead of scoring 0, because a degenerate
residual is a distinct failure mode worth surfacing loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .autodiff import Tensor
from .data import Dataset
from .nets import GeneratorSet, disentangle, entangle


class UndefinedMetricError(ValueError):
    """A correlation was requested on an input with zero variance."""


@dataclass
class MetricsRecord:
    """Per-step training record; ``rho`` is filled only on eval steps."""

    step: int
    loss_v: float
    loss_c: float
    loss_r: float
    gan_g1: float
    gan_g2: float
    loss_ac: float
    loss_av: float
    lr: float
    rho: float | None = None

    def __post_init__(self):
        vals = (self.loss_v, self.loss_c, self.loss_r, self.gan_g1,
                self.gan_g2, self.loss_ac, self.loss_av, self.lr)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite metrics at step {self.step}: {vals}")

    def recon_total(self, weights) -> float:
        return (weights.recon_v * self.loss_v
                + weights.recon_c * self.loss_c
                + weights.recon_r * self.loss_r)


@dataclass(frozen=True)
class ProbeReport:
    """Outcome of re-entangling unrelated content/residual pairs."""

    mean_c_error: float
    r_corr: float
    n: int

    def __post_init__(self):
        if self.mean_c_error < 0 or not 0.0 <= self.r_corr <= 1.0:
            raise ValueError("probe statistics out of range")


def pearson_abs(x: np.ndarray, y: np.ndarray) -> float:
    """Absolute Pearson correlation of two equal-length nonconstant vectors."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    var_x = float(np.mean(dx * dx))
    var_y = float(np.mean(dy * dy))
    if var_x == 0.0 or var_y == 0.0:
        which = "first" if var_x == 0.0 else "second"
        raise UndefinedMetricError(
            f"correlation undefined: {which} input is constant"
        )
    # Single sqrt of the variance product keeps pearson_abs(x, x) at exactly
    # 1.0; the clip guards the last-ulp overshoot of the division.
    rho = abs(float(np.mean(dx * dy))) / math.sqrt(var_x * var_y)
    return min(rho, 1.0)


def matched_abs_corr(pred: np.ndarray, truth: np.ndarray) -> tuple[float, list[int]]:
    """Mean |rho| under the best one-to-one coordinate matching.

    Goes beyond the 1-D case: with d > 1 the recovered coordinates have no
    canonical order, so truth coordinate i is scored against the pred
    coordinate the optimal assignment pairs it with.

    Returns (mean matched |rho|, perm) where perm[i] is the pred column
    matched to truth column i.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim != 2 or truth.ndim != 2 or pred.shape != truth.shape:
        raise ValueError(f"expected equal (N, d) arrays, got {pred.shape} vs {truth.shape}")
    d = truth.shape[1]
    if d == 1:
        return pearson_abs(truth[:, 0], pred[:, 0]), [0]
    corr = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            corr[i, j] = pearson_abs(truth[:, i], pred[:, j])
    rows, cols = linear_sum_assignment(corr, maximize=True)
    return float(corr[rows, cols].mean()), [int(c) for c in cols]


def eval_disentanglement(gen: GeneratorSet, dataset: Dataset) -> float:
    """|rho| between the hidden residual and the recovered one, on holdout.

    Raises UndefinedMetricError when the model emits a constant residual (a
    cheat/collapse symptom, never silently scored 0).
    """
    v, _c_true, r_true = dataset.holdout()
    if v.shape[0] < 2:
        raise ValueError("holdout too small to correlate")
    _c_hat, r_hat = disentangle(gen, Tensor(v))
    rho, _perm = matched_abs_corr(r_hat.data, r_true)
    return rho


def mismatch_probe(gen: GeneratorSet, dataset: Dataset, n: int, rng) -> ProbeReport:
    """Entangle unrelated (c_i, r_j) pairs and check the round trip.

    c_i comes from the content pool, r_j from disentangling an independent
    entangled sample. A faithful pair reproduces both factors; a cheating
    pair only decodes what it itself encoded, so mismatched inputs expose it
    through a large |c'' - c_i|.
    """
    if n < 2:
        raise ValueError("probe needs n >= 2")
    c_i = dataset.sample_batch("C", n, rng)
    v_j = dataset.sample_batch("V", n, rng)
    _cj, r_j = disentangle(gen, Tensor(v_j))
    v_mix = entangle(gen, Tensor(c_i), Tensor(r_j.data))
    c_back, r_back = disentangle(gen, v_mix)
    mean_c_error = float(np.mean(np.abs(c_back.data - c_i)))
    r_corr, _perm = matched_abs_corr(r_back.data, r_j.data)
    return ProbeReport(mean_c_error=mean_c_error, r_corr=r_corr, n=n)
