"""Synthetic unpaired factor datasets with hidden ground truth.

Both latent factors are Gaussian. Entangled samples are built by
concatenating a fresh content draw with a fresh residual draw, so every
stored v equals concat(c_true, r_true) exactly. The content pool is drawn
independently of the entangled pool's hidden factors (the two datasets are
unpaired). Ground truth is kept only for evaluation: the training sampler
has no code path that returns it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DomainSpec:
    dim_c: int = 1
    dim_r: int = 1
    mu_c: float = 2.0
    sigma_c: float = 1.0
    mu_r: float = -2.0
    sigma_r: float = 1.0

    def __post_init__(self):
        if self.dim_c < 1 or self.dim_r < 1:
            raise ValueError("factor dimensions must be positive")
        if self.sigma_c <= 0 or self.sigma_r <= 0:
            raise ValueError("sigmas must be positive")

    @property
    def dim_v(self) -> int:
        return self.dim_c + self.dim_r


class Dataset:
    """Fixed pools of unpaired C and V samples plus a held-out eval set.

    In streaming mode the training pools are ignored and every batch is a
    fresh draw from the generating distributions (ablation for the fixed
    finite pools used by default).
    """

    def __init__(self, spec, c_pool, v_pool, v_truth, holdout_v, holdout_truth,
                 streaming=False):
        self.spec = spec
        self.streaming = streaming
        self._c_pool = c_pool
        self._v_pool = v_pool
        self._v_truth = v_truth  # (c_true, r_true), evaluation only
        self._holdout_v = holdout_v
        self._holdout_truth = holdout_truth

    @property
    def n_c(self) -> int:
        return self._c_pool.shape[0]

    @property
    def n_v(self) -> int:
        return self._v_pool.shape[0]

    @property
    def n_holdout(self) -> int:
        return self._holdout_v.shape[0]

    def sample_batch(self, which: str, batch: int, rng) -> np.ndarray:
        """Uniform-with-replacement training batch from the C or V pool.

        Never exposes ground truth; use ``holdout`` for evaluation data.
        """
        if which not in ("C", "V"):
            raise ValueError(f"unknown training pool {which!r} (want 'C' or 'V')")
        if self.streaming:
            return self._fresh_draw(which, batch, rng)
        pool = self._c_pool if which == "C" else self._v_pool
        if batch > pool.shape[0]:
            raise ValueError(f"batch {batch} exceeds pool size {pool.shape[0]}")
        idx = rng.integers(0, pool.shape[0], size=batch)
        return pool[idx].copy()

    def _fresh_draw(self, which, batch, rng):
        s = self.spec
        c = rng.normal(s.mu_c, s.sigma_c, size=(batch, s.dim_c))
        if which == "C":
            return c
        r = rng.normal(s.mu_r, s.sigma_r, size=(batch, s.dim_r))
        return np.concatenate([c, r], axis=1)

    def holdout(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Evaluation interface: (v, c_true, r_true) for the held-out set."""
        c_true, r_true = self._holdout_truth
        return self._holdout_v, c_true, r_true

    def holdout_batch(self, batch: int, rng):
        """Random held-out rows with their hidden truth (evaluation only)."""
        if batch > self.n_holdout:
            raise ValueError(f"batch {batch} exceeds holdout size {self.n_holdout}")
        idx = rng.integers(0, self.n_holdout, size=batch)
        c_true, r_true = self._holdout_truth
        return self._holdout_v[idx].copy(), c_true[idx].copy(), r_true[idx].copy()


def generate(
    spec: DomainSpec, n: int, m: int, e: int, seed: int, streaming: bool = False
) -> Dataset:
    """Build pools of n content, m entangled, and e held-out samples.

    Deterministic per seed; draw order is content pool, entangled-pool
    factors (c then r), holdout factors (c then r).
    """
    if min(n, m, e) < 1:
        raise ValueError("pool sizes must be at least 1")
    rng = np.random.default_rng(seed)
    c_pool = rng.normal(spec.mu_c, spec.sigma_c, size=(n, spec.dim_c))

    vc = rng.normal(spec.mu_c, spec.sigma_c, size=(m, spec.dim_c))
    vr = rng.normal(spec.mu_r, spec.sigma_r, size=(m, spec.dim_r))
    v_pool = np.concatenate([vc, vr], axis=1)

    hc = rng.normal(spec.mu_c, spec.sigma_c, size=(e, spec.dim_c))
    hr = rng.normal(spec.mu_r, spec.sigma_r, size=(e, spec.dim_r))
    holdout_v = np.concatenate([hc, hr], axis=1)

    return Dataset(spec, c_pool, v_pool, (vc, vr), holdout_v, (hc, hr),
                   streaming=streaming)


# --- csv dump/load for external inspection ----------------------------------


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def dump_csv(dataset: Dataset, directory) -> None:
    """Write c_pool.csv, v_pool.csv, holdout.csv (one row per sample).

    Entangled files carry the hidden factors alongside v for inspection;
    they are not part of any training interface.
    """
    import os

    spec = dataset.spec
    c_cols = [f"c{i}" for i in range(spec.dim_c)]
    r_cols = [f"r{i}" for i in range(spec.dim_r)]
    v_cols = [f"v{i}" for i in range(spec.dim_v)]

    _write_rows(os.path.join(directory, "c_pool.csv"), c_cols, dataset._c_pool)

    vc, vr = dataset._v_truth
    v_rows = np.concatenate([vc, vr, dataset._v_pool], axis=1)
    _write_rows(os.path.join(directory, "v_pool.csv"), c_cols + r_cols + v_cols, v_rows)

    hc, hr = dataset._holdout_truth
    h_rows = np.concatenate([hc, hr, dataset._holdout_v], axis=1)
    _write_rows(os.path.join(directory, "holdout.csv"), c_cols + r_cols + v_cols, h_rows)


def load_csv(spec: DomainSpec, directory) -> Dataset:
    import os

    def read(path):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        return np.array(rows[1:], dtype=np.float64)

    c_pool = read(os.path.join(directory, "c_pool.csv"))
    v_rows = read(os.path.join(directory, "v_pool.csv"))
    h_rows = read(os.path.join(directory, "holdout.csv"))
    dc, dr = spec.dim_c, spec.dim_r
    return Dataset(
        spec,
        c_pool,
        v_rows[:, dc + dr :],
        (v_rows[:, :dc], v_rows[:, dc : dc + dr]),
        h_rows[:, dc + dr :],
        (h_rows[:, :dc], h_rows[:, dc : dc + dr]),
    )
