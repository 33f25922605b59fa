"""Cycle reconstruction and least-squares adversarial losses.

Each training step runs two cycles. Cycle 1 disentangles a real entangled
sample and re-entangles it: the reconstruction penalty lands on v while the
generated content batch only has to fool the content critic. Cycle 2 merges a
real content sample with a generated residual and re-splits: reconstruction
penalties land on c and r, the merged sample only has to fool the entangled
critic. Translated tensors carry either a reconstruction loss or an
adversarial loss, never both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    absolute,
    add,
    mean_reduce,
    scalar_mul,
    square,
    sub,
)
from .nets import DiscriminatorSet, GeneratorSet, discriminate, disentangle, entangle


@dataclass(frozen=True)
class LossWeights:
    """Coefficients on the three reconstruction terms (GAN terms weigh 1)."""

    recon_v: float = 10.0
    recon_c: float = 10.0
    recon_r: float = 0.1

    def __post_init__(self):
        if min(self.recon_v, self.recon_c, self.recon_r) < 0:
            raise ValueError("loss weights must be non-negative")


def recon_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference over all elements; zero iff a == b."""
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"recon_loss: shapes differ ({a.data.shape} vs {b.data.shape})"
        )
    return mean_reduce(absolute(sub(a, b)))


def gan_gen_loss(scores: Tensor) -> Tensor:
    """Least-squares generator loss: mean (score - 1)^2."""
    return mean_reduce(square(sub(scores, Tensor(1.0))))


def gan_disc_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """Least-squares critic loss: mean (real - 1)^2 + mean fake^2."""
    real_term = mean_reduce(square(sub(real_scores, Tensor(1.0))))
    fake_term = mean_reduce(square(fake_scores))
    return add(real_term, fake_term)


class HistoryBuffer:
    """Capacity-bounded pool of past generated samples for critic updates.

    Below capacity every fresh sample is stored and returned as-is. At
    capacity each fresh sample either (p = 0.5) swaps with a uniformly chosen
    stored sample, returning the evicted one, or is returned unstored.
    """

    def __init__(self, rng, capacity: int = 50):
        self.capacity = capacity
        self.rng = rng
        self.stored: list[np.ndarray] = []

    def __len__(self):
        return len(self.stored)

    def draw(self, fresh: np.ndarray) -> np.ndarray:
        """Per-row replay draw on a detached (tape-free) batch of fakes."""
        out = np.empty_like(fresh)
        for i in range(fresh.shape[0]):
            row = fresh[i]
            if len(self.stored) < self.capacity:
                self.stored.append(row.copy())
                out[i] = row
            elif self.rng.random() < 0.5:
                j = int(self.rng.integers(self.capacity))
                out[i] = self.stored[j]
                self.stored[j] = row.copy()
            else:
                out[i] = row
        return out


@dataclass
class CycleOutputs:
    """Generated tensors and loss components of one cycle's forward pass.

    Cycle 1 fills ``ell_v``; cycle 2 fills ``ell_c`` and ``ell_r``. ``total``
    is exactly the weighted sum of the present reconstruction terms plus
    ``gan_term``.
    """

    c_prime: Tensor
    r_prime: Tensor
    v_prime: Tensor
    gan_term: Tensor
    total: Tensor
    ell_v: Tensor | None = None
    ell_c: Tensor | None = None
    ell_r: Tensor | None = None


def cycle1(
    gen: GeneratorSet, disc: DiscriminatorSet, weights: LossWeights, v: Tensor
) -> CycleOutputs:
    """Disentangle a real v and re-entangle it: recon on v, GAN on c'."""
    c_prime, r_prime = disentangle(gen, v)
    v_prime = entangle(gen, c_prime, r_prime)
    ell_v = recon_loss(v, v_prime)
    scores = discriminate(disc.content_critic, c_prime, disc.spectral_norm)
    gan_term = gan_gen_loss(scores)
    total = add(scalar_mul(ell_v, weights.recon_v), gan_term)
    return CycleOutputs(
        c_prime=c_prime,
        r_prime=r_prime,
        v_prime=v_prime,
        gan_term=gan_term,
        total=total,
        ell_v=ell_v,
    )


def cycle2(
    gen: GeneratorSet,
    disc: DiscriminatorSet,
    weights: LossWeights,
    c: Tensor,
    r: Tensor,
) -> CycleOutputs:
    """Entangle a real c with a generated residual and re-split.

    ``r`` is an input, not an output: it must come from disentangling an
    independent real v and be detached from that computation.
    """
    v_prime = entangle(gen, c, r)
    c_prime, r_prime = disentangle(gen, v_prime)
    ell_c = recon_loss(c, c_prime)
    ell_r = recon_loss(r, r_prime)
    scores = discriminate(disc.entangled_critic, v_prime, disc.spectral_norm)
    gan_term = gan_gen_loss(scores)
    total = add(
        add(scalar_mul(ell_c, weights.recon_c), scalar_mul(ell_r, weights.recon_r)),
        gan_term,
    )
    return CycleOutputs(
        c_prime=c_prime,
        r_prime=r_prime,
        v_prime=v_prime,
        gan_term=gan_term,
        total=total,
        ell_c=ell_c,
        ell_r=ell_r,
    )
