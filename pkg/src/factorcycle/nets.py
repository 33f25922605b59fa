"""Parameter containers and forward passes for the fully-connected model.

The disentangler splits an entangled sample v into a content part c and a
residual part r; the entangler merges (c, r) back into v. Two critics score
samples of the content domain and the entangled domain for the adversarial
losses. All networks are one-hidden-layer MLPs (default width 32); the
generators use ReLU, the critics leaky ReLU with slope 0.2 and a raw affine
output (least-squares GAN, no squashing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    concat_last_dim,
    div_by_scalar,
    leaky_relu,
    matmul,
    mean_reduce,
    relu,
    split_last_dim,
)

INIT_STD = 0.02
LEAKY_SLOPE = 0.2
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """One hidden layer: x @ w1 + b1 -> activation -> @ w2 + b2."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    activation: str  # "relu" | "leaky-relu"

    @property
    def n_in(self) -> int:
        return self.w1.data.shape[0]

    @property
    def n_out(self) -> int:
        return self.w2.data.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.data.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def init_mlp(n_in, n_out, hidden, activation, rng) -> MlpParams:
    """Weights ~ N(0, 0.02), biases 0; draw order is w1 then w2."""
    w1 = Tensor(rng.normal(0.0, INIT_STD, size=(n_in, hidden)))
    w2 = Tensor(rng.normal(0.0, INIT_STD, size=(hidden, n_out)))
    return MlpParams(
        w1=w1,
        b1=Tensor(np.zeros(hidden)),
        w2=w2,
        b2=Tensor(np.zeros(n_out)),
        activation=activation,
    )


def spectral_scale(w: Tensor) -> Tensor:
    """Largest singular value of a weight matrix, as a scalar graph node.

    The singular pair (u, v) is computed exactly from the current values and
    enters the graph as constants; sigma = u^T w v is then built from matmuls
    on ``w`` itself. Since d(sigma_max)/dw = u v^T exactly, treating u and v
    as constants still yields the true gradient of the spectral norm, so
    finite differences and backward() agree through the normalization.
    """
    u_mat, s, vt = np.linalg.svd(w.data)
    if s[0] == 0.0:
        raise NonFiniteError("spectral-scale: zero matrix has no scale")
    u_row = Tensor(u_mat[:, :1].T)  # (1, n_in)
    v_col = Tensor(vt[:1, :].T)  # (n_out, 1)
    return mean_reduce(matmul(matmul(u_row, w), v_col))


def mlp_forward(params: MlpParams, x: Tensor, spectral_norm: bool = False) -> Tensor:
    w1, w2 = params.w1, params.w2
    if spectral_norm:
        # normalize weight matrices only; biases pass through untouched
        w1 = div_by_scalar(w1, spectral_scale(w1))
        w2 = div_by_scalar(w2, spectral_scale(w2))
    h = add(matmul(x, w1), params.b1)
    if params.activation == "relu":
        h = relu(h)
    elif params.activation == "leaky-relu":
        h = leaky_relu(h, LEAKY_SLOPE)
    else:
        raise ValueError(f"unknown activation {params.activation!r}")
    return add(matmul(h, w2), params.b2)


@dataclass
class GeneratorSet:
    """Disentangler heads plus the entangler.

    By default the disentangler is two separate MLPs, one per output stream;
    with ``shared_disentangler`` both streams come from a single net whose
    output is split on the last axis (in that case ``content_head`` and
    ``residual_head`` are the same object).
    """

    content_head: MlpParams  # v -> c
    residual_head: MlpParams  # v -> r
    entangler: MlpParams  # concat(c, r) -> v
    dim_c: int
    dim_r: int
    shared_disentangler: bool = False

    @property
    def dim_v(self) -> int:
        return self.dim_c + self.dim_r

    def disentangler_tensors(self) -> list[Tensor]:
        if self.shared_disentangler:
            return self.content_head.tensors()
        return self.content_head.tensors() + self.residual_head.tensors()

    def entangler_tensors(self) -> list[Tensor]:
        return self.entangler.tensors()

    def all_tensors(self) -> list[Tensor]:
        return self.disentangler_tensors() + self.entangler_tensors()


@dataclass
class DiscriminatorSet:
    """Critics scoring content-domain and entangled-domain samples.

    With ``spectral_norm`` set (the default) every critic forward divides its
    weight matrices by their largest singular value, holding each critic to
    Lipschitz constant <= 1. Without it the least-squares critics are free to
    grow arbitrarily steep and the adversarial signal can overwhelm the
    reconstruction terms.
    """

    content_critic: MlpParams  # c -> 1
    entangled_critic: MlpParams  # v -> 1
    spectral_norm: bool = True

    def all_tensors(self) -> list[Tensor]:
        return self.content_critic.tensors() + self.entangled_critic.tensors()


def init_params(
    dim_c: int,
    dim_r: int,
    rng,
    hidden: int = 32,
    shared_disentangler: bool = False,
    spectral_norm: bool = True,
) -> tuple[GeneratorSet, DiscriminatorSet]:
    """Fresh networks for the given factor dimensions, deterministic per rng.

    Draw order: disentangler (content then residual, or the single shared
    net), entangler, content critic, entangled critic.
    """
    if dim_c < 1 or dim_r < 1 or hidden < 1:
        raise ValueError("dimensions and hidden width must be positive")
    dim_v = dim_c + dim_r
    if shared_disentangler:
        head = init_mlp(dim_v, dim_c + dim_r, hidden, "relu", rng)
        content_head = residual_head = head
    else:
        content_head = init_mlp(dim_v, dim_c, hidden, "relu", rng)
        residual_head = init_mlp(dim_v, dim_r, hidden, "relu", rng)
    gen = GeneratorSet(
        content_head=content_head,
        residual_head=residual_head,
        entangler=init_mlp(dim_v, dim_v, hidden, "relu", rng),
        dim_c=dim_c,
        dim_r=dim_r,
        shared_disentangler=shared_disentangler,
    )
    disc = DiscriminatorSet(
        content_critic=init_mlp(dim_c, 1, hidden, "leaky-relu", rng),
        entangled_critic=init_mlp(dim_v, 1, hidden, "leaky-relu", rng),
        spectral_norm=spectral_norm,
    )
    return gen, disc


def disentangle(gen: GeneratorSet, v: Tensor) -> tuple[Tensor, Tensor]:
    """Split a batch of entangled samples into (content, residual)."""
    if v.data.ndim != 2 or v.data.shape[1] != gen.dim_v:
        raise ShapeError(
            f"disentangle: expected (B, {gen.dim_v}) input, got {v.data.shape}"
        )
    if gen.shared_disentangler:
        out = mlp_forward(gen.content_head, v)
        c, r = split_last_dim(out, (gen.dim_c, gen.dim_r))
        return c, r
    return mlp_forward(gen.content_head, v), mlp_forward(gen.residual_head, v)


def entangle(gen: GeneratorSet, c: Tensor, r: Tensor) -> Tensor:
    """Merge (content, residual) batches into entangled samples."""
    if c.data.shape[0] != r.data.shape[0]:
        raise ShapeError(
            f"entangle: batch sizes differ ({c.data.shape[0]} vs {r.data.shape[0]})"
        )
    return mlp_forward(gen.entangler, concat_last_dim(c, r))


def discriminate(critic: MlpParams, x: Tensor, spectral_norm: bool = False) -> Tensor:
    """Unbounded real score per sample, shape (B, 1)."""
    return mlp_forward(critic, x, spectral_norm=spectral_norm)


# --- checkpoint io ----------------------------------------------------------
#
# Structured-text (JSON) dump, format_version 1:
#   metadata: dims, hidden, shared_disentangler, plus caller-supplied fields
#   networks: per net, activation and each array as {"shape": [...],
#             "values": [... row-major ...]}
#   extra: opaque payload (e.g. optimizer state), round-tripped untouched
# Floats are serialized with full repr and round-trip bit-exactly.


def _mlp_to_obj(p: MlpParams) -> dict:
    def arr(t):
        return {"shape": list(t.data.shape), "values": t.data.ravel().tolist()}

    return {
        "activation": p.activation,
        "w1": arr(p.w1),
        "b1": arr(p.b1),
        "w2": arr(p.w2),
        "b2": arr(p.b2),
    }


def _mlp_from_obj(obj: dict) -> MlpParams:
    def arr(o):
        return Tensor(np.array(o["values"], dtype=np.float64).reshape(o["shape"]))

    return MlpParams(
        w1=arr(obj["w1"]),
        b1=arr(obj["b1"]),
        w2=arr(obj["w2"]),
        b2=arr(obj["b2"]),
        activation=obj["activation"],
    )


def save_checkpoint(
    path,
    gen: GeneratorSet,
    disc: DiscriminatorSet,
    meta: dict | None = None,
    extra: dict | None = None,
) -> None:
    nets = {
        "content_head": _mlp_to_obj(gen.content_head),
        "entangler": _mlp_to_obj(gen.entangler),
        "content_critic": _mlp_to_obj(disc.content_critic),
        "entangled_critic": _mlp_to_obj(disc.entangled_critic),
    }
    if not gen.shared_disentangler:
        nets["residual_head"] = _mlp_to_obj(gen.residual_head)
    obj = {
        "format_version": CHECKPOINT_VERSION,
        "dim_c": gen.dim_c,
        "dim_r": gen.dim_r,
        "hidden": gen.content_head.hidden,
        "shared_disentangler": gen.shared_disentangler,
        "spectral_norm": disc.spectral_norm,
        "meta": dict(meta or {}),
        "networks": nets,
        "extra": extra,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path) -> tuple[GeneratorSet, DiscriminatorSet, dict, dict | None]:
    """Returns (generators, discriminators, meta, extra)."""
    with open(path) as fh:
        obj = json.load(fh)
    version = obj.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    nets = obj["networks"]
    shared = bool(obj["shared_disentangler"])
    content_head = _mlp_from_obj(nets["content_head"])
    residual_head = (
        content_head if shared else _mlp_from_obj(nets["residual_head"])
    )
    gen = GeneratorSet(
        content_head=content_head,
        residual_head=residual_head,
        entangler=_mlp_from_obj(nets["entangler"]),
        dim_c=int(obj["dim_c"]),
        dim_r=int(obj["dim_r"]),
        shared_disentangler=shared,
    )
    disc = DiscriminatorSet(
        content_critic=_mlp_from_obj(nets["content_critic"]),
        entangled_critic=_mlp_from_obj(nets["entangled_critic"]),
        spectral_norm=bool(obj.get("spectral_norm", True)),
    )
    return gen, disc, obj.get("meta", {}), obj.get("extra")
