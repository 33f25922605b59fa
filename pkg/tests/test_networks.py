"""Network containers, forwards, spectral normalization, checkpoints."""

import numpy as np
import pytest

from factorcycle.autodiff import ShapeError, Tape, Tensor, grad_check, mean_reduce, square
from factorcycle.nets import (
    INIT_STD,
    DiscriminatorSet,
    GeneratorSet,
    MlpParams,
    discriminate,
    disentangle,
    entangle,
    init_mlp,
    init_params,
    load_checkpoint,
    mlp_forward,
    save_checkpoint,
    spectral_scale,
)


def make_identity_mlp(dim, shift=10.0):
    """Exact identity on inputs with all coordinates > -shift.

    First layer computes x + shift (componentwise, positive so relu is
    inactive), second layer undoes the shift. Exact in float arithmetic for
    the data ranges used here.
    """
    w1 = np.zeros((dim, dim))
    np.fill_diagonal(w1, 1.0)
    w2 = w1.copy()
    return MlpParams(
        w1=Tensor(w1),
        b1=Tensor(np.full(dim, shift)),
        w2=Tensor(w2),
        b2=Tensor(np.full(dim, -shift)),
        activation="relu",
    )


def make_identity_pair(dim_c=1, dim_r=1):
    """Generator set where disentangle/entangle are exact inverses.

    The content head extracts the first dim_c coordinates of v, the residual
    head the rest; the entangler is the identity on concat(c, r).
    """
    dim_v = dim_c + dim_r
    ident = make_identity_mlp(dim_v)
    content = MlpParams(
        w1=Tensor(ident.w1.data[:, :].copy()),
        b1=Tensor(np.full(dim_v, 10.0)),
        w2=Tensor(ident.w2.data[:, :dim_c].copy()),
        b2=Tensor(np.full(dim_c, -10.0)),
        activation="relu",
    )
    residual = MlpParams(
        w1=Tensor(ident.w1.data.copy()),
        b1=Tensor(np.full(dim_v, 10.0)),
        w2=Tensor(ident.w2.data[:, dim_c:].copy()),
        b2=Tensor(np.full(dim_r, -10.0)),
        activation="relu",
    )
    return GeneratorSet(
        content_head=content,
        residual_head=residual,
        entangler=make_identity_mlp(dim_v),
        dim_c=dim_c,
        dim_r=dim_r,
    )


# --- init ---------------------------------------------------------------------


def test_init_shapes_and_bias_zero():
    gen, disc = init_params(1, 1, np.random.default_rng(0), hidden=32)
    assert gen.content_head.w1.shape == (2, 32)
    assert gen.content_head.w2.shape == (32, 1)
    assert gen.entangler.w1.shape == (2, 32)
    assert gen.entangler.w2.shape == (32, 2)
    assert disc.content_critic.w1.shape == (1, 32)
    assert disc.entangled_critic.w2.shape == (32, 1)
    for p in (gen.content_head, gen.entangler, disc.content_critic):
        assert np.all(p.b1.data == 0.0) and np.all(p.b2.data == 0.0)


def test_init_weight_statistics():
    # 10,000 sampled weights: mean within +/-0.002 of 0, std within 5% of 0.02
    rng = np.random.default_rng(42)
    samples = np.concatenate(
        [init_mlp(10, 10, 50, "relu", rng).w1.data.ravel() for _ in range(10)]
    )
    assert samples.size == 10 * 10 * 50
    assert abs(samples.mean()) < 0.002
    assert abs(samples.std() - INIT_STD) < 0.05 * INIT_STD


def test_init_deterministic_per_seed():
    a, _ = init_params(1, 1, np.random.default_rng(5))
    b, _ = init_params(1, 1, np.random.default_rng(5))
    np.testing.assert_array_equal(a.content_head.w1.data, b.content_head.w1.data)
    np.testing.assert_array_equal(a.entangler.w2.data, b.entangler.w2.data)


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_params(0, 1, np.random.default_rng(0))


def test_shared_disentangler_single_net():
    gen, _ = init_params(2, 3, np.random.default_rng(0), shared_disentangler=True)
    assert gen.content_head is gen.residual_head
    assert gen.content_head.n_out == 5
    assert len(gen.disentangler_tensors()) == 4
    v = Tensor(np.random.default_rng(1).normal(size=(7, 5)))
    c, r = disentangle(gen, v)
    assert c.shape == (7, 2) and r.shape == (7, 3)


# --- forwards -------------------------------------------------------------------


def test_zero_weight_nets_output_biases():
    gen, disc = init_params(1, 2, np.random.default_rng(3), hidden=8)
    for net in (gen.content_head, gen.residual_head, gen.entangler,
                disc.content_critic, disc.entangled_critic):
        net.w1.data[...] = 0.0
        net.w2.data[...] = 0.0
        net.b2.data[...] = np.arange(net.n_out, dtype=float)
    v = Tensor(np.random.default_rng(4).normal(size=(6, 3)))
    c, r = disentangle(gen, v)
    np.testing.assert_array_equal(c.data, np.zeros((6, 1)))
    np.testing.assert_array_equal(r.data, np.tile([0.0, 1.0], (6, 1)))
    out = entangle(gen, c, r)
    np.testing.assert_array_equal(out.data, np.tile([0.0, 1.0, 2.0], (6, 1)))
    score = discriminate(disc.entangled_critic, v)
    np.testing.assert_array_equal(score.data, np.zeros((6, 1)))


def test_discriminate_shape_and_large_inputs():
    _, disc = init_params(1, 1, np.random.default_rng(0))
    x = Tensor(np.full((128, 2), 1e3))
    out = discriminate(disc.entangled_critic, x)
    assert out.shape == (128, 1)
    assert np.isfinite(out.data).all()


def test_disentangle_rejects_wrong_width():
    gen, _ = init_params(1, 1, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        disentangle(gen, Tensor(np.ones((4, 3))))


def test_entangle_rejects_mismatched_batches():
    gen, _ = init_params(1, 1, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        entangle(gen, Tensor(np.ones((4, 1))), Tensor(np.ones((5, 1))))


def test_exact_inverse_round_trip():
    gen = make_identity_pair()
    rng = np.random.default_rng(8)
    v = rng.normal(0.0, 2.0, size=(50, 2))
    c, r = disentangle(gen, Tensor(v))
    np.testing.assert_allclose(c.data, v[:, :1], atol=1e-12)
    np.testing.assert_allclose(r.data, v[:, 1:], atol=1e-12)
    back = entangle(gen, c, r)
    np.testing.assert_allclose(back.data, v, atol=1e-12)


def test_mlp_forward_unknown_activation():
    p = make_identity_mlp(2)
    p.activation = "tanh"
    with pytest.raises(ValueError):
        mlp_forward(p, Tensor(np.ones((1, 2))))


# --- spectral normalization ------------------------------------------------------


def test_spectral_scale_matches_svd():
    rng = np.random.default_rng(11)
    for shape in ((2, 32), (32, 1), (5, 3)):
        w = Tensor(rng.normal(0, 0.7, shape))
        with Tape():
            s = spectral_scale(w)
        expected = np.linalg.norm(w.data, ord=2)
        assert abs(s.item() - expected) < 1e-12


def test_sn_forward_matches_manual_normalization():
    rng = np.random.default_rng(12)
    _, disc = init_params(1, 1, rng, hidden=6)
    critic = disc.entangled_critic
    for t in critic.tensors():
        t.data[...] = rng.normal(0, 0.5, t.data.shape)
    x = rng.normal(size=(9, 2))
    out = mlp_forward(critic, Tensor(x), spectral_norm=True)
    w1 = critic.w1.data / np.linalg.norm(critic.w1.data, 2)
    w2 = critic.w2.data / np.linalg.norm(critic.w2.data, 2)
    h = x @ w1 + critic.b1.data
    h = np.where(h > 0, h, 0.2 * h)
    np.testing.assert_allclose(out.data, h @ w2 + critic.b2.data, atol=1e-12)


def test_sn_output_is_one_lipschitz_in_weight_scale():
    # scaling a weight matrix must not change the normalized forward
    rng = np.random.default_rng(13)
    _, disc = init_params(1, 1, rng, hidden=4)
    critic = disc.content_critic
    x = Tensor(rng.normal(size=(5, 1)))
    base = mlp_forward(critic, x, spectral_norm=True).data.copy()
    critic.w1.data *= 37.0
    scaled = mlp_forward(critic, x, spectral_norm=True).data
    np.testing.assert_allclose(scaled, base, atol=1e-10)


def test_sn_gradients_match_finite_differences():
    # singular vectors enter as constants, yet d(sigma_max)/dW = u v^T makes
    # the taped gradient equal the true derivative of the normalized forward
    rng = np.random.default_rng(14)
    _, disc = init_params(1, 1, rng, hidden=5)
    critic = disc.entangled_critic
    for t in critic.tensors():
        t.data[...] = rng.normal(0, 0.6, t.data.shape)
    x = Tensor(rng.normal(size=(7, 2)))
    report = grad_check(
        lambda: mean_reduce(square(mlp_forward(critic, x, spectral_norm=True))),
        critic.tensors(),
    )
    assert report.passed, report.max_rel_err


def test_discriminator_set_default_sn_flag():
    _, disc = init_params(1, 1, np.random.default_rng(0))
    assert disc.spectral_norm is True
    _, disc_off = init_params(1, 1, np.random.default_rng(0), spectral_norm=False)
    assert disc_off.spectral_norm is False


# --- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    gen, disc = init_params(2, 3, np.random.default_rng(21), hidden=7)
    path = tmp_path / "ck.json"
    save_checkpoint(path, gen, disc, meta={"note": "x"}, extra={"opt": [1, 2]})
    gen2, disc2, meta, extra = load_checkpoint(path)
    assert meta == {"note": "x"} and extra == {"opt": [1, 2]}
    assert (gen2.dim_c, gen2.dim_r) == (2, 3)
    assert disc2.spectral_norm == disc.spectral_norm
    for a, b in zip(gen.all_tensors(), gen2.all_tensors()):
        np.testing.assert_array_equal(a.data, b.data)
    for a, b in zip(disc.all_tensors(), disc2.all_tensors()):
        np.testing.assert_array_equal(a.data, b.data)


def test_checkpoint_shared_head_stays_shared(tmp_path):
    gen, disc = init_params(1, 1, np.random.default_rng(2), shared_disentangler=True)
    path = tmp_path / "ck.json"
    save_checkpoint(path, gen, disc)
    gen2, _, _, _ = load_checkpoint(path)
    assert gen2.shared_disentangler
    assert gen2.content_head is gen2.residual_head


def test_checkpoint_rejects_unknown_version(tmp_path):
    import json

    gen, disc = init_params(1, 1, np.random.default_rng(2))
    path = tmp_path / "ck.json"
    save_checkpoint(path, gen, disc)
    obj = json.loads(path.read_text())
    obj["format_version"] = 99
    path.write_text(json.dumps(obj))
    with pytest.raises(ValueError):
        load_checkpoint(path)
