import numpy as np
import pytest

from dalbt.errors import ConfigurationError, FormatError, NumericError, UsageError
from dalbt.losses import LossWeights
from dalbt.network import (
    ArchSpec,
    Dense,
    Flatten,
    NetworkParams,
    Tanh,
    backward,
    classify,
    conv_encoder,
    encode,
    forward_encoder,
    forward_joint,
    init_params,
    load_checkpoint,
    mlp_encoder,
    project,
    save_checkpoint,
)
from dalbt.trainer import grad_check


def dense_arch(d_in=8, latent=6, emb=(4,), k=3):
    return ArchSpec((1, 1, d_in), (Flatten(), Dense(latent)), k, emb)


def test_init_is_seeded():
    a = init_params(dense_arch(), 7)
    b = init_params(dense_arch(), 7)
    c = init_params(dense_arch(), 8)
    for k in a.tensors:
        np.testing.assert_array_equal(a.tensors[k], b.tensors[k])
    assert any(not np.array_equal(a.tensors[k], c.tensors[k]) for k in a.tensors if k.endswith("W"))


def test_dense_64_to_32_counts():
    p = init_params(ArchSpec((1, 1, 64), (Flatten(), Dense(32)), 2, ()), 0)
    assert p.tensors["enc.1.W"].size == 2048
    assert p.tensors["enc.1.b"].size == 32


def test_empty_projector_is_identity():
    p = init_params(dense_arch(emb=()), 0)
    z = np.random.default_rng(0).normal(size=(3, 6))
    np.testing.assert_array_equal(project(p, z), z)
    assert p.embedding_dim == p.latent_dim == 6


def test_identity_encoder_passes_input_through():
    p = init_params(ArchSpec((1, 1, 2), (Flatten(), Dense(2)), 2, ()), 0)
    p.tensors["enc.1.W"] = np.eye(2)
    np.testing.assert_allclose(encode(p, np.array([0.3, 0.7]).reshape(1, 1, 1, 2)), [[0.3, 0.7]])


def test_zero_input_odd_nonlinearity_gives_zero_latent():
    arch = ArchSpec((1, 1, 5), (Flatten(), Dense(4), Tanh(), Dense(3)), 2, ())
    p = init_params(arch, 1)
    np.testing.assert_array_equal(encode(p, np.zeros((2, 1, 1, 5))), 0.0)


def test_zero_classifier_is_uniform():
    p = init_params(dense_arch(k=4), 0)
    p.tensors["cls.W"][:] = 0.0
    np.testing.assert_allclose(classify(p, np.ones((2, 6))), 0.25)


@pytest.mark.parametrize("arch", [
    dense_arch(),
    ArchSpec((8, 8, 1), conv_encoder((2, 3), 5, kernel=3), 3, (4,)),
])
def test_batch_independence(arch):
    p = init_params(arch, 2)
    x = np.random.default_rng(2).random((8,) + arch.input_shape)
    z = encode(p, x)
    for i in (0, 5):
        np.testing.assert_allclose(encode(p, x[i:i + 1])[0], z[i], atol=1e-14)


def test_identity_views_give_equal_projections():
    p = init_params(dense_arch(), 3)
    x = np.random.default_rng(3).random((4, 1, 1, 8))
    out = forward_joint(p, x, x, x)
    np.testing.assert_array_equal(out.p1, out.p2)


def test_backward_needs_forward():
    p = init_params(dense_arch(), 0)
    with pytest.raises(UsageError):
        backward(p, None, np.zeros((2, 3)))


def test_square_gradient_through_encoder():
    # z = w with input 1, loss z**2, so dL/dw = 2w = 6 at w = 3
    p = init_params(ArchSpec((1, 1, 1), (Flatten(), Dense(1)), 2, ()), 0)
    p.tensors["enc.1.W"][:] = 3.0
    z, tape = forward_encoder(p, np.ones((1, 1, 1, 1)))
    g = backward(p, tape, grad_z=2 * z)
    assert g["enc.1.W"][0, 0] == pytest.approx(6.0)
    assert g["cls.W"].sum() == 0.0  # loss does not touch the classifier


def test_projector_gradient_zero_without_views():
    p = init_params(dense_arch(), 0)
    x = np.random.default_rng(0).random((4, 1, 1, 8))
    out = forward_joint(p, x)
    g = backward(p, out.tape, np.ones((4, 3)))
    assert np.all(g["proj.0.W"] == 0.0)


def test_conv_model_gradcheck():
    arch = ArchSpec((8, 8, 1), conv_encoder((2, 3), 5, kernel=3), 3, (4,))
    p = init_params(arch, 0)
    rng = np.random.default_rng(0)
    x, v1, v2 = (rng.random((3, 8, 8, 1)) for _ in range(3))
    assert grad_check(p, (x, [0, 1, 2], v1, v2), 1e-5, LossWeights(gamma=0.5)) < 1e-4


def test_non_finite_activation_names_layer():
    p = init_params(dense_arch(), 0)
    p.tensors["enc.1.W"][0, 0] = np.nan
    with pytest.raises(NumericError, match="enc"):
        encode(p, np.ones((2, 1, 1, 8)))


def test_bad_architectures():
    with pytest.raises(ConfigurationError):
        init_params(ArchSpec((1, 1, 4), (Dense(3),), 2), 0)  # no flatten
    with pytest.raises(ConfigurationError):
        init_params(ArchSpec((7, 7, 1), conv_encoder((2,), 3, kernel=3), 2), 0)  # odd size for pooling


def test_checkpoint_round_trip(tmp_path):
    p = init_params(ArchSpec((4, 4, 1), conv_encoder((2,), 3, kernel=3), 2, (5, 4)), 9)
    path = tmp_path / "w.ckpt"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.arch == p.arch
    assert sorted(q.tensors) == sorted(p.tensors)
    for k in p.tensors:
        np.testing.assert_array_equal(q.tensors[k], p.tensors[k])
    save_checkpoint(q, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    p = init_params(dense_arch(), 0)
    save_checkpoint(p, bad)
    bad.write_bytes(bad.read_bytes()[:-9])
    with pytest.raises(FormatError):
        load_checkpoint(bad)


def test_params_copy_is_deep():
    p = init_params(ArchSpec((1, 1, 4), mlp_encoder((3,), 2), 2), 0)
    q = p.copy()
    q.tensors["cls.W"][0, 0] += 1.0
    assert p.tensors["cls.W"][0, 0] != q.tensors["cls.W"][0, 0]
    assert isinstance(q, NetworkParams)
