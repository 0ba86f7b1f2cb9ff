import numpy as np
import pytest

from iimt.checkpoint import checkpoint_name, load_checkpoint, restore, save_checkpoint
from iimt.errors import ConfigError, ShapeError, ValidationError
from iimt.gradcheck import numeric_grad
from iimt.models import GradientReversal, ModelConfig, grad_reverse, init_params
from iimt.optim import Adam
from iimt.tensor import Tensor, binary_cross_entropy, cross_entropy, softmax


def small(seed=0, **kw):
    cfg = dict(input_dim=3, num_classes=4, hidden_dims=(8,), embed_dim=5, disc_hidden=7, dtype="float64")
    cfg.update(kw)
    return init_params(ModelConfig(**cfg), seed)


def batch(n=6, d=3, seed=1):
    return np.random.default_rng(seed).standard_normal((n, d))


def test_embed_shape_and_zero_final_layer_gives_bias_rows():
    m = small()
    x = batch(9)
    assert m.embed(x).shape == (9, 5)
    last = m.encoder.layers[-1]
    last.weight.data[:] = 0
    last.bias.data[:] = np.arange(5.0)
    assert np.array_equal(m.embed(x).data, np.tile(np.arange(5.0), (9, 1)))


def test_classify_is_composition_bit_exact():
    m = small()
    x = batch()
    assert np.array_equal(m.classify(x).data, softmax(m.classifier(m.embed(x))).data)
    assert np.array_equal(m.classify(x).data, m.predict_from_embedding(m.embed(x)).data)


def test_zero_weights_give_uniform_distribution():
    m = small()
    for p in m.parameters():
        p.data[:] = 0
    assert np.allclose(m.classify(batch()).data, 0.25)


def test_rows_sum_to_one_and_argmax_shift_stable():
    m = small()
    p = m.classify(batch(20) * 10).data
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)
    logits = m.logits(batch(20)).data
    assert np.array_equal(logits.argmax(1), softmax(Tensor(logits + 3.0)).data.argmax(1))


def test_input_shape_checked():
    with pytest.raises(ShapeError):
        small().embed(np.ones((2, 4)))


def test_discriminator_output_strictly_inside_unit_interval():
    m = small()
    d = m.discriminate(m.embed(batch(50) * 100)).data
    assert d.shape == (50,) and np.all((d > 0) & (d < 1))


def test_reversal_forward_identical_for_any_mu():
    x = batch()
    a, b = small(mu=0.0), small(mu=1.0)
    assert np.array_equal(a.discriminate(a.embed(x)).data, b.discriminate(b.embed(x)).data)


def test_mu_zero_blocks_encoder_gradient():
    m = small(mu=0.0)
    binary_cross_entropy(m.discriminate(m.embed(batch())), 1.0).backward()
    for layer in m.encoder.layers:
        assert np.all(layer.weight.grad == 0) and np.all(layer.bias.grad == 0)
    assert np.any(m.discriminator.layers[0].weight.grad != 0)


@pytest.mark.parametrize("mu", [0.3, 1.0, 2.5])
def test_reversal_gradient_is_minus_mu_times_plain_gradient(mu):
    m = small(mu=mu)
    z = Tensor(batch(4, 5, seed=2), requires_grad=True)
    m.discriminate(z).sum().backward()
    tape = z.grad.copy()

    def plain():
        from iimt.tensor import sigmoid

        return sigmoid(m.discriminator(z)).sum()

    numeric = numeric_grad(plain, z, 1e-6)
    assert np.allclose(tape, -mu * numeric, rtol=1e-6, atol=1e-9)


def test_grad_reverse_identity_forward():
    x = Tensor(batch(), requires_grad=True)
    assert np.array_equal(grad_reverse(x, 0.7).data, x.data)
    with pytest.raises(ConfigError):
        GradientReversal(float("nan"))


def test_discriminator_learns_separable_embeddings():
    # logistic-regression oracle: a fixed linearly separable pair of embedding clouds
    rng = np.random.default_rng(3)
    z_pos = rng.standard_normal((200, 5)) + 2.0
    z_neg = rng.standard_normal((200, 5)) - 2.0
    z = np.concatenate([z_pos, z_neg])
    y = np.r_[np.ones(200), np.zeros(200)]
    m = small(seed=4)
    opt = Adam(m.discriminator.parameters(), lr=1e-2)
    for _ in range(200):
        m.zero_grad()
        loss = binary_cross_entropy(m.discriminate(z_pos), 1.0) + binary_cross_entropy(m.discriminate(z_neg), 0.0)
        loss.backward()
        opt.step()
    acc = np.mean((m.discriminate(z).data > 0.5) == y)
    assert acc >= 0.99


def test_init_deterministic_and_seed_sensitive():
    a, b, c = small(5), small(5), small(6)
    for (na, pa), (_, pb), (_, pc) in zip(a.named_parameters(), b.named_parameters(), c.named_parameters()):
        assert np.array_equal(pa.data, pb.data), na
    assert any(not np.array_equal(pa.data, pc.data) for pa, pc in zip(a.parameters(), c.parameters()))


def test_init_weight_variance_is_one_over_fan_in():
    fan_in = 100
    m = init_params(ModelConfig(fan_in, 2, (), 100, 4, dtype="float64"), 0)
    w = m.encoder.layers[0].weight.data
    assert w.size == 10_000
    assert abs(w.var() * fan_in - 1.0) < 0.2
    assert np.all(m.encoder.layers[0].bias.data == 0)


def test_default_discriminator_has_hidden_width_128():
    m = init_params(ModelConfig(2, 2), 0)
    assert [l.weight.shape for l in m.discriminator.layers] == [(32, 128), (128, 1)]
    assert [l.weight.shape for l in m.encoder.layers] == [(2, 64), (64, 64), (64, 32)]
    assert m.encoder.layers[0].weight.dtype == np.float32


def test_forward_backward_bit_reproducible():
    grads = []
    for _ in range(2):
        m = small(7)
        cross_entropy(np.eye(4)[[0, 1, 2, 3, 0, 1]], m.classify(batch())).backward()
        grads.append([p.grad.copy() for p in m.encoder.parameters()])
    for g1, g2 in zip(*grads):
        assert np.array_equal(g1, g2)


def test_invalid_model_config():
    with pytest.raises(ConfigError):
        ModelConfig(2, 1).validate()
    with pytest.raises(ConfigError):
        ModelConfig(2, 2, dtype="float16").validate()


# -- checkpoints -----------------------------------------------------------------------


def test_checkpoint_name_embeds_step_and_hash():
    assert checkpoint_name(42, "abc123") == "ckpt-step0000042-abc123.ckpt"


def test_checkpoint_round_trip(tmp_path):
    m = small(8)
    opt = Adam(m.parameters(), lr=0.01)
    cross_entropy(np.eye(4)[[0, 1, 2, 3, 0, 1]], m.classify(batch())).backward()
    opt.step()
    path = save_checkpoint(tmp_path / checkpoint_name(1, "h"), m, opt, 1, "h", {"note": 1})
    other = small(9)
    other_opt = Adam(other.parameters(), lr=0.5)
    ck = restore(path, other, other_opt)
    assert (ck.step, ck.config_hash, ck.extra) == (1, "h", {"note": 1})
    for (n, a), (_, b) in zip(m.named_parameters(), other.named_parameters()):
        assert np.array_equal(a.data, b.data), n
    assert other_opt.t == 1 and other_opt.lr == 0.01
    assert all(np.array_equal(x, y) for x, y in zip(opt.m, other_opt.m))


def test_checkpoint_bytes_are_deterministic(tmp_path):
    m = small(10)
    a = save_checkpoint(tmp_path / "a.ckpt", m, None, 0, "h")
    b = save_checkpoint(tmp_path / "b.ckpt", m, None, 0, "h")
    assert a.read_bytes() == b.read_bytes()
    assert load_checkpoint(a).optimizer is None


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "a.ckpt", small(), None, 0, "h")
    with pytest.raises(ShapeError):
        restore(path, small(embed_dim=6))


def test_not_a_checkpoint(tmp_path):
    import zipfile

    bad = tmp_path / "bad.ckpt"
    with zipfile.ZipFile(bad, "w") as zf:
        zf.writestr("meta.json", '{"format": "other", "version": 1}')
    with pytest.raises(ValidationError):
        load_checkpoint(bad)
