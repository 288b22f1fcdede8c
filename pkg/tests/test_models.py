import numpy as np
import pytest

from facedepth.autodiff import Tensor, frozen, no_grad
from facedepth.models import (
    ConfigError,
    DiscriminatorNet,
    GeneratorNet,
    SiameseNet,
    init_weights,
    layer_shapes,
    scaled,
)


def conv_params(cin, cout, k):
    return cin * cout * k * k + cout


def test_generator_shapes_at_full_width():
    trace = layer_shapes(GeneratorNet(1.0), (1, 1, 96, 96))
    enc = [s for tag, s in trace if tag == "encoder"]
    dec = [s for tag, s in trace if tag == "decoder"]
    assert [s[2] for s in enc] == [48, 24, 12, 6]
    assert [s[1] for s in enc] == [128, 256, 512, 1024]
    assert [s[2] for s in dec] == [12, 24, 48, 96]
    assert [s[1] for s in dec] == [512, 256, 128, 64]
    assert trace[-1] == ("output", (1, 1, 96, 96))


def test_generator_parameter_count_from_layer_string():
    chans = [1, 128, 256, 512, 1024, 512, 256, 128, 64]
    expected = sum(conv_params(a, b, 5) + 2 * b for a, b in zip(chans[:-1], chans[1:]))
    expected += conv_params(64, 1, 5)
    assert GeneratorNet(1.0).num_parameters() == expected == 34_624_641


def test_discriminator_flattens_to_36864():
    d = DiscriminatorNet(1.0, 96)
    trace = layer_shapes(d, (2, 1, 96, 96))
    assert ("flatten", (2, 36864)) in trace
    assert trace[-1] == ("output", (2, 1))
    assert d.fc_inputs == 36864


def test_siamese_tower_shapes():
    trace = layer_shapes(SiameseNet(1.0, 96), (1, 1, 96, 96))
    tower = [s for tag, s in trace if tag == "tower"]
    assert [s[2] for s in tower] == [48, 24, 12, 6, 3]
    assert ("pool", (1, 256, 1, 1)) in trace


@pytest.mark.parametrize("m", [0.5, 0.25, 0.125, 0.0625])
def test_multiplier_scales_every_convolution(m):
    g = GeneratorNet(m)
    trace = layer_shapes(g, (1, 1, 32, 32))
    assert [s[1] for tag, s in trace if tag == "encoder"] == [scaled(c, m) for c in (128, 256, 512, 1024)]
    assert trace[-1] == ("output", (1, 1, 32, 32))


@pytest.mark.parametrize("m", [0.3, 2.0, 0.0, -1.0])
def test_unsupported_multiplier_rejected(m):
    with pytest.raises(ConfigError):
        GeneratorNet(m)


@pytest.mark.parametrize("size", [30, 40, 100])
def test_generator_rejects_sizes_not_divisible_by_16(size):
    with pytest.raises(ConfigError):
        GeneratorNet(0.0625)(Tensor(np.zeros((2, 1, size, size))))


def test_siamese_rejects_inputs_that_collapse_before_pooling():
    with pytest.raises(ConfigError):
        SiameseNet(0.125, 32)


def test_init_is_seeded_and_follows_the_distribution():
    a, b, c = GeneratorNet(0.125), GeneratorNet(0.125), GeneratorNet(0.125)
    init_weights(a, 3)
    init_weights(b, 3)
    init_weights(c, 4)
    assert a.digest() == b.digest() != c.digest()
    w = np.concatenate([p.data.ravel() for n, p in a.named_parameters() if n.endswith("weight")])
    assert abs(w.mean()) < 1e-3 and abs(w.std() - 0.02) < 1e-3
    for n, p in a.named_parameters():
        if n.endswith("gamma"):
            assert abs(p.data.mean() - 1.0) < 0.02
        if n.endswith(("bias", "beta")):
            assert not p.data.any()


def test_output_ranges():
    g = GeneratorNet(0.0625)
    init_weights(g, 0)
    with no_grad():
        out = g(Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 1, 16, 16)))).data
    assert out.min() >= -1 and out.max() <= 1
    d = DiscriminatorNet(0.0625, 16)
    init_weights(d, 0)
    with no_grad():
        p = d(Tensor(np.zeros((2, 1, 16, 16)))).data
    assert ((p > 0) & (p < 1)).all()


def test_frozen_module_gets_no_gradients_and_keeps_running_stats():
    d = DiscriminatorNet(0.0625, 16)
    init_weights(d, 0)
    x = Tensor(np.random.default_rng(1).standard_normal((4, 1, 16, 16)), requires_grad=True)
    before = d.digest()
    with frozen(d):
        d(x).sum().backward()
    assert d.digest() == before
    assert all(p.grad is None for p in d.parameters())
    assert x.grad is not None and np.abs(x.grad).sum() > 0
    assert all(p.requires_grad for p in d.parameters())


def test_backward_after_leaving_frozen_block_still_skips_module():
    d = DiscriminatorNet(0.0625, 16)
    init_weights(d, 0)
    x = Tensor(np.ones((2, 1, 16, 16)), requires_grad=True)
    with frozen(d):
        out = d(x).sum()
    out.backward()
    assert all(p.grad is None for p in d.parameters())


def test_siamese_score_is_symmetric():
    net = SiameseNet(0.125, 48)
    init_weights(net, 2)
    net.eval()
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 1, 48, 48)))
    b = Tensor(rng.standard_normal((3, 1, 48, 48)))
    with no_grad():
        np.testing.assert_array_equal(net(a, b).data, net(b, a).data)


def test_state_dict_round_trip():
    a, b = GeneratorNet(0.0625), GeneratorNet(0.0625)
    init_weights(a, 1)
    b.load_state_dict({k: v.copy() for k, v in a.state_dict().items()})
    assert a.digest() == b.digest()
    with pytest.raises(KeyError):
        b.load_state_dict({})
