import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from slicesr import network
from slicesr.grid import GridSpec1D, derive_output_grid, resample_array, round_half_away
from slicesr.network import SRNetwork, SRNetworkConfig


def tiny(ratio=2.0, seed=0, **kw):
    cfg = dict(channels=8, blocks=2, expansion=2.0, ratio=ratio, seed=seed)
    cfg.update(kw)
    return network.build(SRNetworkConfig(**cfg))


def randomize(net, seed=0, scale=0.2):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)
    return net


class TestConfig:
    def test_upscale(self):
        assert SRNetworkConfig(ratio=5.2).upscale == 6
        assert SRNetworkConfig(ratio=4.0).upscale == 4
        assert SRNetworkConfig(ratio=1.0).upscale == 1

    @pytest.mark.parametrize("kw", [dict(channels=0), dict(ratio=0.0), dict(channels=3, expansion=1.5),
                                    dict(blocks=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SRNetworkConfig(**kw)

    def test_parameter_count_is_function_of_config(self):
        a, b = tiny(seed=0), tiny(seed=5)
        count = lambda n: sum(p.numel() for p in n.parameters())
        assert count(a) == count(b)
        c, w, k = 8, 16, 2
        expected = (9 * c + c) + 2 * (9 * c * w + w + 9 * w * c + c) + (9 * c * k + k)
        assert count(a) == expected


class TestShapes:
    def test_integer_ratio(self):
        out = network.forward(tiny(2.0), np.random.default_rng(0).random((8, 8)))
        assert out.shape == (16, 8)

    def test_ratio_5p2(self):
        net = tiny(5.2)
        x = torch.rand(1, 1, 8, 8)
        shuffled = net.tail(net.body(net.head(x)))
        assert shuffled.shape[1] == 6
        # shuffled grid of 48 rows at spacing 5.2/6, resampled to spacing 1
        lr, target = network.output_grid(8, 5.2)
        assert derive_output_grid(GridSpec1D(48, 5.2 / 6, lr.center), 1.0).count == 42
        assert target.count == 42
        assert net(x).shape == (1, 1, 42, 8)

    def test_48_rows_at_6p5(self):
        assert network.forward(tiny(6.5), np.zeros((48, 5))).shape == (312, 5)

    @given(st.floats(1.0, 8.0), st.integers(8, 64))
    @settings(max_examples=40, deadline=None)
    def test_shape_contract(self, r, n):
        assert network.output_rows(n, r) == round_half_away(n * r)
        net = network.build(SRNetworkConfig(channels=2, blocks=0, ratio=r))
        assert network.forward(net, np.zeros((n, 3))).shape == (round_half_away(n * r), 3)

    def test_stack_input(self):
        net = tiny(3.0)
        x = np.random.default_rng(1).random((4, 8, 6))
        out = network.forward(net, x)
        assert out.shape == (4, 24, 6)
        np.testing.assert_array_equal(out[2], network.forward(net, x[2]))

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            network.forward(tiny(), np.zeros((7, 8)))
        with pytest.raises(ValueError):
            tiny()(torch.zeros(1, 1, 7, 8))

    def test_bad_rank(self):
        with pytest.raises(ValueError):
            network.forward(tiny(), np.zeros(8))


class TestForwardValues:
    def test_zero_input_fresh_network(self):
        out = network.forward(tiny(3.0), np.zeros((8, 8)))
        assert np.all(out == 0.0)

    def test_zero_parameters_equal_cubic_upsample(self):
        net = network.zero_parameters(randomize(tiny(2.7)))
        x = np.random.default_rng(2).normal(size=(11, 7))
        lr, target = network.output_grid(11, 2.7)
        expected = resample_array(x, 0, lr, target, "cubic-bspline")
        np.testing.assert_array_equal(network.forward(net, x), expected)

    def test_torch_and_numpy_paths_agree(self):
        net = randomize(tiny(2.5), seed=3, scale=0.1)
        x = np.random.default_rng(3).random((10, 9))
        via_torch = net(torch.from_numpy(x).float()[None, None])[0, 0].double().detach().numpy()
        np.testing.assert_allclose(network.forward(net, x), via_torch, atol=1e-5)

    def test_shuffle_channel_order(self):
        # with no blocks and an identity-like head/tail, channel j lands on row offset j
        net = network.build(SRNetworkConfig(channels=1, blocks=0, ratio=3.0))
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
            net.tail.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
        out = network.forward(net, np.zeros((8, 4)))
        np.testing.assert_allclose(out[:, 0], np.tile([1.0, 2.0, 3.0], 8), atol=1e-12)

    def test_fully_convolutional_interior(self):
        net = randomize(tiny(2.0), seed=4, scale=0.1)
        rng = np.random.default_rng(4)
        x = rng.random((8, 24))
        wide = np.concatenate([x, rng.random((8, 24))], axis=1)
        reach = 3 * (1 + 2 * 2 + 1)  # receptive half-width in columns
        a = network.forward(net, x)[:, : 24 - reach]
        b = network.forward(net, wide)[:, : 24 - reach]
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_determinism(self):
        a, b = tiny(seed=7), tiny(seed=7)
        for p, q in zip(a.parameters(), b.parameters()):
            assert torch.equal(p, q)
        x = np.random.default_rng(5).random((8, 8))
        np.testing.assert_array_equal(network.forward(a, x), network.forward(b, x))
        c = tiny(seed=8)
        assert not torch.equal(a.head.weight, c.head.weight)

    def test_init_is_variance_preserving(self):
        net = network.build(SRNetworkConfig(channels=64, blocks=2, ratio=2.0, seed=0))
        w = net.head.weight
        assert float(w.detach().std()) == pytest.approx(np.sqrt(2 / 9), rel=0.1)
        assert all(float(b.detach().abs().max()) == 0 for n, b in net.named_parameters() if n.endswith("bias"))


class TestLoss:
    def test_identical(self):
        x = np.random.default_rng(0).random((5, 5))
        assert network.loss(x, x) == 0.0

    def test_offset_one(self):
        x = np.random.default_rng(0).random((5, 5))
        assert network.loss(x + 1, x) == pytest.approx(1.0, abs=1e-12)

    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(13, 9)), rng.normal(size=(13, 9))
        acc = 0.0
        for i in range(13):
            for j in range(9):
                acc += (a[i, j] - b[i, j]) ** 2
        assert abs(network.loss(a, b) - acc / a.size) < 1e-10

    def test_torch(self):
        a = torch.ones(2, 3)
        assert float(network.loss(a + 2, a)) == 4.0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            network.loss(np.zeros((2, 3)), np.zeros((3, 2)))


def test_gradient_check():
    torch.manual_seed(0)
    net = network.build(SRNetworkConfig(channels=4, blocks=1, ratio=2.5, seed=1)).double()
    randomize(net, seed=1, scale=0.3)
    gen = torch.Generator().manual_seed(2)
    x = torch.rand(2, 1, 8, 6, generator=gen, dtype=torch.float64)
    y = torch.rand(2, 1, 20, 6, generator=gen, dtype=torch.float64)

    net.zero_grad()
    network.loss(net(x), y).backward()
    params = list(net.parameters())
    flat = [(p, i) for p in params for i in range(p.numel())]
    picks = np.random.default_rng(0).choice(len(flat), size=100, replace=False)
    eps = 1e-6
    worst = 0.0
    for k in picks:
        p, i = flat[k]
        view = p.data.view(-1)
        orig = view[i].item()
        with torch.no_grad():
            view[i] = orig + eps
            up = network.loss(net(x), y).item()
            view[i] = orig - eps
            down = network.loss(net(x), y).item()
            view[i] = orig
        numeric = (up - down) / (2 * eps)
        analytic = p.grad.view(-1)[i].item()
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    assert worst < 1e-3


def test_checkpoint_round_trip(tmp_path):
    net = randomize(tiny(4.0, seed=3), seed=9)
    network.save_checkpoint(net, tmp_path / "net.pt")
    back = network.load_checkpoint(tmp_path / "net.pt")
    assert back.config == net.config
    x = np.random.default_rng(6).random((9, 8))
    np.testing.assert_array_equal(network.forward(back, x), network.forward(net, x))


def test_overfit_ramp():
    torch.manual_seed(0)
    net = network.build(SRNetworkConfig(channels=8, blocks=1, ratio=2.0, seed=0))
    lr_grid, target = network.output_grid(8, 2.0)
    cols = np.arange(8.0)
    # ramp along rows: sample positions on each grid (HR units) scaled to [0, 1]
    hr = np.repeat(target.positions()[:, None] / 16 + 0.5, 8, axis=1) + 0.01 * cols
    lr = np.repeat(lr_grid.positions()[:, None] / 16 + 0.5, 8, axis=1) + 0.01 * cols
    x = torch.from_numpy(lr).float()[None, None]
    y = torch.from_numpy(hr).float()[None, None]
    initial = network.loss(network.forward(net, lr), hr)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    for _ in range(300):
        opt.zero_grad()
        value = network.loss(net(x), y)
        value.backward()
        opt.step()
    trained = network.loss(net(x), y).item()
    final = network.loss(network.forward(net, lr), hr)
    assert final < 0.1 * initial
    # the inference path reproduces the ramp to the training error
    assert final == pytest.approx(trained, rel=0.05, abs=1e-7)
