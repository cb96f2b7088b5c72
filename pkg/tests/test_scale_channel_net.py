import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from strf.event_simulator import EventStream
from strf.exceptions import ConfigurationError, DomainError, FormatError
from strf.scale_channel_net import (
    NetworkConfig,
    SpikeFunction,
    as_input_tensor,
    coordinate_transform,
    forward,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from strf.spatial_kernels import DEFAULT_FAMILIES, DEFAULT_SCALES, DEFAULT_SKEWS, build_bank


def small_config(**overrides):
    defaults = dict(n_temporal_channels=2, widths=(2, 2, 2), kernel_size=3, height=8, width=8, mf_frames=3)
    defaults.update(overrides)
    return NetworkConfig(**defaults)


class TestNetworkConfig:
    def test_names_are_normalised(self):
        config = NetworkConfig(activation="ReLU-SF", init="Uniform")
        assert (config.activation, config.init) == ("relu_sf", "uniform")

    @pytest.mark.parametrize(
        "overrides", [{"activation": "tanh"}, {"kernel_size": 4}, {"widths": (1, 2)}, {"mu_range": (2.0, 1.0)}]
    )
    def test_invalid(self, overrides):
        with pytest.raises(DomainError):
            NetworkConfig(**overrides)

    def test_mu_init_length(self):
        with pytest.raises(ConfigurationError):
            NetworkConfig(n_temporal_channels=4, mu_init=(1.0, 2.0))

    def test_multi_frame_input_channels(self):
        assert NetworkConfig(activation="relu_mf", mf_frames=8).input_channels == 16
        assert NetworkConfig(activation="li").input_channels == 2

    def test_dict_round_trip_with_infinite_threshold(self):
        config = small_config(activation="lif", theta_thr=math.inf)
        data = config.to_dict()
        assert data["theta_thr"] == "inf"
        assert NetworkConfig.from_dict(data) == config

    def test_unknown_keys(self):
        with pytest.raises(ConfigurationError):
            NetworkConfig.from_dict({"depth": 5})

    def test_full_scale_widths(self):
        config = NetworkConfig.full()
        assert config.widths == (144, 144, 144)
        assert (config.height, config.width) == (300, 300)


class TestCoordinateTransform:
    def test_uniform_map_gives_centre(self):
        np.testing.assert_allclose(coordinate_transform(np.zeros((5, 7))), [3.0, 2.0])

    def test_peak_dominates_at_high_beta(self):
        maps = np.zeros((6, 9))
        maps[1, 7] = 1.0
        np.testing.assert_allclose(coordinate_transform(maps, beta=100.0), [7.0, 1.0], atol=1e-6)

    def test_batched_tensor(self):
        maps = torch.zeros(2, 3, 4, 4)
        coords = coordinate_transform(maps)
        assert torch.is_tensor(coords)
        assert coords.shape == (2, 3, 2)
        assert torch.allclose(coords, torch.full((2, 3, 2), 1.5))

    def test_two_equal_peaks_average(self):
        maps = np.zeros((5, 9))
        maps[2, 1] = maps[2, 7] = 1.0
        np.testing.assert_allclose(coordinate_transform(maps, beta=100.0), [4.0, 2.0], atol=1e-6)

    def test_beta_must_be_positive(self):
        with pytest.raises(DomainError):
            coordinate_transform(np.zeros((3, 3)), beta=0.0)


class TestSpikeFunction:
    def test_heaviside_forward(self):
        x = torch.tensor([-1.0, 0.0, 2.0])
        assert SpikeFunction.apply(x, 10.0, 1.0).tolist() == [0.0, 1.0, 1.0]

    def test_surrogate_gradient(self):
        x = torch.tensor([0.0, 0.1], requires_grad=True)
        SpikeFunction.apply(x, 10.0, 1.0).sum().backward()
        np.testing.assert_allclose(x.grad.numpy(), [1.0, 0.25])

    def test_zero_scale_blocks_gradient(self):
        x = torch.tensor([0.0, 0.3], requires_grad=True)
        SpikeFunction.apply(x, 10.0, 0.0).sum().backward()
        assert x.grad.abs().sum() == 0


class TestInitialisation:
    def test_schedule_mus(self):
        net = init_parameters(NetworkConfig(n_temporal_channels=4, mu_range=(1.0, 4.0), widths=(4, 4, 4)))
        mus = net.time_constants()
        np.testing.assert_allclose(mus[0].numpy(), [1.0, 4 ** (1 / 3), 4 ** (2 / 3), 4.0], rtol=1e-5)
        np.testing.assert_allclose(mus[1].numpy(), mus[0].numpy())
        np.testing.assert_allclose(mus[2].numpy(), 1.0, rtol=1e-5)

    def test_rf_block1_holds_bank(self):
        config = small_config()
        net = init_parameters(config)
        bank = build_bank(4, DEFAULT_SCALES, DEFAULT_SKEWS, DEFAULT_FAMILIES, grid_size=(3, 3), supersample=4)
        weights = torch.as_tensor(bank.weights(), dtype=torch.float32)
        assert torch.allclose(net.block1.weight[0, 0], weights[0])
        assert torch.allclose(net.block1.weight[1, 1], weights[72])
        # every temporal channel starts from the same kernels
        assert torch.equal(net.block1.weight[:2], net.block1.weight[2:])

    def test_parameter_count_does_not_depend_on_init(self):
        rf = init_parameters(small_config(init="rf"))
        uniform = init_parameters(small_config(init="uniform"))
        count = lambda net: sum(parameter.numel() for parameter in net.parameters())  # noqa: E731
        assert count(rf) == count(uniform)

    def test_uniform_mus_inside_range(self):
        net = init_parameters(small_config(init="uniform", mu_range=(1.0, 4.0), seed=5))
        mus = net.time_constants()
        assert torch.all(mus >= 1.0 - 1e-6) and torch.all(mus <= 4.0 + 1e-6)

    def test_seed_determinism(self):
        a = init_parameters(small_config(init="uniform", seed=3)).state_dict()
        b = init_parameters(small_config(init="uniform", seed=3)).state_dict()
        c = init_parameters(small_config(init="uniform", seed=4)).state_dict()
        assert all(torch.equal(a[name], b[name]) for name in a)
        assert not torch.equal(a["block1.weight"], c["block1.weight"])

    def test_width_larger_than_bank(self):
        with pytest.raises(ConfigurationError):
            init_parameters(small_config(widths=(200, 2, 2)))


class TestForward:
    @pytest.mark.parametrize("activation", ["li", "lif", "relu_sf", "relu_mf"])
    def test_zero_input_predicts_centre(self, activation):
        config = small_config(activation=activation)
        prediction = forward(init_parameters(config), np.zeros((5, 2, 8, 8), dtype=np.float32))
        assert prediction.coords.shape == (1, 5, 3, 2)
        np.testing.assert_allclose(prediction.numpy(), 3.5, atol=1e-6)

    def test_infinite_threshold_equals_li(self, rng):
        inputs = rng.uniform(0.0, 1.0, size=(6, 2, 8, 8)).astype(np.float32)
        li = forward(init_parameters(small_config(activation="li")), inputs, record=True)
        lif = forward(init_parameters(small_config(activation="lif", theta_thr=math.inf)), inputs, record=True)
        assert torch.equal(li.coords, lif.coords)
        assert lif.coords.abs().sum() > 0
        for t in range(6):
            for block in range(3):
                assert torch.equal(li.trace["output"][t][block], lif.trace["output"][t][block])
                assert torch.equal(li.trace["membrane"][t][block], lif.trace["membrane"][t][block])

    def test_vanishing_time_constants_match_relu(self, rng):
        inputs = rng.uniform(0.0, 1.0, size=(4, 2, 8, 8)).astype(np.float32)
        common = dict(init="uniform", seed=2, mu_init=(1e-3, 1e-3), head_mu=1e-3)
        li = forward(init_parameters(small_config(activation="li", **common)), inputs).coords
        relu = forward(init_parameters(small_config(activation="relu_sf", **common)), inputs).coords
        assert torch.allclose(li, relu, atol=1e-5)

    def test_block1_is_translation_equivariant(self):
        config = small_config(activation="relu_sf", height=12, width=12)
        net = init_parameters(config)
        inputs = torch.zeros(1, 1, 2, 12, 12)
        inputs[0, 0, 0, 4, 4] = 1.0
        shifted = torch.roll(inputs, shifts=(1, 2), dims=(3, 4))
        pre = forward(net, inputs, record=True).trace["pre"][0][0]
        pre_shifted = forward(net, shifted, record=True).trace["pre"][0][0]
        assert torch.allclose(torch.roll(pre, shifts=(1, 2), dims=(2, 3)), pre_shifted, atol=1e-6)

    def test_causal_in_time(self, rng):
        net = init_parameters(small_config(activation="li"))
        inputs = rng.uniform(0.0, 1.0, size=(6, 2, 8, 8)).astype(np.float32)
        perturbed = inputs.copy()
        perturbed[4:] = 0.0
        a = forward(net, inputs).coords
        b = forward(net, perturbed).coords
        assert torch.equal(a[:, :4], b[:, :4])

    def test_event_stream_input(self):
        stream = EventStream.from_arrays([0, 2], [1, 5], [3, 3], [1, -1], 8, 8, 4)
        prediction = forward(init_parameters(small_config()), stream)
        assert prediction.coords.shape == (1, 4, 3, 2)

    def test_wrong_frame_shape(self):
        with pytest.raises(ConfigurationError):
            as_input_tensor(np.zeros((4, 2, 9, 8)), small_config())


def identity_net(size=24, head_beta=20.0):
    """
    A ReLU net whose blocks pass channel 0 straight through to every output map.
    """
    config = NetworkConfig(
        activation="relu_sf",
        init="uniform",
        n_temporal_channels=1,
        widths=(2, 2, 2),
        kernel_size=3,
        height=size,
        width=size,
        head_beta=head_beta,
    )
    net = init_parameters(config)
    with torch.no_grad():
        for block in (*net.blocks, net.block4):
            block.weight.zero_()
            block.bias.zero_()
        for block in net.blocks:
            for o in range(2):
                block.weight[o, o, 1, 1] = 1.0
        net.block4.weight[:, :, 1, 1] = 1.0
    return net


def gaussian_blob(cx, cy, sigma=2.5, size=24):
    ys, xs = np.mgrid[0:size, 0:size]
    frames = np.zeros((1, 2, size, size), dtype=np.float32)
    frames[0, 0] = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma**2))
    return frames


class TestCoordinateReadout:
    def test_blob_is_located(self):
        coords = forward(identity_net(), gaussian_blob(11.2, 12.3)).numpy()[0, 0]
        frame = gaussian_blob(11.2, 12.3)[0, 0]
        ys, xs = np.mgrid[0:24, 0:24]
        centroid = [(frame * xs).sum() / frame.sum(), (frame * ys).sum() / frame.sum()]
        for shape_class in range(3):
            assert np.linalg.norm(coords[shape_class] - centroid) < 1.0

    def test_subpixel_shift(self):
        net = identity_net()
        before = forward(net, gaussian_blob(11.2, 12.3)).numpy()[0, 0, 0]
        after = forward(net, gaussian_blob(11.7, 12.3)).numpy()[0, 0, 0]
        assert after[0] - before[0] == pytest.approx(0.5, abs=0.02)
        assert after[1] - before[1] == pytest.approx(0.0, abs=0.02)

    @settings(max_examples=10)
    @given(st.integers(0, 2**16), st.floats(0.01, 100.0))
    def test_coordinates_stay_on_the_grid(self, seed, scale):
        config = small_config(activation="relu_sf", init="uniform", seed=seed, head_beta=5.0)
        inputs = np.random.default_rng(seed).normal(0.0, scale, size=(3, 2, 8, 8)).astype(np.float32)
        coords = forward(init_parameters(config), inputs).numpy()
        assert np.all(coords >= -1e-4)
        assert np.all(coords[..., 0] <= config.width - 1 + 1e-4)
        assert np.all(coords[..., 1] <= config.height - 1 + 1e-4)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = init_parameters(small_config(activation="lif", init="uniform", seed=8))
        path = str(tmp_path / "net.ckpt")
        save_checkpoint(net, path, extra={"epoch": 3})
        loaded, extra = load_checkpoint(path)
        assert extra == {"epoch": 3}
        assert loaded.config == net.config
        state = net.state_dict()
        assert all(torch.equal(state[name], tensor) for name, tensor in loaded.state_dict().items())

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "net.ckpt"
        path.write_bytes(b"RFB1" + b"\0" * 8)
        with pytest.raises(FormatError):
            load_checkpoint(str(path))
