import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from strf.covariance_harness import BandLimitedImage
from strf.exceptions import DomainError
from strf.spatial_kernels import KernelSpec, sample_kernel
from strf.strf_engine import FrameTensor, StrfSpec, convolve2d, galilean_warp, respond
from strf.temporal_kernels import TemporalSpec, h_exp


def _reference_correlate(frame, kernel):
    kh, kw = kernel.shape
    padded = np.pad(frame, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="edge")
    out = np.zeros_like(frame)
    for i in range(frame.shape[0]):
        for j in range(frame.shape[1]):
            for a in range(kh):
                for b in range(kw):
                    out[i, j] += kernel[a, b] * padded[i + a, j + b]
    return out


class TestFrameTensor:
    def test_rejects_non_finite(self):
        data = np.zeros((2, 1, 3, 3))
        data[0, 0, 0, 0] = np.nan
        with pytest.raises(DomainError):
            FrameTensor(data)

    def test_rejects_wrong_rank(self):
        with pytest.raises(DomainError):
            FrameTensor(np.zeros((3, 3)))

    def test_times(self):
        frames = FrameTensor(np.zeros((3, 1, 2, 2)), dt=0.5, t0=0.25)
        np.testing.assert_allclose(frames.times(), [0.25, 0.75, 1.25])
        assert frames.dims == (3, 1, 2, 2)


class TestConvolve2d:
    def test_unit_kernel_is_identity(self, rng):
        frame = rng.normal(size=(7, 5))
        np.testing.assert_array_equal(convolve2d(frame, np.ones((1, 1))), frame)

    def test_constant_frame_keeps_value(self):
        kernel = sample_kernel(KernelSpec(0.3, 2.0, 1.0), (9, 9))
        np.testing.assert_allclose(convolve2d(np.full((12, 12), 4.2), kernel), 4.2, atol=1e-6)

    def test_matches_loop_reference(self, rng):
        frame = rng.normal(size=(16, 16))
        kernel = rng.normal(size=(5, 5))
        np.testing.assert_allclose(convolve2d(frame, kernel), _reference_correlate(frame, kernel), atol=1e-6)

    def test_zero_padding(self):
        result = convolve2d(np.ones((5, 5)), np.ones((3, 3)) / 9.0, padding="zero")
        assert result[0, 0] == pytest.approx(4.0 / 9.0)
        assert result[2, 2] == pytest.approx(1.0)

    def test_kernel_must_fit(self):
        with pytest.raises(DomainError):
            convolve2d(np.ones((3, 3)), np.ones((5, 5)))


class TestGalileanWarp:
    def test_zero_velocity_is_identity(self, rng):
        frames = FrameTensor(rng.normal(size=(4, 1, 6, 6)))
        np.testing.assert_array_equal(galilean_warp(frames, (0.0, 0.0)).data, frames.data)

    def test_cancels_matching_motion(self):
        data = np.zeros((5, 1, 9, 12))
        for n in range(5):
            data[n, 0, 4, 2 + n] = 1.0
        warped = galilean_warp(FrameTensor(data, dt=1.0), (1.0, 0.0))
        for n in range(5):
            np.testing.assert_allclose(warped.data[n], data[0], atol=1e-12)

    def test_round_trip(self):
        image = BandLimitedImage(wavelengths=(24.0, 64.0), seed=2).sample((48, 48))
        frames = FrameTensor(np.repeat(image[None, None], 6, axis=0), dt=1.0)
        back = galilean_warp(galilean_warp(frames, (0.7, -0.4)), (-0.7, 0.4))
        interior = (slice(None), slice(None), slice(8, -8), slice(8, -8))
        error = np.linalg.norm(back.data[interior] - frames.data[interior]) / np.linalg.norm(frames.data[interior])
        assert error < 0.01


class TestRespond:
    def test_constant_video_dc_gain(self):
        frames = FrameTensor(np.full((400, 1, 12, 12), 1.7), dt=0.25)
        spec = StrfSpec(KernelSpec(0.0, 1.0, 1.0), TemporalSpec("li", mu=1.0))
        output = respond(frames, spec)
        np.testing.assert_allclose(output.data[-1], 1.7, atol=1e-6)

    def test_impulse_is_outer_product(self):
        dt, mu = 0.05, 1.0
        data = np.zeros((200, 1, 15, 15))
        data[0, 0, 7, 7] = 1.0
        spatial = KernelSpec(0.0, 1.5, 1.0)
        spec = StrfSpec(spatial, TemporalSpec("li", mu=mu), grid_size=(9, 9), padding="zero")
        output = respond(FrameTensor(data, dt=dt), spec).data[:, 0]
        kernel = sample_kernel(spatial, (9, 9)).weights
        times = (np.arange(200) + 1) * dt
        temporal = h_exp(times, mu) * math.expm1(dt / mu) * mu
        expected = np.zeros_like(output)
        expected[:, 3:12, 3:12] = temporal[:, None, None] * kernel[None]
        assert np.linalg.norm(output - expected) / np.linalg.norm(expected) < 1e-3

    @given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
    def test_linearity(self, a, b):
        rng = np.random.default_rng(7)
        f = rng.normal(size=(12, 1, 10, 10))
        g = rng.normal(size=(12, 1, 10, 10))
        spec = StrfSpec(KernelSpec(0.5, 1.5, 1.0, 1, 0), TemporalSpec("li", mu=0.5), velocity=(0.3, 0.1))
        combined = respond(FrameTensor(a * f + b * g, dt=0.1), spec).data
        separate = a * respond(FrameTensor(f, dt=0.1), spec).data + b * respond(FrameTensor(g, dt=0.1), spec).data
        np.testing.assert_allclose(combined, separate, atol=1e-6)

    def test_separable_equals_full_convolution(self, rng):
        dt, mu = 0.2, 0.6
        video = rng.normal(size=(16, 1, 8, 8))
        spatial = KernelSpec(0.0, 1.0, 1.0)
        spec = StrfSpec(spatial, TemporalSpec("li", mu=mu), grid_size=(5, 5), padding="zero")
        output = respond(FrameTensor(video, dt=dt), spec).data[:, 0]
        kernel = sample_kernel(spatial, (5, 5)).weights
        decay = math.exp(-dt / mu)
        taps = (1 - decay) * decay ** np.arange(16)
        # lag k sits at temporal index 15 − k; output n is centred on padded index n + 8
        full = taps[::-1, None, None] * kernel[None]
        padded = np.concatenate([np.zeros((15, 8, 8)), video[:, 0]])
        reference = ndimage.correlate(padded, full, mode="constant")[8 : 8 + 16]
        assert np.linalg.norm(output - reference) / np.linalg.norm(output) < 1e-6

    def test_velocity_adaptation(self):
        image = BandLimitedImage(wavelengths=(16.0, 48.0), seed=4)
        u, dt, steps = 0.5, 0.5, 24
        shape = (48, 48)
        ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(float)
        moving = np.stack([image(xs - u * (n * dt), ys) for n in range(steps)])[:, None]
        static = np.repeat(image(xs, ys)[None, None], steps, axis=0)
        spatial, temporal = KernelSpec(0.0, 1.5, 1.5), TemporalSpec("li", mu=1.0)
        adapted = respond(FrameTensor(moving, dt=dt), StrfSpec(spatial, temporal, velocity=(u, 0.0))).data
        reference = respond(FrameTensor(static, dt=dt), StrfSpec(spatial, temporal)).data
        interior = (slice(None), slice(None), slice(8, -8), slice(8, -12))
        error = np.linalg.norm(adapted[interior] - reference[interior]) / np.linalg.norm(reference[interior])
        assert error < 0.02

    def test_causality(self, rng):
        video = rng.normal(size=(10, 1, 8, 8))
        perturbed = video.copy()
        perturbed[6:] += 1.0
        spec = StrfSpec(KernelSpec(), TemporalSpec("li", mu=1.0))
        a = respond(FrameTensor(video), spec).data
        b = respond(FrameTensor(perturbed), spec).data
        np.testing.assert_array_equal(a[:6], b[:6])

    def test_margins(self):
        spec = StrfSpec(KernelSpec(0.0, 1.2, 1.0), TemporalSpec("li", mu=2.0))
        assert spec.margins(0.5) == (4, 20)
