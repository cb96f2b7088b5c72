import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from strf.covariance_harness import BandLimitedSignal
from strf.exceptions import DomainError
from strf.temporal_kernels import (
    Cascade,
    LeakyIntegrateAndFire,
    LeakyIntegrator,
    SpikeTrain,
    TemporalSpec,
    TruncatedExponential,
    cascade_response,
    h_exp,
    li_step,
    lif_step,
    limit_kernel_mus,
    tau_schedule,
)


class TestHExp:
    def test_causal(self):
        assert h_exp(-1.0, 3.0) == 0.0
        assert h_exp(0.0, 3.0) == 0.0

    def test_value_near_zero(self):
        assert h_exp(1e-12, 2.0) == pytest.approx(0.5)

    def test_unit_mass(self):
        mu = 1.7
        total, _ = integrate.quad(h_exp, 0.0, 50 * mu, args=(mu,), limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_non_positive_mu(self):
        with pytest.raises(DomainError):
            h_exp(1.0, 0.0)


class TestTauSchedule:
    def test_geometric_schedule(self):
        np.testing.assert_allclose(tau_schedule(4, math.sqrt(2), 4.0).taus, [0.5, 1.0, 2.0, 4.0], rtol=1e-12)

    def test_single_scale(self):
        assert tau_schedule(1, math.sqrt(2), 7.0).taus == (7.0,)

    def test_integer_ratio(self):
        np.testing.assert_allclose(tau_schedule(3, 2.0, 16.0).taus, [1.0, 4.0, 16.0])

    @given(st.integers(2, 8), st.floats(1.05, 3.0), st.floats(0.1, 100.0))
    def test_adjacent_ratio(self, K, c, tau_max):
        taus = tau_schedule(K, c, tau_max).taus
        for low, high in zip(taus, taus[1:]):
            assert high / low == pytest.approx(c**2, rel=1e-12)

    def test_mus_are_roots(self):
        schedule = tau_schedule(4, math.sqrt(2), 4.0)
        np.testing.assert_allclose(np.square(schedule.mus), schedule.taus)

    @pytest.mark.parametrize("K,c,tau_max", [(0, 2.0, 1.0), (3, 1.0, 1.0), (3, 2.0, 0.0)])
    def test_invalid(self, K, c, tau_max):
        with pytest.raises(DomainError):
            tau_schedule(K, c, tau_max)


class TestLeakyIntegrator:
    def test_pure_decay(self):
        channel = LeakyIntegrator(2.0)
        channel.u = 1.0
        assert li_step(channel, 0.0, 2.0) == pytest.approx(math.exp(-1.0))

    def test_fixed_point(self):
        channel = LeakyIntegrator(1.0)
        for _ in range(2000):
            value = li_step(channel, 3.0, 0.05)
        assert value == pytest.approx(3.0, abs=1e-9)

    def test_impulse_response_matches_kernel(self):
        mu, dt = 1.0, 0.01
        n = 1000
        impulse = np.zeros(n)
        impulse[0] = 1.0 / dt
        response = LeakyIntegrator(mu).run(impulse, dt)
        # output n represents time (n + 1)·dt; the impulse fills the first cell
        times = (np.arange(n) + 1) * dt
        oracle = h_exp(times, mu) * math.expm1(dt / mu) * mu / dt
        assert np.linalg.norm(response - oracle) / np.linalg.norm(oracle) < 1e-3

    def test_matches_fir_oracle(self, rng):
        signal = rng.normal(size=400)
        recursive = LeakyIntegrator(1.5).run(signal, 0.1)
        fir = TruncatedExponential(1.5, horizon=40.0).run(signal, 0.1)
        np.testing.assert_allclose(recursive, fir, atol=1e-12)

    def test_fir_step_matches_run(self, rng):
        signal = rng.normal(size=50)
        channel = TruncatedExponential(0.5)
        stepped = [channel.step(value, 0.1) for value in signal]
        np.testing.assert_allclose(stepped, TruncatedExponential(0.5).run(signal, 0.1), atol=1e-12)

    def test_euler_is_first_order(self):
        channel = LeakyIntegrator(1.0, method="euler")
        assert channel.step(1.0, 0.1) == pytest.approx(0.1)

    def test_dc_gain(self):
        output = LeakyIntegrator(0.8).run(np.full(5000, 2.5), 0.01)
        assert output[-1] == pytest.approx(2.5, abs=1e-9)

    def test_causality(self, rng):
        signal = rng.normal(size=200)
        perturbed = signal.copy()
        perturbed[120:] += rng.normal(size=80)
        a = LeakyIntegrator(2.0).run(signal, 0.1)
        b = LeakyIntegrator(2.0).run(perturbed, 0.1)
        np.testing.assert_array_equal(a[:120], b[:120])

    def test_variation_diminishing(self):
        violations = 0
        for seed in range(100):
            signal = BandLimitedSignal(periods=(0.5, 5.0), seed=seed)
            t = (np.arange(2000) + 0.5) * 0.01
            values = signal(t)
            output = LeakyIntegrator(0.3).run(values - values.mean(), 0.01)
            violations += _sign_changes(output) > _sign_changes(values - values.mean())
        assert violations == 0

    def test_vectorised_state(self):
        signal = np.arange(12.0).reshape(4, 3)
        output = LeakyIntegrator(1.0).run(signal, 0.5)
        for column in range(3):
            np.testing.assert_allclose(output[:, column], LeakyIntegrator(1.0).run(signal[:, column], 0.5))


def _sign_changes(values):
    signs = np.sign(values[np.abs(values) > 1e-12])
    return int(np.sum(signs[1:] != signs[:-1]))


class TestLeakyIntegrateAndFire:
    def test_subthreshold_equals_li(self, rng):
        signal = rng.uniform(0.0, 0.9, size=300)
        membrane, spikes = LeakyIntegrateAndFire(1.0, theta_thr=1.0).run_with_spikes(signal, 0.1)
        np.testing.assert_array_equal(membrane, LeakyIntegrator(1.0).run(signal, 0.1))
        assert not spikes.any()

    def test_infinite_threshold_is_bit_identical(self, rng):
        signal = rng.normal(3.0, 2.0, size=300)
        membrane, spikes = LeakyIntegrateAndFire(0.7, theta_thr=math.inf).run_with_spikes(signal, 0.05)
        np.testing.assert_array_equal(membrane, LeakyIntegrator(0.7).run(signal, 0.05))
        assert not spikes.any()

    def test_instantaneous_soft_reset(self):
        channel = LeakyIntegrateAndFire(1.0, theta_thr=1.0, mu_r=0.0)
        channel.v = 1.05
        u, spiked = lif_step(channel, 1.05, 0, 0.1)
        assert spiked
        assert u == pytest.approx(1.05 - 1.0)

    def test_soft_reset_stays_below_threshold(self, rng):
        signal = rng.uniform(0.0, 5.0, size=500)
        channel = LeakyIntegrateAndFire(0.5, theta_thr=1.0)
        membrane, spikes = channel.run_with_spikes(signal, 0.05)
        assert spikes.any()
        assert np.all(membrane[spikes] < 1.0)

    def test_strong_drive_fires_every_step(self):
        channel = LeakyIntegrateAndFire(1.0, theta_thr=1.0)
        membrane, spikes = channel.run_with_spikes(np.full(20, 10.0), 1.0)
        # one spike per step, and the soft reset leaves the membrane above threshold
        assert spikes.all()
        assert membrane[0] == pytest.approx(10.0 * (1.0 - math.exp(-1.0)) - 1.0)
        assert np.all(membrane >= 1.0)
        r_limit = 1.0 / (1.0 - math.exp(-1.0))
        assert membrane[-1] == pytest.approx(10.0 - r_limit, rel=1e-6)

    def test_hard_reset(self):
        channel = LeakyIntegrateAndFire(1.0, theta_thr=1.0, reset="hard", theta_reset=0.2)
        channel.v = 2.0
        u, spiked = lif_step(channel, 2.0, 3, 0.1)
        assert spiked and u == pytest.approx(0.2)
        assert channel.last_spike == 3

    def test_regular_firing_period(self):
        mu, theta, drive = 1.0, 1.0, 2.0
        dt = mu / 200
        channel = LeakyIntegrateAndFire(mu, theta_thr=theta)
        _, spikes = channel.run_with_spikes(np.full(4000, drive), dt)
        times = np.nonzero(spikes)[0] * dt
        assert len(times) >= 5
        period = mu * math.log(drive / (drive - theta))
        np.testing.assert_allclose(np.diff(times), period, atol=dt)

    def test_spike_train_export(self):
        raster = np.zeros((5, 2, 3), dtype=bool)
        raster[1, 0, 2] = raster[3, 1, 0] = raster[4, 0, 2] = True
        train = SpikeTrain.from_raster(raster, dt=0.5)
        np.testing.assert_array_equal(train.unit_times(2), [1, 4])
        stream = train.to_event_stream(2, 3, 5)
        assert len(stream) == 3
        assert stream.records["t"].tolist() == [1, 3, 4]
        assert stream.records["x"].tolist() == [2, 0, 2]
        assert stream.records["y"].tolist() == [0, 1, 0]

    def test_unsorted_train_rejected(self):
        with pytest.raises(DomainError):
            SpikeTrain(times=[3, 1], units=[0, 0], n_units=1)


class TestCascade:
    def test_single_stage_is_li(self, rng):
        signal = rng.normal(size=100)
        np.testing.assert_array_equal(cascade_response([1.3], signal, 0.1), LeakyIntegrator(1.3).run(signal, 0.1))

    def test_two_stage_mode(self):
        mu, dt = 1.0, 0.01
        impulse = np.zeros(1000)
        impulse[0] = 1.0 / dt
        response = cascade_response([mu, mu], impulse, dt)
        peak_time = (np.argmax(response) + 1) * dt
        assert abs(peak_time - mu) <= 2 * dt

    def test_variance_adds(self):
        assert Cascade([1.0, 2.0]).tau == pytest.approx(5.0)

    def test_neighbouring_scale_recurrence(self):
        tau, c, K, dt = 4.0, math.sqrt(2), 16, 0.005
        signal = BandLimitedSignal(periods=(2.0, 20.0), seed=5)
        t = (np.arange(12000) + 0.5) * dt
        values = signal(t)
        mus = limit_kernel_mus(tau, c, K)
        finer = limit_kernel_mus(tau / c**2, c, K)
        direct = cascade_response(mus, values, dt)
        composed = cascade_response([mus[0]], cascade_response(finer, values, dt), dt)
        interior = slice(4000, None)
        error = np.linalg.norm(direct[interior] - composed[interior]) / np.linalg.norm(direct[interior])
        assert error < 0.02

    def test_limit_kernel_mus_are_geometric(self):
        mus = limit_kernel_mus(4.0, 2.0, 5)
        np.testing.assert_allclose(np.array(mus[1:]) / np.array(mus[:-1]), 0.5)


class TestTemporalSpec:
    def test_scaled_multiplies_every_mu(self):
        spec = TemporalSpec(kind="lif", mu=1.0, mu_r=0.5).scaled(2.0)
        assert (spec.mu, spec.mu_r) == (2.0, 1.0)

    def test_build_kinds(self):
        assert isinstance(TemporalSpec(kind="li").build(), LeakyIntegrator)
        assert isinstance(TemporalSpec(kind="trunc_exp").build(), TruncatedExponential)
        assert isinstance(TemporalSpec(kind="cascade", cascade_mus=(1.0, 2.0)).build(), Cascade)

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            TemporalSpec(kind="izhikevich")
