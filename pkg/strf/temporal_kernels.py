"""
Time-causal temporal smoothing.

Time convention: input sample ``n`` holds the input over the interval
``(n·dt, (n+1)·dt]`` (sampled at its midpoint by the harnesses) and the
channel output after processing it represents time ``(n+1)·dt``. Under this
convention the zero-order-hold integrator is exact for piecewise-constant input
and second-order accurate for smooth input.

All public APIs take time constants μ; the variance τ = μ² is derived.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from strf.exceptions import DomainError
from strf.validators import validate_choice, validate_non_negative, validate_positive

log = logging.getLogger(__name__)

CHANNEL_KINDS = ("trunc_exp", "li", "lif", "cascade")
METHODS = ("exact", "euler")
RESETS = ("soft", "hard")


def h_exp(t, mu):
    """
    Truncated exponential kernel (1/μ)·e^{−t/μ} for t > 0, else 0.
    """
    validate_positive("mu", mu)
    t = np.asarray(t, dtype=float)
    values = np.where(t > 0, np.exp(-np.clip(t, 0, None) / mu) / mu, 0.0)
    return float(values) if values.ndim == 0 else values


@dataclass(frozen=True)
class TauSchedule:
    """
    Geometric temporal scales τ_k = c^{2(k+1−K)}·τ_max, k = 0..K−1.
    """

    taus: Tuple[float, ...]
    c: float
    K: int
    tau_max: float

    @property
    def mus(self):
        return tuple(math.sqrt(tau) for tau in self.taus)


def tau_schedule(K, c, tau_max):
    if int(K) != K or K < 1:
        raise DomainError(f"K must be a positive integer, got {K!r}")
    validate_positive("tau_max", tau_max)
    if not math.isfinite(c) or c <= 1:
        raise DomainError(f"c must be larger than 1, got {c!r}")
    taus = tuple(tau_max * c ** (2 * (k + 1 - K)) for k in range(int(K)))
    return TauSchedule(taus=taus, c=float(c), K=int(K), tau_max=float(tau_max))


def limit_kernel_mus(tau, c, K):
    """
    Time constants μ_k = c^{−k}·√(c²−1)·√τ, k = 1..K, of the truncated cascade
    approximating the scale-covariant limit kernel of variance τ.
    """
    validate_positive("tau", tau)
    if not math.isfinite(c) or c <= 1:
        raise DomainError(f"c must be larger than 1, got {c!r}")
    if int(K) != K or K < 1:
        raise DomainError(f"K must be a positive integer, got {K!r}")
    base = math.sqrt(c * c - 1) * math.sqrt(tau)
    return [base * c ** (-k) for k in range(1, int(K) + 1)]


def _decay(mu, dt):
    if mu == 0:
        return 0.0
    return math.exp(-dt / mu)


class TemporalChannel:
    """
    Base class of stateful time-causal channels.

    ``step`` consumes one input sample (scalar or array, one value per unit)
    and returns the new output; ``run`` applies ``step`` along axis 0.
    """

    kind = None

    def reset(self):
        raise NotImplementedError

    def step(self, value, dt):
        raise NotImplementedError

    def run(self, signal, dt, reset=True):
        validate_positive("dt", dt)
        signal = np.asarray(signal, dtype=float)
        if reset:
            self.reset()
        output = np.empty_like(signal)
        for n in range(signal.shape[0]):
            output[n] = self.step(signal[n], dt)
        return output


class LeakyIntegrator(TemporalChannel):
    """
    μ u̇ = −u + I, integrated with the exact zero-order-hold update
    u ← e^{−dt/μ}·u + (1 − e^{−dt/μ})·I (``method="exact"``) or forward Euler.
    """

    kind = "li"

    def __init__(self, mu, method="exact"):
        validate_positive("mu", mu)
        validate_choice("method", method, METHODS)
        self.mu = float(mu)
        self.method = method
        self.reset()

    @property
    def tau(self):
        return self.mu**2

    def reset(self):
        self.u = 0.0

    def _integrate(self, u, value, dt):
        if self.method == "euler":
            return u + (dt / self.mu) * (value - u)
        decay = _decay(self.mu, dt)
        return decay * u + (1.0 - decay) * value

    def step(self, value, dt):
        self.u = self._integrate(self.u, value, dt)
        return self.u


class LeakyIntegrateAndFire(LeakyIntegrator):
    """
    Leaky integrate-and-fire unit in spike-response form.

    The membrane is ``u = v − r``: ``v`` integrates the input exactly like
    ``LeakyIntegrator`` and ``r`` is the after-spike trace, decaying with
    ``mu_r`` and incremented by θ on every spike. ``mu_r=None`` ties the reset
    decay to μ, which is the subtract-θ LIF. ``reset="hard"`` instead sets the
    membrane to ``theta_reset``.

    A unit fires at most once per step and a soft reset subtracts θ once. When
    one step drives the membrane past 2θ it is still at or above θ after the
    reset, so a strongly driven unit fires on every step.
    """

    kind = "lif"

    def __init__(self, mu, theta_thr=1.0, mu_r=None, reset="soft", theta_reset=0.0, method="exact"):
        if not theta_thr > 0:
            raise DomainError(f"theta_thr must be positive, got {theta_thr!r}")
        if mu_r is not None:
            validate_non_negative("mu_r", mu_r)
        validate_choice("reset", reset, RESETS)
        self.theta_thr = float(theta_thr)
        self.mu_r = None if mu_r is None else float(mu_r)
        self.reset_mode = reset
        self.theta_reset = float(theta_reset)
        super().__init__(mu, method=method)

    @property
    def effective_mu_r(self):
        return self.mu if self.mu_r is None else self.mu_r

    def reset(self):
        self.v = 0.0
        self.r = 0.0
        self.u = 0.0
        self.last_spike = -1
        self.spiked = False

    def step(self, value, dt, t=None):
        v = self._integrate(self.v, value, dt)
        r = self.r * _decay(self.effective_mu_r, dt)
        u = v - r
        spiked = u >= self.theta_thr
        if np.any(spiked):
            if self.reset_mode == "soft":
                r = r + np.where(spiked, self.theta_thr, 0.0)
            else:
                v = np.where(spiked, self.theta_reset, v)
                r = np.where(spiked, 0.0, r)
            u = v - r
            if t is not None:
                self.last_spike = np.where(spiked, t, self.last_spike)
        if np.ndim(u) == 0:
            v, r, u, spiked = float(v), float(r), float(u), bool(spiked)
            self.last_spike = int(self.last_spike)
        self.v, self.r, self.u, self.spiked = v, r, u, spiked
        return u

    def run_with_spikes(self, signal, dt, reset=True):
        """
        Return ``(membrane, spikes)`` traces for ``signal``.
        """
        validate_positive("dt", dt)
        signal = np.asarray(signal, dtype=float)
        if reset:
            self.reset()
        membrane = np.empty_like(signal)
        spikes = np.zeros(signal.shape, dtype=bool)
        for n in range(signal.shape[0]):
            membrane[n] = self.step(signal[n], dt, t=n)
            spikes[n] = self.spiked
        return membrane, spikes


class TruncatedExponential(TemporalChannel):
    """
    Explicit FIR realisation of the cell-integrated truncated exponential,
    w_k = e^{−k·dt/μ}·(1 − e^{−dt/μ}), cut after ``horizon`` time constants.

    The dense-convolution counterpart of ``LeakyIntegrator``.
    """

    kind = "trunc_exp"

    def __init__(self, mu, horizon=20.0):
        validate_positive("mu", mu)
        validate_positive("horizon", horizon)
        self.mu = float(mu)
        self.horizon = float(horizon)
        self.reset()

    def taps(self, dt):
        n_taps = int(math.ceil(self.horizon * self.mu / dt)) + 1
        decay = _decay(self.mu, dt)
        return (1.0 - decay) * decay ** np.arange(n_taps)

    def reset(self):
        self._history = []

    def step(self, value, dt):
        taps = self.taps(dt)
        self._history.insert(0, np.asarray(value, dtype=float))
        del self._history[len(taps) :]
        return sum(w * x for w, x in zip(taps, self._history))

    def run(self, signal, dt, reset=True):
        validate_positive("dt", dt)
        signal = np.asarray(signal, dtype=float)
        taps = self.taps(dt)
        n = signal.shape[0]
        flat = signal.reshape(n, -1)
        output = np.empty_like(flat)
        for column in range(flat.shape[1]):
            output[:, column] = np.convolve(flat[:, column], taps)[:n]
        self.reset()
        return output.reshape(signal.shape)


class Cascade(TemporalChannel):
    """
    Leaky integrators coupled in series; composes truncated exponentials.
    """

    kind = "cascade"

    def __init__(self, mus, method="exact"):
        if not len(mus):
            raise DomainError("a cascade needs at least one time constant")
        self.stages = [LeakyIntegrator(mu, method=method) for mu in mus]

    @property
    def mus(self):
        return [stage.mu for stage in self.stages]

    @property
    def tau(self):
        return sum(stage.tau for stage in self.stages)

    def reset(self):
        for stage in self.stages:
            stage.reset()

    def step(self, value, dt):
        for stage in self.stages:
            value = stage.step(value, dt)
        return value


@dataclass(frozen=True)
class TemporalSpec:
    """
    Immutable description of a temporal channel; ``build()`` returns a fresh stateful channel.
    """

    kind: str = "li"
    mu: float = 1.0
    theta_thr: float = 1.0
    mu_r: Optional[float] = None
    reset: str = "soft"
    theta_reset: float = 0.0
    cascade_mus: Tuple[float, ...] = field(default_factory=tuple)
    method: str = "exact"

    def __post_init__(self):
        validate_choice("kind", self.kind, CHANNEL_KINDS)
        validate_choice("method", self.method, METHODS)
        if self.kind == "cascade":
            if not self.cascade_mus:
                raise DomainError("cascade channels need cascade_mus")
            for mu in self.cascade_mus:
                validate_positive("cascade mu", mu)
        else:
            validate_positive("mu", self.mu)
        object.__setattr__(self, "cascade_mus", tuple(float(mu) for mu in self.cascade_mus))

    def build(self):
        if self.kind == "li":
            return LeakyIntegrator(self.mu, method=self.method)
        if self.kind == "lif":
            return LeakyIntegrateAndFire(
                self.mu, self.theta_thr, self.mu_r, reset=self.reset, theta_reset=self.theta_reset, method=self.method
            )
        if self.kind == "trunc_exp":
            return TruncatedExponential(self.mu)
        return Cascade(self.cascade_mus, method=self.method)

    def scaled(self, factor):
        """
        The spec after temporal scaling t' = factor·t (every μ multiplied by ``factor``).
        """
        mu_r = None if self.mu_r is None else self.mu_r * factor
        return TemporalSpec(
            kind=self.kind,
            mu=self.mu * factor,
            theta_thr=self.theta_thr,
            mu_r=mu_r,
            reset=self.reset,
            theta_reset=self.theta_reset,
            cascade_mus=tuple(mu * factor for mu in self.cascade_mus),
            method=self.method,
        )

    @property
    def longest_mu(self):
        if self.kind == "cascade":
            return float(sum(self.cascade_mus))
        return self.mu

    def to_dict(self):
        return {
            "kind": self.kind,
            "mu": self.mu,
            "theta_thr": self.theta_thr,
            "mu_r": self.mu_r,
            "reset": self.reset,
            "theta_reset": self.theta_reset,
            "cascade_mus": list(self.cascade_mus),
            "method": self.method,
        }


@dataclass(frozen=True)
class SpikeTrain:
    """
    Spike step indices with the unit that fired each spike, sorted by unit then time.
    """

    times: np.ndarray
    units: np.ndarray
    n_units: int
    dt: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        units = np.asarray(self.units, dtype=np.int64)
        if times.shape != units.shape:
            raise DomainError("times and units must have the same length")
        order = np.lexsort((times, units))
        if not np.array_equal(order, np.arange(len(times))):
            raise DomainError("spike train must be sorted by unit, then time")
        same_unit = units[1:] == units[:-1]
        if np.any(times[1:][same_unit] <= times[:-1][same_unit]):
            raise DomainError("spike times must be strictly increasing per unit")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "units", units)

    @classmethod
    def from_raster(cls, spikes, dt=1.0):
        """
        Build from a boolean ``[T, ...]`` raster; units are flat indices of the trailing axes.
        """
        spikes = np.asarray(spikes, dtype=bool)
        n_steps = spikes.shape[0]
        flat = spikes.reshape(n_steps, -1)
        steps, units = np.nonzero(flat)
        order = np.lexsort((steps, units))
        return cls(times=steps[order], units=units[order], n_units=flat.shape[1], dt=dt)

    def unit_times(self, unit):
        return self.times[self.units == unit]

    def to_event_stream(self, height, width, n_frames):
        """
        Export as positive-polarity events; unit ``y·width + x`` maps to pixel ``(x, y)``.
        """
        from strf.event_simulator import EventStream  # event_simulator depends on this module

        if self.n_units != height * width:
            raise DomainError(f"{self.n_units} units do not tile a {height}x{width} sensor")
        ys, xs = np.divmod(self.units, width)
        return EventStream.from_arrays(
            t=self.times,
            x=xs,
            y=ys,
            p=np.ones_like(self.times),
            height=height,
            width=width,
            n_frames=n_frames,
            dt=self.dt,
        )


def li_step(channel, value, dt):
    """
    Advance a leaky integrator one step and return the new membrane value.
    """
    validate_positive("dt", dt)
    return channel.step(value, dt)


def lif_step(channel, value, t, dt):
    """
    Advance a LIF unit one step; return ``(u, spiked)``.
    """
    validate_positive("dt", dt)
    u = channel.step(value, dt, t=t)
    return u, channel.spiked


def cascade_response(mus, signal, dt, method="exact"):
    """
    Run ``signal`` (axis 0 is time) through leaky integrators with time constants ``mus`` in series.
    """
    for mu in mus:
        validate_positive("mu", mu)
    return Cascade(mus, method=method).run(signal, dt)
