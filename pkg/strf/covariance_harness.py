"""
Numerical checks of the covariance properties of the receptive fields.

Each check runs both orders of a commutative diagram (transform then filter
with matched parameters, filter then transform) on band-limited synthetic
input and reports the relative L2 discrepancy over the interior, where
boundary bands and initial transients are excluded.

Conventions:

* images are sampled at centred coordinates ``x_j = (j − (N − 1)/2)·pitch``;
* time samples are taken at cell midpoints ``(n + ½)·dt``;
* the joint map is ``x' = A x + u t``, ``t' = S_t t`` so that receptive
  fields match under Σ' = AΣAᵀ, τ' = S_t²τ and v' = (A v + u)/S_t.
"""
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from strf import prng
from strf.exceptions import DomainError
from strf.spatial_kernels import Covariance2, KernelSpec, default_grid_size, make_covariance, sample_kernel
from strf.strf_engine import FrameTensor, StrfSpec, convolve2d, respond
from strf.temporal_kernels import LeakyIntegrateAndFire, LeakyIntegrator, TemporalSpec
from strf.validators import validate_choice, validate_positive

log = logging.getLogger(__name__)

SPATIAL_TOLERANCE = 0.02
TEMPORAL_TOLERANCE = 0.005
JOINT_TOLERANCE = 0.04
LIF_MEMBRANE_TOLERANCE = 0.02
LIF_SPIKE_TOLERANCE = 2.0
CONTROL_TOLERANCE = 0.2
LADDER_TOLERANCE = 1.0
SPIKE_GUARD = 2
SUITES = ("all", "spatial", "temporal", "joint")


@dataclass(frozen=True)
class AffineMap2:
    """
    Space-time map x' = A x + u t, t' = S_t t.
    """

    a11: float = 1.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    u: Tuple[float, float] = (0.0, 0.0)
    S_t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(component) for component in self.u))
        validate_positive("S_t", self.S_t)
        if abs(np.linalg.det(self.matrix)) < 1e-12:
            raise DomainError(f"affine map is singular: {self.matrix.tolist()}")

    @classmethod
    def from_matrix(cls, A, u=(0.0, 0.0), S_t=1.0):
        A = np.asarray(A, dtype=float)
        return cls(A[0, 0], A[0, 1], A[1, 0], A[1, 1], u=u, S_t=S_t)

    @classmethod
    def rotation(cls, degrees, u=(0.0, 0.0), S_t=1.0):
        return cls.from_matrix(rotation_matrix(degrees), u=u, S_t=S_t)

    @classmethod
    def scaling(cls, sx, sy, u=(0.0, 0.0), S_t=1.0):
        return cls.from_matrix(np.diag([sx, sy]), u=u, S_t=S_t)

    @property
    def matrix(self):
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    @property
    def inverse(self):
        return np.linalg.inv(self.matrix)

    def transform_covariance(self, covariance):
        return covariance.transform(self.matrix)

    def transform_velocity(self, v):
        """
        v' = (A v + u)/S_t
        """
        return tuple((self.matrix @ np.asarray(v, dtype=float) + np.asarray(self.u)) / self.S_t)


def rotation_matrix(degrees):
    angle = math.radians(degrees)
    return np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])


@dataclass(frozen=True)
class CovarianceReport:
    name: str
    rel_l2_error: float
    tolerance: float
    dt: Optional[float] = None
    pitch: Optional[float] = None
    supersample: Optional[int] = None
    margin_px: int = 0
    margin_steps: int = 0
    spike_time_error: Optional[float] = None
    spike_tolerance: Optional[float] = None
    inconclusive: bool = False
    passed: bool = field(init=False)

    def __post_init__(self):
        passed = bool(self.rel_l2_error <= self.tolerance)
        if self.spike_time_error is not None and self.spike_tolerance is not None and not self.inconclusive:
            passed = passed and bool(self.spike_time_error <= self.spike_tolerance)
        object.__setattr__(self, "passed", passed)

    def to_row(self):
        return asdict(self)


class BandLimitedImage:
    """
    Sum of random plane waves with wavelengths in ``wavelengths`` (spatial units).
    """

    def __init__(self, n_components=8, wavelengths=(16.0, 64.0), seed=0):
        rng = prng.stream(seed, 0, role="signal")
        lengths = rng.uniform(wavelengths[0], wavelengths[1], n_components)
        directions = rng.uniform(0.0, 2 * math.pi, n_components)
        self.wavenumbers = (2 * math.pi / lengths)[:, None] * np.stack([np.cos(directions), np.sin(directions)], axis=1)
        self.amplitudes = rng.uniform(0.5, 1.0, n_components)
        self.phases = rng.uniform(0.0, 2 * math.pi, n_components)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        value = np.zeros(np.broadcast(x, y).shape)
        for (kx, ky), amplitude, phase in zip(self.wavenumbers, self.amplitudes, self.phases):
            value = value + amplitude * np.cos(kx * x + ky * y + phase)
        return value

    def sample(self, shape, pitch=1.0):
        ys, xs = grid_coordinates(shape, pitch)
        return self(xs[None, :], ys[:, None])


class BandLimitedSignal:
    """
    Sum of random sinusoids with periods in ``periods`` (time units) plus ``offset``.
    """

    def __init__(self, n_components=8, periods=(2.0, 20.0), offset=0.0, seed=0):
        rng = prng.stream(seed, 1, role="signal")
        self.frequencies = 2 * math.pi / rng.uniform(periods[0], periods[1], n_components)
        self.amplitudes = rng.uniform(0.5, 1.0, n_components)
        self.phases = rng.uniform(0.0, 2 * math.pi, n_components)
        self.offset = float(offset)

    @property
    def peak(self):
        return float(self.amplitudes.sum())

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        value = np.full(t.shape, self.offset)
        for omega, amplitude, phase in zip(self.frequencies, self.amplitudes, self.phases):
            value = value + amplitude * np.cos(omega * t + phase)
        return value


class MovingTexture:
    """
    f(x, t) = image(x − w t)·(1 + depth·s(t)/peak(s)): a translating, contrast-modulated texture.
    """

    def __init__(self, image, velocity=(0.5, 0.25), modulation=None, depth=0.3):
        self.image = image
        self.velocity = tuple(float(component) for component in velocity)
        self.modulation = modulation
        self.depth = float(depth)

    def __call__(self, x, y, t):
        value = self.image(x - self.velocity[0] * t, y - self.velocity[1] * t)
        if self.modulation is not None:
            value = value * (1.0 + self.depth * self.modulation(t) / self.modulation.peak)
        return value


def grid_coordinates(shape, pitch=1.0):
    """
    Centred sample coordinates ``(ys, xs)`` of an image grid.
    """
    height, width = shape
    ys = (np.arange(height) - (height - 1) / 2.0) * pitch
    xs = (np.arange(width) - (width - 1) / 2.0) * pitch
    return ys, xs


def rel_l2(estimate, reference, mask=None):
    """
    ‖estimate − reference‖ / ‖reference‖ over ``mask``.
    """
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if mask is not None:
        estimate, reference = estimate[mask], reference[mask]
    difference = np.linalg.norm(estimate - reference)
    norm = np.linalg.norm(reference)
    if norm == 0:
        return 0.0 if difference == 0 else math.inf
    return float(difference / norm)


def interior_mask(shape, margin):
    mask = np.zeros(shape, dtype=bool)
    if 2 * margin < shape[0] and 2 * margin < shape[1]:
        mask[margin : shape[0] - margin, margin : shape[1] - margin] = True
    return mask


def _as_map(A):
    return A if isinstance(A, AffineMap2) else AffineMap2.from_matrix(A)


def warp_affine(image, A):
    """
    Resample ``image`` so that content at ``x`` moves to ``A x`` about the image centre (bilinear, zeros outside).
    """
    A = _as_map(A)
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    matrix = swap @ A.inverse @ swap
    center = (np.asarray(image.shape, dtype=float) - 1) / 2.0
    offset = center - matrix @ center
    return ndimage.affine_transform(image, matrix, offset=offset, order=1, mode="constant", cval=0.0)


def smooth(image, covariance, supersample=4, padding="replicate"):
    """
    Correlate ``image`` with the sampled Gaussian of covariance ``covariance`` (pixels²).
    """
    spec = KernelSpec.from_covariance(covariance)
    kernel = sample_kernel(spec, default_grid_size(spec), supersample)
    return convolve2d(image, kernel, padding)


def check_affine(
    f,
    A,
    Sigma,
    *,
    pitch=1.0,
    size=128,
    supersample=4,
    padding="replicate",
    sigma_prime=None,
    tolerance=SPATIAL_TOLERANCE,
    name="affine",
):
    """
    Compare smooth(warp_A(f); AΣAᵀ) with warp_A(smooth(f; Σ)) over the interior.

    ``f`` is an image array or a generator sampled on a ``size``² grid with
    spacing ``pitch``; ``Sigma`` (and ``sigma_prime``) are in spatial units
    squared. ``sigma_prime`` overrides the matched covariance for negative
    controls.
    """
    A = _as_map(A)
    image = f.sample((size, size), pitch) if callable(f) else np.asarray(f, dtype=float)
    sigma_px = Covariance2.from_matrix(Sigma.matrix / pitch**2)
    if sigma_prime is None:
        sigma_prime_px = A.transform_covariance(sigma_px)
    else:
        sigma_prime_px = Covariance2.from_matrix(sigma_prime.matrix / pitch**2)

    transformed_first = smooth(warp_affine(image, A), sigma_prime_px, supersample, padding)
    filtered_first = warp_affine(smooth(image, sigma_px, supersample, padding), A)

    radius = int(math.ceil(3 * math.sqrt(sigma_px.eigen()[0]))) + 1
    radius_prime = int(math.ceil(3 * math.sqrt(sigma_prime_px.eigen()[0]))) + 1
    mask = _affine_valid_mask(image.shape, A, radius, radius_prime)
    if not mask.any():
        raise DomainError(f"{name}: no interior points left, enlarge the image")
    error = rel_l2(transformed_first, filtered_first, mask)
    log.info("%s: rel-L2 %.3g (tolerance %.3g)", name, error, tolerance)
    return CovarianceReport(
        name=name,
        rel_l2_error=error,
        tolerance=tolerance,
        pitch=pitch,
        supersample=supersample,
        margin_px=max(radius, radius_prime),
    )


def _affine_valid_mask(shape, A, radius, radius_prime):
    """
    Destination pixels whose warped neighbourhood only reads interior source pixels.
    """
    center = (np.asarray(shape, dtype=float) - 1) / 2.0
    rows, cols = np.indices(shape, dtype=float)
    dst = np.stack([cols - center[1], rows - center[0]])
    src = np.tensordot(A.inverse, dst, axes=1)
    reach = radius + np.linalg.norm(A.inverse, 2) * radius_prime + 1
    inside_src = (
        (src[0] + center[1] >= reach)
        & (src[0] + center[1] <= shape[1] - 1 - reach)
        & (src[1] + center[0] >= reach)
        & (src[1] + center[0] <= shape[0] - 1 - reach)
    )
    return inside_src & interior_mask(shape, radius_prime)


def affine_negative_control(f, A, Sigma, *, size=128, supersample=4, name="affine_control"):
    """
    Ratio of the matched error to the error with Σ' = Σ (unmatched); passes at ≤ 0.2.
    """
    matched = check_affine(f, A, Sigma, size=size, supersample=supersample, name=f"{name}_matched")
    unmatched = check_affine(
        f, A, Sigma, size=size, supersample=supersample, sigma_prime=Sigma, name=f"{name}_unmatched"
    )
    return _control_report(name, matched, unmatched)


def _control_report(name, matched, unmatched):
    ratio = matched.rel_l2_error / unmatched.rel_l2_error if unmatched.rel_l2_error > 0 else math.inf
    log.info("%s: matched %.3g, unmatched %.3g", name, matched.rel_l2_error, unmatched.rel_l2_error)
    return CovarianceReport(
        name=name,
        rel_l2_error=ratio,
        tolerance=CONTROL_TOLERANCE,
        dt=matched.dt,
        pitch=matched.pitch,
        supersample=matched.supersample,
        margin_px=matched.margin_px,
        margin_steps=matched.margin_steps,
    )


def _ladder_report(name, reports):
    """
    Largest ratio between consecutive errors of a refinement ladder; passes at ≤ 1.
    """
    errors = [report.rel_l2_error for report in reports]
    ratios = [later / earlier if earlier > 0 else math.inf for earlier, later in zip(errors, errors[1:])]
    log.info("%s: errors %s", name, ", ".join(f"{error:.3g}" for error in errors))
    finest = reports[-1]
    return CovarianceReport(
        name=name,
        rel_l2_error=max(ratios),
        tolerance=LADDER_TOLERANCE,
        dt=finest.dt,
        pitch=finest.pitch,
        supersample=finest.supersample,
        margin_px=finest.margin_px,
        margin_steps=finest.margin_steps,
    )


def affine_ladder(f, A, Sigma, levels=3, extent=64.0, base_pitch=2.0, name="affine_ladder"):
    reports = []
    for level in range(levels):
        pitch = base_pitch / 2**level
        reports.append(
            check_affine(f, A, Sigma, pitch=pitch, size=int(round(extent / pitch)), name=f"{name}_{level}")
        )
    return _ladder_report(name, reports), reports


def _run_temporal_pair(signal, channel, channel_prime, S_t, dt, duration, with_spikes=False):
    """
    Run ``channel`` on f and ``channel_prime`` on f'(t') = f(t'/S_t), both at spacing ``dt``,
    and resample the second output at t' = S_t·t.
    """
    n_steps = int(round(duration / dt))
    n_steps_prime = int(math.ceil(S_t * n_steps))
    signal_in = signal((np.arange(n_steps) + 0.5) * dt)
    signal_prime = signal((np.arange(n_steps_prime) + 0.5) * dt / S_t)
    if with_spikes:
        output, spikes = channel.run_with_spikes(signal_in, dt)
        output_prime, spikes_prime = channel_prime.run_with_spikes(signal_prime, dt)
    else:
        output, spikes = channel.run(signal_in, dt), None
        output_prime, spikes_prime = channel_prime.run(signal_prime, dt), None
    query = S_t * (np.arange(n_steps) + 1) * dt
    mapped = np.interp(query, (np.arange(n_steps_prime) + 1) * dt, output_prime)
    return output, mapped, spikes, spikes_prime


def check_temporal_scaling(
    signal,
    mu,
    S_t,
    dt,
    *,
    mu_prime=None,
    duration=None,
    method="exact",
    tolerance=TEMPORAL_TOLERANCE,
    name="temporal",
):
    """
    Compare the LI response L(t; μ) to f with L'(t'; μ') to f'(t') = f(t'/S_t) at t' = S_t·t.

    ``mu_prime`` defaults to the matched S_t·μ; pass another value for negative controls.
    """
    validate_positive("mu", mu)
    validate_positive("S_t", S_t)
    validate_positive("dt", dt)
    mu_prime = S_t * mu if mu_prime is None else mu_prime
    duration = 40.0 * mu if duration is None else duration
    output, mapped, _, _ = _run_temporal_pair(
        signal, LeakyIntegrator(mu, method=method), LeakyIntegrator(mu_prime, method=method), S_t, dt, duration
    )
    margin = int(math.ceil(5 * mu / dt))
    mask = np.arange(len(output)) >= margin
    error = rel_l2(mapped, output, mask)
    log.info("%s: S_t=%g dt=%g rel-L2 %.3g", name, S_t, dt, error)
    return CovarianceReport(name=name, rel_l2_error=error, tolerance=tolerance, dt=dt, margin_steps=margin)


def temporal_negative_control(signal, mu, S_t, dt, *, duration=None, name="temporal_control"):
    """
    Matched τ' = S_t²τ against the wrong power τ' = S_t·τ.
    """
    matched = check_temporal_scaling(signal, mu, S_t, dt, duration=duration, name=f"{name}_matched")
    unmatched = check_temporal_scaling(
        signal, mu, S_t, dt, mu_prime=math.sqrt(S_t) * mu, duration=duration, name=f"{name}_unmatched"
    )
    return _control_report(name, matched, unmatched)


def temporal_ladder(signal, mu, S_t, dt, levels=3, duration=None, name="temporal_ladder"):
    reports = [
        check_temporal_scaling(signal, mu, S_t, dt / 2**level, duration=duration, name=f"{name}_{level}")
        for level in range(levels)
    ]
    return _ladder_report(name, reports), reports


def check_temporal_scaling_lif(
    signal,
    mu,
    mu_r,
    theta_thr,
    S_t,
    dt,
    *,
    duration=None,
    reset="soft",
    tolerance=LIF_MEMBRANE_TOLERANCE,
    spike_tolerance=LIF_SPIKE_TOLERANCE,
    name="lif_temporal",
):
    """
    Compare LIF(μ, μ_r) on f with LIF(S_t·μ, S_t·μ_r) on f'(t') = f(t'/S_t).

    Spike times of the scaled run are divided by S_t and matched in order;
    the largest discrepancy is reported in units of ``dt``. The membrane
    rel-L2 excludes the initial transient and ±2 samples around every spike.
    A run without spikes is inconclusive for the spike criterion.
    """
    validate_positive("mu", mu)
    validate_positive("S_t", S_t)
    validate_positive("dt", dt)
    duration = 40.0 * mu if duration is None else duration
    mu_r_prime = None if mu_r is None else S_t * mu_r
    output, mapped, spikes, spikes_prime = _run_temporal_pair(
        signal,
        LeakyIntegrateAndFire(mu, theta_thr, mu_r, reset=reset),
        LeakyIntegrateAndFire(S_t * mu, theta_thr, mu_r_prime, reset=reset),
        S_t,
        dt,
        duration,
        with_spikes=True,
    )
    n_steps = len(output)
    spike_times = (np.flatnonzero(spikes) + 1) * dt
    spike_times_prime = (np.flatnonzero(spikes_prime) + 1) * dt / S_t
    spike_times_prime = spike_times_prime[spike_times_prime <= n_steps * dt + dt / 2]

    margin = int(math.ceil(5 * mu / dt))
    mask = np.arange(n_steps) >= margin
    for index in np.concatenate([spike_times, spike_times_prime]) / dt - 1:
        centre = int(round(index))
        mask[max(centre - SPIKE_GUARD, 0) : centre + SPIKE_GUARD + 1] = False
    error = rel_l2(mapped, output, mask)

    inconclusive = len(spike_times) == 0 and len(spike_times_prime) == 0
    if inconclusive:
        spike_error = None
        log.warning("%s: no spikes elicited, spike criterion inconclusive", name)
    else:
        end = n_steps * dt - (SPIKE_GUARD + 1) * dt
        spike_error = _spike_distance(spike_times, spike_times_prime, end) / dt
        if len(spike_times) < 5:
            log.warning("%s: only %d spikes elicited", name, len(spike_times))
    log.info("%s: membrane rel-L2 %.3g, spike error %s dt", name, error, spike_error)
    return CovarianceReport(
        name=name,
        rel_l2_error=error,
        tolerance=tolerance,
        dt=dt,
        margin_steps=margin,
        spike_time_error=spike_error,
        spike_tolerance=spike_tolerance,
        inconclusive=inconclusive,
    )


def _spike_distance(times, times_prime, end):
    """
    Largest distance from a spike before ``end`` in either train to the nearest spike of the other train.
    """
    if len(times) == 0 or len(times_prime) == 0:
        return math.inf
    distance = 0.0
    for source, target in ((times, times_prime), (times_prime, times)):
        source = source[source <= end]
        if len(source):
            nearest = np.min(np.abs(source[:, None] - target[None, :]), axis=1)
            distance = max(distance, float(nearest.max()))
    return distance


def sample_video(video, shape, pitch, dt, n_steps):
    """
    Sample ``video(x, y, t)`` at pixel centres and time midpoints into a FrameTensor with t0 = dt/2.
    """
    ys, xs = grid_coordinates(shape, pitch)
    data = np.empty((n_steps, 1) + tuple(shape))
    for n in range(n_steps):
        data[n, 0] = video(xs[None, :], ys[:, None], (n + 0.5) * dt)
    return FrameTensor(data, dt=dt, t0=dt / 2)


def transformed_video(video, transform):
    """
    f'(x', t') = f(A⁻¹(x' − u t'/S_t), t'/S_t).
    """
    inverse = transform.inverse
    ux, uy = transform.u

    def sample(x, y, t):
        t_original = t / transform.S_t
        x_shift = x - ux * t_original
        y_shift = y - uy * t_original
        return video(
            inverse[0, 0] * x_shift + inverse[0, 1] * y_shift,
            inverse[1, 0] * x_shift + inverse[1, 1] * y_shift,
            t_original,
        )

    return sample


def _spec_in_pixels(spec, covariance, velocity, temporal, pitch, supersample, padding):
    spatial = KernelSpec.from_covariance(Covariance2.from_matrix(covariance.matrix / pitch**2))
    return StrfSpec(
        spatial=spatial,
        temporal=temporal,
        velocity=(velocity[0] / pitch, velocity[1] / pitch),
        supersample=supersample,
        padding=padding,
    )


def check_joint(
    video,
    transform,
    spec,
    *,
    pitch=1.0,
    dt=0.25,
    extent=32.0,
    duration=16.0,
    supersample=4,
    padding="replicate",
    tolerance=JOINT_TOLERANCE,
    name="joint",
):
    """
    Transform the video by (A, u, S_t), transform (Σ, τ, v) by the matching rules,
    and compare the two responses at corresponding space-time points.

    ``spec`` is expressed in spatial units (Σ in units², v in units per time
    unit) and must use a zeroth-order spatial kernel. Responses are compared in
    co-moving coordinates: original point (ξ, t) corresponds to (A ξ, S_t t).
    """
    if spec.spatial.order != 0:
        raise DomainError("check_joint compares smoothing kernels; derivative orders must be zero")
    A = transform.matrix
    S_t = transform.S_t
    covariance = spec.spatial.covariance
    covariance_prime = transform.transform_covariance(covariance)
    velocity_prime = transform.transform_velocity(spec.velocity)
    temporal_prime = spec.temporal.scaled(S_t)

    n_px = int(round(extent / pitch))
    n_steps = int(round(duration / dt))
    speed_prime = float(np.hypot(*velocity_prime))
    extent_prime = max(1.0, np.linalg.norm(A, 2)) * extent + 2 * speed_prime * S_t * duration
    n_px_prime = int(math.ceil(extent_prime / pitch))
    n_steps_prime = int(math.ceil(S_t * n_steps))

    original = _spec_in_pixels(spec, covariance, spec.velocity, spec.temporal, pitch, supersample, padding)
    scaled = _spec_in_pixels(spec, covariance_prime, velocity_prime, temporal_prime, pitch, supersample, padding)
    response = respond(sample_video(video, (n_px, n_px), pitch, dt, n_steps), original).data[:, 0]
    response_prime = respond(
        sample_video(transformed_video(video, transform), (n_px_prime, n_px_prime), pitch, dt, n_steps_prime), scaled
    ).data[:, 0]

    ys, xs = grid_coordinates((n_px, n_px), pitch)
    times = (np.arange(n_steps) + 1) * dt
    xi = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None]))
    xi_prime = np.tensordot(A, xi, axes=1)

    radius = (math.ceil(3 * original.spatial.sigma_major) + 1) * pitch
    radius_prime = (math.ceil(3 * scaled.spatial.sigma_major) + 1) * pitch
    half = (n_px - 1) / 2.0 * pitch
    half_prime = (n_px_prime - 1) / 2.0 * pitch
    margin_steps = int(math.ceil(5 * spec.temporal.longest_mu / dt))

    mask = np.zeros((n_steps, n_px, n_px), dtype=bool)
    for n, t in enumerate(times):
        if n < margin_steps or S_t * (n + 1) - 1 > n_steps_prime - 1:
            continue
        mask[n] = _trajectory_inside(xi, spec.velocity, t, half - radius) & _trajectory_inside(
            xi_prime, velocity_prime, S_t * t, half_prime - radius_prime
        )
    if not mask.any():
        raise DomainError(f"{name}: no interior points left, enlarge extent or shorten duration")

    index_t = np.broadcast_to((S_t * (np.arange(n_steps) + 1) - 1)[:, None, None], mask.shape)
    index_y = np.broadcast_to(xi_prime[1][None] / pitch + (n_px_prime - 1) / 2.0, mask.shape)
    index_x = np.broadcast_to(xi_prime[0][None] / pitch + (n_px_prime - 1) / 2.0, mask.shape)
    coordinates = np.stack([index_t[mask], index_y[mask], index_x[mask]])
    mapped = ndimage.map_coordinates(response_prime, coordinates, order=1, mode="nearest")
    error = rel_l2(mapped, response[mask])
    log.info("%s: pitch=%g dt=%g rel-L2 %.3g over %d points", name, pitch, dt, error, int(mask.sum()))
    return CovarianceReport(
        name=name,
        rel_l2_error=error,
        tolerance=tolerance,
        dt=dt,
        pitch=pitch,
        supersample=supersample,
        margin_px=int(round(radius / pitch)),
        margin_steps=margin_steps,
    )


def _trajectory_inside(points, velocity, t_end, half_width):
    """
    True where ``points + velocity·t`` stays inside the square [−half_width, half_width]² for t in [0, t_end].
    """
    inside = np.ones(points.shape[1:], dtype=bool)
    for t in (0.0, t_end):
        for axis in range(2):
            inside &= np.abs(points[axis] + velocity[axis] * t) <= half_width
    return inside


def joint_ladder(video, transform, spec, levels=3, base_pitch=2.0, base_dt=0.5, name="joint_ladder", **kwargs):
    reports = [
        check_joint(
            video, transform, spec, pitch=base_pitch / 2**level, dt=base_dt / 2**level, name=f"{name}_{level}", **kwargs
        )
        for level in range(levels)
    ]
    return _ladder_report(name, reports), reports


def default_joint_spec():
    return StrfSpec(
        spatial=KernelSpec(0.0, 1.2, 1.0),
        temporal=TemporalSpec(kind="li", mu=2.0),
        velocity=(0.25, 0.0),
    )


def composite_map():
    """
    A = rot(20°)·diag(1.5, 1), u = (0.5, 0), S_t = 2.
    """
    return AffineMap2.from_matrix(rotation_matrix(20.0) @ np.diag([1.5, 1.0]), u=(0.5, 0.0), S_t=2.0)


def run_suite(suite="all", refine=3, seed=0):
    """
    Run a named group of checks and return their reports.

    ``refine`` is the number of refinement-ladder levels; below 2 the ladders are skipped.
    """
    validate_choice("suite", suite, SUITES)
    reports = []
    if suite in ("all", "spatial"):
        image = BandLimitedImage(wavelengths=(16.0, 64.0), seed=seed)
        identity = np.eye(2)
        unit = make_covariance(1.0, 1.0, 0.0)
        reports.append(check_affine(image, identity, unit, name="affine_identity", tolerance=1e-10))
        reports.append(check_affine(image, AffineMap2.rotation(30.0), unit, name="affine_rotation_30"))
        reports.append(check_affine(image, AffineMap2.scaling(2.0, 1.0), unit, name="affine_scaling_2_1"))
        control_sigma = make_covariance(2.0, 2.0, 0.0)
        reports.append(affine_negative_control(image, AffineMap2.scaling(2.0, 1.0), control_sigma))
        if refine >= 2:
            reports.append(affine_ladder(image, AffineMap2.rotation(30.0), unit, levels=refine)[0])
    if suite in ("all", "temporal"):
        mu = 1.0
        signal = BandLimitedSignal(periods=(2 * mu, 20 * mu), seed=seed)
        reports.append(check_temporal_scaling(signal, mu, 1.0, mu / 100, name="temporal_identity", tolerance=1e-12))
        for S_t in (math.sqrt(2.0), 2.0):
            reports.append(check_temporal_scaling(signal, mu, S_t, mu / 100, name=f"temporal_scaling_{S_t:.3f}"))
        reports.append(temporal_negative_control(signal, mu, 2.0, mu / 100))
        if refine >= 2:
            reports.append(temporal_ladder(signal, mu, 2.0, mu / 25, levels=refine)[0])
        drive = BandLimitedSignal(periods=(2 * mu, 20 * mu), offset=2.0, seed=seed)
        drive.amplitudes = drive.amplitudes * (0.5 / drive.peak)
        reports.append(check_temporal_scaling_lif(drive, mu, None, 1.0, 2.0, mu / 200, duration=20 * mu))
    if suite in ("all", "joint"):
        video = MovingTexture(
            BandLimitedImage(wavelengths=(16.0, 48.0), seed=seed),
            velocity=(0.5, 0.25),
            modulation=BandLimitedSignal(periods=(8.0, 40.0), seed=seed),
        )
        spec = default_joint_spec()
        reports.append(check_joint(video, AffineMap2(), spec, name="joint_identity", tolerance=1e-10))
        reports.append(check_joint(video, AffineMap2(u=(1.0, 0.0)), spec, name="joint_galilean", tolerance=0.02))
        reports.append(check_joint(video, composite_map(), spec, name="joint_composite"))
        if refine >= 2:
            reports.append(joint_ladder(video, composite_map(), spec, levels=refine)[0])
    return reports


def write_reports_csv(reports, path):
    columns = list(CovarianceReport.__dataclass_fields__)
    with open(path, "w", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=columns)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.to_row())
    log.info("Wrote %d covariance reports to %s", len(reports), path)
