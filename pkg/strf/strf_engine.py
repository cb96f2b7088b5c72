"""
Joint spatio-temporal receptive fields T(x, t; Σ, τ, v) = g(x − v t; Σ)·h(t; τ)
applied to frame tensors.

Velocity adaptation pre-warps every frame into the co-moving frame,
W(x, n) = F_n(x + v·t_n), and then applies a static spatial kernel followed
by the temporal channel. ``respond`` returns the response in co-moving
coordinates, so the lab-frame response is L(x, t) = M(x − v t, t).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import ndimage

from strf.exceptions import DomainError
from strf.spatial_kernels import DiscreteKernel, KernelSpec, default_grid_size, sample_kernel
from strf.temporal_kernels import TemporalSpec
from strf.validators import validate_choice, validate_finite, validate_positive

log = logging.getLogger(__name__)

PADDING_MODES = {"zero": "constant", "replicate": "nearest"}


@dataclass(frozen=True, eq=False)
class FrameTensor:
    """
    Dense samples indexed ``[t, c, y, x]``; sample ``n`` is taken at time ``t0 + n·dt``.
    """

    data: np.ndarray
    dt: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 4:
            raise DomainError(f"frame tensors are [T, C, H, W], got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("frame tensor contains non-finite samples")
        validate_positive("dt", self.dt)
        validate_finite("t0", self.t0)
        object.__setattr__(self, "data", data)

    @property
    def dims(self):
        return self.data.shape

    def times(self):
        return self.t0 + self.dt * np.arange(self.data.shape[0])

    def with_data(self, data):
        return FrameTensor(data, dt=self.dt, t0=self.t0)


@dataclass(frozen=True)
class StrfSpec:
    """
    A separable spatio-temporal receptive field with velocity adaptation.
    """

    spatial: KernelSpec = field(default_factory=KernelSpec)
    temporal: TemporalSpec = field(default_factory=TemporalSpec)
    velocity: Tuple[float, float] = (0.0, 0.0)
    grid_size: Tuple[int, int] = None
    supersample: int = 4
    padding: str = "replicate"

    def __post_init__(self):
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        for component in self.velocity:
            validate_finite("velocity", component)
        validate_choice("padding", self.padding, PADDING_MODES)
        if self.grid_size is None:
            object.__setattr__(self, "grid_size", default_grid_size(self.spatial))

    def kernel(self):
        return sample_kernel(self.spatial, self.grid_size, self.supersample)

    def margins(self, dt):
        """
        Boundary band excluded from comparisons: ⌈3σ⌉ pixels and ⌈5μ/dt⌉ initial steps.
        """
        return int(math.ceil(3 * self.spatial.sigma_major)), int(math.ceil(5 * self.temporal.longest_mu / dt))


def convolve2d(frame, kernel, padding="replicate"):
    """
    Correlate a 2-D frame with a kernel grid; output has the frame's size.
    """
    validate_choice("padding", padding, PADDING_MODES)
    weights = kernel.weights if isinstance(kernel, DiscreteKernel) else np.asarray(kernel, dtype=float)
    frame = np.asarray(frame, dtype=float)
    if weights.shape[0] % 2 == 0 or weights.shape[1] % 2 == 0:
        raise DomainError(f"kernel grids must be odd-sized, got {weights.shape}")
    if weights.shape[0] > frame.shape[0] or weights.shape[1] > frame.shape[1]:
        raise DomainError(f"kernel {weights.shape} does not fit in frame {frame.shape}")
    return ndimage.correlate(frame, weights, mode=PADDING_MODES[padding], cval=0.0)


def galilean_warp(frames, v):
    """
    Resample frame ``n`` at ``x + v·t_n`` (bilinear, zeros outside), cancelling motion at velocity ``v``.

    ``v`` is ``(v_x, v_y)`` in pixels per time unit.
    """
    vx, vy = (float(component) for component in v)
    if vx == 0.0 and vy == 0.0:
        return frames.with_data(frames.data.copy())
    warped = np.empty_like(frames.data)
    for n, t in enumerate(frames.times()):
        for c in range(frames.data.shape[1]):
            warped[n, c] = ndimage.shift(frames.data[n, c], (-vy * t, -vx * t), order=1, mode="constant", cval=0.0)
    return frames.with_data(warped)


def respond(frames, spec):
    """
    Co-moving response M of ``frames`` to the receptive field ``spec``.

    Output sample ``n`` is the channel state after input sample ``n``.
    """
    warped = galilean_warp(frames, spec.velocity)
    kernel = spec.kernel()
    if kernel.truncated:
        log.warning("Spatial kernel %s is truncated by its %s grid", spec.spatial, spec.grid_size)

    smoothed = np.empty_like(warped.data)
    for n in range(warped.data.shape[0]):
        for c in range(warped.data.shape[1]):
            smoothed[n, c] = convolve2d(warped.data[n, c], kernel, spec.padding)

    channel = spec.temporal.build()
    output = channel.run(smoothed, frames.dt)
    log.debug("Computed response of shape %s for %s", output.shape, spec)
    return frames.with_data(output)
