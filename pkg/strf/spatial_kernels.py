"""
Affine Gaussian derivative receptive fields and their discrete sampling.

Coordinates follow image conventions: ``x`` runs along columns and ``y`` along
rows. A kernel with orientation ``phi`` has its major axis along
``(cos phi, sin phi)`` in ``(x, y)``.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.special import eval_hermitenorm

from strf import formats
from strf.exceptions import DomainError, FormatError
from strf.validators import validate_finite, validate_odd, validate_positive

log = logging.getLogger(__name__)

DEFAULT_SCALES = (1.0, 2.0, 4.0, 8.0)
DEFAULT_SKEWS = (1.0, 0.5, 0.25)
DEFAULT_FAMILIES = ((0, 0), (1, 0), (0, 1))
MIXED_FAMILY = (1, 1)
SUPPORT_SIGMAS = 3.0


@dataclass(frozen=True)
class Covariance2:
    """
    Symmetric positive definite 2x2 spatial covariance, in pixels squared.
    """

    xx: float
    xy: float
    yy: float

    def __post_init__(self):
        for name in ("xx", "xy", "yy"):
            validate_finite(name, getattr(self, name))
        if self.xx <= 0 or self.yy <= 0 or self.xx * self.yy - self.xy**2 <= 0:
            raise DomainError(f"covariance is not positive definite: {self}")

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (2, 2):
            raise DomainError(f"covariance matrix must be 2x2, got {matrix.shape}")
        return cls(float(matrix[0, 0]), 0.5 * float(matrix[0, 1] + matrix[1, 0]), float(matrix[1, 1]))

    @property
    def matrix(self):
        return np.array([[self.xx, self.xy], [self.xy, self.yy]])

    @property
    def det(self):
        return self.xx * self.yy - self.xy**2

    def transform(self, A):
        """
        Return ``A Σ Aᵀ``.
        """
        A = np.asarray(A, dtype=float)
        return Covariance2.from_matrix(A @ self.matrix @ A.T)

    def eigen(self):
        """
        Return ``(major variance, minor variance, phi)`` with ``phi`` in ``[0, π)``.

        For an isotropic covariance the orientation is undefined and 0 is returned.
        """
        values, vectors = np.linalg.eigh(self.matrix)
        major, minor = float(values[1]), float(values[0])
        if math.isclose(major, minor, rel_tol=1e-14, abs_tol=0.0):
            return major, minor, 0.0
        phi = math.atan2(vectors[1, 1], vectors[0, 1]) % math.pi
        return major, minor, phi


def make_covariance(sigma_major, sigma_minor, phi):
    """
    Σ = R(φ)·diag(σ_φ², σ_⊥φ²)·R(φ)ᵀ
    """
    validate_positive("sigma_major", sigma_major)
    validate_positive("sigma_minor", sigma_minor)
    if sigma_major < sigma_minor:
        raise DomainError(f"sigma_major ({sigma_major}) must not be smaller than sigma_minor ({sigma_minor})")
    c, s = math.cos(phi), math.sin(phi)
    rotation = np.array([[c, -s], [s, c]])
    return Covariance2.from_matrix(rotation @ np.diag([sigma_major**2, sigma_minor**2]) @ rotation.T)


@dataclass(frozen=True)
class KernelSpec:
    """
    Parametric description of one scale-normalised affine Gaussian derivative kernel.

    ``deriv_major``/``deriv_minor`` are derivative orders along and across the
    orientation; ``velocity`` is in pixels per time unit and only used by the
    spatio-temporal engine.
    """

    orientation: float = 0.0
    sigma_major: float = 1.0
    sigma_minor: float = 1.0
    deriv_major: int = 0
    deriv_minor: int = 0
    velocity: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        validate_finite("orientation", self.orientation)
        validate_positive("sigma_major", self.sigma_major)
        validate_positive("sigma_minor", self.sigma_minor)
        if self.sigma_major < self.sigma_minor * (1 - 1e-12):
            raise DomainError(f"sigma_major ({self.sigma_major}) < sigma_minor ({self.sigma_minor})")
        if self.deriv_major < 0 or self.deriv_minor < 0 or self.deriv_major + self.deriv_minor > 2:
            raise DomainError(f"derivative orders ({self.deriv_major}, {self.deriv_minor}) outside 0 <= m1 + m2 <= 2")
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        for component in self.velocity:
            validate_finite("velocity", component)

    @classmethod
    def from_covariance(cls, covariance, deriv_major=0, deriv_minor=0, velocity=(0.0, 0.0)):
        major, minor, phi = covariance.eigen()
        return cls(phi, math.sqrt(major), math.sqrt(minor), deriv_major, deriv_minor, velocity)

    @property
    def covariance(self):
        return make_covariance(self.sigma_major, self.sigma_minor, self.orientation)

    @property
    def order(self):
        return self.deriv_major + self.deriv_minor

    def to_dict(self):
        return {
            "orientation": self.orientation,
            "sigma_major": self.sigma_major,
            "sigma_minor": self.sigma_minor,
            "deriv_major": self.deriv_major,
            "deriv_minor": self.deriv_minor,
            "velocity": list(self.velocity),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            orientation=data["orientation"],
            sigma_major=data["sigma_major"],
            sigma_minor=data["sigma_minor"],
            deriv_major=data["deriv_major"],
            deriv_minor=data["deriv_minor"],
            velocity=tuple(data.get("velocity", (0.0, 0.0))),
        )


def evaluate(spec, x, y):
    """
    Continuous kernel σ_φ^{m1}·σ_⊥φ^{m2}·∂_φ^{m1}∂_⊥φ^{m2} g(x; Σ) at points ``(x, y)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c, s = math.cos(spec.orientation), math.sin(spec.orientation)
    p = (c * x + s * y) / spec.sigma_major
    q = (-s * x + c * y) / spec.sigma_minor
    gaussian = np.exp(-0.5 * (p**2 + q**2)) / (2 * math.pi * spec.sigma_major * spec.sigma_minor)
    sign = (-1) ** spec.order
    return sign * eval_hermitenorm(spec.deriv_major, p) * eval_hermitenorm(spec.deriv_minor, q) * gaussian


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """
    A kernel sampled on an odd grid; ``weights[h // 2, w // 2]`` sits on the origin.
    """

    weights: np.ndarray
    spec: KernelSpec
    supersample: int = 1
    truncated: bool = False

    @property
    def size(self):
        return self.weights.shape

    @property
    def center(self):
        return self.weights.shape[0] // 2, self.weights.shape[1] // 2


def support_radius(spec, sigmas=SUPPORT_SIGMAS):
    return sigmas * spec.sigma_major


def default_grid_size(spec, sigmas=4.0):
    radius = int(math.ceil(sigmas * spec.sigma_major))
    return 2 * radius + 1, 2 * radius + 1


def sample_kernel(spec, grid_size=(9, 9), supersample=4):
    """
    Sample ``spec`` on an odd grid by supersampled area averaging.

    Zeroth-order kernels are renormalised to unit sum; derivative kernels keep
    their sampled tails so odd orders stay zero-sum.
    """
    height, width = grid_size
    validate_odd("grid height", height)
    validate_odd("grid width", width)
    if int(supersample) != supersample or supersample < 1:
        raise DomainError(f"supersample must be a positive integer, got {supersample!r}")

    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    ys = (np.arange(height) - height // 2)[:, None] + offsets[None, :]
    xs = (np.arange(width) - width // 2)[:, None] + offsets[None, :]
    yy = ys.reshape(height, supersample, 1, 1)
    xx = xs.reshape(1, 1, width, supersample)
    weights = evaluate(spec, xx, yy).mean(axis=(1, 3))

    if spec.order == 0:
        weights = weights / weights.sum()

    truncated = min(height, width) / 2.0 < support_radius(spec)
    if truncated:
        log.debug("Kernel %s truncated by %dx%d grid", spec, height, width)
    return DiscreteKernel(weights=weights, spec=spec, supersample=int(supersample), truncated=truncated)


@dataclass(frozen=True, eq=False)
class KernelBank:
    """
    Kernels in orientation-major order: orientation, scale, skew, derivative family.
    """

    kernels: tuple
    layout: Tuple[int, int, int, int]
    grid_size: Tuple[int, int] = (9, 9)
    supersample: int = 4
    families: tuple = field(default=DEFAULT_FAMILIES)

    def __post_init__(self):
        if len(self.kernels) != int(np.prod(self.layout)):
            needed = int(np.prod(self.layout))
            raise DomainError(f"bank holds {len(self.kernels)} kernels, layout {self.layout} needs {needed}")

    def __len__(self):
        return len(self.kernels)

    def __getitem__(self, index):
        return self.kernels[index]

    def __iter__(self):
        return iter(self.kernels)

    def index(self, orientation, scale, skew, family):
        return int(np.ravel_multi_index((orientation, scale, skew, family), self.layout))

    def weights(self):
        """
        All kernels stacked as ``[N, h, w]``.
        """
        return np.stack([kernel.weights for kernel in self.kernels])

    def save(self, path):
        header = {
            "layout": list(self.layout),
            "grid_size": list(self.grid_size),
            "supersample": self.supersample,
            "families": [list(family) for family in self.families],
            "specs": [kernel.spec.to_dict() for kernel in self.kernels],
            "truncated": [kernel.truncated for kernel in self.kernels],
        }
        formats.write_framed(path, formats.KERNEL_BANK_MAGIC, header, [self.weights()])
        log.info("Saved %d kernels to %s", len(self), path)

    @classmethod
    def load(cls, path):
        header, blob = formats.read_framed(path, formats.KERNEL_BANK_MAGIC)
        try:
            height, width = header["grid_size"]
            specs = [KernelSpec.from_dict(item) for item in header["specs"]]
            truncated = header.get("truncated", [False] * len(specs))
            layout = tuple(header["layout"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed kernel bank header: {exc}") from exc
        (grids,) = formats.split_blob(blob, [(len(specs), height, width)], path)
        kernels = tuple(
            DiscreteKernel(
                weights=grid.astype(float), spec=spec, supersample=header.get("supersample", 1), truncated=flag
            )
            for grid, spec, flag in zip(grids, specs, truncated)
        )
        return cls(
            kernels=kernels,
            layout=layout,
            grid_size=(height, width),
            supersample=header.get("supersample", 1),
            families=tuple(tuple(family) for family in header.get("families", DEFAULT_FAMILIES)),
        )


def build_bank(
    n_orient=4,
    scales=DEFAULT_SCALES,
    skews=DEFAULT_SKEWS,
    deriv_families=DEFAULT_FAMILIES,
    grid_size=(9, 9),
    supersample=4,
    include_mixed=False,
    orientation_span=math.pi,
):
    """
    Build one kernel per (orientation, scale, skew, derivative family).

    Orientations are ``i * orientation_span / n_orient``; ``skews`` are
    ``sigma_minor / sigma_major`` ratios. ``include_mixed`` appends the (1, 1)
    family.
    """
    families = tuple(tuple(family) for family in deriv_families)
    if include_mixed and MIXED_FAMILY not in families:
        families = families + (MIXED_FAMILY,)
    if n_orient < 1 or not scales or not skews or not families:
        raise DomainError("build_bank needs at least one orientation, scale, skew and derivative family")

    kernels = []
    for i in range(n_orient):
        phi = i * orientation_span / n_orient
        for sigma in scales:
            for skew in skews:
                for m1, m2 in families:
                    spec = KernelSpec(phi, float(sigma), float(sigma) * float(skew), m1, m2)
                    kernels.append(sample_kernel(spec, grid_size, supersample))

    layout = (n_orient, len(scales), len(skews), len(families))
    n_truncated = sum(kernel.truncated for kernel in kernels)
    if n_truncated:
        log.info(
            "%d of %d kernels exceed the %s grid at %g sigma", n_truncated, len(kernels), grid_size, SUPPORT_SIGMAS
        )
    log.info("Built kernel bank with layout %s", layout)
    return KernelBank(
        kernels=tuple(kernels), layout=layout, grid_size=tuple(grid_size), supersample=supersample, families=families
    )
