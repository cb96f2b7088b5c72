"""
Synthetic event-camera datasets.

Three shape contours (triangle, square, circle) are drawn anti-aliased on a
supersampled canvas, area-downsampled to the output resolution, and turned
into polarity events by integrating frame differences per pixel until a
threshold is crossed. Bernoulli background noise is added on top.
"""
import csv
import json
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Tuple

import cv2
import numpy as np

from strf import formats, prng
from strf.exceptions import DatasetError, DomainError, FormatError
from strf.strf_engine import FrameTensor
from strf.validators import (
    validate_choice,
    validate_non_negative,
    validate_positive,
    validate_probability,
    validate_range,
)

log = logging.getLogger(__name__)

SHAPES = ("triangle", "square", "circle")
FAMILIES = ("spatial_scale", "temporal_velocity")
FAMILY_ALIASES = {"spatial": "spatial_scale", "velocity": "temporal_velocity"}
FULL_RESOLUTION = 300
EVENT_DTYPE = np.dtype([("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])
HEADER = struct.Struct("<HHIfQ")
CROSSING_GUARD = 1e-9
SUBPIXEL_BITS = 4


@dataclass(frozen=True, eq=False)
class EventStream:
    """
    Polarity events sorted by (t, y, x, p) on a ``height`` × ``width`` sensor.
    """

    records: np.ndarray
    height: int
    width: int
    n_frames: int
    dt: float = 1.0

    def __post_init__(self):
        records = np.asarray(self.records, dtype=EVENT_DTYPE)
        if len(records):
            if np.any(records["x"] >= self.width) or np.any(records["y"] >= self.height):
                raise DomainError("event coordinates outside the sensor")
            if np.any(np.diff(records["t"].astype(np.int64)) < 0):
                raise DomainError("events must be sorted by time")
            if not np.all(np.isin(records["p"], (-1, 1))):
                raise DomainError("event polarity must be -1 or +1")
        object.__setattr__(self, "records", records)

    @classmethod
    def from_arrays(cls, t, x, y, p, height, width, n_frames, dt=1.0):
        records = np.zeros(len(t), dtype=EVENT_DTYPE)
        records["t"], records["x"], records["y"], records["p"] = t, x, y, p
        order = np.lexsort((records["p"], records["x"], records["y"], records["t"]))
        return cls(records[order], height=height, width=width, n_frames=n_frames, dt=dt)

    @classmethod
    def empty(cls, height, width, n_frames, dt=1.0):
        return cls(np.zeros(0, dtype=EVENT_DTYPE), height=height, width=width, n_frames=n_frames, dt=dt)

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return (
            isinstance(other, EventStream)
            and (self.height, self.width, self.n_frames) == (other.height, other.width, other.n_frames)
            and self.dt == other.dt
            and np.array_equal(self.records, other.records)
        )

    def merge(self, other):
        combined = np.concatenate([self.records, other.records])
        return EventStream.from_arrays(
            combined["t"], combined["x"], combined["y"], combined["p"], self.height, self.width, self.n_frames, self.dt
        )

    def polarity_counts(self):
        return int(np.sum(self.records["p"] > 0)), int(np.sum(self.records["p"] < 0))

    def active_fraction(self):
        """
        Fraction of (frame, pixel) cells that hold at least one event.
        """
        if not len(self):
            return 0.0
        cells = np.unique(
            (self.records["t"].astype(np.int64) * self.height + self.records["y"]) * self.width + self.records["x"]
        )
        return len(cells) / float(self.n_frames * self.height * self.width)

    def rasterize(self):
        """
        Per-frame (positive, negative) event counts, clamped to [0, 1]: ``[T, 2, H, W]`` float32.
        """
        frames = np.zeros((self.n_frames, 2, self.height, self.width), dtype=np.float32)
        channel = (self.records["p"] < 0).astype(np.int64)
        np.add.at(frames, (self.records["t"].astype(np.int64), channel, self.records["y"], self.records["x"]), 1.0)
        return np.clip(frames, 0.0, 1.0)

    def save(self, path, csv_mirror=False):
        try:
            with open(path, "wb") as stream:
                stream.write(formats.EVENT_STREAM_MAGIC)
                stream.write(HEADER.pack(self.height, self.width, self.n_frames, self.dt, len(self)))
                stream.write(self.records.tobytes())
            if csv_mirror:
                with open(os.path.splitext(path)[0] + ".csv", "w", newline="") as stream:
                    writer = csv.writer(stream)
                    writer.writerow(["t", "x", "y", "p"])
                    writer.writerows(zip(*(self.records[name].tolist() for name in ("t", "x", "y", "p"))))
        except OSError as exc:
            raise DatasetError(f"{path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as stream:
                magic = stream.read(len(formats.EVENT_STREAM_MAGIC))
                if magic != formats.EVENT_STREAM_MAGIC:
                    raise FormatError(f"{path}: not an event stream (magic {magic!r})")
                raw = stream.read(HEADER.size)
                if len(raw) != HEADER.size:
                    raise FormatError(f"{path}: truncated header")
                height, width, n_frames, dt, n_events = HEADER.unpack(raw)
                body = stream.read()
        except OSError as exc:
            raise DatasetError(f"{path}: {exc}") from exc
        if len(body) % EVENT_DTYPE.itemsize:
            raise FormatError(f"{path}: trailing partial event record")
        records = np.frombuffer(body, dtype=EVENT_DTYPE)
        if len(records) != n_events:
            raise FormatError(f"{path}: header announces {n_events} events, file holds {len(records)}")
        return cls(records.copy(), height=height, width=width, n_frames=n_frames, dt=float(dt))


@dataclass(frozen=True, eq=False)
class ShapeTrack:
    """
    Per-frame pose of one shape: centre ``(x, y)`` in output pixels, size in pixels, fixed angle.
    """

    shape: str
    centers: np.ndarray
    sizes: np.ndarray
    angle: float = 0.0
    fixed_orientation: bool = True

    def __post_init__(self):
        validate_choice("shape", self.shape, SHAPES)
        centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        sizes = np.asarray(self.sizes, dtype=float).reshape(-1)
        if len(sizes) != len(centers):
            raise DomainError("a track needs one size per frame")
        if np.any(sizes <= 0):
            raise DomainError("shape sizes must be positive")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "sizes", sizes)

    def to_dict(self):
        return {
            "shape": self.shape,
            "centers": np.round(self.centers, 6).tolist(),
            "sizes": np.round(self.sizes, 6).tolist(),
            "angle": self.angle,
            "fixed_orientation": self.fixed_orientation,
        }


@dataclass(frozen=True)
class DatasetSpec:
    """
    Generation parameters of one dataset family.

    Sizes are in output pixels. ``scale_range`` bounds the log-uniform
    per-sequence size of the spatial family; ``velocity_range`` bounds the
    absolute log-uniform growth rate (pixels per frame) of the velocity family.
    """

    family: str = "spatial_scale"
    resolution: Tuple[int, int] = (FULL_RESOLUTION, FULL_RESOLUTION)
    supersample: int = 8
    n_frames: int = 50
    n_sequences: int = 800
    scale_range: Tuple[float, float] = (10.0, 80.0)
    velocity_range: Tuple[float, float] = (0.16, 1.28)
    base_size: float = 10.0
    v_max: float = 1.0
    noise_rate: float = 0.005
    threshold: float = 0.3
    dt_ms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", FAMILY_ALIASES.get(self.family, self.family))
        validate_choice("family", self.family, FAMILIES)
        object.__setattr__(self, "resolution", tuple(int(side) for side in self.resolution))
        object.__setattr__(self, "scale_range", tuple(float(value) for value in self.scale_range))
        object.__setattr__(self, "velocity_range", tuple(float(value) for value in self.velocity_range))
        if int(self.supersample) != self.supersample or self.supersample < 1:
            raise DomainError(f"supersample must be a positive integer, got {self.supersample!r}")
        if self.n_frames < 2:
            raise DomainError("datasets need at least two frames")
        if self.n_sequences < 0:
            raise DomainError("n_sequences must not be negative")
        validate_range("scale_range", self.scale_range)
        validate_range("velocity_range", self.velocity_range)
        validate_positive("base_size", self.base_size)
        validate_non_negative("v_max", self.v_max)
        validate_probability("noise_rate", self.noise_rate)
        validate_positive("threshold", self.threshold)
        validate_positive("dt_ms", self.dt_ms)

    @property
    def supersampled_resolution(self):
        return self.resolution[0] * self.supersample, self.resolution[1] * self.supersample

    @classmethod
    def full(cls, family, **overrides):
        return cls(family=family, **overrides)

    @classmethod
    def desk(cls, family, resolution=64, **overrides):
        """
        Desk-scale preset: sizes scaled from the 300-pixel layout, no smaller than 4 pixels.
        """
        ratio = resolution / FULL_RESOLUTION
        defaults = dict(
            family=family,
            resolution=(resolution, resolution),
            n_sequences=200,
            scale_range=(max(4.0, 10.0 * ratio), max(4.0, 80.0 * ratio)),
            base_size=max(4.0, 10.0 * ratio),
        )
        defaults.update(overrides)
        return cls(**defaults)

    def to_dict(self):
        data = asdict(self)
        for key in ("resolution", "scale_range", "velocity_range"):
            data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _log_uniform(rng, value_range):
    low, high = value_range
    return float(math.exp(rng.uniform(math.log(low), math.log(high))))


def _random_walk(rng, start, sizes, v_max, width, height):
    """
    Uniform per-step velocities in [−v_max, v_max] per axis, reflected at the borders.
    """
    centers = np.empty((len(sizes), 2))
    position = np.array(start, dtype=float)
    for n, size in enumerate(sizes):
        if n:
            position = position + rng.uniform(-v_max, v_max, 2)
        for axis, extent in enumerate((width, height)):
            low, high = size / 2.0, extent - 1 - size / 2.0
            if high <= low:
                position[axis] = (extent - 1) / 2.0
                continue
            if position[axis] < low:
                position[axis] = 2 * low - position[axis]
            if position[axis] > high:
                position[axis] = 2 * high - position[axis]
            position[axis] = min(max(position[axis], low), high)
        centers[n] = position
    return centers


def sample_tracks(spec, seed, sequence_index=0):
    """
    Draw the three shape tracks of one sequence and the value that defines its bin
    (size for the spatial family, signed growth rate for the velocity family).
    """
    rng = prng.stream(seed, sequence_index, role="tracks")
    height, width = spec.resolution
    steps = np.arange(spec.n_frames)
    tracks = []
    if spec.family == "spatial_scale":
        size = _log_uniform(rng, spec.scale_range)
        value = size
        v_max = spec.v_max
        all_sizes = [np.full(spec.n_frames, size) for _ in SHAPES]
    else:
        rate = _log_uniform(rng, spec.velocity_range)
        value = rate
        v_max = rate
        all_sizes = []
        for _ in SHAPES:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            start = spec.base_size if sign > 0 else spec.base_size + rate * (spec.n_frames - 1)
            all_sizes.append(start + sign * rate * steps)
    for shape, sizes in zip(SHAPES, all_sizes):
        largest = float(sizes.max())
        half = largest / 2.0
        start = [rng.uniform(half, width - 1 - half), rng.uniform(half, height - 1 - half)]
        angle = float(rng.uniform(0.0, 2 * math.pi))
        centers = _random_walk(rng, start, sizes, v_max, width, height)
        tracks.append(ShapeTrack(shape=shape, centers=centers, sizes=sizes, angle=angle))
    return tracks, value


def _outline(shape, center, size, angle, supersample):
    """
    Polygon vertices on the supersampled canvas; canvas X = (x + 0.5)·ss − 0.5.
    """
    if shape == "triangle":
        radius = size / math.sqrt(3.0)
        angles = angle + np.array([0.0, 2.0, 4.0]) * math.pi / 3.0
    else:
        radius = size / math.sqrt(2.0)
        angles = angle + math.pi / 4.0 + np.arange(4) * math.pi / 2.0
    xs = center[0] + radius * np.cos(angles)
    ys = center[1] + radius * np.sin(angles)
    return np.stack([(xs + 0.5) * supersample - 0.5, (ys + 0.5) * supersample - 0.5], axis=1)


def downsample(canvas, resolution):
    """
    Area-average a supersampled 8-bit canvas to ``resolution`` and scale it to [0, 1].
    """
    height, width = resolution
    return cv2.resize(np.asarray(canvas, dtype=np.float32), (width, height), interpolation=cv2.INTER_AREA) / 255.0


def render_frames(tracks, resolution, supersample):
    """
    Render contour frames ``[T, 1, H, W]`` in [0, 1] for the given tracks.
    """
    height, width = resolution
    n_frames = len(tracks[0].sizes) if tracks else 0
    scale = float(1 << SUBPIXEL_BITS)
    frames = np.zeros((n_frames, 1, height, width))
    for n in range(n_frames):
        canvas = np.zeros((height * supersample, width * supersample), dtype=np.uint8)
        for track in tracks:
            center, size = track.centers[n], track.sizes[n]
            if track.shape == "circle":
                canvas_center = ((center + 0.5) * supersample - 0.5) * scale
                cv2.circle(
                    canvas,
                    tuple(int(round(value)) for value in canvas_center),
                    int(round(size / 2.0 * supersample * scale)),
                    255,
                    thickness=supersample,
                    lineType=cv2.LINE_AA,
                    shift=SUBPIXEL_BITS,
                )
            else:
                outline = _outline(track.shape, center, size, track.angle, supersample)
                points = np.round(outline * scale).astype(np.int32)
                cv2.polylines(
                    canvas, [points], True, 255, thickness=supersample, lineType=cv2.LINE_AA, shift=SUBPIXEL_BITS
                )
        frames[n, 0] = downsample(canvas, resolution)
    return frames


def render_tracks(spec, seed, sequence_index=0):
    """
    Render one sequence; returns ``(frames, tracks)``.
    """
    tracks, _ = sample_tracks(spec, seed, sequence_index)
    data = render_frames(tracks, spec.resolution, spec.supersample)
    return FrameTensor(data, dt=spec.dt_ms), tracks


def events_from_frames(frames, threshold, return_residual=False):
    """
    Integrate signed frame differences per pixel; each crossing of ±threshold
    emits one event of that sign and subtracts the threshold (residual kept).
    """
    validate_positive("threshold", threshold)
    data = frames.data if isinstance(frames, FrameTensor) else np.asarray(frames, dtype=float)
    if data.ndim == 4:
        if data.shape[1] != 1:
            raise DomainError("events are generated from single-channel frames")
        data = data[:, 0]
    n_frames, height, width = data.shape
    accumulator = np.zeros((height, width))
    chunks = []
    for n in range(1, n_frames):
        accumulator += data[n] - data[n - 1]
        crossings = np.fix(accumulator / threshold + np.sign(accumulator) * CROSSING_GUARD)
        ys, xs = np.nonzero(crossings)
        if len(ys):
            counts = np.abs(crossings[ys, xs]).astype(np.int64)
            signs = np.sign(crossings[ys, xs]).astype(np.int8)
            chunks.append(
                (np.full(counts.sum(), n), np.repeat(xs, counts), np.repeat(ys, counts), np.repeat(signs, counts))
            )
            accumulator -= crossings * threshold
    if chunks:
        t, x, y, p = (np.concatenate(parts) for parts in zip(*chunks))
    else:
        t = x = y = p = np.zeros(0, dtype=np.int64)
    dt = frames.dt if isinstance(frames, FrameTensor) else 1.0
    stream = EventStream.from_arrays(t, x, y, p, height, width, n_frames, dt)
    if return_residual:
        return stream, accumulator
    return stream


def add_noise(stream, rate, seed, sequence_index=0):
    """
    Add an event with uniform random polarity to every (frame, pixel) cell with probability ``rate``.
    """
    validate_probability("rate", rate)
    if rate == 0:
        return stream
    rng = prng.stream(seed, sequence_index, role="noise")
    chunks = []
    for n in range(stream.n_frames):
        ys, xs = np.nonzero(rng.random((stream.height, stream.width)) < rate)
        polarity = rng.integers(0, 2, len(ys)) * 2 - 1
        chunks.append((np.full(len(ys), n), xs, ys, polarity))
    t, x, y, p = (np.concatenate(parts) for parts in zip(*chunks))
    noise = EventStream.from_arrays(t, x, y, p, stream.height, stream.width, stream.n_frames, stream.dt)
    log.debug("Added %d noise events", len(noise))
    return stream.merge(noise)


def value_bins(value_range, n_bins=4):
    """
    Log-spaced bin edges over ``value_range``.
    """
    low, high = value_range
    return np.exp(np.linspace(math.log(low), math.log(high), n_bins + 1))


def bin_index(value, value_range, n_bins=4):
    edges = value_bins(value_range, n_bins)
    return int(np.clip(np.searchsorted(edges, abs(value), side="right") - 1, 0, n_bins - 1))


def _generate_sequence(spec, out_dir, index, csv_mirror):
    tracks, value = sample_tracks(spec, spec.seed, index)
    frames = FrameTensor(render_frames(tracks, spec.resolution, spec.supersample), dt=spec.dt_ms)
    stream = add_noise(events_from_frames(frames, spec.threshold), spec.noise_rate, spec.seed, index)
    file_name = f"seq_{index:05d}.evs"
    stream.save(os.path.join(out_dir, file_name), csv_mirror=csv_mirror)
    value_range = spec.scale_range if spec.family == "spatial_scale" else spec.velocity_range
    return {
        "index": index,
        "file": file_name,
        "n_events": len(stream),
        "active_fraction": stream.active_fraction(),
        "value": value,
        "bin": bin_index(value, value_range),
        "tracks": [track.to_dict() for track in tracks],
    }


def make_dataset(spec, out_dir, csv_mirror=False, workers=1):
    """
    Write one event file per sequence plus ``manifest.json`` and return the manifest.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"{out_dir}: {exc}") from exc
    indices = range(spec.n_sequences)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sequences = list(pool.map(lambda index: _generate_sequence(spec, out_dir, index, csv_mirror), indices))
    else:
        sequences = [_generate_sequence(spec, out_dir, index, csv_mirror) for index in indices]
    manifest = {
        "format": formats.MANIFEST_FORMAT,
        "spec": spec.to_dict(),
        "shapes": list(SHAPES),
        "sequences": sequences,
    }
    path = os.path.join(out_dir, "manifest.json")
    try:
        with open(path, "w") as stream:
            json.dump(manifest, stream, sort_keys=True, indent=2)
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    log.info("Generated %d %s sequences in %s", spec.n_sequences, spec.family, out_dir)
    return manifest


def load_manifest(data_dir):
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path) as stream:
            manifest = json.load(stream)
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if manifest.get("format") != formats.MANIFEST_FORMAT:
        raise FormatError(f"{path}: unsupported manifest format {manifest.get('format')!r}")
    return manifest


def load_sequence(data_dir, entry, n_frames=None):
    """
    Return ``(frames [T, 2, H, W] float32, labels [T, 3, 2])`` for one manifest entry.
    """
    stream = EventStream.load(os.path.join(data_dir, entry["file"]))
    labels = np.stack([np.asarray(track["centers"], dtype=np.float32) for track in entry["tracks"]], axis=1)
    frames = stream.rasterize()
    if n_frames is not None:
        frames, labels = frames[:n_frames], labels[:n_frames]
    return frames, labels
