"""
Backpropagation-through-time training of the scale-channel network.

Sequences come from an ``event_simulator`` dataset directory; every step of a
sequence is a rasterised event frame and a label holding the three shape
centres. Gradients are taken with autograd through the whole unrolled
recurrence, including the log-μ time constants and the surrogate spike
derivative of the LIF variant.
"""
import copy
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from strf import prng
from strf.event_simulator import load_manifest, load_sequence
from strf.exceptions import ConfigurationError, DatasetError, DomainError, GradientError
from strf.scale_channel_net import CoordinatePrediction, init_parameters, load_checkpoint, save_checkpoint
from strf.validators import validate_non_negative, validate_open_unit_interval, validate_positive

log = logging.getLogger(__name__)

DISTANCE_EPS = 1e-9
N_BINS = 4
CHECKPOINT_NAME = "best.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimiser and schedule settings of one training run.

    ``lr = 0`` is accepted and leaves every parameter where it started.
    """

    lr: float = 5e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 15
    batch_size: int = 8
    val_fraction: float = 0.2
    burn_in: int = 10
    clip_norm: float = 10.0
    surrogate_beta: float = 10.0
    seed: int = 0
    threads: int = 1
    deterministic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(beta) for beta in self.betas))
        validate_non_negative("lr", self.lr)
        for beta in self.betas:
            if not 0.0 <= beta < 1.0:
                raise DomainError(f"Adam betas must lie in [0, 1), got {self.betas}")
        validate_positive("eps", self.eps)
        validate_open_unit_interval("val_fraction", self.val_fraction)
        validate_positive("clip_norm", self.clip_norm)
        validate_positive("surrogate_beta", self.surrogate_beta)
        if self.epochs < 0:
            raise DomainError(f"epochs must not be negative, got {self.epochs}")
        if self.batch_size < 1 or self.threads < 1:
            raise DomainError("batch_size and threads must be at least 1")
        if self.burn_in < 0:
            raise DomainError(f"burn_in must not be negative, got {self.burn_in}")

    def to_dict(self):
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RunStats:
    """
    Loss curves and μ statistics of one run; two runs with the same seed compare equal.
    """

    seed: int
    init: str
    activation: str
    family: str = ""
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    mu_mean: List[List[float]] = field(default_factory=list)
    mu_variance: List[List[float]] = field(default_factory=list)
    mu_relative_variance: List[float] = field(default_factory=list)
    # per epoch, μ of every temporal channel of the trained blocks: [epoch][block][channel]
    mu_channels: List[List[List[float]]] = field(default_factory=list)
    per_bin_loss: Dict[str, float] = field(default_factory=dict)
    best_epoch: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def name(self):
        prefix = f"{self.family}_" if self.family else ""
        return f"{prefix}{self.activation}_{self.init}_seed{self.seed}"

    @property
    def final_val_loss(self):
        return self.val_loss[-1] if self.val_loss else math.nan

    @property
    def best_val_loss(self):
        return min(self.val_loss) if self.val_loss else math.nan

    def mean_relative_variance(self):
        """
        Relative μ variance averaged over the trained epochs (epoch 0 is the initial state).
        """
        trained = self.mu_relative_variance[1:]
        return float(np.mean(trained)) if trained else 0.0

    def to_dict(self):
        data = asdict(self)
        data.update(
            name=self.name,
            final_val_loss=self.final_val_loss,
            best_val_loss=self.best_val_loss,
            mean_relative_variance=self.mean_relative_variance(),
        )
        return data

    @classmethod
    def from_dict(cls, data):
        fields = {key: value for key, value in data.items() if key in cls.__dataclass_fields__}
        return cls(**fields)

    def save(self, out_dir):
        """
        Write ``<name>.csv`` (one row per epoch) and ``<name>.json`` (summary) into ``out_dir``.
        """
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{self.name}.csv")
        n_blocks = len(self.mu_mean[0]) if self.mu_mean else 0
        header = ["epoch", "train_loss", "val_loss", "mu_relative_variance"]
        header += [f"mu{block + 1}_mean" for block in range(n_blocks)]
        header += [f"mu{block + 1}_variance" for block in range(n_blocks)]
        if self.mu_channels:
            header += [
                f"mu{block + 1}_ch{channel}"
                for block, mus in enumerate(self.mu_channels[0])
                for channel in range(len(mus))
            ]
        with open(csv_path, "w") as stream:
            stream.write(",".join(header) + "\n")
            for epoch in range(len(self.mu_mean)):
                row = [
                    epoch,
                    self.train_loss[epoch - 1] if epoch else "",
                    self.val_loss[epoch - 1] if epoch else "",
                    self.mu_relative_variance[epoch],
                    *self.mu_mean[epoch],
                    *self.mu_variance[epoch],
                ]
                if self.mu_channels:
                    row += [mu for mus in self.mu_channels[epoch] for mu in mus]
                stream.write(",".join(_format_cell(value) for value in row) + "\n")
        json_path = os.path.join(out_dir, f"{self.name}.json")
        with open(json_path, "w") as stream:
            json.dump(self.to_dict(), stream, sort_keys=True, indent=2)
        return csv_path, json_path


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coords(pred):
    return pred.coords if isinstance(pred, CoordinatePrediction) else torch.as_tensor(pred)


def loss(pred, label, burn_in=10):
    """
    Mean Euclidean pixel distance over batch, steps after ``burn_in`` and classes.

    ``pred`` and ``label`` are ``[B, T, classes, 2]`` (a CoordinatePrediction is unwrapped).
    The distance is smoothed as √(d² + ε²) − ε so its gradient vanishes at zero distance.
    """
    coords = _coords(pred)
    label = torch.as_tensor(label, dtype=coords.dtype)
    if coords.shape != label.shape:
        raise DomainError(f"prediction {tuple(coords.shape)} and label {tuple(label.shape)} differ in shape")
    if coords.dim() != 4:
        raise DomainError(f"coordinates must be [B, T, classes, 2], got {tuple(coords.shape)}")
    if burn_in >= coords.shape[1]:
        raise DomainError(f"burn-in of {burn_in} steps leaves nothing of a {coords.shape[1]}-step sequence")
    diff = coords[:, burn_in:] - label[:, burn_in:]
    distance = torch.sqrt((diff**2).sum(dim=-1) + DISTANCE_EPS**2) - DISTANCE_EPS
    return distance.mean()


def _check_finite(net, step):
    for name, parameter in net.named_parameters():
        if parameter.grad is not None and not torch.all(torch.isfinite(parameter.grad)):
            raise GradientError("non-finite gradient", step=step, layer=name)


def backward(net, inputs, labels, burn_in=10, step=0):
    """
    Forward, loss and reverse-mode pass for one batch.

    Returns ``(loss value, {parameter name: gradient})``; gradients are also left on the parameters.
    """
    net.zero_grad(set_to_none=True)
    pred = net(inputs)
    value = loss(pred, labels, burn_in)
    if not torch.isfinite(value):
        raise GradientError("non-finite loss", step=step, layer="loss")
    value.backward()
    _check_finite(net, step)
    gradients = {
        name: parameter.grad.detach().clone() if parameter.grad is not None else torch.zeros_like(parameter)
        for name, parameter in net.named_parameters()
    }
    return float(value.detach()), gradients


@dataclass(frozen=True)
class GradientCheckResult:
    max_rel_error: float
    n_checked: int
    n_skipped: int
    worst: Optional[str] = None
    # parameters with at least one checked coordinate of non-zero gradient
    nonzero: Tuple[str, ...] = ()


def _activity_pattern(trace):
    return torch.cat([(output > 0).flatten() for step in trace["output"] for output in step])


def gradient_check(
    net, inputs, labels, burn_in=0, eps=1e-4, coords_per_parameter=8, seed=0, atol=1e-6, surrogate=False
):
    """
    Compare autograd gradients with central finite differences on a float64 copy of ``net``.

    Coordinates whose ±``eps`` perturbation changes any ReLU or spike pattern are skipped.
    For spiking nets the analytic side is by default the surrogate-free gradient, which is
    exact on spike-stable coordinates but zero for every parameter upstream of a spike.
    With ``surrogate=True`` the spikes are replaced by the smooth function whose derivative
    is the surrogate, so the finite differences check the surrogate backward pass through
    every block and time step.
    """
    validate_positive("eps", eps)
    replica = copy.deepcopy(net).double()
    if surrogate:
        replica.smooth_spikes = True
        replica.surrogate_scale = 1.0
    else:
        replica.surrogate_scale = 0.0
    inputs = torch.as_tensor(inputs, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.float64)
    _, analytic = backward(replica, inputs, labels, burn_in)

    with torch.no_grad():
        reference = _activity_pattern(replica(inputs, record=True).trace)

    def evaluate():
        prediction = replica(inputs, record=True)
        return float(loss(prediction, labels, burn_in)), _activity_pattern(prediction.trace)

    rng = prng.stream(seed, role="gradient_check")
    worst, worst_error, n_checked, n_skipped = None, 0.0, 0, 0
    nonzero = []
    with torch.no_grad():
        for name, parameter in replica.named_parameters():
            flat = parameter.view(-1)
            count = min(coords_per_parameter, flat.numel())
            for index in rng.choice(flat.numel(), size=count, replace=False):
                index = int(index)
                original = float(flat[index])
                flat[index] = original + eps
                upper, upper_pattern = evaluate()
                flat[index] = original - eps
                lower, lower_pattern = evaluate()
                flat[index] = original
                if not (torch.equal(upper_pattern, reference) and torch.equal(lower_pattern, reference)):
                    n_skipped += 1
                    continue
                numeric = (upper - lower) / (2 * eps)
                exact = float(analytic[name].view(-1)[index])
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), atol)
                n_checked += 1
                if abs(exact) > atol and name not in nonzero:
                    nonzero.append(name)
                if error > worst_error:
                    worst, worst_error = f"{name}[{index}]", error
    log.info(
        "Gradient check: %d coordinates, %d skipped, max rel error %.3g at %s", n_checked, n_skipped, worst_error, worst
    )
    return GradientCheckResult(
        max_rel_error=worst_error, n_checked=n_checked, n_skipped=n_skipped, worst=worst, nonzero=tuple(nonzero)
    )


def split(n_sequences, val_fraction=0.2, seed=0):
    """
    Deterministic ``(train, validation)`` index split; both sides non-empty when ``n_sequences >= 2``.
    """
    validate_open_unit_interval("val_fraction", val_fraction)
    order = prng.stream(seed, role="split").permutation(n_sequences)
    n_val = int(round(val_fraction * n_sequences))
    if n_sequences >= 2:
        n_val = min(max(n_val, 1), n_sequences - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


class SequenceDataset:
    """
    All sequences of a dataset directory held in memory as ``(frames, labels)`` pairs.
    """

    def __init__(self, data_dir, workers=1):
        self.data_dir = data_dir
        self.manifest = load_manifest(data_dir)
        self.entries = self.manifest["sequences"]
        spec = self.manifest["spec"]
        self.family = spec["family"]
        self.resolution = tuple(spec["resolution"])
        self.n_frames = spec["n_frames"]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                self.items = list(pool.map(lambda entry: load_sequence(data_dir, entry), self.entries))
        else:
            self.items = [load_sequence(data_dir, entry) for entry in self.entries]
        log.debug("Loaded %d sequences from %s", len(self.items), data_dir)

    def __len__(self):
        return len(self.items)

    def check_compatible(self, net_config, burn_in):
        if self.resolution != (net_config.height, net_config.width):
            raise ConfigurationError(
                f"dataset resolution {self.resolution} does not match "
                f"network input {(net_config.height, net_config.width)}"
            )
        if len(self.manifest["shapes"]) != net_config.n_classes:
            n_shapes = len(self.manifest["shapes"])
            raise ConfigurationError(f"dataset has {n_shapes} shapes, network {net_config.n_classes}")
        if burn_in >= self.n_frames:
            raise ConfigurationError(f"burn-in {burn_in} is not shorter than the {self.n_frames}-frame sequences")

    def batch(self, indices, dtype=torch.float32):
        frames = np.stack([self.items[index][0] for index in indices])
        labels = np.stack([self.items[index][1] for index in indices])
        return torch.as_tensor(frames, dtype=dtype), torch.as_tensor(labels, dtype=dtype)


def _mu_statistics(net, initial):
    mus = net.time_constants()[:2]
    relative = ((mus - initial) / initial) ** 2
    return mus.mean(dim=1).tolist(), mus.var(dim=1, unbiased=False).tolist(), float(relative.mean()), mus.tolist()


def _mean_loss(predictor, dataset, indices, burn_in, batch_size):
    total, count = 0.0, 0
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        inputs, labels = dataset.batch(chunk)
        with torch.no_grad():
            total += float(loss(predictor(inputs), labels, burn_in)) * len(chunk)
        count += len(chunk)
    return total / count if count else math.nan


def configure_torch(threads=1, deterministic=True):
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def train(config, net_config, data_dir, out_dir=None, dataset=None):
    """
    Train a fresh network on ``data_dir`` and return its RunStats.

    The network seed is the run seed. With ``out_dir`` set the best-validation
    parameters are saved as a checkpoint and the stats as CSV plus JSON.
    """
    started = time.monotonic()
    configure_torch(config.threads, config.deterministic)
    torch.manual_seed(config.seed)
    dataset = dataset or SequenceDataset(data_dir, workers=config.threads)
    dataset.check_compatible(net_config, config.burn_in)
    if len(dataset) < 2:
        raise DatasetError(f"{data_dir}: training needs at least two sequences, found {len(dataset)}")

    net_config = replace(net_config, seed=config.seed, beta_sg=config.surrogate_beta)
    net = init_parameters(net_config)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.lr, betas=config.betas, eps=config.eps)
    train_idx, val_idx = split(len(dataset), config.val_fraction, config.seed)

    stats = RunStats(seed=config.seed, init=net_config.init, activation=net_config.activation, family=dataset.family)
    initial_mus = net.time_constants()[:2].clone()
    _record_mus(stats, net, initial_mus)
    best_state, best_loss, step = None, math.inf, 0
    for epoch in range(1, config.epochs + 1):
        net.train()
        order = prng.stream(config.seed, epoch, role="batch").permutation(train_idx).tolist()
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            inputs, labels = dataset.batch(chunk)
            value, _ = backward(net, inputs, labels, config.burn_in, step)
            torch.nn.utils.clip_grad_norm_(net.parameters(), config.clip_norm)
            optimizer.step()
            step += 1
            total += value * len(chunk)
            if not torch.all(net.time_constants() > 0):
                raise GradientError("time constant left the positive range", step=step, layer="log_mu")
        net.eval()
        stats.train_loss.append(total / len(order))
        stats.val_loss.append(_mean_loss(net_predictor(net), dataset, val_idx, config.burn_in, config.batch_size))
        _record_mus(stats, net, initial_mus)
        if stats.val_loss[-1] < best_loss:
            best_loss, stats.best_epoch = stats.val_loss[-1], epoch
            best_state = copy.deepcopy(net.state_dict())
        log.info(
            "Epoch %d/%d of %s: train %.3f, val %.3f px",
            epoch,
            config.epochs,
            stats.name,
            stats.train_loss[-1],
            stats.val_loss[-1],
        )

    if best_state is not None:
        net.load_state_dict(best_state)
    stats.per_bin_loss = _per_bin(net_predictor(net), dataset, val_idx, config.burn_in, config.batch_size)
    stats.wall_time = time.monotonic() - started
    if out_dir is not None:
        run_dir = os.path.join(out_dir, stats.name)
        os.makedirs(run_dir, exist_ok=True)
        extra = {"train": config.to_dict(), "val_indices": val_idx, "data_dir": os.path.abspath(data_dir)}
        save_checkpoint(net, os.path.join(run_dir, CHECKPOINT_NAME), extra=extra)
        stats.save(out_dir)
    log.info("Finished %s in %.1f s, best val %.3f px", stats.name, stats.wall_time, stats.best_val_loss)
    return stats


def _record_mus(stats, net, initial):
    mean, variance, relative, channels = _mu_statistics(net, initial)
    stats.mu_mean.append(mean)
    stats.mu_variance.append(variance)
    stats.mu_relative_variance.append(relative)
    stats.mu_channels.append(channels)


def net_predictor(net):
    def predict(inputs):
        return net(inputs.to(next(net.parameters()).dtype)).coords

    return predict


def random_predictor(height, width, n_classes=3, seed=0):
    """
    Scale-blind baseline: uniform random coordinates over the image, independent per step.
    """
    rng = prng.stream(seed, role="baseline")

    def predict(inputs):
        batch, steps = inputs.shape[:2]
        xs = rng.uniform(0.0, width - 1, (batch, steps, n_classes))
        ys = rng.uniform(0.0, height - 1, (batch, steps, n_classes))
        return torch.as_tensor(np.stack([xs, ys], axis=-1), dtype=inputs.dtype)

    return predict


def _per_bin(predictor, dataset, indices, burn_in, batch_size):
    groups = {}
    for index in indices:
        groups.setdefault(int(dataset.entries[index]["bin"]), []).append(index)
    return {str(b): _mean_loss(predictor, dataset, groups[b], burn_in, batch_size) for b in sorted(groups)}


def evaluate_per_scale(ckpt, data_dir, burn_in=10, batch_size=8, all_sequences=False, predictor=None, dataset=None):
    """
    Mean validation loss per scale (or velocity) bin, keyed by bin index as a string.

    ``ckpt`` is a checkpoint path or a network; a checkpoint written by ``train``
    remembers its validation indices, otherwise every sequence is evaluated.
    """
    dataset = dataset or SequenceDataset(data_dir)
    indices = list(range(len(dataset)))
    if predictor is None:
        if isinstance(ckpt, (str, os.PathLike)):
            net, extra = load_checkpoint(ckpt)
            if not all_sequences and extra.get("val_indices"):
                indices = [index for index in extra["val_indices"] if index < len(dataset)]
        else:
            net = ckpt
        dataset.check_compatible(net.config, burn_in)
        net.eval()
        predictor = net_predictor(net)
    per_bin = _per_bin(predictor, dataset, indices, burn_in, batch_size)
    log.info("Per-bin losses on %s: %s", data_dir, per_bin)
    return per_bin
