"""
Four-block scale-channel network.

Blocks 1 to 3 are replicated over ``K`` temporal scale channels (grouped
convolutions keep the channels apart from block 2 on), each followed by a
temporal activation. Block 4 merges all channels into one map per shape class
and a soft-argmax head turns every map into an ``(x, y)`` coordinate.

Time constants are stored as log μ, in units of time steps.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np
import torch
from torch import nn

from strf import formats
from strf.exceptions import ConfigurationError, DomainError, FormatError
from strf.spatial_kernels import DEFAULT_FAMILIES, DEFAULT_SCALES, DEFAULT_SKEWS, build_bank
from strf.temporal_kernels import tau_schedule
from strf.validators import validate_choice, validate_odd, validate_positive

log = logging.getLogger(__name__)

ACTIVATIONS = ("li", "lif", "relu_sf", "relu_mf")
INITS = ("rf", "uniform")
TEMPORAL_ACTIVATIONS = ("li", "lif")
N_ORIENTATIONS = 4


def normalize_choice(value):
    """
    ``"ReLU-SF"`` → ``"relu_sf"``
    """
    return str(value).lower().replace("-", "_")


@dataclass(frozen=True)
class NetworkConfig:
    activation: str = "li"
    n_temporal_channels: int = 4
    mf_frames: int = 8
    widths: Tuple[int, int, int] = (16, 32, 32)
    kernel_size: int = 9
    init: str = "rf"
    mu_range: Tuple[float, float] = (1.0, 4.0)
    mu_init: Optional[Tuple[float, ...]] = None
    theta_thr: float = 1.0
    beta_sg: float = 10.0
    head_beta: float = 1.0
    head_mu: float = 1.0
    in_channels: int = 2
    height: int = 64
    width: int = 64
    n_classes: int = 3
    bank_supersample: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "activation", normalize_choice(self.activation))
        object.__setattr__(self, "init", normalize_choice(self.init))
        object.__setattr__(self, "widths", tuple(int(width) for width in self.widths))
        object.__setattr__(self, "mu_range", tuple(float(mu) for mu in self.mu_range))
        if self.mu_init is not None:
            object.__setattr__(self, "mu_init", tuple(float(mu) for mu in self.mu_init))
        validate_choice("activation", self.activation, ACTIVATIONS)
        validate_choice("init", self.init, INITS)
        validate_odd("kernel_size", self.kernel_size)
        if self.n_temporal_channels < 1 or self.mf_frames < 1 or self.in_channels < 1:
            raise DomainError("channel counts and mf_frames must be at least 1")
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise DomainError(f"widths must be three positive integers, got {self.widths}")
        if not 0 < self.mu_range[0] <= self.mu_range[1]:
            raise DomainError(f"mu_range must satisfy 0 < low <= high, got {self.mu_range}")
        if self.mu_init is not None:
            if len(self.mu_init) != self.n_temporal_channels:
                raise ConfigurationError("mu_init needs one value per temporal channel")
            for mu in self.mu_init:
                validate_positive("mu_init", mu)
        if not self.theta_thr > 0:
            raise DomainError(f"theta_thr must be positive, got {self.theta_thr}")
        validate_positive("beta_sg", self.beta_sg)
        validate_positive("head_beta", self.head_beta)
        validate_positive("head_mu", self.head_mu)

    @property
    def input_channels(self):
        """
        Channels seen by block 1; only ReLU-MF stacks several frames.
        """
        if self.activation == "relu_mf":
            return self.in_channels * self.mf_frames
        return self.in_channels

    @classmethod
    def full(cls, **overrides):
        """
        Full-scale widths: one channel per bank kernel in every block.
        """
        return cls(**dict(dict(widths=(144, 144, 144), height=300, width=300), **overrides))

    def to_dict(self):
        data = asdict(self)
        data["widths"] = list(self.widths)
        data["mu_range"] = list(self.mu_range)
        data["mu_init"] = None if self.mu_init is None else list(self.mu_init)
        data["theta_thr"] = self.theta_thr if math.isfinite(self.theta_thr) else "inf"
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("theta_thr") == "inf":
            data["theta_thr"] = math.inf
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**data)


class SpikeFunction(torch.autograd.Function):
    """
    Heaviside spike with fast-sigmoid surrogate derivative scale/(β|x| + 1)².

    With ``smooth`` the forward pass returns ½ + scale·x/(β|x| + 1) instead, the
    function whose exact derivative is the surrogate.
    """

    @staticmethod
    def forward(ctx, x, beta, scale, smooth=False):
        ctx.save_for_backward(x)
        ctx.beta = beta
        ctx.scale = scale
        if smooth:
            return 0.5 + scale * x / (beta * x.abs() + 1.0)
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_output):
        (x,) = ctx.saved_tensors
        surrogate = ctx.scale / (ctx.beta * x.abs() + 1.0) ** 2
        return grad_output * surrogate, None, None, None


def coordinate_transform(maps, beta=1.0):
    """
    Soft-argmax: per map, the expectation of pixel coordinates under softmax(β·map).

    Returns ``[..., 2]`` holding ``(x, y)``; numpy input gives numpy output.
    """
    validate_positive("beta", beta)
    as_numpy = isinstance(maps, np.ndarray)
    maps = torch.as_tensor(maps)
    if not maps.is_floating_point():
        maps = maps.double()
    *lead, height, width = maps.shape
    weights = torch.softmax(beta * maps.reshape(*lead, height * width), dim=-1).reshape(*lead, height, width)
    xs = torch.arange(width, dtype=maps.dtype, device=maps.device)
    ys = torch.arange(height, dtype=maps.dtype, device=maps.device)
    x = (weights.sum(dim=-2) * xs).sum(dim=-1)
    y = (weights.sum(dim=-1) * ys).sum(dim=-1)
    coords = torch.stack([x, y], dim=-1)
    return coords.detach().numpy() if as_numpy else coords


@dataclass
class CoordinatePrediction:
    """
    Predicted ``(x, y)`` per step and shape class: ``coords`` is ``[B, T, classes, 2]``.
    """

    coords: torch.Tensor
    trace: Optional[dict] = field(default=None, repr=False)

    def numpy(self):
        return self.coords.detach().cpu().numpy()


class ScaleChannelNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        K = config.n_temporal_channels
        w1, w2, w3 = config.widths
        k = config.kernel_size
        self.block1 = nn.Conv2d(config.input_channels, K * w1, k, padding=k // 2)
        self.block2 = nn.Conv2d(K * w1, K * w2, k, padding=k // 2, groups=K)
        self.block3 = nn.Conv2d(K * w2, K * w3, k, padding=k // 2, groups=K)
        self.block4 = nn.Conv2d(K * w3, config.n_classes, k, padding=k // 2)
        self.log_mu1 = nn.Parameter(torch.zeros(K))
        self.log_mu2 = nn.Parameter(torch.zeros(K))
        self.register_buffer("log_mu3", torch.zeros(K))
        self.register_buffer("log_head_mu", torch.tensor(math.log(config.head_mu)))
        self.surrogate_scale = 1.0
        self.smooth_spikes = False
        self._initialize()

    @property
    def blocks(self):
        return (self.block1, self.block2, self.block3)

    def time_constants(self):
        """
        Per-block μ of the temporal scale channels, ``[3, K]``.
        """
        return torch.exp(torch.stack([self.log_mu1, self.log_mu2, self.log_mu3])).detach()

    def _initialize(self):
        config = self.config
        generator = torch.Generator().manual_seed(int(config.seed))
        with torch.no_grad():
            if config.init == "rf":
                self._copy_bank()
            else:
                _uniform_(self.block1.weight, generator)
                _uniform_(self.block2.weight, generator)
            _uniform_(self.block3.weight, generator)
            _uniform_(self.block4.weight, generator)
            for block in (self.block1, self.block2, self.block3, self.block4):
                block.bias.zero_()

            K = config.n_temporal_channels
            low, high = config.mu_range
            if config.init == "rf":
                mus = torch.tensor(self._schedule_mus(), dtype=self.log_mu1.dtype)
                block3 = torch.full((K,), float(mus.min()), dtype=mus.dtype)
            else:
                mus = _log_uniform(K, low, high, generator)
                block3 = _log_uniform(K, low, high, generator)
            if config.mu_init is not None:
                mus = torch.tensor(config.mu_init, dtype=self.log_mu1.dtype)
                block3 = torch.full((K,), float(mus.min()), dtype=mus.dtype)
            self.log_mu1.copy_(torch.log(mus))
            self.log_mu2.copy_(torch.log(mus))
            self.log_mu3.copy_(torch.log(block3))
        log.debug("Initialised %s network with μ %s", config.init, self.time_constants()[0].tolist())

    def _schedule_mus(self):
        """
        μ log-spaced over ``mu_range`` from the geometric τ schedule.
        """
        K = self.config.n_temporal_channels
        low, high = self.config.mu_range
        c = (high / low) ** (1.0 / (K - 1)) if K > 1 and high > low else 2.0
        schedule = tau_schedule(K, c, high**2)
        return schedule.mus if K > 1 else (low,)

    def _copy_bank(self):
        config = self.config
        k = config.kernel_size
        bank = build_bank(
            N_ORIENTATIONS,
            DEFAULT_SCALES,
            DEFAULT_SKEWS,
            DEFAULT_FAMILIES,
            grid_size=(k, k),
            supersample=config.bank_supersample,
        )
        kernels = torch.as_tensor(bank.weights(), dtype=self.block1.weight.dtype)
        n_kernels = kernels.shape[0]
        K = config.n_temporal_channels
        w1, w2, _ = config.widths
        for width in (w1, w2):
            if width > n_kernels:
                raise ConfigurationError(f"block width {width} exceeds the {n_kernels}-kernel bank")
        for c in range(K):
            for o in range(w1):
                self.block1.weight[c * w1 + o] = kernels[o * n_kernels // w1]
            for o in range(w2):
                self.block2.weight[c * w2 + o] = kernels[o * n_kernels // w2] / w1

    def _block_decay(self, index, width):
        log_mu = (self.log_mu1, self.log_mu2, self.log_mu3)[index]
        mu = torch.exp(log_mu).repeat_interleave(width)
        return torch.exp(-1.0 / mu).view(1, -1, 1, 1)

    def _activate(self, index, z, state):
        """
        Return ``(output, new_state)`` for block ``index`` given pre-activation ``z``.
        """
        kind = self.config.activation
        if kind not in TEMPORAL_ACTIVATIONS:
            return torch.relu(z), None
        decay = self._block_decay(index, self.config.widths[index])
        u = (1.0 - decay) * z if state is None else decay * state + (1.0 - decay) * z
        theta = self.config.theta_thr
        if kind == "li" or math.isinf(theta):
            return torch.relu(u), u
        spikes = SpikeFunction.apply(u - theta, self.config.beta_sg, self.surrogate_scale, self.smooth_spikes)
        return spikes, u - spikes * theta

    def _stack_frames(self, inputs, t):
        config = self.config
        if config.activation != "relu_mf":
            return inputs[:, t]
        frames = []
        for lag in range(config.mf_frames - 1, -1, -1):
            if t - lag >= 0:
                frames.append(inputs[:, t - lag])
            else:
                frames.append(torch.zeros_like(inputs[:, 0]))
        return torch.cat(frames, dim=1)

    def forward(self, inputs, record=False):
        """
        ``inputs`` is ``[B, T, C, H, W]``; returns a CoordinatePrediction with ``[B, T, classes, 2]``.
        """
        config = self.config
        states = [None, None, None]
        coords = []
        smoothed = None
        head_decay = torch.exp(-1.0 / torch.exp(self.log_head_mu))
        trace = {"pre": [], "membrane": [], "output": [], "maps": []} if record else None
        for t in range(inputs.shape[1]):
            x = self._stack_frames(inputs, t)
            step_pre, step_membrane, step_output = [], [], []
            for index, block in enumerate(self.blocks):
                z = block(x)
                x, states[index] = self._activate(index, z, states[index])
                if record:
                    step_pre.append(z)
                    step_membrane.append(states[index])
                    step_output.append(x)
            maps = self.block4(x)
            current = coordinate_transform(maps, config.head_beta)
            if config.activation in TEMPORAL_ACTIVATIONS:
                smoothed = current if smoothed is None else head_decay * smoothed + (1.0 - head_decay) * current
                current = smoothed
            coords.append(current)
            if record:
                trace["pre"].append(step_pre)
                trace["membrane"].append(step_membrane)
                trace["output"].append(step_output)
                trace["maps"].append(maps)
        return CoordinatePrediction(coords=torch.stack(coords, dim=1), trace=trace)


def _uniform_(weight, generator):
    """
    U(−√(1/fan_in), √(1/fan_in)) in place; fan_in counts inputs per group.
    """
    fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
    bound = math.sqrt(1.0 / fan_in)
    weight.uniform_(-bound, bound, generator=generator)


def _log_uniform(n, low, high, generator):
    draws = torch.rand(n, generator=generator, dtype=torch.float64)
    return torch.exp(math.log(low) + draws * (math.log(high) - math.log(low))).float()


def init_parameters(config):
    """
    Build the network for ``config`` with RF or uniform initial parameters.
    """
    net = ScaleChannelNet(config)
    log.info(
        "Initialised %s/%s network with %d parameters",
        config.activation,
        config.init,
        sum(parameter.numel() for parameter in net.parameters()),
    )
    return net


def as_input_tensor(inputs, config, dtype=torch.float32):
    """
    Coerce a FrameTensor, EventStream, ``[T, C, H, W]`` or ``[B, T, C, H, W]`` array into a batch tensor.
    """
    from strf.event_simulator import EventStream
    from strf.strf_engine import FrameTensor

    if isinstance(inputs, EventStream):
        inputs = inputs.rasterize()
    elif isinstance(inputs, FrameTensor):
        inputs = inputs.data
    tensor = torch.as_tensor(np.asarray(inputs) if not torch.is_tensor(inputs) else inputs).to(dtype)
    if tensor.dim() == 4:
        tensor = tensor.unsqueeze(0)
    if tensor.dim() != 5:
        raise ConfigurationError(f"network input must be [B, T, C, H, W], got {tuple(tensor.shape)}")
    expected = (config.in_channels, config.height, config.width)
    if tuple(tensor.shape[2:]) != expected:
        raise ConfigurationError(f"input frames {tuple(tensor.shape[2:])} do not match config {expected}")
    return tensor


def forward(net, inputs, record=False):
    """
    Run ``net`` on frames or a rasterised event stream.
    """
    dtype = next(net.parameters()).dtype
    return net(as_input_tensor(inputs, net.config, dtype=dtype), record=record)


def save_checkpoint(net, path, extra=None):
    state = net.state_dict()
    names = list(state)
    header = {
        "config": net.config.to_dict(),
        "names": names,
        "shapes": [list(state[name].shape) for name in names],
        "extra": extra or {},
    }
    formats.write_framed(path, formats.CHECKPOINT_MAGIC, header, [state[name].detach().cpu().numpy() for name in names])
    log.info("Saved checkpoint %s", path)


def load_checkpoint(path):
    """
    Return ``(net, extra)`` from a checkpoint file.
    """
    header, blob = formats.read_framed(path, formats.CHECKPOINT_MAGIC)
    try:
        config = NetworkConfig.from_dict(header["config"])
        names, shapes = header["names"], [tuple(shape) for shape in header["shapes"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header: {exc}") from exc
    arrays = formats.split_blob(blob, shapes, path)
    net = ScaleChannelNet(config)
    state = {name: torch.as_tensor(np.array(array)) for name, array in zip(names, arrays)}
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ConfigurationError(f"{path}: checkpoint does not match its config: {exc}") from exc
    return net, header.get("extra", {})
