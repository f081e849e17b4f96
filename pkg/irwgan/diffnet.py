"""
IrwGAN Differentiable Networks
Generators, discriminators, importance backbones, the optimizer wrapper,
the learning-rate schedule and a finite-difference gradient checker.

Architectures follow the CycleGAN lineage:
- Generator: reflection-padded ResNet encoder/decoder, instance norm, tanh output
- Discriminator: one or more PatchGAN heads (global/local pair), each reduced
  to one score per sample by a spatial mean
- Importance backbone: area downsample -> k4/s2/p1 convs -> fully connected -> 1 score
"""

import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ExperimentConfig, NetworkConfig
from .errors import DivergenceError, ShapeError

logger = logging.getLogger(__name__)

INIT_STD = 0.02
NORMALIZATION = "instance"
PADDING = "reflect"

DTYPES = {"float64": torch.float64, "float32": torch.float32}


def configure_determinism(num_threads: Optional[int] = None) -> None:
    """Deterministic kernels; optional fixed CPU thread count"""
    torch.use_deterministic_algorithms(True, warn_only=True)
    if num_threads:
        torch.set_num_threads(num_threads)


# ============ SPECS ============

class NetworkKind(Enum):
    GENERATOR = "generator"
    DISCRIMINATOR = "discriminator"
    IMPORTANCE_BACKBONE = "importance-backbone"
    TEST_MLP = "test-mlp"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture + input shape; forward output shape is a pure function of both"""
    kind: NetworkKind
    channels: int
    resolution: int
    sizing: NetworkConfig = field(default_factory=NetworkConfig)
    # test-mlp only
    mlp_sizes: Tuple[int, ...] = ()

    @property
    def input_shape(self) -> Tuple[int, ...]:
        if self.kind == NetworkKind.TEST_MLP:
            return (self.mlp_sizes[0],)
        return (self.channels, self.resolution, self.resolution)

    def output_shape(self, n: int) -> Tuple[int, ...]:
        if self.kind == NetworkKind.GENERATOR:
            return (n,) + self.input_shape
        if self.kind == NetworkKind.DISCRIMINATOR:
            return (n, len(self.sizing.disc_heads))
        if self.kind == NetworkKind.IMPORTANCE_BACKBONE:
            return (n,)
        return (n, self.mlp_sizes[-1])

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind.value,
            "channels": self.channels,
            "resolution": self.resolution,
            "sizing": self.sizing.model_dump(),
            "mlp_sizes": list(self.mlp_sizes),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "NetworkSpec":
        return cls(
            kind=NetworkKind(data["kind"]),
            channels=int(data["channels"]),
            resolution=int(data["resolution"]),
            sizing=NetworkConfig.model_validate(data["sizing"]),
            mlp_sizes=tuple(data.get("mlp_sizes", ())),
        )


# ============ MODULES ============

class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3, bias=False),
            nn.InstanceNorm2d(dim),
            nn.ReLU(),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3, bias=False),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class ResnetGenerator(nn.Module):
    """Encoder / residual blocks / decoder, tanh-bounded output"""

    def __init__(self, channels: int, filters: int, blocks: int, downsamples: int):
        super().__init__()
        layers: List[nn.Module] = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(channels, filters, kernel_size=7, bias=False),
            nn.InstanceNorm2d(filters),
            nn.ReLU(),
        ]
        width = filters
        for _ in range(downsamples):
            layers += [
                nn.Conv2d(width, width * 2, kernel_size=3, stride=2, padding=1, bias=False),
                nn.InstanceNorm2d(width * 2),
                nn.ReLU(),
            ]
            width *= 2
        layers += [ResidualBlock(width) for _ in range(blocks)]
        for _ in range(downsamples):
            layers += [
                nn.ConvTranspose2d(width, width // 2, kernel_size=3, stride=2,
                                   padding=1, output_padding=1, bias=False),
                nn.InstanceNorm2d(width // 2),
                nn.ReLU(),
            ]
            width //= 2
        layers += [
            nn.ReflectionPad2d(3),
            nn.Conv2d(width, channels, kernel_size=7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


class PatchHead(nn.Module):
    """PatchGAN score map with `depth` stride-2 layers, mean-reduced per sample"""

    def __init__(self, channels: int, filters: int, depth: int):
        super().__init__()
        layers: List[nn.Module] = [
            nn.Conv2d(channels, filters, kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        ]
        width = filters
        for _ in range(1, depth):
            nxt = min(width * 2, filters * 8)
            layers += [
                nn.Conv2d(width, nxt, kernel_size=4, stride=2, padding=1, bias=False),
                nn.InstanceNorm2d(nxt),
                nn.LeakyReLU(0.2),
            ]
            width = nxt
        layers.append(nn.Conv2d(width, 1, kernel_size=3, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x).mean(dim=(1, 2, 3))


class MultiHeadDiscriminator(nn.Module):
    """Global + local discriminators for one mapping direction; scores (n, heads)"""

    def __init__(self, channels: int, filters: int, heads: Iterable[int]):
        super().__init__()
        self.heads = nn.ModuleList(PatchHead(channels, filters, d) for d in heads)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.stack([head(x) for head in self.heads], dim=1)


class ImportanceBackbone(nn.Module):
    """Unnormalized importance score, one per sample"""

    def __init__(self, channels: int, resolution: int, filters: int, layers: int, hidden: int):
        super().__init__()
        self.resolution = resolution
        convs: List[nn.Module] = []
        width_in, width = channels, filters
        for _ in range(layers):
            convs += [
                nn.Conv2d(width_in, width, kernel_size=4, stride=2, padding=1),
                nn.LeakyReLU(0.2),
            ]
            width_in, width = width, min(width * 2, filters * 8)
        self.features = nn.Sequential(*convs)
        side = resolution // (2 ** layers)
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(width_in * side * side, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.resolution or x.shape[-2] != self.resolution:
            x = F.interpolate(x, size=(self.resolution, self.resolution), mode="area")
        return self.head(self.features(x)).squeeze(1)

    def zero_head(self) -> None:
        """Zero the final layer so every sample scores the same"""
        final = self.head[-1]
        nn.init.zeros_(final.weight)
        nn.init.zeros_(final.bias)


class TestMLP(nn.Module):
    """Small tanh MLP for gradient-check and optimizer tests"""

    def __init__(self, sizes: Tuple[int, ...]):
        super().__init__()
        layers: List[nn.Module] = []
        for i in range(len(sizes) - 1):
            layers.append(nn.Linear(sizes[i], sizes[i + 1]))
            if i < len(sizes) - 2:
                layers.append(nn.Tanh())
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Zero-mean Gaussian (std 0.02) weights, zero biases"""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator, dtype=m.weight.dtype) * INIT_STD)
                if m.bias is not None:
                    m.bias.zero_()


def build_module(spec: NetworkSpec) -> nn.Module:
    s = spec.sizing
    if spec.kind == NetworkKind.GENERATOR:
        if spec.resolution % (2 ** s.gen_downsamples) != 0:
            raise ShapeError(f"resolution {spec.resolution} not divisible by 2^{s.gen_downsamples}")
        return ResnetGenerator(spec.channels, s.gen_filters, s.gen_blocks, s.gen_downsamples)
    if spec.kind == NetworkKind.DISCRIMINATOR:
        for depth in s.disc_heads:
            if spec.resolution // (2 ** depth) < 2:
                raise ShapeError(f"discriminator head of depth {depth} too deep for {spec.resolution}px")
        return MultiHeadDiscriminator(spec.channels, s.disc_filters, s.disc_heads)
    if spec.kind == NetworkKind.IMPORTANCE_BACKBONE:
        return ImportanceBackbone(spec.channels, s.beta_resolution, s.beta_filters, s.beta_layers, s.beta_hidden)
    if len(spec.mlp_sizes) < 2:
        raise ShapeError("test-mlp needs at least input and output sizes")
    return TestMLP(spec.mlp_sizes)


# ============ PARAMETERS + OPTIMIZER ============

@dataclass(frozen=True)
class AdamSettings:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "AdamSettings":
        return cls(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


class ParamVector:
    """
    Flat view over a module's trainable parameters, their gradients and the
    Adam moments. Gradients accumulate until `adam_step` consumes them.
    """

    def __init__(self, module: nn.Module, name: str, adam: AdamSettings = AdamSettings()):
        self.name = name
        self.module = module
        self.tensors = [p for p in module.parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(
            self.tensors, lr=adam.lr, betas=(adam.beta1, adam.beta2), eps=adam.eps, foreach=False
        )
        self.step_count = 0
        self.zero_grad()

    def __len__(self) -> int:
        return sum(p.numel() for p in self.tensors)

    def values(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.tensors])

    def grads(self) -> torch.Tensor:
        return torch.cat([
            (p.grad if p.grad is not None else torch.zeros_like(p)).detach().reshape(-1)
            for p in self.tensors
        ])

    def moments(self) -> Tuple[torch.Tensor, torch.Tensor]:
        m, v = [], []
        for p in self.tensors:
            state = self.optimizer.state.get(p, {})
            m.append(state.get("exp_avg", torch.zeros_like(p)).reshape(-1))
            v.append(state.get("exp_avg_sq", torch.zeros_like(p)).reshape(-1))
        return torch.cat(m), torch.cat(v)

    def set_values(self, flat: torch.Tensor) -> None:
        offset = 0
        with torch.no_grad():
            for p in self.tensors:
                n = p.numel()
                p.copy_(flat[offset:offset + n].view_as(p))
                offset += n

    def zero_grad(self) -> None:
        for p in self.tensors:
            if p.grad is None:
                p.grad = torch.zeros_like(p)
            else:
                p.grad.zero_()

    def set_lr(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr

    def state_dict(self) -> Dict:
        """Detached snapshot; later steps never write through to it"""
        return copy.deepcopy({
            "module": self.module.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "step_count": self.step_count,
        })

    def load_state_dict(self, state: Dict) -> None:
        self.module.load_state_dict(state["module"])
        self.optimizer.load_state_dict(copy.deepcopy(state["optimizer"]))
        self.step_count = int(state["step_count"])
        self.zero_grad()


@dataclass
class Network:
    """A spec, its module and its parameters"""
    name: str
    spec: NetworkSpec
    module: nn.Module
    params: ParamVector


def build_network(
    name: str,
    spec: NetworkSpec,
    seed: int,
    dtype: torch.dtype = torch.float64,
    adam: AdamSettings = AdamSettings(),
) -> Network:
    """Construct and seed-initialize a network"""
    module = build_module(spec).to(dtype)
    generator = torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    init_weights(module, generator)
    return Network(name=name, spec=spec, module=module, params=ParamVector(module, name, adam))


def forward(net: Network, x: torch.Tensor) -> torch.Tensor:
    """Shape-checked forward pass; records the graph when grad is enabled"""
    if tuple(x.shape[1:]) != net.spec.input_shape:
        raise ShapeError(f"{net.name}: expected input (n, {net.spec.input_shape}), got {tuple(x.shape)}")
    return net.module(x)


def backward(output: torch.Tensor, grad_output: Optional[torch.Tensor] = None) -> None:
    """
    Accumulate d(output)/d(params) into .grad. A consumed graph cannot be
    replayed: torch raises RuntimeError on the second call.
    """
    torch.autograd.backward(output, grad_tensors=grad_output)


def set_requires_grad(nets: Iterable[Network], flag: bool) -> None:
    for net in nets:
        for p in net.params.tensors:
            p.requires_grad_(flag)


def adam_step(params: ParamVector, lr: Optional[float] = None) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterwards"""
    for p in params.tensors:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise DivergenceError(f"divergence detected in {params.name}", term=params.name)
    if lr is not None:
        params.set_lr(lr)
    params.optimizer.step()
    params.step_count += 1
    params.zero_grad()


def lr_schedule(epoch: int, config: ExperimentConfig) -> float:
    """
    Constant through decay_start_epoch, then linear towards zero:
    lr(e) = base * min(1, (epochs + 1 - e) / (epochs + 1 - decay_start)).
    Positive through the last epoch, zero immediately after.
    """
    span = config.epochs + 1 - config.decay_start_epoch
    factor = min(1.0, (config.epochs + 1 - epoch) / span)
    return config.learning_rate * max(0.0, factor)


# ============ GRADIENT CHECK ============

def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: ParamVector,
    h: float = 1e-5,
    max_coords: Optional[int] = 50,
    seed: int = 0,
    backward_fn: Optional[Callable[[], None]] = None,
    abs_floor: float = 1e-8,
    kink_rtol: Optional[float] = None,
) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    `backward_fn` populates .grad when the analytic path is not simply
    `loss_fn().backward()` (e.g. micro-batch accumulation). Large parameter
    vectors are probed on a seeded random subset of `max_coords` coordinates.

    With `kink_rtol` set, a coordinate whose forward and backward one-sided
    differences disagree by more than kink_rtol (relative) straddles a ReLU
    kink and is skipped. At least half of the probed coordinates must survive,
    otherwise the result is inf.
    """
    params.zero_grad()
    if backward_fn is None:
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise DivergenceError("non-finite loss in grad_check")
        loss.backward()
    else:
        backward_fn()
    analytic = params.grads().clone()
    params.zero_grad()

    base = params.values().clone()
    total = base.numel()
    if max_coords is not None and total > max_coords:
        rng = np.random.default_rng(seed)
        coords = np.sort(rng.choice(total, size=max_coords, replace=False))
    else:
        coords = np.arange(total)

    worst = 0.0
    skipped = 0
    with torch.no_grad():
        f_zero = loss_fn().item() if kink_rtol is not None else 0.0
        for i in coords:
            probe = base.clone()
            probe[i] += h
            params.set_values(probe)
            f_plus = loss_fn()
            probe[i] -= 2 * h
            params.set_values(probe)
            f_minus = loss_fn()
            if not (torch.isfinite(f_plus) and torch.isfinite(f_minus)):
                raise DivergenceError("non-finite loss in grad_check")
            if kink_rtol is not None:
                ahead = (f_plus.item() - f_zero) / h
                behind = (f_zero - f_minus.item()) / h
                if abs(ahead - behind) > kink_rtol * max(abs(ahead), abs(behind), abs_floor):
                    skipped += 1
                    continue
            numeric = (f_plus - f_minus).item() / (2 * h)
            a = analytic[i].item()
            rel = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
            worst = max(worst, rel)
    params.set_values(base)
    if skipped:
        logger.debug(f"[GradCheck] {params.name}: skipped {skipped}/{len(coords)} coordinates at kinks")
    if 2 * skipped > len(coords):
        return float("inf")
    return worst
