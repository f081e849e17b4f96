"""
IrwGAN Configuration
Manages environment variables and the experiment configuration model.

Two layers:
- Settings: process-level knobs read from the environment / .env (IRW_*)
- ExperimentConfig: everything that defines a training run, serialized
  verbatim into each run directory as config.json
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    model_config = SettingsConfigDict(
        env_prefix="IRW_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Overrides ExperimentConfig.seed when set (config file < env < --seed)
    seed: Optional[int] = None

    runs_dir: str = "/data/runs" if os.path.exists("/data") else "./runs"
    log_level: str = "INFO"

    # Fixed CPU thread count for training (None = torch default)
    num_threads: Optional[int] = None


# Global settings instance
settings = Settings()


# ============ NETWORK SIZING ============

class NetworkConfig(BaseModel):
    """Sizing of the six networks (G, F, D_X, D_Y, beta_X, beta_Y)"""

    model_config = ConfigDict(extra="forbid")

    # Generators: reflection-padded ResNet encoder/decoder
    gen_filters: int = Field(default=64, ge=1)
    gen_blocks: int = Field(default=9, ge=0)
    gen_downsamples: int = Field(default=2, ge=0)

    # Discriminators: one PatchGAN head per entry, entry = number of stride-2 layers.
    # (3, 5) is the global/local pair used for each mapping direction.
    disc_filters: int = Field(default=64, ge=1)
    disc_heads: Tuple[int, ...] = (3, 5)

    # Importance networks: area downsample -> k4/s2/p1 convs -> fully connected
    beta_resolution: int = Field(default=64, ge=4)
    beta_filters: int = Field(default=64, ge=1)
    beta_layers: int = Field(default=4, ge=1)
    beta_hidden: int = Field(default=128, ge=1)

    @model_validator(mode="after")
    def _check_heads(self):
        if not self.disc_heads or any(d < 1 for d in self.disc_heads):
            raise ValueError("disc_heads must list at least one positive depth")
        if self.beta_resolution // (2 ** self.beta_layers) < 1:
            raise ValueError("beta_resolution too small for beta_layers stride-2 convs")
        return self


def full_network() -> NetworkConfig:
    """Full-size architecture (256px training)"""
    return NetworkConfig()


def desk_network() -> NetworkConfig:
    """Reduced architecture used for 16x16 synthetic runs"""
    return NetworkConfig(
        gen_filters=8,
        gen_blocks=2,
        gen_downsamples=1,
        disc_filters=16,
        disc_heads=(2,),
        beta_resolution=16,
        beta_filters=8,
        beta_layers=2,
        beta_hidden=16,
    )


# ============ EXPERIMENT CONFIG ============

class ExperimentConfig(BaseModel):
    """Resolved configuration of one training run"""

    model_config = ConfigDict(extra="forbid")

    # Objective weights
    lambda_cyc: float = Field(default=10.0, ge=0)
    lambda_idt: float = Field(default=10.0, ge=0)
    lambda_ess: float = Field(default=1.0, ge=0)

    # Optimization
    learning_rate: float = Field(default=1e-4, gt=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=20, ge=2)
    micro_batch: int = Field(default=20, ge=1)
    epochs: int = Field(default=100, ge=1)
    decay_start_epoch: int = Field(default=50, ge=1)
    iters_per_epoch: Optional[int] = Field(default=None, ge=1)
    sampling: Literal["cycle", "iid"] = "cycle"
    seed: int = 0

    # Which importance networks are trained (False -> beta fixed to 1)
    learn_beta_x: bool = True
    learn_beta_y: bool = True
    # beta step reuses the adversarial errors of the pre-update generator
    joint_beta_update: bool = False

    precision: Literal["float64", "float32"] = "float64"
    resolution: int = Field(default=256, ge=4)
    channels: Literal[1, 3] = 3
    network: NetworkConfig = Field(default_factory=full_network)

    # Artifacts
    checkpoint_every: int = Field(default=10, ge=1)
    sample_grid_every: int = Field(default=10, ge=0)
    eval_chunk: int = Field(default=64, ge=1)

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.batch_size % self.micro_batch != 0:
            raise ValueError(
                f"micro_batch ({self.micro_batch}) must divide batch_size ({self.batch_size})"
            )
        if self.decay_start_epoch > self.epochs:
            raise ValueError(
                f"decay_start_epoch ({self.decay_start_epoch}) exceeds epochs ({self.epochs})"
            )
        return self

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def _raise_config_error(exc: ValidationError) -> None:
    first = exc.errors()[0]
    key = ".".join(str(p) for p in first.get("loc", ()))
    if first.get("type") == "extra_forbidden":
        raise ConfigError(f"unknown config key: {key}", key=key) from exc
    raise ConfigError(f"invalid config value for {key or 'config'}: {first.get('msg')}", key=key) from exc


def build_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig, raising ConfigError"""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        _raise_config_error(exc)


def load_config(path: str) -> ExperimentConfig:
    """Load a JSON config file"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {path} ({exc})") from exc
    return build_config(data)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config: ExperimentConfig, overrides: List[str]) -> ExperimentConfig:
    """
    Apply dotted-key overrides such as "lambda_ess=0" or "network.gen_blocks=2".
    Values are parsed as JSON when possible, otherwise kept as strings.
    """
    data = config.model_dump()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item}", key=item)
        key, raw = item.split("=", 1)
        key = key.strip()
        parts = key.split(".")
        target = data
        for part in parts[:-1]:
            if not isinstance(target.get(part), dict):
                raise ConfigError(f"unknown config key: {key}", key=key)
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"unknown config key: {key}", key=key)
        target[parts[-1]] = _parse_value(raw)
    return build_config(data)


def resolve_seed(config: ExperimentConfig, flag_seed: Optional[int] = None) -> ExperimentConfig:
    """Seed precedence: config file < IRW_SEED < --seed"""
    seed = config.seed
    if settings.seed is not None:
        seed = settings.seed
    if flag_seed is not None:
        seed = flag_seed
    if seed == config.seed:
        return config
    return config.model_copy(update={"seed": seed})


def save_config(config: ExperimentConfig, path: Path) -> None:
    path.write_text(config.to_json(), encoding="utf-8")
