"""
IrwGAN Losses
Reweighted least-squares adversarial losses, the effective-sample-size loss,
reweighted cycle / identity losses and their assembly into a LossReport.

Conventions:
- every term is a mean over the logical batch; pass `n` when evaluating one
  micro-batch slice so partial terms add up to the full-batch value
- discriminator scores may be (n,) or (n, heads); heads are averaged per sample
- D targets: real 1, fake 0. G and beta target: 1 on fakes
"""

import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Union

import torch

from .config import ExperimentConfig
from .errors import DivergenceError, ShapeError
from .importance import WeightVector

Weights = Union[WeightVector, torch.Tensor]


def _w(beta: Weights) -> torch.Tensor:
    return beta.weights if isinstance(beta, WeightVector) else beta


def _check(name: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"{name}: length mismatch ({a.shape[0]} vs {b.shape[0]})")


def _per_sample_sq(scores: torch.Tensor, target: float) -> torch.Tensor:
    err = (scores - target) ** 2
    return err.mean(dim=1) if err.dim() == 2 else err


def _per_sample_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"reconstruction shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().flatten(1).mean(dim=1)


# ============ ADVERSARIAL ============

def adv_errors(fake_scores: torch.Tensor) -> torch.Tensor:
    """Per-sample generator error (1 - D(G(x)))^2, heads averaged"""
    return _per_sample_sq(fake_scores, 1.0)


def disc_loss(
    real_scores: torch.Tensor,
    fake_scores: torch.Tensor,
    beta_real: Weights,
    beta_fake: Weights,
    n: Optional[int] = None,
) -> torch.Tensor:
    """
    (1/n) sum b_real (D(y) - 1)^2 + (1/n) sum b_fake D(G(x))^2. Beta is held
    constant; callers score detached fakes so no gradient reaches G.
    """
    w_real, w_fake = _w(beta_real).detach(), _w(beta_fake).detach()
    _check("disc_loss real", real_scores, w_real)
    _check("disc_loss fake", fake_scores, w_fake)
    n = n or real_scores.shape[0]
    real_term = (w_real * _per_sample_sq(real_scores, 1.0)).sum() / n
    fake_term = (w_fake * _per_sample_sq(fake_scores, 0.0)).sum() / n
    return real_term + fake_term


def gen_adv_loss(fake_scores: torch.Tensor, beta: Weights, n: Optional[int] = None) -> torch.Tensor:
    """(1/n) sum b_i (1 - D(G(x_i)))^2, differentiable in both factors"""
    w = _w(beta)
    _check("gen_adv_loss", fake_scores, w)
    n = n or fake_scores.shape[0]
    return (w * adv_errors(fake_scores)).sum() / n


def ess_loss(beta: Weights) -> torch.Tensor:
    """Euclidean norm of the batch weight vector"""
    return torch.linalg.vector_norm(_w(beta))


# ============ CYCLE / IDENTITY ============

def cycle_loss(
    x: torch.Tensor,
    x_rec: torch.Tensor,
    y: torch.Tensor,
    y_rec: torch.Tensor,
    beta_x: Weights,
    beta_y: Weights,
    n: Optional[int] = None,
) -> torch.Tensor:
    """(1/n) sum b_X |x - F(G(x))|_mean + (1/n) sum b_Y |y - G(F(y))|_mean; beta held constant"""
    wx, wy = _w(beta_x).detach(), _w(beta_y).detach()
    _check("cycle_loss x", x, wx)
    _check("cycle_loss y", y, wy)
    n = n or x.shape[0]
    return (wx * _per_sample_l1(x, x_rec)).sum() / n + (wy * _per_sample_l1(y, y_rec)).sum() / n


def identity_loss(
    x: torch.Tensor,
    f_of_x: torch.Tensor,
    y: torch.Tensor,
    g_of_y: torch.Tensor,
    beta_x: Weights,
    beta_y: Weights,
    n: Optional[int] = None,
) -> torch.Tensor:
    """Same form as cycle_loss, comparing x with F(x) and y with G(y)"""
    return cycle_loss(x, f_of_x, y, g_of_y, beta_x, beta_y, n)


# ============ REPORT ============

@dataclass
class LossReport:
    """All objective terms of one optimizer step"""
    gan_g_xy: float
    gan_g_yx: float
    disc_y: float
    disc_x: float
    ess_x: float
    ess_y: float
    cyc: float
    idt: float
    total_g: float
    total_beta_x: float
    total_beta_y: float

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def check_finite(self, step: Optional[int] = None) -> None:
        for name, value in self.to_dict().items():
            if not math.isfinite(value):
                where = f" at step {step}" if step is not None else ""
                raise DivergenceError(f"non-finite loss term {name}{where}", step=step, term=name)


def assemble(terms: Dict[str, float], config: ExperimentConfig) -> LossReport:
    """
    Compose the objective totals from component terms:
    total_g = gan_g_xy + gan_g_yx + l_cyc * cyc + l_idt * idt
    total_beta_x = gan_g_xy + l_ess * ess_x, total_beta_y = gan_g_yx + l_ess * ess_y
    """
    total_g = terms["gan_g_xy"] + terms["gan_g_yx"] + config.lambda_cyc * terms["cyc"] + config.lambda_idt * terms["idt"]
    return LossReport(
        gan_g_xy=terms["gan_g_xy"],
        gan_g_yx=terms["gan_g_yx"],
        disc_y=terms["disc_y"],
        disc_x=terms["disc_x"],
        ess_x=terms["ess_x"],
        ess_y=terms["ess_y"],
        cyc=terms["cyc"],
        idt=terms["idt"],
        total_g=total_g,
        total_beta_x=terms["gan_g_xy"] + config.lambda_ess * terms["ess_x"],
        total_beta_y=terms["gan_g_yx"] + config.lambda_ess * terms["ess_y"],
    )
