"""Scalar training objectives for the three networks.

All functions are pure and differentiable, operating on torch tensors in
NCHW layout (a leading batch dim is optional for single samples shaped
(C, H, W) / (1, H, W)). Reconstruction-style L1 terms are per-element
means, which keeps the loss weights resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DegenerateMaskError, InvalidAnnotationError

BCE_EPS = 1e-7


@dataclass
class ContentHyperParams:
    """Weights for the content-completion objective."""

    lambda_refine: float = 1.2
    lambda_coarse: float = 1.2
    lambda_adv: float = 1e-3
    beta_visible: float = 5.0
    sigma_gp: float = 10.0
    # Alternative reading of the reconstruction loss: normalize the visible
    # and invisible terms by their own mask areas instead of a global mean.
    region_normalized: bool = False

    def __post_init__(self):
        for name in ("lambda_refine", "lambda_coarse", "lambda_adv", "beta_visible", "sigma_gp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class CompHyperParams:
    """Weights for the compositing objective; lambda_mask is step-scheduled."""

    lambda_mask_initial: float = 50.0
    lambda_mask_late: float = 5.0
    lambda_reg: float = 0.005
    gamma: float = 2.0

    def lambda_mask(self, step: int, switch_step: int) -> float:
        return self.lambda_mask_initial if step < switch_step else self.lambda_mask_late


@dataclass
class ShapeHyperParams:
    """Inside-object weighting for the mask-prediction objective."""

    omega: float = 5.0


def _bdims(t: torch.Tensor):
    # dims to reduce per sample: everything but the leading batch dim
    return tuple(range(1, t.ndim))


def refine_recon_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    m_vis: torch.Tensor,
    m_inv: torch.Tensor,
    beta: float = 5.0,
    region_normalized: bool = False,
) -> torch.Tensor:
    """Masked L1: |pred-target| weighted 1 on the hidden region, beta on the visible."""
    diff = (pred - target).abs()
    if region_normalized:
        inv = (diff * m_inv).sum(dim=_bdims(diff)) / (m_inv.sum(dim=_bdims(m_inv)) * diff.shape[-3]).clamp(min=1.0)
        vis = (diff * m_vis).sum(dim=_bdims(diff)) / (m_vis.sum(dim=_bdims(m_vis)) * diff.shape[-3]).clamp(min=1.0)
        return (inv + beta * vis).mean()
    return (diff * m_inv + beta * diff * m_vis).mean()


# The coarse stage uses the identical formula on its own prediction.
coarse_recon_loss = refine_recon_loss


def adv_g_loss(critic_scores: torch.Tensor) -> torch.Tensor:
    """Generator adversarial term: negative mean critic score on fakes."""
    if critic_scores.numel() == 0:
        raise ValueError("adv_g_loss: empty batch")
    return -critic_scores.mean()


def gradient_penalty(critic, interpolates: torch.Tensor) -> torch.Tensor:
    """Mean squared deviation of the critic's input-gradient norm from 1."""
    x = interpolates.detach().requires_grad_(True)
    scores = critic(x)
    grads = torch.autograd.grad(
        scores.sum(), x, create_graph=True, retain_graph=True
    )[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def critic_loss(
    fake_scores: torch.Tensor,
    real_scores: torch.Tensor,
    gp_inputs: torch.Tensor,
    critic,
    sigma_gp: float = 10.0,
) -> torch.Tensor:
    """Wasserstein critic objective with gradient penalty on the interpolates."""
    return (
        fake_scores.mean()
        - real_scores.mean()
        + sigma_gp * gradient_penalty(critic, gp_inputs)
    )


def make_interpolates(real: torch.Tensor, fake: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """eps*real + (1-eps)*fake with per-sample eps in [0, 1]."""
    eps = eps.view(-1, *([1] * (real.ndim - 1)))
    return eps * real + (1.0 - eps) * fake


def content_total_loss(
    refine: torch.Tensor, coarse: torch.Tensor, adv: torch.Tensor, hp: ContentHyperParams
) -> torch.Tensor:
    return hp.lambda_refine * refine + hp.lambda_coarse * coarse + hp.lambda_adv * adv


def comp_recon_loss(composite: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error between the blended composite and the original."""
    if composite.shape != target.shape:
        raise ValueError("comp_recon_loss: shape mismatch")
    return (composite - target).abs().mean()


def mask_loss(
    alpha: torch.Tensor, m: torch.Tensor, positive_mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Push alpha toward the object segment m, both halves area-normalized.

    `positive_mask` optionally replaces m in the inside-object term only
    (used with eroded masks late in compositing training).
    """
    if positive_mask is None:
        positive_mask = m
    dims = _bdims(m)
    pos_area = positive_mask.sum(dim=dims)
    neg_area = (1.0 - m).sum(dim=dims)
    if (pos_area <= 0).any() or (neg_area <= 0).any():
        raise DegenerateMaskError("mask_loss: mask is empty or full")
    term1 = (positive_mask * (1.0 - alpha)).sum(dim=dims) / (2.0 * pos_area)
    term2 = ((1.0 - m) * alpha).sum(dim=dims) / (2.0 * neg_area)
    return (term1 + term2).mean()


def reg_loss(alpha: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Sparsity prior on alpha: gamma*L1 plus a sigmoid-shaped approximate L0."""
    return (gamma * alpha + 2.0 * torch.sigmoid(5.0 * alpha) - 1.0).mean()


def comp_total_loss(
    recon: torch.Tensor,
    mask: torch.Tensor,
    reg: torch.Tensor,
    hp: CompHyperParams,
    lambda_mask: float,
) -> torch.Tensor:
    return recon + lambda_mask * mask + hp.lambda_reg * reg


def _bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def weighted_bce(m1: torch.Tensor, m2: torch.Tensor, omega: float = 5.0) -> torch.Tensor:
    """omega*BCE(m1*m2, m2) + BCE((1-m1)*(1-m2), 1-m2), per-pixel means."""
    return omega * _bce(m1 * m2, m2) + _bce((1.0 - m1) * (1.0 - m2), 1.0 - m2)


def shape_total_loss(
    pred_vis: torch.Tensor,
    pred_amodal: torch.Tensor,
    m_vis: torch.Tensor,
    m_amodal: torch.Tensor,
    omega: float = 5.0,
) -> torch.Tensor:
    """Sum of weighted BCE terms for the visible and amodal mask heads."""
    if ((m_vis > 0.5) & (m_amodal < 0.5)).any():
        raise InvalidAnnotationError("visible mask not contained in amodal mask")
    return weighted_bce(pred_vis, m_vis, omega) + weighted_bce(pred_amodal, m_amodal, omega)
