"""Loss terms of the GAN-CIRCLE objective.

All image losses take (N, 1, H, W) tensors and reduce by the mean over
pixels and batch, so their weights do not depend on patch size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch

COMPONENTS = ("adv_G", "adv_F", "gp_X", "gp_Y", "cyc", "idt", "jst", "sup")


@dataclass
class LossWeights:
    lambda1: float = 1.0  # cycle
    lambda2: float = 0.5  # identity
    lambda3: float = 0.001  # joint sparsifying transform
    lambda_gp: float = 10.0
    tau: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be a finite nonnegative number, got {v}")
        if self.tau > 1:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")


@dataclass
class LossBundle:
    adv_G: float = 0.0
    adv_F: float = 0.0
    gp_X: float = 0.0
    gp_Y: float = 0.0
    cyc: float = 0.0
    idt: float = 0.0
    jst: float = 0.0
    sup: float = 0.0
    total: float = 0.0

    def as_row(self) -> list:
        return [getattr(self, k) for k in COMPONENTS + ("total",)]

    def first_nonfinite(self):
        for k in COMPONENTS + ("total",):
            if not math.isfinite(getattr(self, k)):
                return k
        return None


def mae(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def critic_loss(real_scores, fake_scores, gp, lambda_gp: float):
    """Negated Wasserstein estimate plus the weighted gradient penalty (minimised by the critic)."""
    return -real_scores.mean() + fake_scores.mean() + lambda_gp * gp


def gradient_penalty(critic, real, fake, u):
    """E[(||grad critic(y~)||_2 - 1)^2] on y~ = u*real + (1-u)*fake.

    ``u`` holds one draw per sample. The graph is kept so the penalty can be
    back-propagated into the critic parameters.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real and fake batches differ in shape: {tuple(real.shape)} vs {tuple(fake.shape)}")
    u = torch.as_tensor(u, dtype=real.dtype).reshape(-1, *([1] * (real.dim() - 1)))
    if u.shape[0] != real.shape[0]:
        raise ValueError(f"need one uniform draw per sample, got {u.shape[0]} for {real.shape[0]}")
    mixed = u * real + (1 - u) * fake
    if not mixed.requires_grad:
        mixed = mixed.requires_grad_(True)
    scores = critic(mixed)
    if not scores.requires_grad:
        raise RuntimeError("critic output is not differentiable with respect to its input")
    (grad,) = torch.autograd.grad(scores.sum(), mixed, create_graph=True, allow_unused=True)
    if grad is None:
        # output independent of the input: zero gradient everywhere
        grad = torch.zeros_like(mixed)
    norms = grad.flatten(1).norm(dim=1)
    return ((norms - 1) ** 2).mean()


def generator_adv_loss(fake_scores):
    return -fake_scores.mean()


def cycle_loss(x, FGx, y, GFy):
    return mae(FGx, x) + mae(GFy, y)


def identity_loss(Gy, y, Fx, x):
    return mae(Gy, y) + mae(Fx, x)


def tv(image, normalize: bool = True):
    """Anisotropic total variation: |horizontal| + |vertical| forward differences.

    Border pixels contribute only the differences that exist. With
    ``normalize`` the sum is divided by the number of pixels in the batch.
    """
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise ValueError(f"tv needs at least a 2x2 image, got {tuple(image.shape[-2:])}")
    dh = (image[..., :, 1:] - image[..., :, :-1]).abs().sum()
    dv = (image[..., 1:, :] - image[..., :-1, :]).abs().sum()
    total = dh + dv
    return total / image.numel() if normalize else total


def jst_loss(Gx, y, tau: float):
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    loss = tau * tv(Gx)
    if tau < 1.0:
        if Gx.shape != y.shape:
            raise ValueError(f"shape mismatch: {tuple(Gx.shape)} vs {tuple(y.shape)}")
        loss = loss + (1.0 - tau) * tv(y - Gx)
    return loss


def supervision_loss(Gx, y, Fy, x):
    return mae(Gx, y) + mae(Fy, x)


_REQUIRED = {
    "unsupervised": ("adv_G", "adv_F", "cyc", "idt", "jst"),
    "semi": ("adv_G", "adv_F", "cyc", "idt", "jst", "sup"),
    "supervised": ("adv_G", "adv_F", "cyc", "idt", "jst", "sup"),
}


def total_objective(components: dict, weights: LossWeights, mode: str) -> LossBundle:
    """Weighted generator objective; ``sup`` enters with weight 1 outside unsupervised mode.

    Values may be floats or scalar tensors; tensors keep their graph in the
    returned bundle's ``total``.
    """
    if mode not in _REQUIRED:
        raise ValueError(f"unknown mode {mode!r}")
    missing = [k for k in _REQUIRED[mode] if k not in components]
    if missing:
        raise KeyError(f"mode {mode!r} requires loss components {missing}")
    c = {k: components.get(k, 0.0) for k in COMPONENTS}
    total = (
        c["adv_G"] + c["adv_F"]
        + weights.lambda1 * c["cyc"]
        + weights.lambda2 * c["idt"]
        + weights.lambda3 * c["jst"]
    )
    if mode != "unsupervised":
        total = total + c["sup"]
    return LossBundle(**c, total=total)


def recombine(row: dict, weights: LossWeights, mode: str) -> float:
    """Recompute a logged total from its logged components."""
    return float(total_objective({k: float(row[k]) for k in COMPONENTS}, weights, mode).total)
