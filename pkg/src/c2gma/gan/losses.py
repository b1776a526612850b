"""Loss terms of the conditional cycle-consistent objective.

Discriminators return raw scores; the losses pass them through a sigmoid and
take logs clamped to [LOG_EPS, 1]. With every term minimised, the
discriminator drives the sigmoid towards 1 on real inputs and towards 0 on
translated ones, while the generator pushes it towards 1 on its outputs.
"""

from __future__ import annotations

from typing import NamedTuple

import torch

from ..errors import EmptyDatasetError, ShapeError

LOG_EPS = 1e-7


class Batch(NamedTuple):
    images: torch.Tensor  # (B, 1, H, W)
    labels: torch.Tensor  # (B,) class indices, or (B, C) soft labels


class AdversarialLosses(NamedTuple):
    gen_s: torch.Tensor
    gen_t: torch.Tensor
    disc_s: torch.Tensor
    disc_t: torch.Tensor


def clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(p.clamp(LOG_EPS, 1.0))


def _check(batch: Batch, name: str):
    if batch.images.shape[0] == 0:
        raise EmptyDatasetError(f"{name} batch is empty")


def gradient_penalty(disc, real, fake, labels, embedding=None, *, squared: bool = True,
                     u: torch.Tensor | None = None, generator: torch.Generator | None = None) -> torch.Tensor:
    """Penalise the input-gradient norm of ``disc`` at random real/fake interpolates.

    One interpolation weight is drawn per sample (or passed as ``u``); the
    conditioning label is the real sample's. ``squared=False`` gives the
    unsquared ``mean(|grad| - 1)`` variant.
    """
    if real.shape != fake.shape:
        raise ShapeError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} batches differ")
    if u is None:
        u = torch.rand(real.shape[0], generator=generator, dtype=real.dtype, device=real.device)
    u = u.reshape(-1, *([1] * (real.dim() - 1)))
    x_hat = (u * real + (1 - u) * fake).detach().requires_grad_(True)
    cond = embedding(labels) if embedding is not None else labels
    score = disc(x_hat, cond)
    (grad,) = torch.autograd.grad(score.sum(), x_hat, create_graph=True)
    norm = grad.flatten(1).norm(dim=1)
    gap = norm - 1.0
    return (gap ** 2).mean() if squared else gap.mean()


def translate(bundle, src: Batch, tgt: Batch):
    """Returns (fake_t, fake_s): source->target and target->source translations."""
    fake_t = bundle.G_t(src.images, bundle.e_s(src.labels))
    fake_s = bundle.G_s(tgt.images, bundle.e_t(tgt.labels))
    return fake_t, fake_s


def generator_losses(bundle, src: Batch, tgt: Batch, fakes=None, *, non_saturating: bool = False,
                     detach_disc_condition: bool = False):
    """(L_Gs, L_Gt, fake_t, fake_s). As written: mean log(1 - D(G(x)))."""
    fake_t, fake_s = fakes if fakes is not None else translate(bundle, src, tgt)
    cond_t = bundle.e_t(src.labels)
    cond_s = bundle.e_s(tgt.labels)
    if detach_disc_condition:
        cond_t, cond_s = cond_t.detach(), cond_s.detach()
    score_t = bundle.D_t(fake_t, cond_t)
    score_s = bundle.D_s(fake_s, cond_s)
    if non_saturating:
        gen_t = -clamped_log(torch.sigmoid(score_t)).mean()
        gen_s = -clamped_log(torch.sigmoid(score_s)).mean()
    else:
        gen_t = clamped_log(torch.sigmoid(-score_t)).mean()
        gen_s = clamped_log(torch.sigmoid(-score_s)).mean()
    return gen_s, gen_t, fake_t, fake_s


def discriminator_losses(bundle, src: Batch, tgt: Batch, fake_t, fake_s, lambda_gp: float = 0.01, *,
                         squared_gp: bool = True, non_saturating: bool = False,
                         generator: torch.Generator | None = None):
    """(L_Ds, L_Dt), gradient penalty included with weight ``lambda_gp``.

    As written, both terms flatten out exactly where the discriminator is
    wrong. ``non_saturating`` swaps in -log(sigmoid) on real and
    -log(1 - sigmoid) on translated inputs: same optimum, steady gradients.
    """
    sign = -1.0 if non_saturating else 1.0
    e_s_src = bundle.e_s(src.labels)
    e_t_tgt = bundle.e_t(tgt.labels)
    real_s = sign * clamped_log(torch.sigmoid(-sign * bundle.D_s(src.images, e_s_src))).mean()
    real_t = sign * clamped_log(torch.sigmoid(-sign * bundle.D_t(tgt.images, e_t_tgt))).mean()
    fake_term_s = sign * clamped_log(torch.sigmoid(sign * bundle.D_s(fake_s, bundle.e_s(tgt.labels)))).mean()
    fake_term_t = sign * clamped_log(torch.sigmoid(sign * bundle.D_t(fake_t, bundle.e_t(src.labels)))).mean()
    disc_s = real_s + fake_term_s
    disc_t = real_t + fake_term_t
    if lambda_gp:
        disc_s = disc_s + lambda_gp * gradient_penalty(
            bundle.D_s, src.images, fake_s, src.labels, bundle.e_s, squared=squared_gp, generator=generator)
        disc_t = disc_t + lambda_gp * gradient_penalty(
            bundle.D_t, tgt.images, fake_t, tgt.labels, bundle.e_t, squared=squared_gp, generator=generator)
    return disc_s, disc_t


def adversarial_losses(bundle, src: Batch, tgt: Batch, lambda_gp: float = 0.01, *, squared_gp: bool = True,
                       non_saturating: bool = False, generator: torch.Generator | None = None) -> AdversarialLosses:
    """All four adversarial terms on one pair of batches, sharing one set of translations."""
    _check(src, "source")
    _check(tgt, "target")
    gen_s, gen_t, fake_t, fake_s = generator_losses(bundle, src, tgt, non_saturating=non_saturating)
    disc_s, disc_t = discriminator_losses(bundle, src, tgt, fake_t, fake_s, lambda_gp, squared_gp=squared_gp,
                                          non_saturating=non_saturating, generator=generator)
    return AdversarialLosses(gen_s, gen_t, disc_s, disc_t)


def cycle_from_fakes(G_s, G_t, e_s, e_t, src: Batch, tgt: Batch, fake_t, fake_s):
    back_s = G_s(fake_t, e_t(src.labels))
    back_t = G_t(fake_s, e_s(tgt.labels))
    if back_s.shape != src.images.shape or back_t.shape != tgt.images.shape:
        raise ShapeError("round-trip output shape differs from the input")
    return (back_s - src.images).abs().mean(), (back_t - tgt.images).abs().mean()


def cycle_loss(G_s, G_t, e_s, e_t, src: Batch, tgt: Batch):
    """Mean per-pixel L1 error of the two domain round trips."""
    _check(src, "source")
    _check(tgt, "target")
    fake_t = G_t(src.images, e_s(src.labels))
    fake_s = G_s(tgt.images, e_t(tgt.labels))
    if fake_t.shape != src.images.shape or fake_s.shape != tgt.images.shape:
        raise ShapeError("generator output shape differs from its input")
    return cycle_from_fakes(G_s, G_t, e_s, e_t, src, tgt, fake_t, fake_s)


def total_objective(gen_s, gen_t, disc_s, disc_t, cyc_s, cyc_t, config):
    ls, lt, lc = config.lambda_s, config.lambda_t, config.lambda_cyc
    return (ls * gen_s + lt * gen_t + ls * disc_s + lt * disc_t
            + ls * lc * cyc_s + lt * lc * cyc_t)
