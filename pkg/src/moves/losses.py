"""Scalar objectives. Every batched term is reduced by its mean.

Discriminator arguments are callables `disc(candidate, reference) -> score in
[0, 1]`; a vanilla (single-latent) discriminator simply ignores `reference`.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class LossWeights:
    w_adv_D: float = 1.0
    w_tri: float = 1.0
    w_adv_G: float = 1.0
    w_recon: float = 1.0
    w_mmd: float = 1.0
    # target self-reconstruction during adaptation
    w_recon_target: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        for k, v in vars(self).items():
            if not (v >= 0 and v < float("inf")):
                raise ValueError(f"{k} must be finite and >= 0, got {v}")


def euclidean(a, b):
    return torch.linalg.vector_norm(a - b, dim=-1)


def triplet_loss(anchor, positive, negative, alpha: float = 1.0, metric=euclidean):
    """max(0, m(anchor, positive) - m(negative, anchor) + alpha), batch mean."""
    if not anchor.shape == positive.shape == negative.shape:
        raise ValueError(
            f"triplet shapes differ: {tuple(anchor.shape)}, {tuple(positive.shape)}, "
            f"{tuple(negative.shape)}"
        )
    hinge = metric(anchor, positive) - metric(negative, anchor) + alpha
    return torch.clamp(hinge, min=0).mean()


def _relativistic_pair(disc, real_args, fake_args):
    c_real = disc.logits(*real_args)
    c_fake = disc.logits(*fake_args)
    return c_real - c_fake.mean(), c_fake - c_real.mean()


def disc_adv_loss(disc, r_sj, r_si, r_di, relativistic: bool = False):
    """(D(r_sj, r_si) - 1)^2 + (D(r_di, r_si) - 0)^2."""
    if relativistic:
        real, fake = _relativistic_pair(disc, (r_sj, r_si), (r_di, r_si))
        return ((real - 1) ** 2).mean() + ((fake + 1) ** 2).mean()
    return ((disc(r_sj, r_si) - 1) ** 2).mean() + (disc(r_di, r_si) ** 2).mean()


def disc_loss_terms(disc, r_si, r_sj, r_di, weights: LossWeights, embed=None,
                    relativistic: bool = False) -> dict:
    """Weighted terms of the discriminator objective.

    `embed` maps latents into the space the contrastive term is measured in;
    identity when omitted. Zero-weight terms are skipped, not multiplied.
    """
    terms = {}
    if weights.w_adv_D:
        terms["adv_D"] = weights.w_adv_D * disc_adv_loss(disc, r_sj, r_si, r_di, relativistic)
    if weights.w_tri:
        f = embed if embed is not None else (lambda r: r)
        terms["tri"] = weights.w_tri * triplet_loss(f(r_si), f(r_sj), f(r_di), weights.alpha)
    return terms


def disc_total_loss(disc, r_si, r_sj, r_di, weights: LossWeights, embed=None,
                    relativistic: bool = False):
    return _total(disc_loss_terms(disc, r_si, r_sj, r_di, weights, embed, relativistic), r_si)


def recon_loss(pred, target, target_valid, pred_valid=None, r_max: float | None = None):
    """Mean absolute range error over cells valid in either image.

    Where only one side is valid the other side counts as r_max (no return).
    Per-image mean, then batch mean.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    target_valid = torch.as_tensor(target_valid, dtype=torch.bool)
    if pred_valid is None:
        pred_valid = torch.ones_like(target_valid)
    union = pred_valid | target_valid
    if r_max is None:
        r_max = 0.0
    p = torch.where(pred_valid, pred, torch.as_tensor(r_max, dtype=pred.dtype))
    t = torch.where(target_valid, target, torch.as_tensor(r_max, dtype=pred.dtype))
    err = torch.where(union, (p - t).abs(), torch.zeros_like(p))
    dims = tuple(range(1, pred.dim())) if pred.dim() > 2 else tuple(range(pred.dim()))
    count = union.sum(dim=dims).to(pred.dtype)
    per_image = err.sum(dim=dims) / count.clamp(min=1)
    return per_image.mean()


def gen_loss_terms(disc, r_di, r_si, pred, s_i, s_i_valid, weights: LossWeights,
                   r_max=None, relativistic: bool = False, r_sj=None) -> dict:
    terms = {}
    if weights.w_adv_G:
        if relativistic:
            if r_sj is None:
                raise ValueError("relativistic generator loss needs the real pair")
            real, fake = _relativistic_pair(disc, (r_sj, r_si), (r_di, r_si))
            adv = ((fake - 1) ** 2).mean() + ((real + 1) ** 2).mean()
        else:
            adv = ((disc(r_di, r_si) - 1) ** 2).mean()
        terms["adv_G"] = weights.w_adv_G * adv
    if weights.w_recon:
        terms["recon"] = weights.w_recon * recon_loss(pred, s_i, s_i_valid, r_max=r_max)
    return terms


def gen_total_loss(disc, r_di, r_si, pred, s_i, s_i_valid, weights: LossWeights, r_max=None):
    return _total(gen_loss_terms(disc, r_di, r_si, pred, s_i, s_i_valid, weights, r_max), pred)


def _sq_dists(a, b):
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)


def median_bandwidth(a, b) -> float:
    pooled = torch.cat([a, b]).detach()
    d = torch.sqrt(_sq_dists(pooled, pooled))
    iu = torch.triu_indices(len(pooled), len(pooled), offset=1)
    vals = d[iu[0], iu[1]]
    vals = vals[vals > 0]
    return float(vals.median()) if len(vals) else 1.0


def mmd(set_a, set_b, kernel: str = "gaussian", sigma: float | None = None):
    """Biased (V-statistic) squared MMD."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise ValueError("mmd needs two nonempty sets")
    if kernel == "linear":
        k = lambda x, y: x @ y.T  # noqa: E731
    elif kernel == "gaussian":
        s = median_bandwidth(set_a, set_b) if sigma is None else sigma
        k = lambda x, y: torch.exp(-_sq_dists(x, y) / (2 * s * s))  # noqa: E731
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return k(set_a, set_a).mean() + k(set_b, set_b).mean() - 2 * k(set_a, set_b).mean()


def disc_loss_terms_mmd(disc, r_si, r_sj, r_di, r_kl, weights: LossWeights, embed=None,
                        relativistic: bool = False) -> dict:
    terms = disc_loss_terms(disc, r_si, r_sj, r_di, weights, embed, relativistic)
    if weights.w_adv_D:
        terms["adv_D_target"] = weights.w_adv_D * (disc(r_kl, r_sj) ** 2).mean()
    return terms


def disc_total_loss_mmd(disc, r_si, r_sj, r_di, r_kl, weights: LossWeights, embed=None):
    return _total(disc_loss_terms_mmd(disc, r_si, r_sj, r_di, r_kl, weights, embed), r_si)


def gen_loss_terms_mmd(disc, r_di, r_si, pred, s_i, s_i_valid, target_pred, k_l, k_l_valid,
                       r_kl, r_sj, weights: LossWeights, r_max=None, kernel="gaussian",
                       sigma=None) -> dict:
    terms = gen_loss_terms(disc, r_di, r_si, pred, s_i, s_i_valid, weights, r_max)
    if weights.w_recon_target:
        terms["recon_target"] = weights.w_recon_target * recon_loss(target_pred, k_l, k_l_valid,
                                                             r_max=r_max)
    if weights.w_mmd:
        terms["mmd"] = weights.w_mmd * mmd(r_kl, r_sj, kernel, sigma)
    return terms


def gen_total_loss_mmd(disc, r_di, r_si, pred, s_i, s_i_valid, target_pred, k_l, k_l_valid,
                       r_kl, r_sj, weights: LossWeights, r_max=None, kernel="gaussian",
                       sigma=None):
    terms = gen_loss_terms_mmd(disc, r_di, r_si, pred, s_i, s_i_valid, target_pred, k_l,
                               k_l_valid, r_kl, r_sj, weights, r_max, kernel, sigma)
    return _total(terms, pred)


def _total(terms: dict, like):
    total = torch.zeros((), dtype=like.dtype)
    for v in terms.values():
        total = total + v
    return total
