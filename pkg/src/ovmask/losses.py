"""Training objectives: symmetric temperature-scaled contrastive loss and
cosine-distance reconstruction of masked token features, plus the mask
sampler and the combined per-step loss in its two wiring modes.

`mode="full"` feeds every token to the contrastive encoder and the visible
subset to the weight-shared reconstruction encoder (extra cost). In
`mode="exclusive"` the contrastive encoder sees only the masked set, so the
two branches partition the tokens and the per-step encoder token count
matches a contrastive-only run exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import MaskPlan, draw_pe_keep, extract_patches
from .errors import ContractError, DegenerateNormError


@dataclass
class ContrastiveBatch:
    """L2-normalized image/text embeddings with a positive temperature."""

    v: Tensor  # (B, d) image embeddings
    l: Tensor  # (B, d) text embeddings
    tau: Tensor  # positive scalar

    def __post_init__(self):
        if self.v.shape != self.l.shape or self.v.ndim != 2:
            raise ContractError(f"embedding shapes disagree: {self.v.shape} vs {self.l.shape}")
        for name, t in (("image", self.v), ("text", self.l)):
            norms = np.linalg.norm(t.data, axis=-1)
            if np.max(np.abs(norms - 1.0)) > 1e-5:
                raise ContractError(f"{name} embeddings are not unit rows")
        if float(self.tau.data) <= 0:
            raise ContractError("temperature must be positive")

    @property
    def batch_size(self):
        return self.v.shape[0]


def _nll_of_diagonal(logits):
    # mean over rows of (logsumexp(row) - diagonal), max-stabilized
    b = logits.shape[0]
    m = np.max(logits.data, axis=1, keepdims=True)
    shifted = ad.sub(logits, ad.Tensor._wrap(m, False))
    lse = ad.add(ad.tlog(ad.tsum(ad.texp(shifted), axis=1, keepdims=True)), ad.Tensor._wrap(m, False))
    eye = np.eye(b, dtype=np.float32)
    diag = ad.tsum(ad.mul(logits, eye), axis=1, keepdims=True)
    return ad.mean(ad.sub(lse, diag))


def infonce_i2t(batch: ContrastiveBatch):
    """-1/B sum_i log( exp(v_i.l_i / tau) / sum_j exp(v_i.l_j / tau) )."""
    if batch.batch_size < 2:
        raise ContractError("contrastive loss needs at least 2 pairs")
    logits = ad.div(ad.matmul(batch.v, ad.transpose(batch.l)), batch.tau)
    return _nll_of_diagonal(logits)


def infonce_t2i(batch: ContrastiveBatch):
    """Symmetric term: softmax over the image axis instead of the text axis."""
    if batch.batch_size < 2:
        raise ContractError("contrastive loss needs at least 2 pairs")
    logits = ad.div(ad.matmul(batch.l, ad.transpose(batch.v)), batch.tau)
    return _nll_of_diagonal(logits)


def infonce_total(batch: ContrastiveBatch):
    """Mean of the image-to-text and text-to-image terms."""
    return ad.mul(ad.add(infonce_i2t(batch), infonce_t2i(batch)), 0.5)


def sample_mask(total, mask_ratio, rng):
    """Uniform random partition with |M| = round(mask_ratio * total)."""
    if not 0.0 < mask_ratio < 1.0:
        raise ContractError(f"mask_ratio {mask_ratio} outside (0, 1)")
    if total < 2:
        raise ContractError("need at least 2 tokens to partition")
    n_masked = int(round(mask_ratio * total))
    if n_masked in (0, total):
        raise ContractError(f"mask_ratio {mask_ratio} degenerates at {total} tokens")
    perm = rng.permutation(total)
    return MaskPlan(total=total, visible=perm[n_masked:], masked=perm[:n_masked], mask_ratio=mask_ratio)


def stack_plans(plans):
    """Batch per-image plans into (B, |V|) and (B, |M|) index arrays."""
    return (
        np.stack([p.visible for p in plans]),
        np.stack([p.masked for p in plans]),
    )


@dataclass
class ReconBatch:
    """Aligned target/reconstructed feature rows for the masked tokens."""

    target: Tensor  # (B, |M|, d) features from the contrastive encoder
    recon: Tensor  # (B, |M|, d) decoder outputs
    lam: float = 2.0

    def __post_init__(self):
        if self.target.shape != self.recon.shape or self.target.ndim != 3:
            raise ContractError(f"target/recon shapes disagree: {self.target.shape} vs {self.recon.shape}")


def recon_loss(rb: ReconBatch, sg_side="target"):
    """1 - mean_images mean_masked cos(target, recon), pre-scaling by lam.

    Exactly one side of the cosine is behind stop_gradient: the feature
    targets by default, or the reconstruction (the literal published form)
    when sg_side="reconstruction".
    """
    if rb.target.shape[1] < 1:
        raise ContractError("reconstruction loss needs at least one masked token")
    if sg_side not in ("target", "reconstruction"):
        raise ContractError(f"unknown sg_side {sg_side!r}")
    target = ad.stop_gradient(rb.target) if sg_side == "target" else rb.target
    recon = ad.stop_gradient(rb.recon) if sg_side == "reconstruction" else rb.recon
    for name, t in (("target", target), ("reconstruction", recon)):
        if float(np.min(np.linalg.norm(t.data, axis=-1))) <= 1e-12:
            raise DegenerateNormError(f"zero-norm {name} feature row")
    cos = ad.tsum(ad.mul(ad.l2_normalize(target), ad.l2_normalize(recon)), axis=-1)  # (B, |M|)
    per_image = ad.mean(cos, axis=-1)
    return ad.sub(1.0, ad.mean(per_image))


def _normalized_pixel_targets(images, patch_size, masked_idx):
    # per-patch standardized raw pixels, constants (no grad); a constant
    # one-channel is appended so that uniform patches (all background) still
    # have nonzero norm under the cosine loss
    patches = extract_patches(images, patch_size)  # (B, T, p*p*C)
    mu = patches.mean(axis=-1, keepdims=True)
    sd = patches.std(axis=-1, keepdims=True)
    norm = (patches - mu) / (sd + 1e-6)
    norm = np.concatenate([norm, np.ones_like(norm[..., :1])], axis=-1)
    rows = np.take_along_axis(norm, masked_idx[..., None], axis=-2)
    return Tensor(rows.astype(np.float32))


def pixel_target_dim(patch_size, channels=3):
    return patch_size * patch_size * channels + 1


def step_forward(
    model,
    images,
    token_ids,
    *,
    mode="full",
    lambda_rec=2.0,
    sg_side="target",
    recon_target="feature",
    plans=None,
    pe_keep=None,
    frozen_sg=None,
):
    """Loss wiring for one step with explicit mask plans and PE decisions.

    `frozen_sg`, when given, substitutes a constant tensor for the
    stop-gradient side of the reconstruction loss; values and gradients at
    the current parameters are unchanged (sg already treats that side as a
    constant), which is what makes the loss finite-difference checkable.
    """
    if mode not in ("full", "exclusive"):
        raise ContractError(f"unknown mode {mode!r}")
    if recon_target not in ("feature", "pixel"):
        raise ContractError(f"unknown recon_target {recon_target!r}")
    b = images.shape[0]
    t = model.cfg.vit.tokens
    keep = np.ones(b, dtype=bool) if pe_keep is None else np.asarray(pe_keep, dtype=bool)
    tokens = model.image_enc.patchify(images)
    pe = model.pe_table

    diag = {"ped_dropped_fraction": float(1.0 - keep.mean())}

    if lambda_rec == 0.0:
        # contrastive-only baseline: no reconstruction branch at all
        _, pooled = model.image_enc.encode(tokens, None, pe, keep)
        diag["tokens_contrastive"] = b * t
        diag["tokens_recon"] = 0
    else:
        if plans is None:
            raise ContractError("reconstruction branch needs mask plans")
        v_idx, m_idx = stack_plans(plans)
        if mode == "exclusive":
            # the two encoder branches must partition the tokens, checked per step
            for plan in plans:
                union = np.union1d(plan.visible, plan.masked)
                if len(union) != t or len(np.intersect1d(plan.visible, plan.masked)) != 0:
                    raise ContractError("exclusive-mode branches do not partition the tokens")
            feats_m, pooled = model.image_enc.encode(tokens, m_idx, pe, keep)
            targets = feats_m
            diag["tokens_contrastive"] = b * m_idx.shape[1]
        else:
            feats_all, pooled = model.image_enc.encode(tokens, None, pe, keep)
            targets = ad.gather_tokens(feats_all, m_idx)
            diag["tokens_contrastive"] = b * t
        visible_feats, _ = model.image_enc.encode(tokens, v_idx, pe, keep)
        diag["tokens_recon"] = b * v_idx.shape[1]
        recon = model.decoder.decode(visible_feats, v_idx, m_idx, pe)
        if recon_target == "pixel":
            targets = _normalized_pixel_targets(images, model.cfg.vit.patch_size, m_idx)
        if frozen_sg is not None:
            if sg_side == "target":
                targets = frozen_sg
            else:
                recon = frozen_sg
        rb = ReconBatch(target=targets, recon=recon, lam=lambda_rec)
        l_rec = recon_loss(rb, sg_side=sg_side)

    v = ad.l2_normalize(pooled)
    l = ad.l2_normalize(model.text_enc.encode(token_ids))
    l_con = infonce_total(ContrastiveBatch(v=v, l=l, tau=model.temperature()))

    if lambda_rec == 0.0:
        total = l_con
        diag["L_con"] = total.item()
        diag["L_rec"] = 0.0
    else:
        total = ad.add(l_con, ad.mul(l_rec, lambda_rec))
        diag["L_con"] = l_con.item()
        diag["L_rec"] = l_rec.item()
    diag["total"] = total.item()
    return total, diag


def pretrain_step_loss(
    model,
    images,
    token_ids,
    *,
    mode="full",
    mask_ratio=0.75,
    lambda_rec=2.0,
    sg_side="target",
    recon_target="feature",
    train=True,
    rng=None,
):
    """One pretraining step's total loss and diagnostics.

    Returns (total, diag) where diag carries the CSV row fields: the two loss
    terms, trunk token-forward counters per branch, and the realized fraction
    of images whose positional table was dropped.
    """
    b = images.shape[0]
    t = model.cfg.vit.tokens
    ped_prob = model.cfg.vit.ped_prob if train else 0.0
    keep = draw_pe_keep(b, ped_prob, "train" if train else "eval", rng)
    plans = None
    if lambda_rec != 0.0:
        plans = [sample_mask(t, mask_ratio, rng) for _ in range(b)]
    return step_forward(
        model,
        images,
        token_ids,
        mode=mode,
        lambda_rec=lambda_rec,
        sg_side=sg_side,
        recon_target=recon_target,
        plans=plans,
        pe_keep=keep,
    )


def make_fd_loss(model, images, token_ids, *, mode="full", mask_ratio=0.75, lambda_rec=2.0,
                 sg_side="target", recon_target="feature", seed=0):
    """Closure over one step's loss with the sg side snapshotted to constants.

    Central differences on the raw step loss are ill-posed: perturbing a
    parameter moves the stop-gradient side, which the analytic gradient
    rightly ignores. Snapshotting that side once (at the current parameters)
    gives a function whose true derivative equals the training gradient.
    """
    rng = np.random.default_rng(seed)
    b = images.shape[0]
    t = model.cfg.vit.tokens
    keep = draw_pe_keep(b, model.cfg.vit.ped_prob, "train", rng)
    plans = [sample_mask(t, mask_ratio, rng) for _ in range(b)] if lambda_rec != 0.0 else None

    frozen = None
    if lambda_rec != 0.0:
        with ad.no_grad():
            v_idx, m_idx = stack_plans(plans)
            tokens = model.image_enc.patchify(images)
            if sg_side == "target":
                if recon_target == "pixel":
                    frozen = _normalized_pixel_targets(images, model.cfg.vit.patch_size, m_idx)
                elif mode == "exclusive":
                    frozen, _ = model.image_enc.encode(tokens, m_idx, model.pe_table, keep)
                else:
                    feats_all, _ = model.image_enc.encode(tokens, None, model.pe_table, keep)
                    frozen = ad.gather_tokens(feats_all, m_idx)
            else:
                visible_feats, _ = model.image_enc.encode(tokens, v_idx, model.pe_table, keep)
                frozen = model.decoder.decode(visible_feats, v_idx, m_idx, model.pe_table)
            frozen = Tensor(frozen.data.astype(np.float32).copy())

    def f():
        total, _ = step_forward(
            model,
            images,
            token_ids,
            mode=mode,
            lambda_rec=lambda_rec,
            sg_side=sg_side,
            recon_target=recon_target,
            plans=plans,
            pe_keep=keep,
            frozen_sg=frozen,
        )
        return total

    return f
