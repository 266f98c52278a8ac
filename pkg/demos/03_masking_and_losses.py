# %% [markdown]
# # The two objectives and the token budget
#
# Pretraining combines a symmetric temperature-scaled contrastive loss with
# a cosine reconstruction of masked token features. The interesting wiring
# question is who sees which tokens: in `full` mode the contrastive encoder
# sees everything and pays extra for the reconstruction branch; in
# `exclusive` mode the two branches split the tokens and the per-step
# encoder budget matches a contrastive-only run exactly.

# %%
import numpy as np

from ovmask.encoders import DualEncoderModel, ModelConfig, TextConfig, ViTConfig, pad_or_truncate
from ovmask.losses import pretrain_step_loss, sample_mask

plan = sample_mask(16, 0.75, np.random.default_rng(0))
print("visible:", plan.visible)
print("masked: ", plan.masked)

# %%
model = DualEncoderModel(
    ModelConfig(
        vit=ViTConfig(image_size=32, patch_size=8, depth=2, width=32, heads=4),
        text=TextConfig(vocab_size=40, max_len=16, depth=1, width=32, heads=4, out_width=32),
    ),
    seed=0,
)
rng = np.random.default_rng(1)
images = rng.normal(size=(4, 32, 32, 3)).astype(np.float32)
ids = np.stack([pad_or_truncate([2, 3, 4], 16) for _ in range(4)])

for mode, lam in (("full", 0.0), ("full", 2.0), ("exclusive", 2.0)):
    total, diag = pretrain_step_loss(
        model, images, ids, mode=mode, lambda_rec=lam, train=True, rng=np.random.default_rng(7)
    )
    label = "baseline " if lam == 0 else mode
    print(
        f"{label:10s} contrastive tokens={diag['tokens_contrastive']:3d} "
        f"reconstruction tokens={diag['tokens_recon']:3d} total loss={diag['total']:.3f}"
    )

# %% [markdown]
# At mask ratio 0.75 the exclusive split processes 75% + 25% = 100% of the
# baseline's tokens, while the full wiring pays 125%. The loss itself is
# `L_contrastive + 2.0 * L_reconstruction`, with the reconstruction cosine
# computed only at masked positions and one side behind stop-gradient.
