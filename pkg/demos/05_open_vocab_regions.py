# %% [markdown]
# # Open-vocabulary region scoring
#
# The detector never sees novel-category labels: its classifier is the set
# of prompt-averaged text embeddings, so any name the text encoder can spell
# is a valid class. Each region gets a detection score p (with an explicit
# background row), a VLM score z read off a chosen backbone's token grid by
# RoI pooling, their geometric-mean ensemble, and an objectness multiplier.

# %%
import numpy as np

from ovmask.training import ExperimentConfig, eval_regions, finetune, pretrain
from ovmask.world import default_split

split = default_split()
print("novel categories:", split.novel_names)

# %%
cfg = ExperimentConfig(
    seed=0, steps=600, batch_size=24, max_len=24, lr=2e-3, warmup_steps=60, dataset_size=800,
    finetune_steps=400, finetune_lr=1e-3, finetune_warmup=40, finetune_dataset_size=120,
    scenes_per_step=8, eval_dataset_size=100,
)
pre = pretrain(cfg, "runs/demo_ovd")
ft = finetune(cfg, pre["checkpoint"], "runs/demo_ovd")
print("detector:", ft["checkpoint"])

# %% [markdown]
# ## Frozen vs finetuned backbone for the VLM score
#
# The detection score always reads the finetuned backbone. The z score can
# instead read the untouched pretrained ("frozen") backbone, which is how
# the detector avoids forgetting what finetuning never supervised.

# %%
for flag in ("finetuned", "frozen"):
    result, rows = eval_regions(
        cfg, ft["checkpoint"], pre["frozen_checkpoint"], out_csv=f"runs/demo_ovd/scores_{flag}.csv", vlm_backbone=flag
    )
    print(
        f"{flag:9s} base accuracy={result['base_accuracy']:.3f} "
        f"novel accuracy={result['novel_accuracy']:.3f} over {result['base_total']}+{result['novel_total']} regions"
    )

# %%
print("a few scored regions (id, truth, prediction, membership):")
for row in rows[:5]:
    print("  ", row[0], row[1], "->", row[2], f"[{row[6]}]")
