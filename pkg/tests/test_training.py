import csv

import numpy as np
import pytest

from ovmask.checkpoint import load_checkpoint, weight_hash
from ovmask.encoders import DualEncoderModel
from ovmask.training import (
    METRICS_HEADER,
    SCORES_HEADER,
    ExperimentConfig,
    eval_regions,
    eval_retrieval,
    finetune,
    model_config,
    pretrain,
    recall_table,
)
from ovmask.world import Vocabulary, generate_pretrain_dataset


def tiny_cfg(**kw):
    defaults = dict(
        seed=0,
        steps=6,
        batch_size=4,
        dataset_size=16,
        max_len=16,
        warmup_steps=2,
        lr=1e-3,
        finetune_steps=4,
        finetune_lr=1e-3,
        finetune_warmup=1,
        finetune_dataset_size=10,
        scenes_per_step=2,
        eval_dataset_size=6,
        retrieval_eval_size=10,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


# ---------------------------------------------------------------------------
# pretraining loop


def test_pretrain_writes_metrics_and_checkpoints(tmp_path):
    cfg = tiny_cfg()
    result = pretrain(cfg, tmp_path / "run")
    with open(result["metrics_csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == METRICS_HEADER
    assert len(rows) == cfg.steps + 1
    ckpt = load_checkpoint(result["checkpoint"])
    frozen = load_checkpoint(result["frozen_checkpoint"])
    assert weight_hash(ckpt) == weight_hash(frozen)
    assert "temperature" in ckpt


def test_pretrain_deterministic_metrics(tmp_path):
    cfg = tiny_cfg()
    r1 = pretrain(cfg, tmp_path / "a")
    r2 = pretrain(cfg, tmp_path / "b")
    assert open(r1["metrics_csv"], "rb").read() == open(r2["metrics_csv"], "rb").read()
    assert open(r1["checkpoint"], "rb").read() == open(r2["checkpoint"], "rb").read()


def test_pretrain_loss_decreases_on_moving_average(tmp_path):
    cfg = tiny_cfg(steps=120, batch_size=8, dataset_size=64, width=16, depth=1, heads=2, warmup_steps=10)
    result = pretrain(cfg, tmp_path / "run")
    with open(result["metrics_csv"]) as fh:
        totals = [float(row["total"]) for row in csv.DictReader(fh)]
    first = np.mean(totals[:20])
    last = np.mean(totals[-20:])
    assert last < first


def test_pretrain_lambda_zero_baseline_has_no_recon_tokens(tmp_path):
    cfg = tiny_cfg(lambda_rec=0.0, ped_prob=0.0)
    result = pretrain(cfg, tmp_path / "run")
    with open(result["metrics_csv"]) as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["L_rec"]) == 0.0 for r in rows)
    assert all(int(r["tokens_recon"]) == 0 for r in rows)
    assert all(float(r["ped_dropped_fraction"]) == 0.0 for r in rows)


# ---------------------------------------------------------------------------
# finetuning


def test_finetune_ratio_zero_freezes_backbone(tmp_path):
    cfg = tiny_cfg(backbone_lr_ratio=0.0)
    pre = pretrain(cfg, tmp_path / "pre")
    vocab = Vocabulary()
    before = DualEncoderModel.load(model_config(cfg, len(vocab)), pre["checkpoint"])
    hash_before = weight_hash(before.image_enc.parameters())
    ft = finetune(cfg, pre["checkpoint"], tmp_path / "ft")
    values = load_checkpoint(ft["checkpoint"])
    backbone = {k: v for k, v in values.items() if k.startswith("image_enc/")}
    assert weight_hash({k[len("image_enc/") :]: v for k, v in backbone.items()}) == hash_before


def test_finetune_ratio_half_scales_first_step_update(tmp_path):
    # warmup 1 of 2 steps: the first update runs at full base lr, the second
    # at lr 0, so the checkpoint delta is exactly one optimizer step
    cfg = tiny_cfg(finetune_steps=2, finetune_warmup=1, seed=3)
    pre = pretrain(cfg, tmp_path / "pre")
    vocab = Vocabulary()
    base = DualEncoderModel.load(model_config(cfg, len(vocab)), pre["checkpoint"])
    base_vec = np.concatenate([p.data.ravel() for p in base.image_enc.parameters().values()])

    def backbone_delta(ratio):
        from dataclasses import replace

        ft = finetune(replace(cfg, backbone_lr_ratio=ratio), pre["checkpoint"], tmp_path / f"ft{ratio}")
        values = load_checkpoint(ft["checkpoint"])
        vec = np.concatenate(
            [values[k].ravel() for k in sorted(values) if k.startswith("image_enc/")]
        )
        ref = np.concatenate(
            [base.image_enc.parameters()[k[len("image_enc/") :]].data.ravel() for k in sorted(values) if k.startswith("image_enc/")]
        )
        return np.linalg.norm(vec - ref)

    ratio = backbone_delta(0.5) / backbone_delta(1.0)
    assert abs(ratio - 0.5) < 1e-3


def test_finetune_full_ratio_shares_schedule(tmp_path):
    cfg = tiny_cfg(backbone_lr_ratio=1.0)
    pre = pretrain(cfg, tmp_path / "pre")
    ft = finetune(cfg, pre["checkpoint"], tmp_path / "ft")
    values = load_checkpoint(ft["checkpoint"])
    assert "detector/region_proj" in values


# ---------------------------------------------------------------------------
# retrieval evaluation


def test_recall_table_identity_match():
    sims = np.eye(5)
    table = recall_table(sims, ks=(1, 5))
    assert table[1] == 1.0 and table[5] == 1.0


def test_recall_table_ties_broken_by_index():
    sims = np.ones((4, 4))
    table = recall_table(sims, ks=(1,))
    # row i ties everywhere; items with smaller index outrank the match
    assert table[1] == 0.25


def test_recall_monotone_in_k(tmp_path, rng):
    cfg = tiny_cfg()
    vocab = Vocabulary()
    model = DualEncoderModel(model_config(cfg, len(vocab)), seed=1)
    records = generate_pretrain_dataset(20, seed=9, image_size=cfg.image_size)
    table = eval_retrieval(model, records)
    for direction in ("i2t", "t2i"):
        assert table[direction][1] <= table[direction][5] <= table[direction][10]


def test_untrained_retrieval_is_chance_level():
    cfg = tiny_cfg()
    vocab = Vocabulary()
    model = DualEncoderModel(model_config(cfg, len(vocab)), seed=2)
    records = generate_pretrain_dataset(100, seed=77, image_size=cfg.image_size)
    table = eval_retrieval(model, records)
    for direction in ("i2t", "t2i"):
        assert table[direction][1] <= 0.04  # 1/N = 1% chance, +3pp tolerance


# ---------------------------------------------------------------------------
# region evaluation


def test_eval_regions_csv_and_recomputed_accuracy(tmp_path):
    cfg = tiny_cfg()
    pre = pretrain(cfg, tmp_path / "pre")
    ft = finetune(cfg, pre["checkpoint"], tmp_path / "ft")
    out_csv = tmp_path / "scores.csv"
    result, rows = eval_regions(cfg, ft["checkpoint"], pre["frozen_checkpoint"], out_csv=out_csv)
    with open(out_csv) as fh:
        parsed = list(csv.DictReader(fh))
    assert list(parsed[0].keys()) == SCORES_HEADER
    # brute-force re-scoring of the CSV reproduces the reported accuracy
    for member, key in (("base", "base_accuracy"), ("novel", "novel_accuracy")):
        scored = [r for r in parsed if r["membership"] == member]
        if scored:
            acc = sum(r["true_category"] == r["argmax_category"] for r in scored) / len(scored)
            assert acc == pytest.approx(result[key])
    negatives = [r for r in parsed if r["membership"] == "negative"]
    assert all(r["true_category"] == "background" for r in negatives)


def test_eval_regions_flag_changes_only_z_columns(tmp_path):
    cfg = tiny_cfg(finetune_steps=6)
    pre = pretrain(cfg, tmp_path / "pre")
    ft = finetune(cfg, pre["checkpoint"], tmp_path / "ft")
    _, rows_frozen = eval_regions(cfg, ft["checkpoint"], pre["frozen_checkpoint"], vlm_backbone="frozen")
    _, rows_fine = eval_regions(cfg, ft["checkpoint"], pre["frozen_checkpoint"], vlm_backbone="finetuned")
    for a, b in zip(rows_frozen, rows_fine):
        assert a[0] == b[0] and a[1] == b[1]  # region id, truth
        assert a[3] == b[3]  # p_max identical: detection path never moves
