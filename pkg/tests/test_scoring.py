import numpy as np
import pytest

from ovmask.checkpoint import weight_hash
from ovmask.encoders import ImageEncoder, ViTConfig, sinusoidal_pe_2d
from ovmask.errors import ContractError, DomainError, GeometryError
from ovmask.scoring import (
    build_category_space,
    centerness,
    detection_score,
    ensemble_score,
    fuse_objectness,
    roi_pool,
    select_vlm_backbone,
    token_feature_grid,
    vlm_score,
)

TEMPLATES = ("a photo of {}", "an image with {}", "there is {} in the picture")


def fake_encoder(d=8, seed=0):
    rng = np.random.default_rng(seed)
    cache = {}

    def encode(caption):
        if caption not in cache:
            cache[caption] = rng.normal(size=d)
        return cache[caption]

    return encode, cache


def space_of(base, novel, templates=TEMPLATES, seed=0):
    encode, cache = fake_encoder(seed=seed)
    return build_category_space(base, novel, templates, encode), cache


# ---------------------------------------------------------------------------
# category space


def test_single_template_equals_caption_embedding():
    encode, cache = fake_encoder()
    space = build_category_space(["cat"], [], ("a photo of {}",), encode)
    raw = cache["a photo of a cat"]
    np.testing.assert_allclose(space.embeddings[0], raw / np.linalg.norm(raw), atol=1e-6)


def test_duplicate_templates_idempotent():
    encode, _ = fake_encoder()
    one = build_category_space(["cat"], [], ("a photo of {}",), encode)
    twice = build_category_space(["cat"], [], ("a photo of {}", "a photo of {}"), encode)
    np.testing.assert_allclose(one.embeddings, twice.embeddings, atol=1e-7)


def test_three_templates_match_mean_then_normalize_oracle():
    space, cache = space_of(["dog"], [])
    per_template = [cache[t.format("a dog")] for t in TEMPLATES]
    normed = [v / np.linalg.norm(v) for v in per_template]
    mean = np.mean(normed, axis=0)
    oracle = mean / np.linalg.norm(mean)
    np.testing.assert_allclose(space.embeddings[0], oracle, atol=1e-6)


def test_space_partitions_base_and_novel():
    space, _ = space_of(["a", "b"], ["c"])
    assert space.base_names == ["a", "b"] and space.novel_names == ["c"]
    np.testing.assert_array_equal(space.base_mask(), [True, True, False])


# ---------------------------------------------------------------------------
# detection score


def unit(v):
    return v / np.linalg.norm(v)


def make_space_with_embeddings(embs, base_count, bg=None):
    from ovmask.scoring import CategorySpace

    d = embs.shape[1]
    return CategorySpace(
        names=[f"cat{i}" for i in range(embs.shape[0])],
        base_count=base_count,
        embeddings=embs.astype(np.float32),
        background=unit(np.ones(d)).astype(np.float32) if bg is None else bg,
        templates=("{}",),
    )


def test_detection_score_argmax_on_matching_category():
    embs = np.eye(8)[:4]
    space = make_space_with_embeddings(embs, base_count=4, bg=unit(np.ones(8)))
    p = detection_score(embs[2], space, "train", temperature=0.1)
    assert p.argmax() == 2
    assert abs(p.sum() - 1.0) < 1e-6


def test_detection_score_matches_direct_oracle(rng):
    embs = np.stack([unit(rng.normal(size=8)) for _ in range(5)])
    space = make_space_with_embeddings(embs, base_count=3)
    emb = unit(rng.normal(size=8))
    tau = 0.2
    p = detection_score(emb, space, "test", tau)
    sims = np.concatenate([embs @ emb, [space.background @ emb]]) / tau
    oracle = np.exp(sims - sims.max())
    oracle /= oracle.sum()
    np.testing.assert_allclose(p, oracle, atol=1e-9)


def test_detection_restriction_does_not_commute_with_softmax(rng):
    # expanding the vocabulary changes the softmax denominator: test-phase
    # base-category scores are not the train-phase ones, with or without
    # renormalizing over the base block
    embs = np.stack([unit(rng.normal(size=8)) for _ in range(6)])
    space = make_space_with_embeddings(embs, base_count=3)
    emb = unit(rng.normal(size=8))
    p_train = detection_score(emb, space, "train", 0.2)
    p_test = detection_score(emb, space, "test", 0.2)
    assert not np.allclose(p_test[:3], p_train[:3], atol=1e-6)
    renorm = p_test[:3] / p_test[:3].sum()
    assert not np.allclose(renorm, p_train[:3], atol=1e-6)


# ---------------------------------------------------------------------------
# RoI pooling and VLM score


def test_roi_full_image_box_is_global_mean(rng):
    grid = rng.normal(size=(4, 4, 8)).astype(np.float32)
    pooled = roi_pool(grid, (0, 0, 32, 32), patch_px=8)
    np.testing.assert_allclose(pooled, grid.mean(axis=(0, 1)), atol=1e-5)


def test_roi_cell_aligned_box_is_plain_cell_mean(rng):
    grid = rng.normal(size=(8, 8, 4)).astype(np.float32)
    # 2x2 token block anywhere
    pooled = roi_pool(grid, (2 * 8, 5 * 8, 4 * 8, 7 * 8), patch_px=8)
    np.testing.assert_allclose(pooled, grid[5:7, 2:4].mean(axis=(0, 1)), atol=1e-5)
    # 4x2 token block
    pooled = roi_pool(grid, (0, 2 * 8, 4 * 8, 4 * 8), patch_px=8)
    np.testing.assert_allclose(pooled, grid[2:4, 0:4].mean(axis=(0, 1)), atol=1e-5)


def test_roi_matches_independent_bilinear_oracle(rng):
    grid = rng.normal(size=(4, 4, 3)).astype(np.float32)
    box = (3.0, 5.0, 21.0, 17.0)
    patch = 8

    def bilinear(x, y):
        gx = np.clip(x / patch - 0.5, 0, 3)
        gy = np.clip(y / patch - 0.5, 0, 3)
        x0, y0 = int(np.floor(gx)), int(np.floor(gy))
        x1, y1 = min(x0 + 1, 3), min(y0 + 1, 3)
        fx, fy = gx - x0, gy - y0
        top = (1 - fx) * grid[y0, x0] + fx * grid[y0, x1]
        bot = (1 - fx) * grid[y1, x0] + fx * grid[y1, x1]
        return (1 - fy) * top + fy * bot

    samples = []
    bx0, by0, bx1, by1 = box

    # per-axis: bins of extent/2, ceil(extent/patch) samples per bin
    def points(a0, a1):
        extent = (a1 - a0) / 2
        n = max(1, int(np.ceil(extent / patch)))
        return [a0 + extent * (i + (j + 0.5) / n) for i in range(2) for j in range(n)]

    for y in points(by0, by1):
        for x in points(bx0, bx1):
            samples.append(bilinear(x, y))
    oracle = np.mean(samples, axis=0)
    np.testing.assert_allclose(roi_pool(grid, box, patch), oracle, atol=1e-6)


def test_roi_rejects_bad_geometry(rng):
    grid = rng.normal(size=(4, 4, 3))
    with pytest.raises(GeometryError):
        roi_pool(grid, (5, 5, 5, 9), patch_px=8)
    with pytest.raises(GeometryError):
        roi_pool(grid, (0, 0, 40, 8), patch_px=8)


def test_vlm_score_sums_to_one(rng):
    grid = rng.normal(size=(4, 4, 8)).astype(np.float32)
    embs = np.stack([unit(rng.normal(size=8)) for _ in range(5)])
    space = make_space_with_embeddings(embs, base_count=3)
    z = vlm_score(grid, (0, 0, 32, 32), space, temperature=0.3, patch_px=8)
    assert z.shape == (5,)
    assert abs(z.sum() - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# ensemble and objectness


def test_ensemble_alpha_one_collapses_to_p_exactly(rng):
    p = np.abs(rng.normal(size=6)) + 1e-3
    z = np.abs(rng.normal(size=6)) + 1e-3
    s = ensemble_score(p, z, np.ones(6, dtype=bool), alpha=1.0, beta=0.3)
    assert s.tobytes() == p.astype(np.float64).tobytes()


def test_ensemble_equal_scores_collapse_exactly(rng):
    p = np.abs(rng.normal(size=6)) + 1e-3
    s = ensemble_score(p, p.copy(), np.array([True, False] * 3), alpha=0.2, beta=0.65)
    assert s.tobytes() == p.astype(np.float64).tobytes()


def test_ensemble_transfer_setting_matches_direct_oracle(rng):
    # all categories novel, (alpha, beta) = (0.0, 0.65): s = z^0.35 * p^0.65
    p = np.abs(rng.normal(size=8)) + 1e-3
    z = np.abs(rng.normal(size=8)) + 1e-3
    s = ensemble_score(p, z, np.zeros(8, dtype=bool), alpha=0.0, beta=0.65)
    np.testing.assert_allclose(s, z**0.35 * p**0.65, rtol=1e-9)


def test_ensemble_rejects_negative_inputs():
    with pytest.raises(DomainError):
        ensemble_score(np.array([0.5, -0.1]), np.array([0.5, 0.5]), np.array([True, True]), 0.5, 0.5)


def test_ensemble_monotone_in_p(rng):
    z = np.abs(rng.normal(size=4)) + 1e-3
    p = np.abs(rng.normal(size=4)) + 1e-3
    base = np.array([True, True, False, False])
    s1 = ensemble_score(p, z, base, 0.3, 0.7)
    p2 = p.copy()
    p2[1] *= 1.5
    p2[3] *= 2.0
    s2 = ensemble_score(p2, z, base, 0.3, 0.7)
    assert s2[1] > s1[1] and s2[3] > s1[3]
    assert np.allclose(s2[[0, 2]], s1[[0, 2]])


def test_ensemble_argmax_invariant_to_relabeling_when_alpha_equals_beta(rng):
    p = np.abs(rng.normal(size=6)) + 1e-3
    z = np.abs(rng.normal(size=6)) + 1e-3
    mask = rng.random(6) > 0.5
    a = ensemble_score(p, z, mask, 0.4, 0.4)
    b = ensemble_score(p, z, ~mask, 0.4, 0.4)
    assert a.argmax() == b.argmax()
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_fuse_objectness_identity_zero_and_half(rng):
    s = np.abs(rng.normal(size=5))
    np.testing.assert_array_equal(fuse_objectness(s, 1.0), s)
    assert not fuse_objectness(s, 0.0).any()
    np.testing.assert_allclose(fuse_objectness(s, 0.5), 0.5 * s, rtol=1e-12)
    assert fuse_objectness(s, 0.7).argmax() == s.argmax()
    with pytest.raises(DomainError):
        fuse_objectness(s, 1.5)


def test_centerness_bounds():
    obj = (10.0, 10.0, 20.0, 20.0)
    assert centerness(obj, obj) == 1.0
    assert centerness((12, 12, 22, 22), obj) < 1.0
    assert centerness((30, 30, 40, 40), obj) == 0.0


# ---------------------------------------------------------------------------
# backbone selection


def test_select_vlm_backbone_frozen_restores_pretrain_weights(tmp_path, rng):
    from ovmask.checkpoint import save_checkpoint

    cfg = ViTConfig(image_size=8, patch_size=4, depth=1, width=8, heads=2)
    enc = ImageEncoder(cfg, rng)
    frozen_hash = weight_hash(enc.parameters())
    path = tmp_path / "frozen.ckpt"
    save_checkpoint({f"image_enc/{k}": v for k, v in enc.parameters().items()}, path)

    enc.params["patch_proj/w"].data += 1.0  # "finetuning" drift
    assert weight_hash(enc.parameters()) != frozen_hash

    restored = select_vlm_backbone(path, enc, "frozen", cfg)
    assert weight_hash(restored.parameters()) == frozen_hash
    same = select_vlm_backbone(path, enc, "finetuned", cfg)
    assert same is enc


def test_token_feature_grid_shape(rng):
    cfg = ViTConfig(image_size=8, patch_size=4, depth=1, width=8, heads=2)
    enc = ImageEncoder(cfg, rng)
    pe = sinusoidal_pe_2d(2, 2, 8)
    grid = token_feature_grid(enc, rng.normal(size=(8, 8, 3)).astype(np.float32), pe)
    assert grid.shape == (2, 2, 8)
