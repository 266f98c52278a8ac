"""Open-vocabulary region classification.

Region embeddings are matched against prompt-averaged category text
embeddings. Two scores exist per region: the detection score p (softmax over
base-or-all categories plus an explicit background row) and the VLM score z
(softmax over all categories, no background, read from a chosen backbone's
last token-feature grid via RoI pooling). They combine by geometric means
with per-membership exponents, then multiply with a class-agnostic
objectness.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint
from .encoders import ImageEncoder
from .errors import ConfigError, ContractError, DomainError, GeometryError

BACKGROUND_PHRASE = "background"


@dataclass
class CategorySpace:
    names: list  # base categories first, then novel
    base_count: int
    embeddings: np.ndarray  # (N, d) unit rows
    background: np.ndarray  # (d,) unit
    templates: tuple

    @property
    def base_names(self):
        return self.names[: self.base_count]

    @property
    def novel_names(self):
        return self.names[self.base_count :]

    def base_mask(self):
        mask = np.zeros(len(self.names), dtype=bool)
        mask[: self.base_count] = True
        return mask


def _normalize(vec):
    return vec / np.linalg.norm(vec)


def build_category_space(base_names, novel_names, templates, encode_fn):
    """Prompt-template averaging: encode each filled template, normalize,
    average, re-normalize. The background row uses the literal phrase."""
    if not templates or (not base_names and not novel_names):
        raise ContractError("need at least one category and one template")
    names = list(base_names) + list(novel_names)

    def embed(name):
        embs = [_normalize(np.asarray(encode_fn(t.format(f"a {name}")), dtype=np.float64)) for t in templates]
        return _normalize(np.mean(embs, axis=0)).astype(np.float32)

    embeddings = np.stack([embed(n) for n in names])
    return CategorySpace(
        names=names,
        base_count=len(base_names),
        embeddings=embeddings,
        background=embed(BACKGROUND_PHRASE),
        templates=tuple(templates),
    )


def _softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max()
    z = np.exp(logits - m)
    return z / z.sum()


def detection_score(region_emb, space, phase, temperature):
    """Softmax over cosine similarities to the phase's categories plus the
    background row (last coordinate). Train phase sees base categories only;
    test phase sees base + novel."""
    if phase not in ("train", "test"):
        raise ContractError(f"unknown phase {phase!r}")
    emb = np.asarray(region_emb, dtype=np.float64)
    if abs(np.linalg.norm(emb) - 1.0) > 1e-4:
        raise ContractError("region embedding must be unit-normalized")
    cats = space.embeddings[: space.base_count] if phase == "train" else space.embeddings
    sims = np.concatenate([cats @ emb, [space.background @ emb]])
    return _softmax(sims / temperature)


def roi_sample_weights(box, grid_h, grid_w, patch_px, bins=2):
    """Pooling stencil over raster token order: a (grid_h*grid_w,) weight
    vector w such that w @ tokens equals the mean of bilinear samples.

    The box is split into bins x bins cells; each cell takes ceil(extent /
    patch) sample points per axis at regular offsets, so cell-aligned boxes
    spanning an even number of tokens per axis pool to the plain token mean
    exactly (a whole-image box recovers the global mean). Bilinear sampling
    is linear in the features, which is what makes the stencil exist; the
    same stencil feeds the differentiable finetuning path.
    """
    x0, y0, x1, y1 = [float(v) for v in box]
    if x1 <= x0 or y1 <= y0:
        raise GeometryError(f"zero-area box {box}")
    if x0 < 0 or y0 < 0 or x1 > grid_w * patch_px or y1 > grid_h * patch_px:
        raise GeometryError(f"box {box} outside the {grid_h * patch_px}x{grid_w * patch_px} image")

    def axis_points(a0, a1, limit):
        extent = (a1 - a0) / bins
        n = max(1, int(np.ceil(extent / patch_px)))
        pts = a0 + extent * (np.arange(bins).repeat(n) + (np.tile(np.arange(n), bins) + 0.5) / n)
        return np.clip(pts / patch_px - 0.5, 0.0, limit - 1.0)

    xs = axis_points(x0, x1, grid_w)
    ys = axis_points(y0, y1, grid_h)
    weights = np.zeros((grid_h, grid_w), dtype=np.float64)
    for y in ys:
        fy0 = min(int(np.floor(y)), grid_h - 1)
        fy1 = min(fy0 + 1, grid_h - 1)
        wy = y - fy0
        for x in xs:
            fx0 = min(int(np.floor(x)), grid_w - 1)
            fx1 = min(fx0 + 1, grid_w - 1)
            wx = x - fx0
            weights[fy0, fx0] += (1 - wy) * (1 - wx)
            weights[fy0, fx1] += (1 - wy) * wx
            weights[fy1, fx0] += wy * (1 - wx)
            weights[fy1, fx1] += wy * wx
    weights /= len(xs) * len(ys)
    return weights.reshape(-1).astype(np.float32)


def roi_pool(grid, box, patch_px, bins=2):
    """Mean of bilinear samples over the box on a (g, g, d) token grid."""
    grid = np.asarray(grid)
    gh, gw, d = grid.shape
    w = roi_sample_weights(box, gh, gw, patch_px, bins=bins)
    return w.astype(grid.dtype) @ grid.reshape(gh * gw, d)


def vlm_score(grid, box, space, temperature, patch_px):
    """RoI-pooled, normalized region feature scored against every category.

    No background row here; that score is read from the detection head.
    """
    pooled = roi_pool(grid, box, patch_px)
    norm = np.linalg.norm(pooled)
    if norm <= 1e-12:
        raise DomainError("RoI-pooled feature has zero norm")
    emb = pooled / norm
    sims = space.embeddings @ emb
    return _softmax(sims / temperature)


def ensemble_score(p_cats, z, base_mask, alpha, beta):
    """Geometric-mean combination, exponent alpha on base and beta on novel.

    Computed as p * (z/p)**(1-e), algebraically z**(1-e) * p**e; this form
    collapses exactly (bitwise) when e == 1 or z == p.
    """
    p = np.asarray(p_cats, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if p.shape != z.shape:
        raise ContractError(f"score shapes disagree: {p.shape} vs {z.shape}")
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise ConfigError(f"alpha/beta must lie in [0, 1], got {alpha}, {beta}")
    if (p < 0).any() or (z < 0).any():
        raise DomainError("ensemble inputs must be nonnegative")
    if (p == 0).any():
        raise DomainError("detection scores must be positive (softmax output)")
    exponent = np.where(np.asarray(base_mask, dtype=bool), alpha, beta)
    return p * (z / p) ** (1.0 - exponent)


def fuse_objectness(s_ens, objectness):
    """Final region score: objectness times the ensemble score, elementwise."""
    o = float(objectness)
    if not 0.0 <= o <= 1.0:
        raise DomainError(f"objectness {o} outside [0, 1]")
    return np.asarray(s_ens) * o


def centerness(region_box, object_box):
    """FCOS-style centerness of the region's center w.r.t. its object box."""
    cx = (region_box[0] + region_box[2]) / 2.0
    cy = (region_box[1] + region_box[3]) / 2.0
    left, right = cx - object_box[0], object_box[2] - cx
    top, bottom = cy - object_box[1], object_box[3] - cy
    if min(left, right, top, bottom) <= 0:
        return 0.0
    return float(np.sqrt((min(left, right) / max(left, right)) * (min(top, bottom) / max(top, bottom))))


def token_feature_grid(encoder, image, pe_table):
    """Eval-mode full-image forward; last-layer features as a (g, g, d) grid."""
    tokens = encoder.patchify(image[None])
    with ad.no_grad():
        feats, _ = encoder.encode(tokens, None, pe_table, None)
    t = feats.shape[1]
    g = int(round(np.sqrt(t)))
    return feats.data[0].reshape(g, g, -1)


def select_vlm_backbone(frozen_checkpoint, finetuned_encoder, flag, vit_cfg):
    """Pick which backbone feeds the VLM score path.

    The detection score path always uses the finetuned backbone; only z
    moves. flag="frozen" loads image_enc/* records from the given checkpoint
    into a fresh encoder.
    """
    if flag == "finetuned":
        return finetuned_encoder
    if flag != "frozen":
        raise ConfigError(f"unknown backbone flag {flag!r}")
    values = load_checkpoint(frozen_checkpoint)
    encoder = ImageEncoder(vit_cfg, np.random.default_rng(0))
    encoder.load_values(values, "image_enc")
    return encoder
