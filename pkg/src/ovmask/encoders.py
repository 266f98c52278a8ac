"""Toy transformer encoders for image-text pretraining.

Image side: patch projection, fixed 2D sinusoidal positional embeddings with
per-image all-or-nothing dropout, a pre-LN ViT trunk that runs over an
arbitrary subset of tokens, and a 2-block reconstruction decoder that always
keeps its positional embeddings. Text side: a causal transformer read out at
the end-of-text token. The contrastive and reconstruction image encoders are
the same object, hence the same parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DataError, ShapeError

PAD_ID = 0
EOT_ID = 1


# ---------------------------------------------------------------------------
# positional embeddings


def sinusoidal_pe_2d(grid_h, grid_w, width):
    """Fixed 2D sin/cos table, rows in raster order, shape (grid_h*grid_w, width).

    Channel layout: [sin(y*w) | cos(y*w) | sin(x*w) | cos(x*w)], each width/4.
    """
    if width % 4 != 0:
        raise ConfigError(f"width {width} not divisible by 4")
    quarter = width // 4
    omega = 1.0 / (10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter))
    ys, xs = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    yv = ys.reshape(-1, 1) * omega
    xv = xs.reshape(-1, 1) * omega
    table = np.concatenate([np.sin(yv), np.cos(yv), np.sin(xv), np.cos(xv)], axis=1)
    return table.astype(np.float32)


def interpolate_pe(table, src_grid, dst_grid):
    """Channelwise bilinear resize of a PE table between 2D grids (align corners)."""
    sh, sw = src_grid
    dh, dw = dst_grid
    if table.shape[0] != sh * sw:
        raise ShapeError(f"table rows {table.shape[0]} != {sh}x{sw}")
    grid = np.asarray(table, dtype=np.float64).reshape(sh, sw, -1)

    def coords(dst, src):
        if dst == 1:
            return np.full(1, (src - 1) / 2.0)
        return np.arange(dst) * (src - 1) / (dst - 1)

    ys = coords(dh, sh)
    xs = coords(dw, sw)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(sh - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(sw - 2, 0))
    fy = (ys - y0).reshape(-1, 1, 1)
    fx = (xs - x0).reshape(1, -1, 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    top = (1 - fx) * grid[y0][:, x0] + fx * grid[y0][:, x1]
    bot = (1 - fx) * grid[y1][:, x0] + fx * grid[y1][:, x1]
    out = (1 - fy) * top + fy * bot
    return out.reshape(dh * dw, -1).astype(np.float32)


def draw_pe_keep(batch_size, ped_prob, mode, rng=None):
    """Per-image keep decisions for the positional table (all-or-nothing)."""
    if mode == "eval" or ped_prob == 0.0:
        return np.ones(batch_size, dtype=bool)
    if rng is None:
        raise ContractError("train-mode positional dropout needs an rng")
    return rng.random(batch_size) >= ped_prob


def apply_ped(tokens, pe_table, ped_prob, mode, rng=None):
    """Add the positional table per image, withheld wholesale with prob ped_prob.

    Returns (tokens, keep) where keep marks images whose PE was added. Rows of
    dropped images are bitwise untouched. In eval mode PE is always added.
    """
    keep = draw_pe_keep(tokens.shape[0], ped_prob, mode, rng)
    pe = np.asarray(pe_table)[None]
    return ad.add_where(tokens, pe, keep[:, None, None]), keep


# ---------------------------------------------------------------------------
# patches


def extract_patches(images, patch_size):
    """(B, H, W, C) -> (B, T, patch*patch*C), raster order, non-overlapping."""
    images = np.asarray(images)
    b, h, w, c = images.shape
    if h % patch_size or w % patch_size:
        raise ShapeError(f"image {h}x{w} not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, gh, patch_size, gw, patch_size, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, gh * gw, patch_size * patch_size * c)


def patches_to_images(patches, patch_size, grid_h, grid_w, channels):
    """Inverse of extract_patches."""
    b = patches.shape[0]
    x = patches.reshape(b, grid_h, grid_w, patch_size, patch_size, channels)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, grid_h * patch_size, grid_w * patch_size, channels)


# ---------------------------------------------------------------------------
# configs and plans


@dataclass
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    depth: int = 2
    width: int = 32
    heads: int = 4
    ped_prob: float = 0.5
    channels: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch {self.patch_size}")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if not 0.0 <= self.ped_prob <= 1.0:
            raise ConfigError(f"ped_prob {self.ped_prob} outside [0, 1]")

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def tokens(self):
        return self.grid * self.grid

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels


@dataclass
class TextConfig:
    vocab_size: int
    max_len: int = 64
    depth: int = 2
    width: int = 32
    heads: int = 4
    out_width: int = 32

    def __post_init__(self):
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2 (content + end token)")
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")


@dataclass
class MaskPlan:
    """Partition of token indices into a visible set V and a masked set M."""

    total: int
    visible: np.ndarray
    masked: np.ndarray
    mask_ratio: float

    def __post_init__(self):
        self.visible = np.sort(np.asarray(self.visible, dtype=np.int64))
        self.masked = np.sort(np.asarray(self.masked, dtype=np.int64))
        union = np.union1d(self.visible, self.masked)
        if len(np.intersect1d(self.visible, self.masked)) != 0:
            raise ContractError("visible and masked sets overlap")
        if len(union) != self.total or (len(self.visible) + len(self.masked)) != self.total:
            raise ContractError("visible and masked sets do not partition the tokens")
        if len(self.masked) != int(round(self.mask_ratio * self.total)):
            raise ContractError("masked count does not match round(mask_ratio * total)")


# ---------------------------------------------------------------------------
# transformer blocks


def _init_block(rng, width):
    s = 0.02
    return {
        "ln1_scale": np.ones(width),
        "ln1_shift": np.zeros(width),
        "wq": rng.normal(0, s, (width, width)),
        "bq": np.zeros(width),
        "wk": rng.normal(0, s, (width, width)),
        "bk": np.zeros(width),
        "wv": rng.normal(0, s, (width, width)),
        "bv": np.zeros(width),
        "wo": rng.normal(0, s, (width, width)),
        "bo": np.zeros(width),
        "ln2_scale": np.ones(width),
        "ln2_shift": np.zeros(width),
        "w1": rng.normal(0, s, (width, 4 * width)),
        "b1": np.zeros(4 * width),
        "w2": rng.normal(0, s, (4 * width, width)),
        "b2": np.zeros(width),
    }


def _block_forward(p, x, heads, attn_bias=None):
    # pre-LN: x + attn(LN(x)), then x + mlp(LN(x))
    b, k, d = x.shape
    dh = d // heads
    h = ad.layer_norm(x, p["ln1_scale"], p["ln1_shift"])
    q = ad.add(ad.matmul(h, p["wq"]), p["bq"])
    kk = ad.add(ad.matmul(h, p["wk"]), p["bk"])
    v = ad.add(ad.matmul(h, p["wv"]), p["bv"])

    def split(t):
        return ad.transpose(ad.reshape(t, (b, k, heads, dh)), (0, 2, 1, 3))  # B,H,K,dh

    q, kk, v = split(q), split(kk), split(v)
    att = ad.mul(ad.matmul(q, ad.transpose(kk, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if attn_bias is not None:
        att = ad.add(att, attn_bias)
    w = ad.softmax(att, axis=-1)
    o = ad.matmul(w, v)  # B,H,K,dh
    o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (b, k, d))
    x = ad.add(x, ad.add(ad.matmul(o, p["wo"]), p["bo"]))
    h2 = ad.layer_norm(x, p["ln2_scale"], p["ln2_shift"])
    mlp = ad.matmul(ad.gelu(ad.add(ad.matmul(h2, p["w1"]), p["b1"])), p["w2"])
    return ad.add(x, ad.add(mlp, p["b2"]))


def _to_params(tree, prefix, out):
    for key, value in tree.items():
        name = f"{prefix}/{key}" if prefix else key
        if isinstance(value, dict):
            _to_params(value, name, out)
        else:
            out[name] = ad.parameter(np.asarray(value, dtype=np.float32))
    return out


class _Stack:
    """Shared parameter plumbing for the three little transformers."""

    def __init__(self, tree):
        self.params = _to_params(tree, "", {})

    def parameters(self):
        return dict(self.params)

    def load_values(self, values, prefix):
        for name, tensor in self.params.items():
            key = f"{prefix}/{name}"
            if key not in values:
                raise ShapeError(f"checkpoint missing record {key}")
            arr = np.asarray(values[key], dtype=np.float32)
            if arr.shape != tensor.data.shape:
                raise ShapeError(f"record {key} has shape {arr.shape}, expected {tensor.data.shape}")
            tensor.data = arr.copy()

    def block(self, i):
        out = {}
        marker = f"blocks.{i}/"
        for name, tensor in self.params.items():
            if name.startswith(marker):
                out[name[len(marker):]] = tensor
        return out


class ImageEncoder(_Stack):
    """Pre-LN ViT over an arbitrary token subset; mean-pooled image embedding."""

    def __init__(self, cfg: ViTConfig, rng):
        self.cfg = cfg
        tree = {
            "patch_proj/w": rng.normal(0, 0.02, (cfg.patch_dim, cfg.width)),
            "patch_proj/b": np.zeros(cfg.width),
            "ln_f/scale": np.ones(cfg.width),
            "ln_f/shift": np.zeros(cfg.width),
        }
        for i in range(cfg.depth):
            tree[f"blocks.{i}"] = _init_block(rng, cfg.width)
        super().__init__(tree)

    def patchify(self, images):
        """Images to projected tokens, (B, T, width).

        The token grid may differ from the pretraining grid (finetuning runs
        at higher resolution); only the patch size is fixed.
        """
        raw = extract_patches(images, self.cfg.patch_size)
        if raw.shape[-1] != self.cfg.patch_dim:
            raise ShapeError(f"patch dim {raw.shape[-1]} != configured {self.cfg.patch_dim}")
        tokens = ad.matmul(Tensor(raw), self.params["patch_proj/w"])
        return ad.add(tokens, self.params["patch_proj/b"])

    def encode(self, token_embeds, fed_idx=None, pe_table=None, pe_keep=None):
        """Run the trunk over exactly the fed token rows.

        token_embeds: (B, T, width) projected tokens.
        fed_idx: (B, K) indices to feed, or None for all T (same code path).
        pe_table: (T, width) array, or None to add no positions at all.
        pe_keep: (B,) bool from the dropout draw; None keeps PE everywhere.
        Returns (per-token features in fed order (B, K, width), pooled (B, width)).
        """
        b, t, _ = token_embeds.shape
        if fed_idx is None:
            fed_idx = np.broadcast_to(np.arange(t), (b, t))
        fed_idx = np.asarray(fed_idx, dtype=np.int64)
        if fed_idx.ndim != 2 or fed_idx.shape[0] != b or fed_idx.shape[1] == 0:
            raise ContractError(f"fed index set must be (B, K>=1), got {fed_idx.shape}")
        x = ad.gather_tokens(token_embeds, fed_idx)
        if pe_table is not None:
            rows = np.asarray(pe_table)[fed_idx]  # (B, K, width)
            keep = np.ones(b, dtype=bool) if pe_keep is None else np.asarray(pe_keep, dtype=bool)
            x = ad.add_where(x, rows, keep[:, None, None])
        for i in range(self.cfg.depth):
            x = _block_forward(self.block(i), x, self.cfg.heads)
        feats = ad.layer_norm(x, self.params["ln_f/scale"], self.params["ln_f/shift"])
        pooled = ad.mean_pool(feats, axis=-2)
        return feats, pooled


class FeatureDecoder(_Stack):
    """2-block reconstruction decoder; positions are always added here."""

    def __init__(self, width, out_dim, heads, rng, depth=2):
        self.width = width
        self.out_dim = out_dim
        self.heads = heads
        self.depth = depth
        tree = {
            "mask_token": rng.normal(0, 0.02, width),
            "ln_f/scale": np.ones(width),
            "ln_f/shift": np.zeros(width),
            "out/w": rng.normal(0, 0.02, (width, out_dim)),
            "out/b": np.zeros(out_dim),
        }
        for i in range(depth):
            tree[f"blocks.{i}"] = _init_block(rng, width)
        super().__init__(tree)

    def decode(self, visible_feats, visible_idx, masked_idx, pe_table):
        """Reconstruct features at the masked indices, rows in masked order."""
        b, nv, d = visible_feats.shape
        visible_idx = np.asarray(visible_idx, dtype=np.int64)
        masked_idx = np.asarray(masked_idx, dtype=np.int64)
        if visible_idx.shape != (b, nv):
            raise ShapeError(f"visible index shape {visible_idx.shape} != features {visible_feats.shape}")
        t = pe_table.shape[0]
        nm = masked_idx.shape[1]
        if nm == 0:
            return Tensor(np.zeros((b, 0, self.out_dim), dtype=np.float32))
        grid = ad.scatter_tokens(visible_feats, visible_idx, t)
        mask_rows = ad.broadcast_to(ad.reshape(self.params["mask_token"], (1, 1, d)), (b, nm, d))
        grid = ad.add(grid, ad.scatter_tokens(mask_rows, masked_idx, t))
        x = ad.add(grid, np.asarray(pe_table)[None])
        for i in range(self.depth):
            x = _block_forward(self.block(i), x, self.heads)
        x = ad.layer_norm(x, self.params["ln_f/scale"], self.params["ln_f/shift"])
        x = ad.add(ad.matmul(x, self.params["out/w"]), self.params["out/b"])
        return ad.gather_tokens(x, masked_idx)


def pad_or_truncate(ids, max_len, eot_id=EOT_ID, pad_id=PAD_ID):
    """Content tokens, truncated to max_len-1, then the end token, then padding."""
    ids = list(ids)[: max_len - 1]
    return np.array(ids + [eot_id] + [pad_id] * (max_len - 1 - len(ids)), dtype=np.int64)


class TextEncoder(_Stack):
    """Causal transformer; the embedding is read at the end-of-text position."""

    def __init__(self, cfg: TextConfig, rng):
        self.cfg = cfg
        tree = {
            "tok_embed": rng.normal(0, 0.02, (cfg.vocab_size, cfg.width)),
            "pos_embed": rng.normal(0, 0.01, (cfg.max_len, cfg.width)),
            "ln_f/scale": np.ones(cfg.width),
            "ln_f/shift": np.zeros(cfg.width),
            "proj/w": rng.normal(0, 0.02, (cfg.width, cfg.out_width)),
        }
        for i in range(cfg.depth):
            tree[f"blocks.{i}"] = _init_block(rng, cfg.width)
        super().__init__(tree)
        self._causal_bias = np.triu(np.full((cfg.max_len, cfg.max_len), -1e9, dtype=np.float32), k=1)

    def encode(self, ids):
        """Token id rows (B, max_len) -> pooled embeddings (B, out_width)."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] != self.cfg.max_len:
            raise ShapeError(f"ids must be (B, {self.cfg.max_len}), got {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise DataError(f"token id outside vocabulary of size {self.cfg.vocab_size}")
        eot_mask = ids == EOT_ID
        if not eot_mask.any(axis=1).all():
            raise DataError("every sequence needs an end-of-text token")
        eot_pos = eot_mask.argmax(axis=1)

        x = ad.embedding(self.params["tok_embed"], ids)
        x = ad.add(x, self.params["pos_embed"])
        bias = self._causal_bias[None, None]
        for i in range(self.cfg.depth):
            x = _block_forward(self.block(i), x, self.cfg.heads, attn_bias=bias)
        x = ad.layer_norm(x, self.params["ln_f/scale"], self.params["ln_f/shift"])
        pooled = ad.gather_tokens(x, eot_pos[:, None])
        pooled = ad.reshape(pooled, (ids.shape[0], self.cfg.width))
        return ad.matmul(pooled, self.params["proj/w"])


# ---------------------------------------------------------------------------
# bundle


@dataclass
class ModelConfig:
    vit: ViTConfig = field(default_factory=ViTConfig)
    text: TextConfig = field(default_factory=lambda: TextConfig(vocab_size=64))
    init_inv_temperature: float = 10.0
    decoder_out_dim: int = 0  # 0 = encoder width (feature targets)


class DualEncoderModel:
    """Image encoder + text encoder + reconstruction decoder + temperature.

    The reconstruction encoder is the image encoder itself (weight-shared);
    there is deliberately no second parameter set.
    """

    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg
        ss = np.random.SeedSequence(seed)
        r_img, r_txt, r_dec = [np.random.default_rng(s) for s in ss.spawn(3)]
        self.image_enc = ImageEncoder(cfg.vit, r_img)
        self.text_enc = TextEncoder(cfg.text, r_txt)
        out_dim = cfg.decoder_out_dim or cfg.vit.width
        self.decoder = FeatureDecoder(cfg.vit.width, out_dim, cfg.vit.heads, r_dec)
        self.log_temp = ad.parameter(np.log(1.0 / cfg.init_inv_temperature))
        self.pe_table = sinusoidal_pe_2d(cfg.vit.grid, cfg.vit.grid, cfg.vit.width)

    def temperature(self):
        """Positive scalar tau = exp(log_temp), clamped at 1e-3."""
        return ad.clip_min(ad.texp(self.log_temp), 1e-3)

    def parameters(self):
        out = {}
        for name, p in self.image_enc.parameters().items():
            out[f"image_enc/{name}"] = p
        for name, p in self.text_enc.parameters().items():
            out[f"text_enc/{name}"] = p
        for name, p in self.decoder.parameters().items():
            out[f"decoder/{name}"] = p
        out["temperature"] = self.log_temp
        return out

    def zero_grads(self):
        for p in self.parameters().values():
            p.grad = None

    def save(self, path):
        from .checkpoint import save_checkpoint

        save_checkpoint(self.parameters(), path)

    def load_values(self, values):
        self.image_enc.load_values(values, "image_enc")
        self.text_enc.load_values(values, "text_enc")
        self.decoder.load_values(values, "decoder")
        self.log_temp.data = np.asarray(values["temperature"], dtype=np.float32).copy()

    @classmethod
    def load(cls, cfg: ModelConfig, path, seed=0):
        from .checkpoint import load_checkpoint

        model = cls(cfg, seed=seed)
        model.load_values(load_checkpoint(path))
        return model
