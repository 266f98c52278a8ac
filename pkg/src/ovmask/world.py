"""Procedural image-caption world: 80 concept categories (8 colors x 2 sizes
x 5 shapes) rendered as flat-shaded blobs on a black canvas, with templated
captions over a small fixed vocabulary, a base/novel split, and a binary
dataset container (.cfmd files).

Rendering is integer rasterization with no anti-aliasing; everything is a
pure function of the seed.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, FormatError

SHAPES = ("circle", "square", "triangle", "cross", "ring")
SIZES = ("small", "large")
COLORS = {
    "red": (220, 40, 40),
    "green": (40, 200, 60),
    "blue": (50, 80, 230),
    "yellow": (230, 220, 50),
    "magenta": (220, 60, 220),
    "cyan": (60, 220, 220),
    "orange": (240, 150, 40),
    "white": (235, 235, 235),
}

NORM_MEAN = 0.1
NORM_STD = 0.3

CAPTION_TEMPLATES = (
    "a photo of {}",
    "an image with {}",
    "there is {} in the picture",
    "{} on a dark background",
)


@dataclass(frozen=True)
class Concept:
    color: str
    size: str
    shape: str

    @property
    def name(self):
        return f"{self.color} {self.size} {self.shape}"


def all_concepts():
    """Canonical ordering of the 80 categories; label ids index this list."""
    return [Concept(c, s, sh) for c in COLORS for s in SIZES for sh in SHAPES]


CATEGORY_NAMES = [c.name for c in all_concepts()]


class Vocabulary:
    """Whitespace tokenizer over the closed caption vocabulary."""

    PAD = "<pad>"
    EOT = "<eot>"

    def __init__(self):
        words = set()
        for template in CAPTION_TEMPLATES:
            words.update(template.format("").split())
        words.update(["a", "and", "background"])
        words.update(COLORS)
        words.update(SIZES)
        words.update(SHAPES)
        self.words = [self.PAD, self.EOT] + sorted(words)
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, text):
        ids = []
        for word in text.split():
            if word not in self.index:
                raise DataError(f"word {word!r} not in the toy vocabulary")
            ids.append(self.index[word])
        return ids

    def decode(self, ids):
        return " ".join(self.words[i] for i in ids if i > 1)


@dataclass
class SceneObject:
    concept: Concept
    box: tuple  # (x0, y0, x1, y1) pixels, inside image bounds


@dataclass
class Scene:
    image: np.ndarray  # (H, W, 3) float32, normalized
    objects: list
    caption: str


@dataclass
class Split:
    base_names: list
    novel_names: list

    def __post_init__(self):
        overlap = set(self.base_names) & set(self.novel_names)
        if overlap:
            raise ContractError(f"base and novel categories overlap: {sorted(overlap)[:3]}")
        self._novel = set(self.novel_names)

    def is_novel(self, name):
        return name in self._novel

    def membership(self, name):
        return "novel" if name in self._novel else "base"


def default_split(n_novel=16, seed=7):
    """Hold out whole attribute groups, not random name combinations.

    Novel categories that are mere recombinations of base-supervised
    attributes transfer trivially through the compositional names; holding
    out one full color (10 categories) plus the larges of a second color
    (5) plus one extra of that color makes the novel set reachable only
    through pretraining captions, which is the regime the base/novel
    protocol is about. Remaining slots (n_novel > 16) fall to random picks.
    """
    rng = np.random.default_rng(seed)
    colors = list(COLORS)
    color_a = colors[int(rng.integers(len(colors)))]
    color_b = colors[(colors.index(color_a) + 1 + int(rng.integers(len(colors) - 1))) % len(colors)]
    novel = [c.name for c in all_concepts() if c.color == color_a]
    novel += [c.name for c in all_concepts() if c.color == color_b and c.size == "large"]
    extras = [c.name for c in all_concepts() if c.color == color_b and c.size == "small"]
    order = rng.permutation(len(extras))
    for i in order:
        if len(novel) >= n_novel:
            break
        novel.append(extras[int(i)])
    pool = [n for n in CATEGORY_NAMES if n not in set(novel)]
    order = rng.permutation(len(pool))
    for i in order:
        if len(novel) >= n_novel:
            break
        novel.append(pool[int(i)])
    novel = novel[:n_novel]
    return Split(
        base_names=[n for n in CATEGORY_NAMES if n not in set(novel)],
        novel_names=[n for n in CATEGORY_NAMES if n in set(novel)],
    )


# ---------------------------------------------------------------------------
# rendering


def _radius(size, image_size):
    # absolute radii, independent of canvas size: a 32px pretraining frame is
    # then object-centric (one object fills much of it) while a 64px
    # detection scene holds several objects at the very same patch-level
    # scale, so region crops at eval look like pretraining frames
    del image_size
    return 9 if size == "small" else 14


def _draw(canvas, concept, cx, cy, r):
    h, w, _ = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - cx, yy - cy
    if concept.shape == "circle":
        mask = dx * dx + dy * dy <= r * r
    elif concept.shape == "square":
        mask = np.maximum(np.abs(dx), np.abs(dy)) <= r
    elif concept.shape == "triangle":
        half = (yy - (cy - r)) / 2.0
        mask = (yy >= cy - r) & (yy <= cy + r) & (np.abs(dx) <= half)
    elif concept.shape == "cross":
        bar = max(1, r // 3)
        mask = ((np.abs(dx) <= bar) & (np.abs(dy) <= r)) | ((np.abs(dy) <= bar) & (np.abs(dx) <= r))
    elif concept.shape == "ring":
        inner = max(1, r - max(2, r // 2))
        d2 = dx * dx + dy * dy
        mask = (d2 <= r * r) & (d2 >= inner * inner)
    else:
        raise ContractError(f"unknown shape {concept.shape}")
    canvas[mask] = COLORS[concept.color]


def _boxes_overlap(a, b):
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def _place_in_quadrants(rng, concepts, image_size):
    """Assign each object its own image quadrant; placement never fails, so
    per-category frequencies are exactly as sampled."""
    half = image_size // 2
    corners = [(0, 0), (half, 0), (0, half), (half, half)]
    order = rng.permutation(4)
    placed = []
    for k, concept in enumerate(concepts):
        qx, qy = corners[order[k]]
        r = _radius(concept.size, image_size)
        lo, hi = r + 1, half - r - 1
        if hi > lo:
            cx = qx + int(rng.integers(lo, hi + 1))
            cy = qy + int(rng.integers(lo, hi + 1))
        else:
            cx, cy = qx + half // 2, qy + half // 2
        box = (float(cx - r - 1), float(cy - r - 1), float(cx + r + 1), float(cy + r + 1))
        placed.append((concept, cx, cy, r, box))
    return placed


def _place_objects(rng, concepts, image_size):
    """Non-overlapping placements; objects that cannot be placed are dropped."""
    placed = []
    boxes = []
    for concept in concepts:
        r = _radius(concept.size, image_size)
        ok = False
        for _ in range(40):
            cx = int(rng.integers(r + 1, image_size - r - 1))
            cy = int(rng.integers(r + 1, image_size - r - 1))
            box = (float(cx - r - 1), float(cy - r - 1), float(cx + r + 1), float(cy + r + 1))
            if all(not _boxes_overlap(box, b) for b in boxes):
                ok = True
                break
        if not ok:
            continue
        boxes.append(box)
        placed.append((concept, cx, cy, r, box))
    return placed


def render_scene(placements, image_size, background=(0, 0, 0), noise_rng=None, noise=18):
    canvas = np.zeros((image_size, image_size, 3), dtype=np.uint8)
    canvas[:] = background
    for concept, cx, cy, r, _ in placements:
        _draw(canvas, concept, cx, cy, r)
    buf = canvas.astype(np.int16)
    if noise_rng is not None and noise > 0:
        # seed-pure sensor-style nuisance: unpredictable at masked positions,
        # so pixel-space reconstruction has to waste capacity on it
        buf = buf + noise_rng.integers(-noise, noise + 1, size=buf.shape)
    image = np.clip(buf, 0, 255).astype(np.float32) / 255.0
    return ((image - NORM_MEAN) / NORM_STD).astype(np.float32)


def _random_background(rng):
    # dark, scene specific: keeps any single direction in feature space from
    # standing in for "background" across the whole dataset
    return tuple(int(v) for v in rng.integers(0, 61, size=3))


def _caption_for(concepts, rng):
    phrase = " and ".join(f"a {c.name}" for c in concepts)
    template = CAPTION_TEMPLATES[int(rng.integers(len(CAPTION_TEMPLATES)))]
    return template.format(phrase)


def generate_pretrain_pair(seed, image_size=32):
    """Deterministic scene + caption. The first concept follows the seed so
    sequential seeds cover every category; the rest are uniform draws."""
    rng = np.random.default_rng(seed)
    concepts = all_concepts()
    n_obj = int(rng.choice([1, 2, 3], p=[0.7, 0.25, 0.05]))
    chosen = [concepts[seed % len(concepts)]]
    chosen += [concepts[int(i)] for i in rng.integers(0, len(concepts), size=n_obj - 1)]
    background = _random_background(rng)
    placements = _place_objects(rng, chosen, image_size)
    if not placements:  # pathological seed; fall back to a single centered object
        c = chosen[0]
        r = _radius(c.size, image_size)
        mid = image_size // 2
        placements = [(c, mid, mid, r, (float(mid - r - 1), float(mid - r - 1), float(mid + r + 1), float(mid + r + 1)))]
    image = render_scene(placements, image_size, background, noise_rng=rng)
    used = [p[0] for p in placements]
    caption = _caption_for(used, rng)
    objects = [SceneObject(concept=p[0], box=p[4]) for p in placements]
    return Scene(image=image, objects=objects, caption=caption)


def generate_detection_scene(seed, split, phase="eval", image_size=64):
    """Region-annotated scene. Returns (scene, labels) where labels[i] is the
    canonical category id of object i, or -1 in the train phase for objects
    whose category is novel (box emitted, label withheld).
    """
    if phase not in ("train", "eval"):
        raise ContractError(f"unknown phase {phase!r}")
    rng = np.random.default_rng(seed)
    concepts = all_concepts()
    n_obj = int(rng.integers(1, 4))
    # slot-indexed concepts keep per-category eval frequency flat by construction
    chosen = [concepts[(seed * 3 + k) % len(concepts)] for k in range(n_obj)]
    background = _random_background(rng)
    placements = _place_in_quadrants(rng, chosen, image_size)
    image = render_scene(placements, image_size, background, noise_rng=rng)
    caption = _caption_for([p[0] for p in placements], rng)
    objects = [SceneObject(concept=p[0], box=p[4]) for p in placements]
    labels = []
    for obj in objects:
        idx = CATEGORY_NAMES.index(obj.concept.name)
        if phase == "train" and split.is_novel(obj.concept.name):
            labels.append(-1)
        else:
            labels.append(idx)
    return Scene(image=image, objects=objects, caption=caption), np.array(labels, dtype=np.int16)


# ---------------------------------------------------------------------------
# dataset container


MAGIC = b"CFMD"
VERSION = 1


@dataclass
class Record:
    image: np.ndarray  # (H, W, C) float32
    caption_ids: np.ndarray  # (L,) int
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.float32))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int16))


def scene_to_record(scene, vocab, labels=None):
    ids = np.array(vocab.encode(scene.caption), dtype=np.int64)
    boxes = np.array([o.box for o in scene.objects], dtype=np.float32).reshape(-1, 4)
    if labels is None:
        labels = np.full(len(scene.objects), -1, dtype=np.int16)
    return Record(image=scene.image, caption_ids=ids, boxes=boxes, labels=np.asarray(labels, dtype=np.int16))


def write_dataset(records, path):
    """Binary layout (little-endian): magic, version byte, u32 record count,
    then per record: u16 h/w/c + f32 image, u16 token count + u16 ids,
    u16 box count + per box 4xf32 coords and an i16 label."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(records)))
        for rec in records:
            img = np.ascontiguousarray(rec.image, dtype="<f4")
            h, w, c = img.shape
            fh.write(struct.pack("<HHH", h, w, c))
            fh.write(img.tobytes())
            ids = np.asarray(rec.caption_ids, dtype="<u2")
            fh.write(struct.pack("<H", len(ids)))
            fh.write(ids.tobytes())
            boxes = np.ascontiguousarray(rec.boxes, dtype="<f4").reshape(-1, 4)
            labels = np.asarray(rec.labels, dtype="<i2")
            if len(labels) != len(boxes):
                raise ContractError("boxes and labels must align")
            fh.write(struct.pack("<H", len(boxes)))
            for box, label in zip(boxes, labels):
                fh.write(struct.pack("<ffffh", *[float(v) for v in box], int(label)))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.blob):
            raise FormatError(f"truncated dataset while reading {what}", self.offset)
        piece = self.blob[self.offset : self.offset + n]
        self.offset += n
        return piece

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_dataset(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad dataset magic", 0)
    if r.unpack("<B", "version")[0] != VERSION:
        raise FormatError("unsupported dataset version", 4)
    (count,) = r.unpack("<I", "record count")
    records = []
    for _ in range(count):
        h, w, c = r.unpack("<HHH", "image header")
        img = np.frombuffer(r.take(4 * h * w * c, "image payload"), dtype="<f4").reshape(h, w, c)
        (n_tok,) = r.unpack("<H", "token count")
        ids = np.frombuffer(r.take(2 * n_tok, "caption ids"), dtype="<u2").astype(np.int64)
        (n_box,) = r.unpack("<H", "box count")
        boxes = np.zeros((n_box, 4), dtype=np.float32)
        labels = np.zeros(n_box, dtype=np.int16)
        for i in range(n_box):
            x0, y0, x1, y1, label = r.unpack("<ffffh", "box record")
            boxes[i] = (x0, y0, x1, y1)
            labels[i] = label
        records.append(Record(image=img.astype(np.float32), caption_ids=ids, boxes=boxes, labels=labels))
    if r.offset != len(blob):
        raise FormatError("trailing bytes after last record", r.offset)
    return records


def generate_pretrain_dataset(count, seed, image_size=32, vocab=None):
    vocab = vocab or Vocabulary()
    records = []
    for i in range(count):
        scene = generate_pretrain_pair(seed + i, image_size=image_size)
        records.append(scene_to_record(scene, vocab))
    return records


def generate_detection_dataset(count, seed, split=None, phase="eval", image_size=64, vocab=None):
    vocab = vocab or Vocabulary()
    split = split or default_split()
    records = []
    for i in range(count):
        scene, labels = generate_detection_scene(seed + i, split, phase=phase, image_size=image_size)
        records.append(scene_to_record(scene, vocab, labels=labels))
    return records
