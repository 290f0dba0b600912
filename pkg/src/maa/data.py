"""Synthetic shape-caption retrieval corpus: generation, tokenization, loading.

Every image shows two colored shapes in a named spatial relation, captioned by
the template "a <color> <shape> <relation> a <color> <shape>". Captions are
unique across the corpus, so retrieval ground truth is one-to-one. Generation
is driven entirely by the spec seed and produces byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

PAD_WORD = "<pad>"
MASK_WORD = "[MASK]"
PAD_ID = 0
MASK_ID = 1

DEFAULT_SHAPES = ["circle", "square", "triangle", "cross"]
DEFAULT_COLORS = ["red", "green", "blue", "yellow"]
DEFAULT_LAYOUTS = ["above", "below", "left", "right"]

# Shapes are dark against the bright background (geometry carries a strong
# signal) but the color classes are deliberately subtle tints a few multiples
# of the attack budget apart, so semantic (color) directions are reachable
# within an L-inf ball — the regime where crop-ensemble attacks transfer.
_COLOR_RGB = {
    "red": (0.494, 0.428, 0.428),
    "green": (0.428, 0.489, 0.428),
    "blue": (0.428, 0.439, 0.494),
    "yellow": (0.483, 0.483, 0.412),
    "purple": (0.472, 0.423, 0.483),
    "orange": (0.500, 0.456, 0.417),
}
_BACKGROUND = 0.92
MAX_CAPTION_LEN = 16


class DataError(Exception):
    pass


class OutOfVocabularyError(DataError):
    def __init__(self, word: str):
        super().__init__(f"word not in vocabulary: {word!r}")
        self.word = word


@dataclass
class DatasetSpec:
    num_pairs: int = 256
    image_size: int = 32
    shape_vocab: list[str] = field(default_factory=lambda: list(DEFAULT_SHAPES))
    color_vocab: list[str] = field(default_factory=lambda: list(DEFAULT_COLORS))
    layout_vocab: list[str] = field(default_factory=lambda: list(DEFAULT_LAYOUTS))
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def validate(self) -> None:
        if self.num_pairs < 8:
            raise DataError(f"num_pairs must be >= 8, got {self.num_pairs}")
        if self.image_size < 8:
            raise DataError(f"image_size too small: {self.image_size}")
        if any(f <= 0 for f in self.split_fractions):
            raise DataError(f"split fractions must be positive: {self.split_fractions}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise DataError(f"split fractions must sum to 1: {self.split_fractions}")
        n_captions = (
            len(self.shape_vocab) ** 2
            * len(self.color_vocab) ** 2
            * len(self.layout_vocab)
        )
        if n_captions < self.num_pairs:
            raise DataError(
                f"vocabulary yields only {n_captions} distinct captions, "
                f"need {self.num_pairs}"
            )
        for c in self.color_vocab:
            if c not in _COLOR_RGB:
                raise DataError(f"no RGB value registered for color {c!r}")


@dataclass
class Vocabulary:
    words: list[str]  # index == id; includes <pad> and [MASK]

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def pad_id(self) -> int:
        return self.index[PAD_WORD]

    @property
    def mask_id(self) -> int:
        return self.index[MASK_WORD]

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class CaptionTokens:
    tokens: list[int]
    words: list[str]

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class ManifestEntry:
    index: int
    image: str
    caption: str
    split: str
    sha256: str


@dataclass
class DatasetHandle:
    root: Path
    entries: list[ManifestEntry]
    vocab: Vocabulary
    spec: DatasetSpec

    @property
    def num_pairs(self) -> int:
        return len(self.entries)

    def indices(self, split: str | None = None) -> list[int]:
        if split is None:
            return [e.index for e in self.entries]
        return [e.index for e in self.entries if e.split == split]


def split_boundaries(num_pairs: int, fractions) -> tuple[int, int]:
    """Cumulative-rounding split rule: boundaries at round(cum_frac * n)."""
    b1 = int(round(fractions[0] * num_pairs))
    b2 = int(round((fractions[0] + fractions[1]) * num_pairs))
    return b1, b2


def build_vocab(spec: DatasetSpec) -> Vocabulary:
    words = [PAD_WORD, MASK_WORD, "a"]
    words += sorted(spec.color_vocab) + sorted(spec.shape_vocab) + sorted(spec.layout_vocab)
    return Vocabulary(words)


def tokenize(words: list[str] | str, vocab: Vocabulary) -> CaptionTokens:
    if isinstance(words, str):
        words = words.split()
    if not 1 <= len(words) <= MAX_CAPTION_LEN:
        raise DataError(f"caption length must be in [1, {MAX_CAPTION_LEN}], got {len(words)}")
    ids = []
    for w in words:
        if w not in vocab.index:
            raise OutOfVocabularyError(w)
        ids.append(vocab.index[w])
    return CaptionTokens(tokens=ids, words=list(words))


def detokenize(tokens: CaptionTokens) -> str:
    return " ".join(tokens.words)


def _draw_shape(img: np.ndarray, shape: str, color: str, cy: float, cx: float, r: float) -> None:
    size = img.shape[1]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if shape == "circle":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif shape == "square":
        mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    elif shape == "triangle":
        mask = (yy >= cy - r) & (yy <= cy + r) & (np.abs(xx - cx) <= (yy - (cy - r)) / 2.0)
    elif shape == "cross":
        arm = max(r / 3.0, 1.0)
        mask = ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)) | (
            (np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)
        )
    else:
        raise DataError(f"unknown shape {shape!r}")
    rgb = _COLOR_RGB[color]
    for c in range(3):
        img[c][mask] = rgb[c]


def _render_pair(spec: DatasetSpec, combo, rng: np.random.Generator) -> np.ndarray:
    c1, s1, rel, c2, s2 = combo
    size = spec.image_size
    img = np.full((3, size, size), _BACKGROUND, dtype=np.float64)
    r = size / 5.0 + rng.uniform(-size / 32.0, size / 32.0)
    jit = lambda: rng.uniform(-size / 24.0, size / 24.0)
    mid = size / 2.0
    q, t = size / 4.0 + r / 4.0, 3.0 * size / 4.0 - r / 4.0
    if rel == "above":
        p1, p2 = (q + jit(), mid + jit()), (t + jit(), mid + jit())
    elif rel == "below":
        p1, p2 = (t + jit(), mid + jit()), (q + jit(), mid + jit())
    elif rel == "left":
        p1, p2 = (mid + jit(), q + jit()), (mid + jit(), t + jit())
    else:  # right
        p1, p2 = (mid + jit(), t + jit()), (mid + jit(), q + jit())
    _draw_shape(img, s1, c1, p1[0], p1[1], r)
    _draw_shape(img, s2, c2, p2[0], p2[1], r)
    return np.clip(img, 0.0, 1.0)


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def _caption_of(combo) -> str:
    c1, s1, rel, c2, s2 = combo
    return f"a {c1} {s1} {rel} a {c2} {s2}"


def generate_dataset(spec: DatasetSpec, root: str | Path) -> DatasetHandle:
    """Render the full corpus under ``root`` and return a handle to it."""
    spec.validate()
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)

    combos = [
        (c1, s1, rel, c2, s2)
        for c1 in sorted(spec.color_vocab)
        for s1 in sorted(spec.shape_vocab)
        for rel in sorted(spec.layout_vocab)
        for c2 in sorted(spec.color_vocab)
        for s2 in sorted(spec.shape_vocab)
    ]
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(combos))[: spec.num_pairs]
    b1, b2 = split_boundaries(spec.num_pairs, spec.split_fractions)

    vocab = build_vocab(spec)
    entries = []
    for i, ci in enumerate(order):
        combo = combos[ci]
        img = _render_pair(spec, combo, rng)
        u8 = _to_uint8(img)
        rel_path = f"images/{i:05d}.png"
        Image.fromarray(np.moveaxis(u8, 0, 2)).save(root / rel_path)
        digest = hashlib.sha256((root / rel_path).read_bytes()).hexdigest()
        split = "train" if i < b1 else ("val" if i < b2 else "test")
        caption = _caption_of(combo)
        tokenize(caption, vocab)  # closure check: every caption must tokenize
        entries.append(ManifestEntry(i, rel_path, caption, split, digest))

    with open(root / "manifest.jsonl", "w") as f:
        for e in entries:
            f.write(json.dumps(e.__dict__) + "\n")
    (root / "vocab.txt").write_text("\n".join(vocab.words) + "\n")
    (root / "dataset_spec.json").write_text(
        json.dumps({**spec.__dict__, "split_fractions": list(spec.split_fractions)}, indent=2)
    )
    return DatasetHandle(root=root, entries=entries, vocab=vocab, spec=spec)


def open_dataset(root: str | Path) -> DatasetHandle:
    root = Path(root)
    if not (root / "manifest.jsonl").exists():
        raise DataError(f"no dataset at {root} (run gen-data first)")
    vocab = Vocabulary((root / "vocab.txt").read_text().splitlines())
    entries = []
    with open(root / "manifest.jsonl") as f:
        for line in f:
            d = json.loads(line)
            entries.append(ManifestEntry(**d))
    raw = json.loads((root / "dataset_spec.json").read_text())
    raw["split_fractions"] = tuple(raw["split_fractions"])
    spec = DatasetSpec(**raw)
    return DatasetHandle(root=root, entries=entries, vocab=vocab, spec=spec)


def load_pair(handle: DatasetHandle, index: int, verify: bool = False) -> tuple[np.ndarray, CaptionTokens]:
    """Load (image, tokens) for one manifest entry. Image is float64 in [0,1]."""
    if not 0 <= index < handle.num_pairs:
        raise IndexError(f"pair index {index} out of range [0, {handle.num_pairs})")
    entry = handle.entries[index]
    path = handle.root / entry.image
    if verify:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != entry.sha256:
            raise DataError(f"checksum mismatch for {path}")
    u8 = np.asarray(Image.open(path), dtype=np.uint8)
    img = np.moveaxis(u8, 2, 0).astype(np.float64) / 255.0
    return img, tokenize(entry.caption, handle.vocab)


def load_image(handle: DatasetHandle, index: int) -> np.ndarray:
    return load_pair(handle, index)[0]
