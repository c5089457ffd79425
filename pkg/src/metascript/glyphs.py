"""Glyph images, prototype rendering, dataset indexing and training-tuple sampling.

Glyphs are float32 arrays of shape (R, R) with ink = 1.0 and background = 0.0.
On disk they are 8-bit grayscale PNGs in paper polarity (white background);
:func:`preprocess` inverts them on load.

Dataset layout::

    <root>/prototypes/<hex codepoint>.png
    <root>/writers/<writer id>/<hex codepoint>.png
"""

import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

log = logging.getLogger(__name__)

RESOLUTION = 128
PROTOTYPE_MARGIN = 0.08


class DatasetError(ValueError):
    pass


class MissingGlyphError(KeyError):
    def __init__(self, codepoint: int, font: str):
        super().__init__(f"font {font} has no glyph for U+{codepoint:04X}")
        self.codepoint = codepoint

    def __str__(self) -> str:
        return self.args[0]


class EmptyGlyphError(ValueError):
    def __init__(self, detail: str = ""):
        super().__init__("empty glyph" + (f": {detail}" if detail else ""))


def check_glyph(pixels: np.ndarray, resolution: int | None = None) -> np.ndarray:
    """Validate the glyph invariants and return the array unchanged."""
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ValueError(f"glyph must be square 2-D, got shape {pixels.shape}")
    if resolution is not None and pixels.shape[0] != resolution:
        raise ValueError(f"glyph side {pixels.shape[0]} != resolution {resolution}")
    if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
        raise ValueError("glyph values must lie in [0, 1]")
    return pixels


def codepoint_name(codepoint: int) -> str:
    return f"{codepoint:04x}"


def parse_codepoint(name: str) -> int:
    return int(name, 16)


# ---------------------------------------------------------------------------
# rendering


@functools.lru_cache(maxsize=16)
def font_codepoints(font_path: str) -> frozenset[int]:
    from fontTools.ttLib import TTFont

    with TTFont(font_path, lazy=True) as font:
        return frozenset(font.getBestCmap() or {})


@functools.lru_cache(maxsize=16)
def _font(font_path: str, size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(font_path, size)


def _resize(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    img = Image.fromarray(pixels.astype(np.float32), mode="F")
    return np.asarray(img.resize((width, height), Image.Resampling.BILINEAR), dtype=np.float32)


def render_prototype(
    font_path, codepoint: int, resolution: int = RESOLUTION, margin: float = PROTOTYPE_MARGIN, fit: bool = True
) -> np.ndarray:
    """Render one character from a standard font as a centered glyph.

    With ``fit`` the ink bounding box is scaled (aspect preserved) into the
    canvas minus ``margin`` on each side. Without it the em box is mapped onto
    the canvas so the glyph keeps its natural size and position, which is what
    punctuation needs.
    """
    font_path = str(font_path)
    if codepoint not in font_codepoints(font_path):
        raise MissingGlyphError(codepoint, font_path)
    scale = 4
    em = resolution * scale
    font = _font(font_path, em)
    canvas = Image.new("L", (2 * em, 2 * em), 0)
    draw = ImageDraw.Draw(canvas)
    char = chr(codepoint)
    if fit:
        draw.text((em // 2, em // 2), char, fill=255, font=font)
    else:
        ascent, _ = font.getmetrics()
        advance = font.getlength(char)
        draw.text(((2 * em - advance) / 2, em // 2 + (em - ascent) / 2 - em * 0.12), char, fill=255, font=font)
    big = np.asarray(canvas, dtype=np.float32) / 255.0
    if not fit:
        crop = big[em // 2 : em // 2 + em, em // 2 : em // 2 + em]
        return np.clip(_resize(crop, resolution, resolution), 0.0, 1.0)

    rows, cols = np.nonzero(big > 0)
    if rows.size == 0:
        raise EmptyGlyphError(f"U+{codepoint:04X} renders no ink")
    ink = big[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1]
    box = resolution * (1.0 - 2.0 * margin)
    factor = box / max(ink.shape)
    h = max(1, int(round(ink.shape[0] * factor)))
    w = max(1, int(round(ink.shape[1] * factor)))
    small = _resize(ink, w, h)
    out = np.zeros((resolution, resolution), dtype=np.float32)
    top, left = (resolution - h) // 2, (resolution - w) // 2
    out[top : top + h, left : left + w] = small
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(raw, resolution: int = RESOLUTION, margin: float = 0.0) -> np.ndarray:
    """Convert an arbitrary grayscale image to a canonical glyph.

    Integer images and float images outside [0, 1] (scans) are min-max
    stretched; floats already in [0, 1] keep their intensities. The polarity
    is flipped when the border is brighter than mid-gray, and non-canonical
    shapes are padded to a square with background and bilinearly scaled.
    Canonical glyphs therefore come back unchanged.
    """
    raw = np.asarray(raw)
    pixels = raw.astype(np.float64)
    if pixels.ndim == 3:
        pixels = pixels.mean(axis=2)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ValueError(f"expected a nonempty 2-D image, got shape {pixels.shape}")
    lo, hi = pixels.min(), pixels.max()
    if not hi > lo:
        raise EmptyGlyphError("image is uniform")
    if not np.issubdtype(raw.dtype, np.floating) or lo < 0.0 or hi > 1.0:
        pixels = (pixels - lo) / (hi - lo)
    border = np.concatenate([pixels[0], pixels[-1], pixels[:, 0], pixels[:, -1]])
    if border.mean() > 0.5:
        pixels = 1.0 - pixels

    if pixels.shape != (resolution, resolution):
        h, w = pixels.shape
        side = int(round(max(h, w) / (1.0 - 2.0 * margin)))
        square = np.zeros((side, side), dtype=np.float64)
        top, left = (side - h) // 2, (side - w) // 2
        square[top : top + h, left : left + w] = pixels
        pixels = _resize(square, resolution, resolution)
    return np.clip(pixels, 0.0, 1.0).astype(np.float32)


def read_glyph(path, resolution: int = RESOLUTION) -> np.ndarray:
    return _read_glyph_cached(str(path), resolution)


@functools.lru_cache(maxsize=8192)
def _read_glyph_cached(path: str, resolution: int) -> np.ndarray:
    with Image.open(path) as img:
        raw = np.asarray(img.convert("L"))
    glyph = preprocess(raw, resolution)
    glyph.setflags(write=False)
    return glyph


def write_glyph(glyph: np.ndarray, path) -> None:
    """Write a glyph as an 8-bit grayscale PNG with white background."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round((1.0 - np.clip(glyph, 0.0, 1.0)) * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


# ---------------------------------------------------------------------------
# dataset


def _writer_sort_key(name: str):
    return (0, int(name), name) if name.isdigit() else (1, 0, name)


@dataclass(frozen=True)
class DatasetIndex:
    root: Path
    writers: tuple[str, ...]
    characters: tuple[int, ...]
    entries: dict = field(repr=False)  # (codepoint, writer) -> Path
    prototypes: dict = field(repr=False)  # codepoint -> Path
    resolution: int = RESOLUTION

    @property
    def m(self) -> int:
        return len(self.writers)

    @property
    def n(self) -> int:
        return len(self.characters)

    @functools.cached_property
    def _type_labels(self) -> dict:
        return {cp: i for i, cp in enumerate(self.characters)}

    @functools.cached_property
    def _writer_labels(self) -> dict:
        return {w: j for j, w in enumerate(self.writers)}

    @functools.cached_property
    def entry_keys(self) -> list:
        return sorted(self.entries, key=lambda k: (_writer_sort_key(k[1]), k[0]))

    @functools.cached_property
    def by_writer(self) -> dict:
        out = {w: [] for w in self.writers}
        for cp, w in self.entry_keys:
            out[w].append(cp)
        return out

    def type_label(self, codepoint: int) -> int:
        return self._type_labels[codepoint]

    def writer_label(self, writer: str) -> int:
        return self._writer_labels[writer]

    def script(self, codepoint: int, writer: str) -> np.ndarray:
        return read_glyph(self.entries[codepoint, writer], self.resolution)

    def prototype(self, codepoint: int) -> np.ndarray:
        return read_glyph(self.prototypes[codepoint], self.resolution)

    def subset(self, writers) -> "DatasetIndex":
        """Index restricted to ``writers``; type and writer label spaces are kept."""
        keep = set(writers)
        entries = {k: v for k, v in self.entries.items() if k[1] in keep}
        return DatasetIndex(self.root, self.writers, self.characters, entries, self.prototypes, self.resolution)

    def split_writers(self, holdout_fraction: float, rng: np.random.Generator):
        """Split into (train, holdout) indices by writer."""
        count = int(round(holdout_fraction * self.m))
        if count == 0:
            return self, None
        if count >= self.m:
            raise DatasetError("holdout fraction leaves no training writers")
        held = set(rng.choice(self.m, size=count, replace=False).tolist())
        held_names = [w for j, w in enumerate(self.writers) if j in held]
        train_names = [w for j, w in enumerate(self.writers) if j not in held]
        return self.subset(train_names), self.subset(held_names)


def _readable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:  # noqa: BLE001 - any decode failure means unreadable
        return False


def load_dataset(root, resolution: int = RESOLUTION) -> DatasetIndex:
    root = Path(root)
    proto_dir = root / "prototypes"
    if not proto_dir.is_dir():
        raise DatasetError(f"prototype set absent: {proto_dir} is not a directory")
    writers_dir = root / "writers"
    if not writers_dir.is_dir():
        raise DatasetError(f"writer directory absent: {writers_dir}")

    prototypes = {}
    for path in sorted(proto_dir.glob("*.png")):
        if _readable(path):
            prototypes[parse_codepoint(path.stem)] = path
        else:
            log.warning("skipping unreadable prototype %s", path)

    entries = {}
    writers = []
    for wdir in sorted((p for p in writers_dir.iterdir() if p.is_dir()), key=lambda p: _writer_sort_key(p.name)):
        count = 0
        for path in sorted(wdir.glob("*.png")):
            if not _readable(path):
                log.warning("skipping unreadable image %s", path)
                continue
            entries[parse_codepoint(path.stem), wdir.name] = path
            count += 1
        if count == 0:
            raise DatasetError(f"writer {wdir.name} has no readable images")
        writers.append(wdir.name)

    characters = sorted({cp for cp, _ in entries})
    missing = [cp for cp in characters if cp not in prototypes]
    if missing:
        listed = ", ".join(f"U+{cp:04X}" for cp in missing[:5])
        raise DatasetError(f"prototype set does not cover {len(missing)} characters ({listed})")
    return DatasetIndex(root, tuple(writers), tuple(characters), entries, prototypes, resolution)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class TrainingTuple:
    references: np.ndarray  # (c, R, R)
    template: np.ndarray  # (R, R)
    truth: np.ndarray  # (R, R)
    type_label: int
    writer_label: int
    reference_types: tuple[int, ...]


def sample_training_tuple(index: DatasetIndex, c: int, rng: np.random.Generator) -> TrainingTuple:
    """Draw a target (character, writer) and ``c`` references from the same writer.

    The target character is excluded from the references whenever the writer
    has more than ``c`` glyphs.
    """
    if c < 1:
        raise ValueError(f"reference count must be >= 1, got {c}")
    keys = index.entry_keys
    if not keys:
        raise DatasetError("dataset has no scripts")
    codepoint, writer = keys[rng.integers(len(keys))]
    own = index.by_writer[writer]
    if len(own) < c:
        raise DatasetError(f"writer {writer} has {len(own)} glyphs, fewer than c={c}")
    pool = [cp for cp in own if cp != codepoint]
    if len(pool) < c:
        log.warning("writer %s has only %d glyphs; references may include the target", writer, len(own))
        pool = list(own)
    picks = rng.choice(len(pool), size=c, replace=False)
    ref_cps = tuple(pool[i] for i in picks)
    return TrainingTuple(
        references=np.stack([index.script(cp, writer) for cp in ref_cps]),
        template=index.prototype(codepoint),
        truth=index.script(codepoint, writer),
        type_label=index.type_label(codepoint),
        writer_label=index.writer_label(writer),
        reference_types=tuple(index.type_label(cp) for cp in ref_cps),
    )


def collate(tuples) -> dict:
    """Stack tuples into float32 batch arrays with channel axes."""
    return {
        "references": np.stack([t.references for t in tuples]).astype(np.float32),
        "template": np.stack([t.template for t in tuples])[:, None].astype(np.float32),
        "truth": np.stack([t.truth for t in tuples])[:, None].astype(np.float32),
        "type_label": np.array([t.type_label for t in tuples], dtype=np.int64),
        "writer_label": np.array([t.writer_label for t in tuples], dtype=np.int64),
    }
