"""Typesetting generated glyphs into a handwritten-looking page.

The cursor walks the text token by token. A line break moves it to the next
line; a space advances half a cell; a character is generated from its
prototype in the reference style; punctuation is rendered from the standard
font into a half-width cell. Every plotted glyph gets a small random affine
jitter. After plotting, the cursor wraps once it has reached the line width.
"""

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from metascript.glyphs import MissingGlyphError, render_prototype

log = logging.getLogger(__name__)

DEFAULT_PUNCTUATION = frozenset("，。、！？：；“”‘’（）《》〈〉【】「」『』…—～·,.!?:;'\"()[]-")
_CJK_RANGES = ((0x3400, 0x4DBF), (0x4E00, 0x9FFF), (0xF900, 0xFAFF), (0x20000, 0x2FA1F))


class Kind(enum.Enum):
    CHAR = "char"
    PUNCT = "punct"
    SPACE = "space"
    BREAK = "break"


@dataclass(frozen=True)
class Token:
    kind: Kind
    text: str


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str, punctuation=DEFAULT_PUNCTUATION) -> list[Token]:
    """Split text into tokens; ``"".join(t.text for t in tokens) == text``.

    Codepoints that are neither CJK, configured punctuation, spaces nor line
    breaks fall back to punctuation tokens with a warning.
    """
    tokens, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch == "\r" and text[i + 1 : i + 2] == "\n":
            tokens.append(Token(Kind.BREAK, "\r\n"))
            i += 2
            continue
        if ch in "\n\r":
            tokens.append(Token(Kind.BREAK, ch))
        elif ch in " \t　":
            tokens.append(Token(Kind.SPACE, ch))
        elif is_cjk(ch):
            tokens.append(Token(Kind.CHAR, ch))
        else:
            if ch not in punctuation:
                log.warning("U+%04X is not CJK or known punctuation; treating it as punctuation", ord(ch))
            tokens.append(Token(Kind.PUNCT, ch))
        i += 1
    return tokens


# ---------------------------------------------------------------------------
# jitter


@dataclass(frozen=True)
class Jitter:
    scale: tuple = (0.95, 1.05)
    rotation: tuple = (-3.0, 3.0)  # degrees
    offset: tuple = (-0.04, 0.04)  # vertical, fraction of the glyph side

    @classmethod
    def none(cls) -> "Jitter":
        return cls((1.0, 1.0), (0.0, 0.0), (0.0, 0.0))


def draw_jitter(rng: np.random.Generator, jitter: Jitter = Jitter()) -> tuple[float, float, float]:
    """Sample ``(scale, rotation degrees, vertical offset fraction)``."""
    return (
        float(rng.uniform(*jitter.scale)),
        float(rng.uniform(*jitter.rotation)),
        float(rng.uniform(*jitter.offset)),
    )


def apply_jitter(glyph: np.ndarray, scale: float, rotation: float, offset: float) -> np.ndarray:
    if scale == 1.0 and rotation == 0.0 and offset == 0.0:
        return glyph.astype(np.float32, copy=True)
    angle = np.deg2rad(rotation)
    cos, sin = np.cos(angle), np.sin(angle)
    forward = scale * np.array([[cos, -sin], [sin, cos]])
    inverse = np.linalg.inv(forward)
    centre = (np.array(glyph.shape, dtype=np.float64) - 1) / 2.0
    shift = np.array([offset * glyph.shape[0], 0.0])
    out = ndimage.affine_transform(
        glyph.astype(np.float64), inverse, offset=centre - inverse @ (centre + shift), order=1, cval=0.0
    )
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def random_transform(glyph: np.ndarray, rng: np.random.Generator, jitter: Jitter = Jitter()) -> np.ndarray:
    return apply_jitter(glyph, *draw_jitter(rng, jitter))


# ---------------------------------------------------------------------------
# layout


@dataclass(frozen=True)
class LayoutSpec:
    size_c: int = 64
    width_l: int = 1024
    line_spacing: float = 1.15
    margin: int = 32
    seed: int = 7
    jitter: Jitter = field(default_factory=Jitter)

    def __post_init__(self):
        if self.size_c <= 0:
            raise ValueError("size_c must be > 0")
        if self.width_l < self.size_c:
            raise ValueError("width_l must be >= size_c")
        if self.margin < 0 or self.line_spacing <= 0:
            raise ValueError("margin must be >= 0 and line_spacing > 0")

    @property
    def line_advance(self) -> int:
        return int(round(self.line_spacing * self.size_c))

    def advance(self, kind: Kind) -> int:
        return self.size_c if kind is Kind.CHAR else max(1, self.size_c // 2)


@dataclass(frozen=True)
class Placement:
    token: int  # index into the token list
    kind: Kind
    line: int
    x: int  # cursor position within the line
    width: int


@dataclass
class Layout:
    placements: list
    lines: int  # lines the page must show
    inner_width: int


def layout(tokens, spec: LayoutSpec) -> Layout:
    placements = []
    line, x, last_line = 0, 0, 0
    for k, tok in enumerate(tokens):
        if tok.kind is Kind.BREAK:
            line, x = line + 1, 0
            last_line = max(last_line, line)
            continue
        width = spec.advance(tok.kind)
        if tok.kind is not Kind.SPACE:
            placements.append(Placement(k, tok.kind, line, x, width))
            last_line = max(last_line, line)
        x += width
        if x >= spec.width_l:
            line, x = line + 1, 0
    right = max((p.x + p.width for p in placements), default=0)
    return Layout(placements, last_line + 1, max(spec.width_l, right))


def line_count(k: int, size_c: int, width_l: int) -> int:
    """Lines used by ``k`` identical characters."""
    per_line = -(-width_l // size_c)
    return -(-k // per_line) if k else 1


# ---------------------------------------------------------------------------
# rendering


def _resize(glyph: np.ndarray, size: int) -> np.ndarray:
    if glyph.shape == (size, size):
        return glyph.astype(np.float32)
    img = Image.fromarray(glyph.astype(np.float32), mode="F").resize((size, size), Image.Resampling.BILINEAR)
    return np.clip(np.asarray(img, dtype=np.float32), 0.0, 1.0)


def placeholder(height: int, width: int) -> np.ndarray:
    """Hollow box used when a glyph cannot be produced."""
    out = np.zeros((height, width), dtype=np.float32)
    t = max(1, min(height, width) // 16)
    pad = max(t, min(height, width) // 8)
    out[pad : height - pad, pad : pad + t] = 1.0
    out[pad : height - pad, width - pad - t : width - pad] = 1.0
    out[pad : pad + t, pad : width - pad] = 1.0
    out[height - pad - t : height - pad, pad : width - pad] = 1.0
    return out


def punctuation_glyph(font, ch: str, size_c: int) -> np.ndarray:
    """Font rendering of ``ch`` cut to a half-width cell around its ink."""
    half = max(1, size_c // 2)
    full = render_prototype(font, ord(ch), size_c, fit=False)
    cols = np.nonzero(full.sum(axis=0) > 0)[0]
    if cols.size == 0:
        return np.zeros((size_c, half), dtype=np.float32)
    centre = int(round((cols.min() + cols.max()) / 2))
    left = min(max(centre - half // 2, 0), size_c - half)
    return full[:, left : left + half].copy()


class GlyphSource:
    """Generates character glyphs in one fixed style; the style vector is computed once."""

    def __init__(self, generator, references, font):
        self.generator = generator.eval()
        self.font = font
        self.resolution = generator.resolution
        refs = torch.as_tensor(np.asarray(references, dtype=np.float32))[None]
        with torch.no_grad():
            self.style = generator.encode_style(refs)
        self._cache = {}

    @torch.no_grad()
    def __call__(self, ch: str) -> np.ndarray:
        if ch not in self._cache:
            template = render_prototype(self.font, ord(ch), self.resolution)
            pyramid = self.generator.encode_structure(torch.from_numpy(template)[None, None])
            self._cache[ch] = self.generator.decode(pyramid, self.style)[0, 0].numpy()
        return self._cache[ch]


@dataclass
class Page:
    image: np.ndarray  # ink = 1
    layout: Layout
    tokens: list

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.round((1.0 - self.image) * 255).astype(np.uint8), mode="L").save(path)
        return path


def compose(references, text: str, spec: LayoutSpec, generator, font) -> Page:
    """Lay out ``text`` and plot generated characters, punctuation and spaces on a page."""
    tokens = tokenize(text)
    plan = layout(tokens, spec)
    source = GlyphSource(generator, references, font)
    rng = np.random.default_rng(spec.seed)
    height = 2 * spec.margin + (plan.lines - 1) * spec.line_advance + spec.size_c
    width = 2 * spec.margin + plan.inner_width
    page = np.zeros((height, width), dtype=np.float32)

    for p in plan.placements:
        ch = tokens[p.token].text
        if p.kind is Kind.CHAR:
            try:
                glyph = _resize(source(ch), spec.size_c)
            except MissingGlyphError as err:
                log.warning("cannot generate %r (%s); drawing a placeholder", ch, err)
                glyph = placeholder(spec.size_c, spec.size_c)
        else:
            try:
                glyph = punctuation_glyph(font, ch, spec.size_c)
            except MissingGlyphError:
                log.warning("no punctuation template for %r; drawing a placeholder", ch)
                glyph = placeholder(spec.size_c, p.width)
        glyph = random_transform(glyph, rng, spec.jitter)
        top = spec.margin + p.line * spec.line_advance
        left = spec.margin + p.x
        h, w = glyph.shape
        region = page[top : top + h, left : left + w]
        np.maximum(region, glyph, out=region)
    return Page(page, plan, tokens)
