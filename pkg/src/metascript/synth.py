"""Synthetic fixtures: a stroke-built CJK toy font and procedurally styled writers.

No CJK font ships with most minimal environments, so tests and the desk
profile build their own: about thirty characters made of straight strokes,
plus common punctuation. Writers are simulated by a per-writer stroke weight,
slant, aspect and rotation applied to prototype renderings, with small
per-sample jitter. The output mimics CASIA scans (tight crop, white paper).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from metascript.casia import write_gnt
from metascript.glyphs import render_prototype

UPM = 1000
T = 0.085  # stroke thickness as a fraction of the design box


def _h(y, x0, x1):
    return ("rect", x0, y - T / 2, x1, y + T / 2)


def _v(x, y0, y1):
    return ("rect", x - T / 2, y0, x + T / 2, y1)


def _d(x0, y0, x1, y1):
    return ("line", x0, y0, x1, y1)


def _box(x0, y0, x1, y1):
    return [_v(x0, y0, y1), _v(x1, y0, y1), _h(y0, x0, x1), _h(y1, x0, x1)]


def _dot(x, y, r=0.06):
    return ("rect", x - r, y - r, x + r, y + r)


# design box: x right, y down, both in [0, 1]
TOY_CHARACTERS = {
    "一": [_h(0.5, 0.05, 0.95)],
    "二": [_h(0.3, 0.2, 0.8), _h(0.75, 0.05, 0.95)],
    "三": [_h(0.2, 0.15, 0.85), _h(0.5, 0.25, 0.75), _h(0.82, 0.05, 0.95)],
    "十": [_h(0.45, 0.05, 0.95), _v(0.5, 0.05, 0.95)],
    "工": [_h(0.15, 0.15, 0.85), _v(0.5, 0.15, 0.85), _h(0.85, 0.05, 0.95)],
    "土": [_h(0.4, 0.2, 0.8), _v(0.5, 0.1, 0.85), _h(0.85, 0.05, 0.95)],
    "王": [_h(0.12, 0.12, 0.88), _h(0.48, 0.2, 0.8), _h(0.88, 0.05, 0.95), _v(0.5, 0.12, 0.88)],
    "干": [_h(0.15, 0.15, 0.85), _h(0.45, 0.05, 0.95), _v(0.5, 0.15, 0.95)],
    "丁": [_h(0.15, 0.05, 0.95), _v(0.55, 0.15, 0.95)],
    "上": [_v(0.45, 0.05, 0.88), _h(0.45, 0.45, 0.8), _h(0.88, 0.05, 0.95)],
    "下": [_h(0.12, 0.05, 0.95), _v(0.45, 0.12, 0.95), _d(0.55, 0.4, 0.72, 0.6)],
    "口": _box(0.15, 0.15, 0.85, 0.85),
    "日": _box(0.2, 0.05, 0.8, 0.95) + [_h(0.5, 0.2, 0.8)],
    "目": _box(0.25, 0.05, 0.75, 0.95) + [_h(0.37, 0.25, 0.75), _h(0.65, 0.25, 0.75)],
    "田": _box(0.1, 0.1, 0.9, 0.9) + [_h(0.5, 0.1, 0.9), _v(0.5, 0.1, 0.9)],
    "中": _box(0.15, 0.3, 0.85, 0.7) + [_v(0.5, 0.05, 0.95)],
    "山": [_v(0.5, 0.05, 0.9), _v(0.15, 0.35, 0.9), _v(0.85, 0.35, 0.9), _h(0.9, 0.15, 0.85)],
    "川": [_d(0.25, 0.1, 0.12, 0.85), _v(0.5, 0.15, 0.8), _v(0.8, 0.05, 0.95)],
    "丰": [_h(0.2, 0.2, 0.8), _h(0.45, 0.25, 0.75), _h(0.72, 0.05, 0.95), _v(0.5, 0.05, 0.95)],
    "井": [_h(0.3, 0.05, 0.95), _h(0.65, 0.05, 0.95), _v(0.35, 0.05, 0.95), _v(0.65, 0.05, 0.95)],
    "人": [_d(0.5, 0.05, 0.1, 0.95), _d(0.48, 0.35, 0.9, 0.95)],
    "八": [_d(0.4, 0.2, 0.1, 0.9), _d(0.6, 0.2, 0.9, 0.9)],
    "大": [_h(0.35, 0.05, 0.95), _d(0.5, 0.05, 0.1, 0.95), _d(0.5, 0.4, 0.9, 0.95)],
    "天": [_h(0.15, 0.15, 0.85), _h(0.4, 0.05, 0.95), _d(0.5, 0.15, 0.1, 0.95), _d(0.5, 0.45, 0.9, 0.95)],
    "木": [_h(0.3, 0.05, 0.95), _v(0.5, 0.05, 0.95), _d(0.5, 0.35, 0.1, 0.8), _d(0.5, 0.35, 0.9, 0.8)],
    "本": [_h(0.3, 0.05, 0.95), _v(0.5, 0.05, 0.95), _d(0.5, 0.35, 0.1, 0.75), _d(0.5, 0.35, 0.9, 0.75),
           _h(0.78, 0.32, 0.68)],
    "士": [_h(0.35, 0.05, 0.95), _v(0.5, 0.05, 0.85), _h(0.85, 0.25, 0.75)],
    "仁": [_d(0.3, 0.05, 0.08, 0.5), _v(0.2, 0.3, 0.95), _h(0.3, 0.45, 0.9), _h(0.8, 0.38, 0.95)],
    "什": [_d(0.3, 0.05, 0.08, 0.5), _v(0.2, 0.3, 0.95), _h(0.45, 0.38, 0.95), _v(0.66, 0.05, 0.95)],
    "吕": _box(0.28, 0.05, 0.72, 0.4) + _box(0.18, 0.55, 0.82, 0.95),
}

# full-width forms sit in the lower left of the em box, like CJK fonts
TOY_PUNCTUATION = {
    "，": [_dot(0.2, 0.82), _d(0.24, 0.84, 0.14, 0.98)],
    "。": _box(0.1, 0.72, 0.3, 0.92),
    "、": [_d(0.1, 0.74, 0.26, 0.92)],
    "！": [_v(0.5, 0.05, 0.62), _dot(0.5, 0.85)],
    "？": [_h(0.1, 0.3, 0.7), _v(0.7, 0.1, 0.4), _h(0.4, 0.5, 0.7), _v(0.5, 0.4, 0.62), _dot(0.5, 0.85)],
    "：": [_dot(0.2, 0.4), _dot(0.2, 0.8)],
    "；": [_dot(0.2, 0.4), _dot(0.2, 0.8), _d(0.24, 0.84, 0.14, 0.98)],
    ",": [_dot(0.3, 0.82), _d(0.34, 0.84, 0.22, 0.98)],
    ".": [_dot(0.3, 0.85)],
    "!": [_v(0.3, 0.05, 0.62), _dot(0.3, 0.85)],
    "?": [_h(0.1, 0.1, 0.5), _v(0.5, 0.1, 0.4), _v(0.3, 0.4, 0.62), _h(0.4, 0.3, 0.5), _dot(0.3, 0.85)],
}

_ASCII_ADVANCE = 600


def _outline(stroke):
    """Corner points of a stroke in font units (y up), clockwise."""
    box_x0, box_top, span = 60, 820, 880
    kind = stroke[0]
    if kind == "rect":
        _, x0, y0, x1, y1 = stroke
        pts = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    else:
        _, x0, y0, x1, y1 = stroke
        dx, dy = x1 - x0, y1 - y0
        norm = float(np.hypot(dx, dy))
        nx, ny = -dy / norm * T / 2, dx / norm * T / 2
        pts = [(x0 + nx, y0 + ny), (x1 + nx, y1 + ny), (x1 - nx, y1 - ny), (x0 - nx, y0 - ny)]
    out = [(round(box_x0 + x * span), round(box_top - y * span)) for x, y in pts]
    # TrueType outer contours run clockwise
    area = sum(ax * by - bx * ay for (ax, ay), (bx, by) in zip(out, out[1:] + out[:1]))
    return out if area < 0 else out[::-1]


def build_toy_font(path) -> Path:
    """Write the toy TrueType font to ``path`` and return it."""
    from fontTools.fontBuilder import FontBuilder
    from fontTools.pens.ttGlyphPen import TTGlyphPen

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    shapes = {**TOY_CHARACTERS, **TOY_PUNCTUATION}
    names = {ch: f"uni{ord(ch):04X}" for ch in shapes}
    order = [".notdef", "space"] + [names[ch] for ch in shapes]

    glyphs, advances = {}, {}
    pen = TTGlyphPen(None)
    pen.moveTo((100, 0)), pen.lineTo((100, 700)), pen.lineTo((500, 700)), pen.lineTo((500, 0)), pen.closePath()
    glyphs[".notdef"], advances[".notdef"] = pen.glyph(), 600
    glyphs["space"], advances["space"] = TTGlyphPen(None).glyph(), UPM // 2
    for ch, strokes in shapes.items():
        pen = TTGlyphPen(None)
        for stroke in strokes:
            pts = _outline(stroke)
            pen.moveTo(pts[0])
            for p in pts[1:]:
                pen.lineTo(p)
            pen.closePath()
        glyphs[names[ch]] = pen.glyph()
        advances[names[ch]] = _ASCII_ADVANCE if ord(ch) < 0x80 else UPM

    fb = FontBuilder(UPM, isTTF=True)
    fb.setupGlyphOrder(order)
    fb.setupCharacterMap({0x20: "space", **{ord(ch): name for ch, name in names.items()}})
    fb.setupGlyf(glyphs)
    glyf = fb.font["glyf"]
    metrics = {}
    for name in order:
        g = glyf[name]
        g.recalcBounds(glyf)
        metrics[name] = (advances[name], getattr(g, "xMin", 0))
    fb.setupHorizontalMetrics(metrics)
    fb.setupHorizontalHeader(ascent=880, descent=-120)
    fb.setupNameTable({"familyName": "MetaScript Toy", "styleName": "Regular"})
    fb.setupOS2(sTypoAscender=880, sTypoDescender=-120, usWinAscent=880, usWinDescent=120)
    fb.setupPost()
    fb.save(str(path))
    return path


@dataclass(frozen=True)
class WriterStyle:
    weight: int  # dilation (>0) or erosion (<0) radius in pixels at 128px
    slant: float  # horizontal shear
    aspect: float  # x scale relative to y
    rotation: float  # degrees
    jitter: float  # per-sample rotation jitter, degrees


def writer_style(seed: int) -> WriterStyle:
    rng = np.random.default_rng([seed, 7919])
    return WriterStyle(
        weight=int(rng.integers(-1, 4)),
        slant=float(rng.uniform(-0.3, 0.3)),
        aspect=float(rng.uniform(0.8, 1.1)),
        rotation=float(rng.uniform(-5.0, 5.0)),
        jitter=float(rng.uniform(0.5, 2.0)),
    )


def stylize(prototype: np.ndarray, style: WriterStyle, rng: np.random.Generator) -> np.ndarray:
    """Apply a writer style to an ink=1 prototype; returns an ink=1 float image."""
    img = prototype.astype(np.float64)
    if style.weight > 0:
        img = ndimage.grey_dilation(img, size=(2 * style.weight + 1,) * 2)
    elif style.weight < 0:
        img = ndimage.grey_erosion(img, size=(2 * -style.weight + 1,) * 2)
    angle = np.deg2rad(style.rotation + rng.normal(0.0, style.jitter))
    cos, sin = np.cos(angle), np.sin(angle)
    shear = style.slant + rng.normal(0.0, 0.03)
    forward = np.array([[cos, -sin], [sin, cos]]) @ np.array([[1.0, 0.0], [shear, style.aspect]])
    centre = (np.array(img.shape) - 1) / 2.0
    inverse = np.linalg.inv(forward)
    offset = centre - inverse @ centre
    return np.clip(ndimage.affine_transform(img, inverse, offset=offset, order=1, cval=0.0), 0.0, 1.0)


def as_scan(glyph: np.ndarray, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Tight-cropped uint8 scan with white background and mild paper noise."""
    rows, cols = np.nonzero(glyph > 0.05)
    crop = glyph[max(rows.min() - pad, 0) : rows.max() + pad + 1, max(cols.min() - pad, 0) : cols.max() + pad + 1]
    paper = 255.0 - 230.0 * crop + rng.normal(0.0, 4.0, crop.shape)
    return np.clip(np.round(paper), 0, 255).astype(np.uint8)


def write_toy_gnt(out_dir, font, characters: str, n_writers: int, seed: int = 0, resolution: int = 128) -> list[Path]:
    """Write one synthetic GNT file per writer (``<1001+k>-c.gnt``)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    protos = {ch: render_prototype(font, ord(ch), resolution, margin=0.2) for ch in characters}
    paths = []
    for k in range(n_writers):
        wid = 1001 + k
        style = writer_style(seed * 1000 + k)
        rng = np.random.default_rng([seed, k])
        samples = [(ch, as_scan(stylize(protos[ch], style, rng), rng)) for ch in characters]
        path = out_dir / f"{wid}-c.gnt"
        write_gnt(path, samples)
        paths.append(path)
    return paths


def make_toy_dataset(root, characters: str, n_writers: int, resolution: int = 32, seed: int = 0, font=None) -> dict:
    """Build a complete PNG dataset (font, GNT, import) under ``root``."""
    from metascript.casia import import_casia

    root = Path(root)
    font = Path(font) if font is not None else build_toy_font(root / "toy.ttf")
    gnt_dir = root / "gnt"
    write_toy_gnt(gnt_dir, font, characters, n_writers, seed)
    counts = import_casia(gnt_dir, root / "data", resolution=resolution, font=font)
    return {"font": font, "gnt": gnt_dir, "root": root / "data", **counts}
