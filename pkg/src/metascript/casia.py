"""CASIA-HWDB ``.gnt`` reading, writing and conversion to the PNG dataset layout.

A GNT file is a sequence of records::

    uint32 sample_size   (= 10 + width * height)
    2 bytes tag code     (GB2312 / GBK)
    uint16 width
    uint16 height
    width * height bytes of 8-bit grayscale, 255 = background

all little-endian. Each file holds the samples of one writer; the writer id
is the leading number of the file name (``1001-c.gnt`` -> ``1001``).
"""

import logging
import re
import struct
from pathlib import Path

import numpy as np

from metascript.glyphs import (
    PROTOTYPE_MARGIN,
    RESOLUTION,
    EmptyGlyphError,
    MissingGlyphError,
    codepoint_name,
    preprocess,
    render_prototype,
    write_glyph,
)

log = logging.getLogger(__name__)

_HEADER = struct.Struct("<I2sHH")


class GntFormatError(ValueError):
    pass


def read_gnt(path):
    """Yield ``(character, uint8 image)`` pairs from one GNT file."""
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        if pos + _HEADER.size > len(data):
            raise GntFormatError(f"{path}: truncated header at byte {pos}")
        size, tag, width, height = _HEADER.unpack_from(data, pos)
        if size != _HEADER.size + width * height or pos + size > len(data):
            raise GntFormatError(f"{path}: inconsistent record at byte {pos}")
        pixels = np.frombuffer(data, np.uint8, width * height, pos + _HEADER.size).reshape(height, width)
        try:
            char = tag.decode("gbk")
        except UnicodeDecodeError:
            char = ""
        yield char, pixels
        pos += size


def write_gnt(path, samples) -> None:
    """Write ``(character, uint8 image)`` pairs as a GNT file."""
    with open(path, "wb") as fh:
        for char, pixels in samples:
            pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
            tag = char.encode("gbk")
            if len(tag) != 2:
                raise GntFormatError(f"{char!r} has no two-byte GBK code")
            height, width = pixels.shape
            fh.write(_HEADER.pack(_HEADER.size + width * height, tag, width, height))
            fh.write(pixels.tobytes())


def writer_id(path) -> str:
    stem = Path(path).stem
    match = re.match(r"\d+", stem)
    return match.group(0) if match else stem


def is_cjk(char: str) -> bool:
    return len(char) == 1 and 0x4E00 <= ord(char) <= 0x9FFF


def import_casia(gnt_dir, root, resolution: int = RESOLUTION, font=None, margin: float = PROTOTYPE_MARGIN) -> dict:
    """Convert a directory of GNT files into ``<root>/writers`` (and prototypes when a font is given).

    Non-CJK samples are dropped; a repeated (writer, character) keeps its first
    sample. Returns counts of writers, characters and images written.
    """
    gnt_dir, root = Path(gnt_dir), Path(root)
    files = sorted(gnt_dir.glob("*.gnt"))
    if not files:
        raise FileNotFoundError(f"no .gnt files in {gnt_dir}")
    characters, images, writers, seen = set(), 0, set(), set()
    for gnt in files:
        wid = writer_id(gnt)
        out_dir = root / "writers" / wid
        for char, raw in read_gnt(gnt):
            if not is_cjk(char):
                continue
            if (wid, char) in seen:
                continue
            seen.add((wid, char))
            target = out_dir / f"{codepoint_name(ord(char))}.png"
            try:
                glyph = preprocess(raw, resolution, margin=margin)
            except EmptyGlyphError:
                log.warning("%s: blank sample for %s skipped", gnt.name, char)
                continue
            write_glyph(glyph, target)
            characters.add(ord(char))
            writers.add(wid)
            images += 1
    prototypes = 0
    if font is not None:
        prototypes = render_prototypes(font, sorted(characters), root, resolution)
    return {"writers": len(writers), "characters": len(characters), "images": images, "prototypes": prototypes}


def render_prototypes(font, codepoints, root, resolution: int = RESOLUTION) -> int:
    count = 0
    for cp in codepoints:
        try:
            glyph = render_prototype(font, cp, resolution)
        except MissingGlyphError as err:
            log.warning("%s", err)
            continue
        write_glyph(glyph, Path(root) / "prototypes" / f"{codepoint_name(cp)}.png")
        count += 1
    return count
