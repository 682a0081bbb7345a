"""Binary minutiae template records (``.fmr``).

The layout follows the single-view finger minutiae record of ISO/IEC
19794-2:2005, big-endian throughout::

    offset  size  field
    0       4     magic "FMR\\0"
    4       4     version " 20\\0"
    8       4     total record length (u32)
    12      2     capture equipment id
    14      2     image width
    16      2     image height
    18      2     x resolution (px/cm)
    20      2     y resolution (px/cm)
    22      1     view count (always 1)
    23      1     reserved (0)
    24      1     finger position
    25      1     view number << 4 | impression number
    26      1     finger quality
    27      1     minutia count
    28      6*n   minutiae: type<<14 | x, y, angle, quality
    28+6n   2     extended data length (written as 0)

Multi-view records and extended data blocks are out of scope; a nonzero
extended data block is skipped with a warning.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BadMagic,
    FieldOutOfRange,
    InvariantViolation,
    LengthMismatch,
    TruncatedBuffer,
)

MAGIC = b"FMR\x00"
VERSION = b" 20\x00"
HEADER_SIZE = 24
VIEW_HEADER_SIZE = 4
MINUTIA_SIZE = 6
EXT_LENGTH_SIZE = 2
EMPTY_RECORD_SIZE = HEADER_SIZE + VIEW_HEADER_SIZE + EXT_LENGTH_SIZE
FILE_SUFFIX = ".fmr"

# 500 DPI expressed in pixels per centimetre
DEFAULT_RESOLUTION = 197

_HEADER = struct.Struct(">4s4sIHHHHHBB")
_VIEW = struct.Struct(">BBBB")
_MINUTIA = struct.Struct(">HHBB")
_EXT = struct.Struct(">H")

_COORD_MAX = (1 << 14) - 1


class MinutiaType(enum.IntEnum):
    OTHER = 0
    RIDGE_ENDING = 1
    BIFURCATION = 2


@dataclass(frozen=True)
class Minutia:
    """A single minutia; ``angle`` is in 1/256 turn units."""

    x: int
    y: int
    angle: int
    mtype: MinutiaType = MinutiaType.RIDGE_ENDING
    quality: int = 0

    def validate(self) -> None:
        for name in ("x", "y"):
            v = getattr(self, name)
            if not 0 <= v <= _COORD_MAX:
                raise InvariantViolation(f"minutia {name}={v} does not fit in 14 bits")
        if not 0 <= self.angle <= 255:
            raise InvariantViolation(f"minutia angle={self.angle} outside 0..255")
        if self.mtype not in tuple(MinutiaType):
            raise InvariantViolation(f"minutia type {self.mtype!r} is not a MinutiaType")
        if not 0 <= self.quality <= 100:
            raise InvariantViolation(f"minutia quality={self.quality} outside 0..100")


@dataclass(frozen=True)
class TemplateHeader:
    image_width: int
    image_height: int
    resolution_x: int = DEFAULT_RESOLUTION
    resolution_y: int = DEFAULT_RESOLUTION
    finger_position: int = 0
    impression_number: int = 1
    capture_equipment_id: int = 0
    finger_quality: int = 0

    def validate(self) -> None:
        for name in ("image_width", "image_height", "resolution_x", "resolution_y"):
            v = getattr(self, name)
            if not 0 < v <= 0xFFFF:
                raise InvariantViolation(f"{name}={v} must be in 1..65535")
        if not 0 <= self.capture_equipment_id <= 0xFFFF:
            raise InvariantViolation(f"capture_equipment_id={self.capture_equipment_id} exceeds u16")
        if not 0 <= self.finger_position <= 0xFF:
            raise InvariantViolation(f"finger_position={self.finger_position} exceeds u8")
        if not 1 <= self.impression_number <= 4:
            raise InvariantViolation(f"impression_number={self.impression_number} outside 1..4")
        if not 0 <= self.finger_quality <= 100:
            raise InvariantViolation(f"finger_quality={self.finger_quality} outside 0..100")


@dataclass(frozen=True)
class MinutiaTemplate:
    """One phalanx impression.

    ``nfiq`` is side information carried by the dataset manifest, not by the
    binary record, so a freshly parsed template has ``nfiq=None`` unless the
    caller supplies it.
    """

    header: TemplateHeader
    minutiae: tuple[Minutia, ...] = field(default_factory=tuple)
    nfiq: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.minutiae, tuple):
            object.__setattr__(self, "minutiae", tuple(self.minutiae))

    def __len__(self) -> int:
        return len(self.minutiae)

    def validate(self) -> None:
        self.header.validate()
        if len(self.minutiae) > 255:
            raise InvariantViolation(f"{len(self.minutiae)} minutiae exceed the u8 count field")
        w, h = self.header.image_width, self.header.image_height
        for i, m in enumerate(self.minutiae):
            m.validate()
            if m.x >= w or m.y >= h:
                raise InvariantViolation(
                    f"minutia {i} at ({m.x}, {m.y}) lies outside the {w}x{h} image"
                )
        if self.nfiq is not None and self.nfiq not in (1, 2, 3, 4, 5):
            raise InvariantViolation(f"nfiq={self.nfiq} outside 1..5")

    def with_nfiq(self, nfiq: int | None) -> MinutiaTemplate:
        return MinutiaTemplate(self.header, self.minutiae, nfiq)


def serialize_template(t: MinutiaTemplate) -> bytes:
    """Encode ``t``; raises InvariantViolation if it cannot be represented."""
    t.validate()
    h = t.header
    n = len(t.minutiae)
    total = EMPTY_RECORD_SIZE + MINUTIA_SIZE * n
    out = bytearray(
        _HEADER.pack(
            MAGIC,
            VERSION,
            total,
            h.capture_equipment_id,
            h.image_width,
            h.image_height,
            h.resolution_x,
            h.resolution_y,
            1,
            0,
        )
    )
    out += _VIEW.pack(h.finger_position, h.impression_number, h.finger_quality, n)
    for m in t.minutiae:
        out += _MINUTIA.pack((int(m.mtype) << 14) | m.x, m.y, m.angle, m.quality)
    out += _EXT.pack(0)
    return bytes(out)


def parse_template(data: bytes, nfiq: int | None = None) -> MinutiaTemplate:
    """Decode one record.

    Every failure names the byte offset of the offending field.  Decoding
    never looks past the declared record length.
    """
    buf = memoryview(bytes(data))
    if len(buf) < 4:
        raise TruncatedBuffer(f"need 4 bytes for magic, got {len(buf)}", 0)
    if bytes(buf[0:4]) != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {bytes(buf[0:4])!r}", 0)
    if len(buf) < 12:
        raise TruncatedBuffer(f"need 12 bytes for the length field, got {len(buf)}", len(buf))
    if bytes(buf[4:8]) != VERSION:
        raise BadMagic(f"unsupported version {bytes(buf[4:8])!r}", 4)
    (declared,) = struct.unpack_from(">I", buf, 8)
    if declared != len(buf):
        raise LengthMismatch(f"record declares {declared} bytes but buffer holds {len(buf)}", 8)
    if declared < EMPTY_RECORD_SIZE:
        raise TruncatedBuffer(
            f"declared length {declared} is shorter than the minimal record", 8
        )

    (_, _, _, equipment, width, height, res_x, res_y, views, reserved) = _HEADER.unpack_from(
        buf, 0
    )
    if width == 0:
        raise FieldOutOfRange("image width must be positive", 14)
    if height == 0:
        raise FieldOutOfRange("image height must be positive", 16)
    if res_x == 0:
        raise FieldOutOfRange("x resolution must be positive", 18)
    if res_y == 0:
        raise FieldOutOfRange("y resolution must be positive", 20)
    if views != 1:
        raise FieldOutOfRange(f"view count {views} (only single-view records are supported)", 22)
    if reserved != 0:
        raise FieldOutOfRange(f"reserved byte is {reserved:#04x}", 23)

    pos = HEADER_SIZE
    finger_position, view_imp, finger_quality, count = _VIEW.unpack_from(buf, pos)
    if view_imp >> 4 != 0:
        raise FieldOutOfRange(f"view number {view_imp >> 4} (must be 0)", pos + 1)
    impression = view_imp & 0x0F
    if not 1 <= impression <= 4:
        raise FieldOutOfRange(f"impression number {impression} outside 1..4", pos + 1)
    if finger_quality > 100:
        raise FieldOutOfRange(f"finger quality {finger_quality} exceeds 100", pos + 2)
    pos += VIEW_HEADER_SIZE

    needed = pos + MINUTIA_SIZE * count + EXT_LENGTH_SIZE
    if needed > declared:
        raise TruncatedBuffer(
            f"{count} minutiae need {needed} bytes but the record holds {declared}", 27
        )

    minutiae = []
    for _ in range(count):
        word_x, word_y, angle, quality = _MINUTIA.unpack_from(buf, pos)
        mtype = word_x >> 14
        x = word_x & _COORD_MAX
        if mtype > MinutiaType.BIFURCATION:
            raise FieldOutOfRange(f"minutia type code {mtype}", pos)
        if word_y >> 14:
            raise FieldOutOfRange("reserved bits of the y coordinate are set", pos + 2)
        y = word_y & _COORD_MAX
        if x >= width:
            raise FieldOutOfRange(f"minutia x={x} outside image width {width}", pos)
        if y >= height:
            raise FieldOutOfRange(f"minutia y={y} outside image height {height}", pos + 2)
        if quality > 100:
            raise FieldOutOfRange(f"minutia quality {quality} exceeds 100", pos + 5)
        minutiae.append(Minutia(x, y, angle, MinutiaType(mtype), quality))
        pos += MINUTIA_SIZE

    (ext_len,) = _EXT.unpack_from(buf, pos)
    pos += EXT_LENGTH_SIZE
    if ext_len:
        if pos + ext_len > declared:
            raise TruncatedBuffer(
                f"extended data of {ext_len} bytes runs past the record end", pos - 2
            )
        warnings.warn(f"skipping {ext_len} bytes of extended data", stacklevel=2)
        pos += ext_len
    if pos != declared:
        raise LengthMismatch(f"{declared - pos} trailing bytes after the record body", pos)

    if nfiq is not None and nfiq not in (1, 2, 3, 4, 5):
        raise FieldOutOfRange(f"nfiq={nfiq} outside 1..5")

    header = TemplateHeader(
        image_width=width,
        image_height=height,
        resolution_x=res_x,
        resolution_y=res_y,
        finger_position=finger_position,
        impression_number=impression,
        capture_equipment_id=equipment,
        finger_quality=finger_quality,
    )
    return MinutiaTemplate(header, tuple(minutiae), nfiq)


def read_template(path: str | Path, nfiq: int | None = None) -> MinutiaTemplate:
    return parse_template(Path(path).read_bytes(), nfiq=nfiq)


def write_template(path: str | Path, t: MinutiaTemplate) -> None:
    Path(path).write_bytes(serialize_template(t))
