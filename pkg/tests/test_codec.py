import struct
import warnings
from pathlib import Path

import pytest
from hypothesis import given, settings

from phalanx_fusion.codec import (
    EMPTY_RECORD_SIZE,
    Minutia,
    MinutiaTemplate,
    MinutiaType,
    TemplateHeader,
    parse_template,
    read_template,
    serialize_template,
    write_template,
)
from phalanx_fusion.errors import (
    BadMagic,
    FieldOutOfRange,
    InvariantViolation,
    LengthMismatch,
    TruncatedBuffer,
)

from strategies import templates


def load_hex(path: Path) -> bytes:
    digits = "".join(line.split("#")[0].strip() for line in path.read_text().splitlines())
    return bytes.fromhex(digits)


@pytest.fixture
def fixture_bytes(data_dir):
    return load_hex(data_dir / "two_minutiae.hex")


FIXTURE = MinutiaTemplate(
    TemplateHeader(320, 480, 197, 197, finger_position=2, impression_number=1, finger_quality=60),
    (
        Minutia(100, 200, 64, MinutiaType.RIDGE_ENDING, 80),
        Minutia(10, 20, 0, MinutiaType.BIFURCATION, 60),
    ),
)


class TestFixture:
    def test_parses_to_documented_fields(self, fixture_bytes):
        t = parse_template(fixture_bytes)
        h = t.header
        assert (h.image_width, h.image_height) == (320, 480)
        assert (h.resolution_x, h.resolution_y) == (197, 197)
        assert (h.finger_position, h.impression_number, h.finger_quality) == (2, 1, 60)
        assert h.capture_equipment_id == 0
        first, second = t.minutiae
        assert (first.x, first.y, first.angle, first.mtype, first.quality) == (
            100, 200, 64, MinutiaType.RIDGE_ENDING, 80,
        )
        assert (second.x, second.y, second.angle, second.mtype, second.quality) == (
            10, 20, 0, MinutiaType.BIFURCATION, 60,
        )
        assert t.nfiq is None

    def test_serializes_to_fixture_bytes(self, fixture_bytes):
        assert len(fixture_bytes) == 42
        assert serialize_template(FIXTURE) == fixture_bytes


def test_empty_template_is_header_only():
    t = MinutiaTemplate(TemplateHeader(320, 480))
    data = serialize_template(t)
    assert len(data) == EMPTY_RECORD_SIZE == 30
    parsed = parse_template(data)
    assert parsed.minutiae == ()
    assert parsed.header == t.header


@settings(max_examples=300)
@given(templates(with_nfiq=False))
def test_round_trip(t):
    data = serialize_template(t)
    assert len(data) == 30 + 6 * len(t.minutiae)
    assert struct.unpack_from(">I", data, 8)[0] == len(data)
    assert parse_template(data) == t


@given(templates())
def test_round_trip_reattaches_nfiq(t):
    assert parse_template(serialize_template(t), nfiq=t.nfiq) == t


def test_file_round_trip(tmp_path):
    write_template(tmp_path / "a.fmr", FIXTURE)
    assert read_template(tmp_path / "a.fmr", nfiq=3) == FIXTURE.with_nfiq(3)


class TestRejects:
    def test_bad_magic(self, fixture_bytes):
        with pytest.raises(BadMagic) as exc:
            parse_template(b"XMR\0" + fixture_bytes[4:])
        assert exc.value.offset == 0

    def test_bad_version(self, fixture_bytes):
        with pytest.raises(BadMagic) as exc:
            parse_template(fixture_bytes[:4] + b" 30\0" + fixture_bytes[8:])
        assert exc.value.offset == 4

    @pytest.mark.parametrize("cut", [0, 3, 10])
    def test_truncated_before_length(self, fixture_bytes, cut):
        with pytest.raises(TruncatedBuffer):
            parse_template(fixture_bytes[:cut])

    def test_length_field_disagrees_with_buffer(self, fixture_bytes):
        with pytest.raises(LengthMismatch) as exc:
            parse_template(fixture_bytes[:-1])
        assert exc.value.offset == 8
        with pytest.raises(LengthMismatch):
            parse_template(fixture_bytes + b"\0")

    def test_count_runs_past_declared_length(self, fixture_bytes):
        data = bytearray(fixture_bytes)
        data[27] = 3
        with pytest.raises(TruncatedBuffer) as exc:
            parse_template(bytes(data))
        assert exc.value.offset == 27

    def test_declared_length_below_minimum(self):
        data = b"FMR\0 20\0" + struct.pack(">I", 12)
        with pytest.raises(TruncatedBuffer):
            parse_template(data)

    @pytest.mark.parametrize(
        "offset,value,field_offset",
        [
            (14, 0, 14),  # width
            (16, 0, 16),  # height
            (18, 0, 18),  # x resolution
            (20, 0, 20),  # y resolution
        ],
    )
    def test_zero_dimensions(self, fixture_bytes, offset, value, field_offset):
        data = bytearray(fixture_bytes)
        data[offset:offset + 2] = struct.pack(">H", value)
        with pytest.raises(FieldOutOfRange) as exc:
            parse_template(bytes(data))
        assert exc.value.offset == field_offset

    @pytest.mark.parametrize(
        "offset,value",
        [
            (22, 2),     # view count
            (23, 1),     # reserved byte
            (25, 0x11),  # view number 1
            (25, 0x05),  # impression 5
            (26, 101),   # finger quality
            (28, 0xC0),  # minutia type 3
            (30, 0x40),  # reserved y bits
            (33, 101),   # minutia quality
        ],
    )
    def test_field_out_of_range(self, fixture_bytes, offset, value):
        data = bytearray(fixture_bytes)
        data[offset] = value
        with pytest.raises(FieldOutOfRange) as exc:
            parse_template(bytes(data))
        assert exc.value.offset is not None

    def test_minutia_outside_image(self, fixture_bytes):
        data = bytearray(fixture_bytes)
        data[28:30] = struct.pack(">H", (1 << 14) | 320)
        with pytest.raises(FieldOutOfRange) as exc:
            parse_template(bytes(data))
        assert exc.value.offset == 28

    def test_error_message_names_offset(self, fixture_bytes):
        with pytest.raises(BadMagic, match="offset 0"):
            parse_template(b"\0" * 42)


def test_extended_data_is_skipped_with_warning(fixture_bytes):
    body = bytearray(fixture_bytes[:-2]) + struct.pack(">H", 3) + b"abc"
    body[8:12] = struct.pack(">I", len(body))
    with pytest.warns(UserWarning, match="extended data"):
        t = parse_template(bytes(body))
    assert t == FIXTURE


def test_never_reads_past_declared_length(fixture_bytes):
    # a record whose extended block would run past the end is refused, not read
    body = bytearray(fixture_bytes[:-2]) + struct.pack(">H", 50)
    body[8:12] = struct.pack(">I", len(body))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(TruncatedBuffer):
            parse_template(bytes(body))


class TestInvariants:
    @pytest.mark.parametrize(
        "minutia",
        [
            Minutia(1 << 14, 0, 0),
            Minutia(0, 0, 256),
            Minutia(0, 0, 0, quality=101),
            Minutia(-1, 0, 0),
        ],
    )
    def test_unrepresentable_minutia(self, minutia):
        t = MinutiaTemplate(TemplateHeader(16384, 16384), (minutia,))
        with pytest.raises(InvariantViolation):
            serialize_template(t)

    def test_minutia_outside_image(self):
        with pytest.raises(InvariantViolation):
            serialize_template(MinutiaTemplate(TemplateHeader(320, 480), (Minutia(320, 0, 0),)))

    def test_too_many_minutiae(self):
        t = MinutiaTemplate(TemplateHeader(320, 480), tuple(Minutia(i % 320, 0, 0) for i in range(256)))
        with pytest.raises(InvariantViolation):
            serialize_template(t)

    @pytest.mark.parametrize("header", [TemplateHeader(0, 480), TemplateHeader(320, 480, resolution_x=0),
                                        TemplateHeader(320, 480, impression_number=5)])
    def test_bad_header(self, header):
        with pytest.raises(InvariantViolation):
            serialize_template(MinutiaTemplate(header))

    def test_bad_nfiq(self):
        with pytest.raises(InvariantViolation):
            MinutiaTemplate(TemplateHeader(320, 480), (), nfiq=6).validate()
