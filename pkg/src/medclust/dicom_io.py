"""Minimal DICOM Part 10 reader plus a synthetic writer.

Only uncompressed little-endian syntaxes (explicit and implicit VR) are
read. Sequences are skipped structurally; the raw pixel buffer is captured
verbatim and decoded lazily by the image exporter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    MissingMagicError,
    NonlinearLutPresentError,
    TruncatedElementError,
    UnsupportedTransferSyntaxError,
)

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"

# VRs that use a 4-byte length field (after 2 reserved bytes) in explicit VR.
_LONG_VRS = {b"OB", b"OW", b"OF", b"OD", b"OL", b"SQ", b"UC", b"UR", b"UT", b"UN"}
# VRs holding binary numbers rather than text.
_BINARY_VRS = {b"US": "<H", b"SS": "<h", b"UL": "<I", b"SL": "<i", b"FL": "<f", b"FD": "<d"}

_ITEM = (0xFFFE, 0xE000)
_ITEM_DELIM = (0xFFFE, 0xE00D)
_SEQ_DELIM = (0xFFFE, 0xE0DD)

PIXEL_DATA = (0x7FE0, 0x0010)
VOI_LUT_SEQUENCE = (0x0028, 0x3010)
SPECIFIC_CHARACTER_SET = (0x0008, 0x0005)

# keyword -> (group, element) for every tag this pipeline knows by name
TAG_KEYWORDS: dict[str, tuple[int, int]] = {
    "ImageType": (0x0008, 0x0008),
    "SOPInstanceUID": (0x0008, 0x0018),
    "Modality": (0x0008, 0x0060),
    "Manufacturer": (0x0008, 0x0070),
    "StudyDescription": (0x0008, 0x1030),
    "BodyPartExamined": (0x0018, 0x0015),
    "SliceThickness": (0x0018, 0x0050),
    "KVP": (0x0018, 0x0060),
    "RepetitionTime": (0x0018, 0x0080),
    "EchoTime": (0x0018, 0x0081),
    "ExposureTime": (0x0018, 0x1150),
    "ProtocolName": (0x0018, 0x1030),
    "ContrastBolusAgent": (0x0018, 0x0010),
    "StudyInstanceUID": (0x0020, 0x000D),
    "SeriesInstanceUID": (0x0020, 0x000E),
    "SamplesPerPixel": (0x0028, 0x0002),
    "PhotometricInterpretation": (0x0028, 0x0004),
    "NumberOfFrames": (0x0028, 0x0008),
    "Rows": (0x0028, 0x0010),
    "Columns": (0x0028, 0x0011),
    "BitsAllocated": (0x0028, 0x0100),
    "BitsStored": (0x0028, 0x0101),
    "HighBit": (0x0028, 0x0102),
    "PixelRepresentation": (0x0028, 0x0103),
    "WindowCenter": (0x0028, 0x1050),
    "WindowWidth": (0x0028, 0x1051),
    "RescaleIntercept": (0x0028, 0x1052),
    "RescaleSlope": (0x0028, 0x1053),
    "RequestedProcedureDescription": (0x0032, 0x1060),
}
TAG_NAMES = {v: k for k, v in TAG_KEYWORDS.items()}

# VR per known tag, used by the synthetic writer.
_TAG_VRS: dict[tuple[int, int], bytes] = {
    TAG_KEYWORDS["ImageType"]: b"CS",
    TAG_KEYWORDS["SOPInstanceUID"]: b"UI",
    TAG_KEYWORDS["Modality"]: b"CS",
    TAG_KEYWORDS["Manufacturer"]: b"LO",
    TAG_KEYWORDS["StudyDescription"]: b"LO",
    TAG_KEYWORDS["BodyPartExamined"]: b"CS",
    TAG_KEYWORDS["SliceThickness"]: b"DS",
    TAG_KEYWORDS["KVP"]: b"DS",
    TAG_KEYWORDS["RepetitionTime"]: b"DS",
    TAG_KEYWORDS["EchoTime"]: b"DS",
    TAG_KEYWORDS["ExposureTime"]: b"IS",
    TAG_KEYWORDS["ProtocolName"]: b"LO",
    TAG_KEYWORDS["ContrastBolusAgent"]: b"LO",
    TAG_KEYWORDS["StudyInstanceUID"]: b"UI",
    TAG_KEYWORDS["SeriesInstanceUID"]: b"UI",
    TAG_KEYWORDS["SamplesPerPixel"]: b"US",
    TAG_KEYWORDS["PhotometricInterpretation"]: b"CS",
    TAG_KEYWORDS["NumberOfFrames"]: b"IS",
    TAG_KEYWORDS["Rows"]: b"US",
    TAG_KEYWORDS["Columns"]: b"US",
    TAG_KEYWORDS["BitsAllocated"]: b"US",
    TAG_KEYWORDS["BitsStored"]: b"US",
    TAG_KEYWORDS["HighBit"]: b"US",
    TAG_KEYWORDS["PixelRepresentation"]: b"US",
    TAG_KEYWORDS["WindowCenter"]: b"DS",
    TAG_KEYWORDS["WindowWidth"]: b"DS",
    TAG_KEYWORDS["RescaleIntercept"]: b"DS",
    TAG_KEYWORDS["RescaleSlope"]: b"DS",
    TAG_KEYWORDS["RequestedProcedureDescription"]: b"LO",
    SPECIFIC_CHARACTER_SET: b"CS",
}

_PIXEL_STRUCTURE_TAGS = (
    TAG_KEYWORDS["Rows"],
    TAG_KEYWORDS["Columns"],
    TAG_KEYWORDS["BitsAllocated"],
    TAG_KEYWORDS["BitsStored"],
    TAG_KEYWORDS["PixelRepresentation"],
    TAG_KEYWORDS["PhotometricInterpretation"],
)
_IDENTIFIER_TAGS = (
    TAG_KEYWORDS["SOPInstanceUID"],
    TAG_KEYWORDS["StudyInstanceUID"],
)


@dataclass(frozen=True)
class TagValue:
    """One tag's decoded content; multi-value lists preserve file order."""

    raw: str
    values: tuple = ()

    @property
    def first(self):
        return self.values[0] if self.values else self.raw

    @property
    def multiplicity(self) -> int:
        return max(len(self.values), 1)

    def as_float(self) -> float:
        return float(self.first)

    def as_int(self) -> int:
        return int(float(self.first))

    def as_floats(self) -> list[float]:
        vals = self.values if self.values else (self.raw,)
        return [float(v) for v in vals]

    def as_text(self) -> str:
        return self.raw


@dataclass
class DicomInstance:
    """Parsed tag map plus the raw pixel buffer of one file."""

    tags: dict[tuple[int, int], TagValue]
    pixel: bytes | None
    rows: int
    cols: int
    bits_allocated: int
    bits_stored: int
    pixel_representation: int  # 0 unsigned, 1 signed
    photometric: str
    n_frames: int
    samples_per_pixel: int
    exam_id: str
    instance_id: str
    source_path: str = ""

    def tag(self, keyword: str) -> TagValue | None:
        return self.tags.get(TAG_KEYWORDS[keyword])

    def tag_text(self, keyword: str, default: str = "") -> str:
        tv = self.tag(keyword)
        return tv.raw if tv is not None else default

    def frame_array(self, index: int) -> np.ndarray:
        """Decode one frame of the raw buffer to a rows x cols array."""
        if self.pixel is None:
            raise ValueError("instance has no pixel buffer")
        if not 0 <= index < self.n_frames:
            raise IndexError(f"frame {index} out of range (n_frames={self.n_frames})")
        if self.bits_allocated == 8:
            dtype = np.int8 if self.pixel_representation else np.uint8
        else:
            dtype = np.dtype("<i2") if self.pixel_representation else np.dtype("<u2")
        per_frame = self.rows * self.cols
        flat = np.frombuffer(self.pixel, dtype=dtype, count=per_frame * self.n_frames)
        return flat[index * per_frame:(index + 1) * per_frame].reshape(self.rows, self.cols)


def tag_extraction_list(add: list | None = None, remove: list | None = None) -> list[tuple[int, int]]:
    """Default tag set captured by the parser, adjusted by config.

    Pixel-structure and identifier tags cannot be removed; doing so breaks
    every downstream stage, so it is a ConfigError.
    """
    tags = list(TAG_KEYWORDS.values())
    for entry in add or []:
        tag = _coerce_tag(entry)
        if tag not in tags:
            tags.append(tag)
    for entry in remove or []:
        tag = _coerce_tag(entry)
        if tag in _PIXEL_STRUCTURE_TAGS or tag in _IDENTIFIER_TAGS:
            raise ConfigError(f"tag {_fmt_tag(tag)} is structural and cannot be removed")
        if tag in tags:
            tags.remove(tag)
    return tags


def _coerce_tag(entry) -> tuple[int, int]:
    if isinstance(entry, str):
        if entry in TAG_KEYWORDS:
            return TAG_KEYWORDS[entry]
        parts = entry.replace("(", "").replace(")", "").split(",")
        if len(parts) == 2:
            return int(parts[0].strip(), 16), int(parts[1].strip(), 16)
        raise ConfigError(f"unrecognised tag spec: {entry!r}")
    group, element = entry
    return int(group), int(element)


def _fmt_tag(tag: tuple[int, int]) -> str:
    return f"({tag[0]:04X},{tag[1]:04X})"


class _Cursor:
    """Bounds-checked byte reader; running past the end is a truncation."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedElementError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def skip(self, n: int) -> None:
        self.take(n)

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def at_end(self) -> bool:
        return self.pos >= len(self.data)


def _read_element_header(cur: _Cursor, explicit: bool):
    group = cur.u16()
    element = cur.u16()
    tag = (group, element)
    if tag in (_ITEM, _ITEM_DELIM, _SEQ_DELIM):
        return tag, None, cur.u32()
    if explicit:
        vr = cur.take(2)
        if vr in _LONG_VRS:
            cur.skip(2)
            length = cur.u32()
        else:
            length = cur.u16()
        return tag, vr, length
    return tag, None, cur.u32()


def _skip_sequence(cur: _Cursor, explicit: bool) -> None:
    """Skip an undefined-length sequence, handling nested sequences."""
    while True:
        tag, _, length = _read_element_header(cur, explicit)
        if tag == _SEQ_DELIM:
            return
        if tag != _ITEM:
            raise TruncatedElementError(f"unexpected tag {_fmt_tag(tag)} inside sequence")
        if length != 0xFFFFFFFF:
            cur.skip(length)
        else:
            _skip_item_undefined(cur, explicit)


def _skip_item_undefined(cur: _Cursor, explicit: bool) -> None:
    while True:
        tag, vr, length = _read_element_header(cur, explicit)
        if tag == _ITEM_DELIM:
            return
        if length == 0xFFFFFFFF:
            _skip_sequence(cur, explicit)
        else:
            cur.skip(length)


def _decode_value(vr: bytes | None, payload: bytes, encoding: str) -> TagValue:
    if vr in _BINARY_VRS:
        fmt = _BINARY_VRS[vr]
        width = struct.calcsize(fmt)
        n = len(payload) // width
        nums = [struct.unpack_from(fmt, payload, i * width)[0] for i in range(n)]
        if len(nums) == 1:
            return TagValue(raw=str(nums[0]), values=(nums[0],))
        return TagValue(raw="\\".join(str(v) for v in nums), values=tuple(nums))
    text = payload.decode(encoding, errors="replace").rstrip("\x00 ")
    if "\\" in text:
        return TagValue(raw=text, values=tuple(p.strip() for p in text.split("\\")))
    return TagValue(raw=text.strip(), values=(text.strip(),) if text.strip() else ())


def parse_file(data: bytes,
               extraction: list[tuple[int, int]] | None = None,
               exam_id_tag: tuple[int, int] | str = "StudyInstanceUID",
               source_path: str = "") -> DicomInstance:
    """Parse one DICOM Part 10 byte string.

    Raises instead of returning a partial instance: MissingMagic,
    UnsupportedTransferSyntax, TruncatedElement, NonlinearLutPresent.
    """
    wanted = set(extraction if extraction is not None else tag_extraction_list())
    exam_tag = _coerce_tag(exam_id_tag)
    wanted.add(exam_tag)

    if len(data) < 132 or data[128:132] != b"DICM":
        raise MissingMagicError("no DICM prefix after 128-byte preamble")
    cur = _Cursor(data, 132)

    # File meta group (0002,xxxx) is always explicit VR little endian.
    transfer_syntax = None
    while not cur.at_end():
        mark = cur.pos
        tag, vr, length = _read_element_header(cur, explicit=True)
        if tag[0] != 0x0002:
            cur.pos = mark
            break
        payload = cur.take(length)
        if tag == (0x0002, 0x0010):
            transfer_syntax = payload.decode("ascii", errors="replace").rstrip("\x00 ")
    if transfer_syntax is None:
        transfer_syntax = IMPLICIT_VR_LE  # no meta group: bare implicit stream
    if transfer_syntax not in (IMPLICIT_VR_LE, EXPLICIT_VR_LE):
        raise UnsupportedTransferSyntaxError(transfer_syntax)
    explicit = transfer_syntax == EXPLICIT_VR_LE

    tags: dict[tuple[int, int], TagValue] = {}
    pixel: bytes | None = None
    encoding = "latin-1"

    while not cur.at_end():
        tag, vr, length = _read_element_header(cur, explicit)
        if tag == VOI_LUT_SEQUENCE:
            raise NonlinearLutPresentError("file declares a VOI LUT sequence")
        if tag == PIXEL_DATA:
            if length == 0xFFFFFFFF:
                raise UnsupportedTransferSyntaxError("encapsulated (compressed) pixel data")
            pixel = bytes(cur.take(length))
            continue
        if length == 0xFFFFFFFF or (vr == b"SQ"):
            if length == 0xFFFFFFFF:
                _skip_sequence(cur, explicit)
            else:
                cur.skip(length)
            continue
        if tag not in wanted and tag != SPECIFIC_CHARACTER_SET:
            cur.skip(length)
            continue
        payload = cur.take(length)
        if tag == SPECIFIC_CHARACTER_SET:
            declared = payload.decode("ascii", errors="replace")
            if "192" in declared:  # ISO_IR 192 = UTF-8
                encoding = "utf-8"
            continue
        if vr is None:
            vr = _TAG_VRS.get(tag)
        tags[tag] = _decode_value(vr, payload, encoding)

    def _int_tag(keyword: str, default: int | None = None) -> int:
        tv = tags.get(TAG_KEYWORDS[keyword])
        if tv is None:
            if default is None:
                raise TruncatedElementError(f"required tag {keyword} absent")
            return default
        return tv.as_int()

    rows = _int_tag("Rows", 0)
    cols = _int_tag("Columns", 0)
    bits_allocated = _int_tag("BitsAllocated", 16 if pixel else 0)
    bits_stored = _int_tag("BitsStored", bits_allocated)
    pixel_representation = _int_tag("PixelRepresentation", 0)
    samples = _int_tag("SamplesPerPixel", 1)
    n_frames = _int_tag("NumberOfFrames", 1)
    photometric = tags.get(TAG_KEYWORDS["PhotometricInterpretation"])
    photometric_str = photometric.raw if photometric else "MONOCHROME2"

    if pixel is not None:
        if bits_allocated not in (8, 16):
            raise UnsupportedTransferSyntaxError(f"BitsAllocated={bits_allocated}")
        expected = rows * cols * n_frames * samples * (bits_allocated // 8)
        if len(pixel) == expected + 1 and expected % 2 == 1:
            pixel = pixel[:expected]  # drop the even-length pad byte
        if len(pixel) != expected:
            raise TruncatedElementError(
                f"pixel buffer is {len(pixel)} bytes, expected {expected}")

    instance_tv = tags.get(TAG_KEYWORDS["SOPInstanceUID"])
    exam_tv = tags.get(exam_tag)
    return DicomInstance(
        tags=tags,
        pixel=pixel,
        rows=rows,
        cols=cols,
        bits_allocated=bits_allocated,
        bits_stored=bits_stored,
        pixel_representation=pixel_representation,
        photometric=photometric_str,
        n_frames=n_frames,
        samples_per_pixel=samples,
        exam_id=exam_tv.raw if exam_tv else "",
        instance_id=instance_tv.raw if instance_tv else "",
        source_path=source_path,
    )


# --- synthetic writer -------------------------------------------------------
#
# Enough of a Part 10 writer to produce files the parser round-trips; used by
# the corpus generator and the tests, not a general-purpose DICOM writer.

def _encode_element(tag: tuple[int, int], vr: bytes, payload: bytes) -> bytes:
    if len(payload) % 2 == 1:
        payload += b"\x00" if vr in (b"UI", b"OB") else b" "
    head = struct.pack("<HH", tag[0], tag[1]) + vr
    if vr in _LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(payload)) + payload
    return head + struct.pack("<H", len(payload)) + payload


def _text_payload(value) -> bytes:
    if isinstance(value, (list, tuple)):
        return "\\".join(str(v) for v in value).encode("utf-8")
    return str(value).encode("utf-8")


def write_dicom(tags: dict[str, object],
                pixel: np.ndarray | None = None,
                photometric: str = "MONOCHROME2",
                n_frames: int | None = None,
                transfer_syntax: str = EXPLICIT_VR_LE) -> bytes:
    """Serialise keyword-addressed tags plus an optional pixel array.

    ``pixel`` is a (rows, cols) or (frames, rows, cols) uint8/uint16/int16
    array; pixel-structure tags are derived from it. Text is written UTF-8
    with a declared character set.
    """
    body_tags: dict[tuple[int, int], tuple[bytes, bytes]] = {
        SPECIFIC_CHARACTER_SET: (b"CS", b"ISO_IR 192"),
    }

    def put(keyword: str, value) -> None:
        tag = TAG_KEYWORDS[keyword]
        vr = _TAG_VRS[tag]
        if vr in _BINARY_VRS:
            payload = struct.pack(_BINARY_VRS[vr], int(value))
        else:
            payload = _text_payload(value)
        body_tags[tag] = (vr, payload)

    for keyword, value in tags.items():
        if value is None:
            continue
        put(keyword, value)

    pixel_payload = None
    if pixel is not None:
        arr = np.asarray(pixel)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        frames, rows, cols = arr.shape
        if n_frames is None:
            n_frames = frames
        signed = arr.dtype in (np.int8, np.int16)
        bits = 8 if arr.dtype.itemsize == 1 else 16
        put("Rows", rows)
        put("Columns", cols)
        put("BitsAllocated", bits)
        if "BitsStored" not in tags:
            put("BitsStored", bits)
        put("HighBit", bits - 1)
        put("PixelRepresentation", 1 if signed else 0)
        put("SamplesPerPixel", 1)
        put("PhotometricInterpretation", photometric)
        if n_frames > 1:
            put("NumberOfFrames", n_frames)
        dtype = {(8, False): np.uint8, (8, True): np.int8,
                 (16, False): np.dtype("<u2"), (16, True): np.dtype("<i2")}[(bits, signed)]
        pixel_payload = arr.astype(dtype, copy=False).tobytes()

    out = bytearray(b"\x00" * 128 + b"DICM")
    meta = _encode_element((0x0002, 0x0010), b"UI", transfer_syntax.encode("ascii"))
    out += _encode_element((0x0002, 0x0000), b"UL", struct.pack("<I", len(meta)))
    out += meta

    explicit = transfer_syntax == EXPLICIT_VR_LE
    for tag in sorted(body_tags):
        vr, payload = body_tags[tag]
        if explicit:
            out += _encode_element(tag, vr, payload)
        else:
            if len(payload) % 2 == 1:
                payload += b"\x00" if vr in (b"UI", b"OB") else b" "
            out += struct.pack("<HHI", tag[0], tag[1], len(payload)) + payload

    if pixel_payload is not None:
        if explicit:
            out += _encode_element(PIXEL_DATA, b"OW", pixel_payload)
        else:
            out += struct.pack("<HHI", PIXEL_DATA[0], PIXEL_DATA[1], len(pixel_payload))
            out += pixel_payload
    return bytes(out)
