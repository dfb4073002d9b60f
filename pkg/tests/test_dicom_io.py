"""Parser contract: round trips, structural skipping, clean rejections."""

import struct

import numpy as np
import pytest

from medclust import dicom_io
from medclust.dicom_io import (
    IMPLICIT_VR_LE,
    parse_file,
    tag_extraction_list,
    write_dicom,
)
from medclust.errors import (
    ConfigError,
    MissingMagicError,
    NonlinearLutPresentError,
    TruncatedElementError,
    UnsupportedTransferSyntaxError,
)


def small_pixels():
    return np.array([[0, 1], [2, 3]], dtype=np.uint16)


BASE_TAGS = {
    "SOPInstanceUID": "1.2.3.4",
    "StudyInstanceUID": "9.8.7",
    "Modality": "CT",
    "BodyPartExamined": "HEAD",
}


def test_roundtrip_2x2_16bit_buffer_length():
    blob = write_dicom(BASE_TAGS, pixel=small_pixels())
    inst = parse_file(blob)
    assert inst.rows == 2 and inst.cols == 2
    assert inst.bits_allocated == 16
    assert len(inst.pixel) == 2 * 2 * 1 * 2  # rows*cols*frames*bytes
    assert inst.instance_id == "1.2.3.4"
    assert inst.exam_id == "9.8.7"


def test_roundtrip_preserves_every_written_tag():
    tags = dict(BASE_TAGS)
    tags.update({
        "StudyDescription": "CT glave",
        "ProtocolName": "protokol s dijakritikom čžš",
        "RescaleSlope": "2.0",
        "RescaleIntercept": "-1024",
        "WindowCenter": [40, 400],
        "WindowWidth": [80, 2000],
        "ImageType": ["ORIGINAL", "PRIMARY"],
    })
    inst = parse_file(write_dicom(tags, pixel=small_pixels()))
    assert inst.tag_text("StudyDescription") == "CT glave"
    assert inst.tag_text("ProtocolName") == "protokol s dijakritikom čžš"
    assert inst.tag("RescaleSlope").as_float() == 2.0
    assert inst.tag("RescaleIntercept").as_float() == -1024.0
    assert inst.tag("WindowCenter").values == ("40", "400")
    assert inst.tag("ImageType").values == ("ORIGINAL", "PRIMARY")


def test_multivalue_window_center_backslash():
    blob = write_dicom({**BASE_TAGS, "WindowCenter": ["40", "400"]},
                       pixel=small_pixels())
    inst = parse_file(blob)
    assert inst.tag("WindowCenter").values == ("40", "400")
    assert inst.tag("WindowCenter").as_floats() == [40.0, 400.0]


def test_implicit_vr_roundtrip():
    blob = write_dicom({**BASE_TAGS, "WindowCenter": 100}, pixel=small_pixels(),
                       transfer_syntax=IMPLICIT_VR_LE)
    inst = parse_file(blob)
    assert inst.rows == 2
    assert inst.tag("WindowCenter").as_float() == 100.0
    assert inst.tag_text("Modality") == "CT"


def test_missing_magic():
    with pytest.raises(MissingMagicError):
        parse_file(b"\x00" * 200)


def test_truncated_element():
    blob = write_dicom(BASE_TAGS, pixel=small_pixels())
    with pytest.raises(TruncatedElementError):
        parse_file(blob[:len(blob) - 3])


def test_unsupported_transfer_syntax():
    blob = write_dicom(BASE_TAGS, pixel=small_pixels(),
                       transfer_syntax="1.2.840.10008.1.2.4.70")  # JPEG lossless
    with pytest.raises(UnsupportedTransferSyntaxError):
        parse_file(blob)


def test_voi_lut_sequence_rejected():
    blob = bytearray(write_dicom(BASE_TAGS, pixel=small_pixels()))
    # append an undefined-length VOI LUT sequence element
    blob += struct.pack("<HH", 0x0028, 0x3010) + b"SQ\x00\x00" + struct.pack("<I", 0xFFFFFFFF)
    blob += struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    with pytest.raises(NonlinearLutPresentError):
        parse_file(bytes(blob))


def test_sequences_skipped_structurally():
    blob = bytearray(write_dicom(BASE_TAGS))
    # an unrelated sequence with one defined-length item, then a tag we want
    item = struct.pack("<HHI", 0xFFFE, 0xE000, 4) + b"\xde\xad\xbe\xef"
    blob += struct.pack("<HH", 0x0040, 0x0275) + b"SQ\x00\x00"
    blob += struct.pack("<I", 0xFFFFFFFF) + item
    blob += struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
    blob += struct.pack("<HH", 0x0028, 0x1050) + b"DS" + struct.pack("<H", 4) + b"100 "
    inst = parse_file(bytes(blob))
    assert inst.tag("WindowCenter").as_float() == 100.0


def test_no_partial_instance_on_error():
    blob = write_dicom(BASE_TAGS, pixel=small_pixels())
    try:
        parse_file(blob[:140])
    except (TruncatedElementError, UnsupportedTransferSyntaxError):
        pass
    else:
        pytest.fail("expected a parse error")


def test_parse_deterministic():
    blob = write_dicom(BASE_TAGS, pixel=small_pixels())
    a = parse_file(blob)
    b = parse_file(blob)
    assert a.tags == b.tags
    assert a.pixel == b.pixel


def test_multiframe_buffer_and_decode():
    frames = np.stack([small_pixels(), small_pixels() * 10])
    inst = parse_file(write_dicom(BASE_TAGS, pixel=frames))
    assert inst.n_frames == 2
    assert np.array_equal(inst.frame_array(1), small_pixels() * 10)


def test_signed_pixels_decode():
    arr = np.array([[-5, 0], [5, 100]], dtype=np.int16)
    inst = parse_file(write_dicom(BASE_TAGS, pixel=arr))
    assert inst.pixel_representation == 1
    assert np.array_equal(inst.frame_array(0), arr)


class TestExtractionList:
    def test_default_contains_body_part(self):
        assert (0x0018, 0x0015) in tag_extraction_list()

    def test_default_contains_required_minimum(self):
        tags = set(tag_extraction_list())
        for keyword in ("Modality", "BodyPartExamined", "StudyDescription",
                        "ProtocolName", "RequestedProcedureDescription",
                        "RescaleSlope", "RescaleIntercept", "WindowCenter",
                        "WindowWidth", "ImageType", "Rows", "Columns",
                        "StudyInstanceUID", "SOPInstanceUID"):
            assert dicom_io.TAG_KEYWORDS[keyword] in tags

    def test_config_can_add(self):
        tags = tag_extraction_list(add=["(0008,0070)"])
        assert (0x0008, 0x0070) in tags

    def test_removing_pixel_structure_tag_is_config_error(self):
        with pytest.raises(ConfigError):
            tag_extraction_list(remove=["Rows"])
