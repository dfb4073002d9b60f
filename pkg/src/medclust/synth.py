"""Synthetic multimodal corpus generator.

Each planted class fixes a (modality, body part, pixel pattern, diagnosis
vocabulary) combination, arranged so that every single source only resolves
a coarsening of the classes: auxiliary tags follow the modality, diagnosis
wording follows the body part, and pixel patterns collide pairwise across
modalities. Only the fusion of all three sources separates everything,
which is exactly the behaviour the annotation pipeline is supposed to
exploit. Ground-truth labels are written alongside the corpus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dicom_io import write_dicom

# wording is shared per body part so diagnoses alone can only resolve the
# anatomical region, never the full class
BODY_VOCAB = {
    "HEAD": ("glava", "mozak", "lubanja", "intrakranijalno", "neurokranij",
             "hematom", "lezija"),
    "CHEST": ("torax", "pluca", "prsni", "mediastinum", "infiltrat", "srce",
              "hilus"),
    "ABDOMEN": ("abdomen", "jetra", "trbuh", "gusteraca", "slezena", "crijevo",
                "zucni"),
    "VESSELS": ("aorta", "stenoza", "krvne", "zile", "kateter", "kontrast",
                "protok"),
    "PELVIS": ("zdjelica", "kuk", "sakrum", "acetabulum", "prijelom",
               "simfiza", "bedrena"),
}

# every class gets its own pattern kind; pixel noise and occasional source
# garbling keep each view imperfect, so only agreement across views resolves
# every instance
CLASS_DEFS = [
    dict(modality="CT", body_part="HEAD", pattern=("disk", 1.0),
         protocol="CT glave neurokranij", study="CT mozga"),
    dict(modality="CT", body_part="CHEST", pattern=("hstripes", 6.0),
         protocol="MSCT torax", study="CT toraxa"),
    dict(modality="MR", body_part="HEAD", pattern=("checker", 5.0),
         protocol="MR mozga", study="MR neurokranija"),
    dict(modality="MR", body_part="ABDOMEN", pattern=("vgrad", 1.0),
         protocol="MR abdomena", study="MR gornjeg abdomena"),
    dict(modality="CR", body_part="CHEST", pattern=("vstripes", 7.0),
         protocol="RTG torax", study="RTG pluca i srca"),
    dict(modality="XA", body_part="VESSELS", pattern=("rings", 4.0),
         protocol="Angiografija aorte", study="DSA krvnih zila"),
    dict(modality="RF", body_part="ABDOMEN", pattern=("blobs", 3.0),
         protocol="Dijaskopija abdomena", study="RF pasaza crijeva"),
    dict(modality="CT", body_part="PELVIS", pattern=("cross", 1.0),
         protocol="CT zdjelice", study="CT pelvis"),
]

FILLER_WORDS = ("nalaz", "uredan", "bez", "promjena", "kontrola", "preporuka",
                "usporedba", "prethodni", "pregled", "obostrano", "vidljiv", "manji")

# aux tag value distributions per modality; None = structurally absent.
# one manufacturer per modality keeps the tag source a clean modality signal
MODALITY_TAGS = {
    "CT": dict(KVP=(120.0, 5.0), SliceThickness=(2.5, 0.6), ExposureTime=(500.0, 60.0),
               RepetitionTime=None, EchoTime=None,
               manufacturers=("TomoWorks",), window_factor=0.96),
    "MR": dict(KVP=None, SliceThickness=(4.0, 0.8), ExposureTime=None,
               RepetitionTime=(2000.0, 350.0), EchoTime=(60.0, 14.0),
               manufacturers=("MagnaCore",), window_factor=1.00),
    "CR": dict(KVP=(65.0, 8.0), SliceThickness=None, ExposureTime=(25.0, 6.0),
               RepetitionTime=None, EchoTime=None,
               manufacturers=("PlateOne",), window_factor=1.04),
    "XA": dict(KVP=(80.0, 7.0), SliceThickness=None, ExposureTime=(120.0, 20.0),
               RepetitionTime=None, EchoTime=None,
               manufacturers=("AngioMax",), window_factor=0.92),
    "RF": dict(KVP=(90.0, 9.0), SliceThickness=None, ExposureTime=(60.0, 12.0),
               RepetitionTime=None, EchoTime=None,
               manufacturers=("FluoroPro",), window_factor=1.08),
}
_FALLBACK_TAGS = dict(KVP=(100.0, 10.0), SliceThickness=(3.0, 1.0),
                      ExposureTime=(100.0, 25.0), RepetitionTime=(1000.0, 200.0),
                      EchoTime=(40.0, 10.0))


@dataclass
class SynthParams:
    classes: int = 5
    per_class: int = 200
    seed: int = 0
    files_per_exam: int = 1
    image_size: int = 64
    missingness: float = 0.15
    pixel_noise: float = 0.22
    cross_noise: float = 0.10    # fraction of exams with one source garbled
    multi_frame_fraction: float = 0.05


def _pattern_image(kind: str, freq: float, size: int, rng: np.random.Generator,
                   noise: float) -> np.ndarray:
    """Class pattern with small per-instance jitter.

    Geometry (phase, blob layout) is a function of the class pattern, not of
    the instance: per-instance phases would decorrelate same-class images in
    pixel space and no flat embedding could group them.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    jitter = rng.uniform(-0.03, 0.03, size=2)
    f = freq * rng.uniform(0.97, 1.03)
    cy, cx = 0.5 + jitter[0], 0.5 + jitter[1]
    rr = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    if kind == "disk":
        base = np.clip(1.0 - rr * 2.2 * f, 0.0, 1.0)
    elif kind == "hstripes":
        base = 0.5 + 0.5 * np.sin(2 * np.pi * f * (yy + jitter[0]))
    elif kind == "vstripes":
        base = 0.5 + 0.5 * np.sin(2 * np.pi * f * (xx + jitter[1]))
    elif kind == "rings":
        base = 0.5 + 0.5 * np.cos(2 * np.pi * f * rr)
    elif kind == "vgrad":
        base = np.clip(xx * f + 0.15 * np.sin(2 * np.pi * 3 * yy), 0.0, 1.0)
    elif kind == "checker":
        base = (0.5 + 0.5 * np.sin(2 * np.pi * f * (yy + jitter[0]))
                * np.sin(2 * np.pi * f * (xx + jitter[1])))
    elif kind == "blobs":
        layout = np.random.default_rng(int(freq * 1000))  # fixed per class
        base = np.zeros_like(yy)
        for _ in range(int(freq)):
            by, bx = layout.uniform(0.2, 0.8, size=2)
            base += np.exp(-(((yy - by - jitter[0]) ** 2
                              + (xx - bx - jitter[1]) ** 2) / 0.02))
        base = np.clip(base, 0.0, 1.0)
    elif kind == "cross":
        band = 0.08 * f
        base = np.maximum(np.clip(1 - np.abs(yy - cy) / band, 0, 1),
                          np.clip(1 - np.abs(xx - cx) / band, 0, 1))
    else:
        raise ValueError(f"unknown pattern kind {kind!r}")
    noisy = base + rng.normal(0.0, noise, size=base.shape)
    return np.clip(noisy, 0.0, 1.0)


def _diagnosis_text(cls: dict, rng: np.random.Generator, garbled: bool) -> str:
    if garbled:
        words = list(rng.choice(FILLER_WORDS, size=8, replace=True))
    else:
        vocab = BODY_VOCAB[cls["body_part"]]
        words = list(rng.choice(vocab, size=rng.integers(8, 13), replace=True))
        words += list(rng.choice(FILLER_WORDS, size=rng.integers(1, 3), replace=True))
    rng.shuffle(words)
    text = " ".join(words)
    return text[0].upper() + text[1:] + "."


def _aux_value(tag: str, modality: str, rng: np.random.Generator) -> float:
    params = MODALITY_TAGS[modality][tag] or _FALLBACK_TAGS[tag]
    mu, sigma = params
    return float(np.round(rng.normal(mu, sigma), 2))


def generate_synthetic(out_dir: str | Path, params: SynthParams = SynthParams()) -> dict:
    """Write DICOM files, diagnoses.csv and truth.csv; returns summary counts."""
    if params.classes < 2:
        raise ValueError("need at least 2 classes")
    out_dir = Path(out_dir)
    dicom_dir = out_dir / "dicom"
    dicom_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(params.seed)

    truth_rows = []
    diagnosis_rows = []
    n_files = 0
    exam_counter = 0
    for cls_idx in range(params.classes):
        cls = CLASS_DEFS[cls_idx % len(CLASS_DEFS)]
        modality = cls["modality"]
        kind, freq = cls["pattern"]
        n_exams = max(1, params.per_class // params.files_per_exam)
        for _ in range(n_exams):
            exam_counter += 1
            exam_id = f"2.25.{10_000 + exam_counter}"
            garble = rng.random() < params.cross_noise
            # text and tags fail more often than pixels, so the image source
            # acts as the tie-breaking witness in fused clusterings
            garble_target = int(rng.choice(3, p=[0.4, 0.4, 0.2])) if garble else -1
            diagnosis_rows.append([exam_id, _diagnosis_text(cls, rng, garble_target == 0)])
            for file_idx in range(params.files_per_exam):
                sop = f"{exam_id}.{file_idx + 1}"
                noise = params.pixel_noise * (3.0 if garble_target == 2 else 1.0)
                base = _pattern_image(kind, freq, params.image_size, rng, noise)

                lo, hi = 200.0, 3800.0
                frame = (lo + base * (hi - lo)).astype(np.uint16)
                frames = frame
                if rng.random() < params.multi_frame_fraction:
                    blank = np.full_like(frame, int(lo))
                    frames = np.stack([blank, frame])

                factor = MODALITY_TAGS[modality]["window_factor"]
                w_c = (lo + hi) / 2.0 * factor * rng.uniform(0.98, 1.02)
                w_w = (hi - lo) * rng.uniform(0.95, 1.05)
                centers: object = round(w_c, 1)
                widths: object = round(w_w, 1)
                if rng.random() < 0.2:
                    # first candidate flattens the image; export must skip it
                    centers = [999999.0, round(w_c, 1)]
                    widths = [1.0, round(w_w, 1)]

                tags: dict[str, object] = {
                    "SOPInstanceUID": sop,
                    "StudyInstanceUID": exam_id,
                    "SeriesInstanceUID": exam_id + ".s1",
                    "Modality": modality,
                    "StudyDescription": cls["study"],
                    "ProtocolName": cls["protocol"],
                    "RequestedProcedureDescription": cls["study"],
                    "ImageType": ["ORIGINAL", "PRIMARY"] if rng.random() < 0.7
                                 else ["DERIVED", "SECONDARY"],
                    "WindowCenter": centers,
                    "WindowWidth": widths,
                    "RescaleSlope": 1,
                    "RescaleIntercept": -1024 if modality == "CT" else 0,
                    "Manufacturer": str(rng.choice(MODALITY_TAGS[modality]["manufacturers"])),
                }
                if rng.random() < 0.6:
                    tags["BodyPartExamined"] = cls["body_part"]
                tag_garbled = garble_target == 1
                for aux in ("KVP", "SliceThickness", "ExposureTime",
                            "RepetitionTime", "EchoTime"):
                    structurally_absent = (params.missingness > 0
                                           and MODALITY_TAGS[modality][aux] is None)
                    randomly_absent = rng.random() < params.missingness
                    if tag_garbled or structurally_absent or randomly_absent:
                        continue
                    tags[aux] = _aux_value(aux, modality, rng)
                if tag_garbled:
                    tags.pop("Manufacturer", None)

                blob = write_dicom(tags, pixel=frames)
                (dicom_dir / f"{sop}.dcm").write_bytes(blob)
                n_files += 1
                truth_rows.append([sop, exam_id, cls_idx, modality, cls["body_part"]])

    with open(out_dir / "diagnoses.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["exam_id", "text"])
        w.writerows(diagnosis_rows)
    with open(out_dir / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "exam_id", "class_index", "modality", "body_part"])
        w.writerows(truth_rows)
    return {"files": n_files, "exams": exam_counter, "classes": params.classes}
