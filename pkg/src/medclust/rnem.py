"""Embedding containers and the RNEM v1 on-disk matrix format.

RNEM v1 layout, all integers little endian:
    magic "RNEM" | version u32 | rows u32 | cols u32
    | per row: id length u32 + UTF-8 id bytes
    | rows*cols float32 values, row major

The same reader also accepts a CSV fallback (id in the first column) for
small hand-made files, e.g. externally computed embeddings.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, IdMismatchError, NonFiniteInputError

_MAGIC = b"RNEM"
_VERSION = 1


@dataclass
class EmbeddingMatrix:
    """Dense per-instance feature rows for one source or a fusion."""

    ids: list[str]
    data: np.ndarray  # (n, d) float
    source: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {self.data.shape}")
        if len(self.ids) != self.data.shape[0]:
            raise ValueError("row count does not match id count")
        if self.data.size and not np.isfinite(self.data).all():
            raise NonFiniteInputError(f"non-finite values in {self.source or 'matrix'}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def subset(self, row_mask: np.ndarray) -> "EmbeddingMatrix":
        idx = np.where(np.asarray(row_mask))[0]
        return EmbeddingMatrix([self.ids[i] for i in idx], self.data[idx], self.source)


def write_rnem(matrix: EmbeddingMatrix, path: str | Path) -> None:
    data32 = matrix.data.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, matrix.n, matrix.dim))
        for rid in matrix.ids:
            raw = rid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(data32.tobytes(order="C"))


def read_rnem(path: str | Path, source: str = "") -> EmbeddingMatrix:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise CorruptFileError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, rows, cols = struct.unpack_from("<III", blob, 4)
        if version != _VERSION:
            raise CorruptFileError(f"{path}: unsupported version {version}")
        pos = 16
        ids = []
        for _ in range(rows):
            (ln,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            ids.append(blob[pos:pos + ln].decode("utf-8"))
            pos += ln
        need = rows * cols * 4
        if len(blob) - pos < need:
            raise CorruptFileError(f"{path}: float block truncated")
        data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=pos)
    except struct.error as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc
    matrix = data.astype(np.float64).reshape(rows, cols)
    return EmbeddingMatrix(ids, matrix, source=source)


def read_embedding_csv(path: str | Path, source: str = "") -> EmbeddingMatrix:
    ids, rows = [], []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            ids.append(rec[0])
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise CorruptFileError(f"{path}: non-numeric cell ({exc})") from exc
    if not ids:
        raise CorruptFileError(f"{path}: empty file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise CorruptFileError(f"{path}: ragged rows (widths {sorted(widths)})")
    return EmbeddingMatrix(ids, np.array(rows), source=source)


def import_embeddings(path: str | Path, expected_ids: list[str],
                      source: str = "") -> EmbeddingMatrix:
    """Load an externally produced matrix and align rows to ``expected_ids``.

    This is the plug-in point for embeddings computed outside the pipeline
    (e.g. by neural extractors); missing or extra ids are errors.
    """
    path = Path(path)
    matrix = (read_embedding_csv(path, source)
              if path.suffix.lower() == ".csv" else read_rnem(path, source))
    have = {rid: i for i, rid in enumerate(matrix.ids)}
    if len(have) != len(matrix.ids):
        raise IdMismatchError(f"{path}: duplicate ids present")
    missing = [rid for rid in expected_ids if rid not in have]
    extra = [rid for rid in matrix.ids if rid not in set(expected_ids)]
    if missing or extra:
        raise IdMismatchError(
            f"{path}: {len(missing)} expected ids missing, {len(extra)} unexpected")
    order = [have[rid] for rid in expected_ids]
    return EmbeddingMatrix(list(expected_ids), matrix.data[order], source=source)
