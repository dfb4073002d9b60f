"""DICOM tag table construction, cleanup, missingness analysis and encoding.

Raw tag maps become a columnar TagTable with an explicit missingness mask.
Multi-value tags split into per-element columns, BodyPartExamined is filled
by an ordered regular-expression rule set, uninformative columns are
filtered, and the remainder is one-hot / min-max encoded after imputation.
"""

from __future__ import annotations

import csv
import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .dicom_io import DicomInstance, TAG_KEYWORDS, TAG_NAMES
from .errors import RulesFileInvalidError, ZeroRangeColumnError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

# identifier and free-text columns never fed to the encoder
DEFAULT_BLOCKLIST = (
    "SOPInstanceUID",
    "StudyInstanceUID",
    "SeriesInstanceUID",
    "StudyDescription",
    "ProtocolName",
    "RequestedProcedureDescription",
)


@dataclass
class TagTable:
    """Columnar per-instance tag values with an explicit missing mask."""

    ids: list[str]
    names: list[str]
    kinds: list[str]
    values: np.ndarray  # (n, p) object array; missing cells hold None
    mask: np.ndarray    # (n, p) bool; True where missing

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    def col_index(self, name: str) -> int:
        return self.names.index(name)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.col_index(name)]

    def fill_rate(self, j: int) -> float:
        return 1.0 - self.mask[:, j].mean() if self.n_rows else 0.0

    def distinct(self, j: int) -> list:
        vals = self.values[~self.mask[:, j], j]
        return sorted({str(v) for v in vals})

    def copy(self) -> "TagTable":
        return TagTable(list(self.ids), list(self.names), list(self.kinds),
                        self.values.copy(), self.mask.copy())

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance_id"] + self.names)
            for i in range(self.n_rows):
                row = [self.ids[i]]
                for j in range(len(self.names)):
                    row.append("" if self.mask[i, j] else str(self.values[i, j]))
                w.writerow(row)
        schema = {"columns": [{"name": n, "kind": k} for n, k in zip(self.names, self.kinds)]}
        path.with_suffix(".schema.json").write_text(json.dumps(schema, indent=2))

    @classmethod
    def from_csv(cls, path: str | Path) -> "TagTable":
        path = Path(path)
        schema = json.loads(path.with_suffix(".schema.json").read_text())
        kinds = {c["name"]: c["kind"] for c in schema["columns"]}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = header[1:]
            ids, rows = [], []
            for rec in reader:
                ids.append(rec[0])
                rows.append(rec[1:])
        values = np.empty((len(ids), len(names)), dtype=object)
        mask = np.zeros((len(ids), len(names)), dtype=bool)
        for i, rec in enumerate(rows):
            for j, cell in enumerate(rec):
                if cell == "":
                    values[i, j] = None
                    mask[i, j] = True
                else:
                    values[i, j] = cell
        return cls(ids, names, [kinds.get(n, CATEGORICAL) for n in names], values, mask)


def table_from_instances(instances: list[DicomInstance],
                         columns: list[str] | None = None) -> TagTable:
    """Raw (unsplit) table; multi-value tags appear as tuples of strings."""
    if columns is None:
        exclude = {"Rows", "Columns", "BitsAllocated", "BitsStored", "HighBit",
                   "PixelRepresentation", "SamplesPerPixel", "NumberOfFrames",
                   "PhotometricInterpretation", "PixelData"}
        seen = set()
        columns = []
        for inst in instances:
            for tag in inst.tags:
                name = TAG_NAMES.get(tag, f"Tag{tag[0]:04X}{tag[1]:04X}")
                if name not in seen and name not in exclude:
                    seen.add(name)
                    columns.append(name)
        columns.sort()
    n, p = len(instances), len(columns)
    values = np.full((n, p), None, dtype=object)
    mask = np.ones((n, p), dtype=bool)
    for i, inst in enumerate(instances):
        for j, name in enumerate(columns):
            tag = TAG_KEYWORDS.get(name)
            tv = inst.tags.get(tag) if tag else None
            if tv is None or tv.raw == "":
                continue
            if tv.multiplicity > 1:
                values[i, j] = tuple(str(v) for v in tv.values)
            else:
                values[i, j] = str(tv.first)
            mask[i, j] = False
    ids = [inst.instance_id for inst in instances]
    return TagTable(ids, list(columns), [CATEGORICAL] * p, values, mask)


def split_multivalue(table: TagTable) -> TagTable:
    """Expand every multi-value column X of max arity m into X0..X(m-1)."""
    names, kinds, cols, masks = [], [], [], []
    for j, name in enumerate(table.names):
        col = table.values[:, j]
        m = 1
        for v in col[~table.mask[:, j]]:
            if isinstance(v, tuple):
                m = max(m, len(v))
        if m == 1:
            names.append(name)
            kinds.append(table.kinds[j])
            flat = np.array([v[0] if isinstance(v, tuple) else v for v in col], dtype=object)
            cols.append(flat)
            masks.append(table.mask[:, j].copy())
            continue
        for k in range(m):
            sub = np.full(table.n_rows, None, dtype=object)
            sub_mask = np.ones(table.n_rows, dtype=bool)
            for i in range(table.n_rows):
                v = col[i]
                if table.mask[i, j]:
                    continue
                parts = v if isinstance(v, tuple) else (v,)
                if k < len(parts) and str(parts[k]) != "":
                    sub[i] = str(parts[k])
                    sub_mask[i] = False
            names.append(f"{name}{k}")
            kinds.append(table.kinds[j])
            cols.append(sub)
            masks.append(sub_mask)
    values = np.stack(cols, axis=1) if cols else np.empty((table.n_rows, 0), dtype=object)
    mask = np.stack(masks, axis=1) if masks else np.empty((table.n_rows, 0), dtype=bool)
    return TagTable(list(table.ids), names, kinds, values, mask)


def infer_kinds(table: TagTable) -> TagTable:
    """A column whose every observed value parses as a float is continuous."""
    kinds = []
    for j in range(len(table.names)):
        observed = table.values[~table.mask[:, j], j]
        kind = CATEGORICAL
        if len(observed):
            try:
                for v in observed:
                    float(v)
                kind = CONTINUOUS
            except (TypeError, ValueError):
                kind = CATEGORICAL
        kinds.append(kind)
    out = table.copy()
    out.kinds = kinds
    return out


# --- BodyPartExamined rules -------------------------------------------------

@dataclass(frozen=True)
class BpeRule:
    index: int
    pattern: str
    body_part: str
    source_tags: tuple[str, ...]
    compiled: re.Pattern = field(repr=False, compare=False, default=None)


DEFAULT_BPE_SOURCES = ("ProtocolName", "StudyDescription", "RequestedProcedureDescription")


def load_bpe_rules(path: str | Path) -> list[BpeRule]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise RulesFileInvalidError(f"cannot load rules file {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise RulesFileInvalidError("rules file must be a JSON array")
    rules = []
    for i, entry in enumerate(raw):
        try:
            pattern = entry["pattern"]
            body_part = entry["body_part"]
            sources = tuple(entry.get("source_tags", DEFAULT_BPE_SOURCES))
            compiled = re.compile(pattern, re.IGNORECASE | re.UNICODE)
        except (KeyError, TypeError, re.error) as exc:
            raise RulesFileInvalidError(f"rule {i} invalid: {exc}") from exc
        rules.append(BpeRule(i, pattern, body_part, sources, compiled))
    return rules


def default_bpe_rules() -> list[BpeRule]:
    return load_bpe_rules(Path(__file__).parent / "data" / "bpe_rules.json")


def impute_bpe(tag_texts: dict[str, str], rules: list[BpeRule]) -> str | None:
    """Resolve a body-part label from tags; None when nothing matches."""
    bpe = (tag_texts.get("BodyPartExamined") or "").strip()
    if bpe:
        return bpe.upper()
    lowered = {k: unicodedata.normalize("NFC", v).lower()
               for k, v in tag_texts.items() if v}
    for rule in rules:
        for source in rule.source_tags:
            text = lowered.get(source)
            if text and rule.compiled.search(text):
                return rule.body_part
    return None


def impute_bpe_column(table: TagTable, rules: list[BpeRule],
                      free_text_sources: TagTable | None = None) -> TagTable:
    """Fill/normalize the BodyPartExamined column in place of a copy.

    ``free_text_sources`` supplies the rule source columns when they were
    already filtered out of ``table``.
    """
    out = table.copy()
    j = out.col_index("BodyPartExamined")
    src = free_text_sources if free_text_sources is not None else table
    for i in range(out.n_rows):
        texts = {}
        for name in ("BodyPartExamined",) + DEFAULT_BPE_SOURCES:
            ref = out if name == "BodyPartExamined" else src
            if name in ref.names:
                jj = ref.col_index(name)
                if not ref.mask[i, jj]:
                    texts[name] = str(ref.values[i, jj])
        label = impute_bpe(texts, rules)
        if label is None:
            out.values[i, j] = None
            out.mask[i, j] = True
        else:
            out.values[i, j] = label
            out.mask[i, j] = False
    return out


# --- filtering ---------------------------------------------------------------

def filter_tags(table: TagTable,
                fill_rate_min: float = 0.35,
                min_distinct: int = 2,
                blocklist: tuple[str, ...] = DEFAULT_BLOCKLIST,
                max_categorical: int = 50,
                stat_rows: np.ndarray | None = None) -> tuple[TagTable, list[tuple[str, str]]]:
    """Drop uninformative columns; returns the reduced table and decisions.

    ``stat_rows`` restricts fill-rate/distinct statistics to given rows
    (the training split) so filtering never peeks at held-out data.
    """
    rows = np.ones(table.n_rows, dtype=bool) if stat_rows is None else np.asarray(stat_rows)
    keep, decisions = [], []
    for j, name in enumerate(table.names):
        base = name.rstrip("0123456789")
        if name in blocklist or base in blocklist:
            decisions.append((name, "dropped: blocklist"))
            continue
        sub_mask = table.mask[rows, j]
        fill = 1.0 - sub_mask.mean() if sub_mask.size else 0.0
        if fill < fill_rate_min:
            decisions.append((name, f"dropped: fill rate {fill:.3f} < {fill_rate_min}"))
            continue
        observed = {str(v) for v in table.values[rows, j][~sub_mask]}
        if len(observed) < min_distinct:
            decisions.append((name, f"dropped: {len(observed)} distinct values"))
            continue
        if table.kinds[j] == CATEGORICAL and len(observed) > max_categorical:
            decisions.append((name, f"dropped: {len(observed)} categories > {max_categorical}"))
            continue
        keep.append(j)
        decisions.append((name, "kept"))
    return TagTable(
        list(table.ids),
        [table.names[j] for j in keep],
        [table.kinds[j] for j in keep],
        table.values[:, keep] if keep else np.empty((table.n_rows, 0), dtype=object),
        table.mask[:, keep] if keep else np.empty((table.n_rows, 0), dtype=bool),
    ), decisions


# --- missingness analysis ----------------------------------------------------

SHAPIRO_MAX_N = 5000


@dataclass
class MissingnessEntry:
    column: str
    other: str
    test: str
    p_value: float
    significant: bool
    note: str = ""


def missingness_report(table: TagTable, alpha: float = 0.05,
                       seed: int = 0) -> tuple[list[MissingnessEntry], dict[str, bool]]:
    """Univariate MCAR screen: is each column's absence independent of the rest?

    For every column with missing cells, each other column is partitioned by
    missing-vs-present and compared (t-test after a Shapiro-Wilk normality
    gate, Mann-Whitney U otherwise, chi-square for categories). A column is
    not MCAR-consistent when any pairing is significant at ``alpha``.
    """
    if table.n_rows < 2:
        raise ValueError("missingness analysis needs at least 2 rows")
    rng = np.random.default_rng(seed)
    entries: list[MissingnessEntry] = []
    flags: dict[str, bool] = {}
    for j, name in enumerate(table.names):
        missing = table.mask[:, j]
        if not missing.any() or missing.all():
            continue
        hit = False
        for k, other in enumerate(table.names):
            if k == j:
                continue
            observed = ~table.mask[:, k]
            side_a = table.values[missing & observed, k]
            side_b = table.values[~missing & observed, k]
            entry = _compare_partitions(name, other, table.kinds[k],
                                        side_a, side_b, alpha, rng)
            entries.append(entry)
            hit = hit or entry.significant
        flags[name] = not hit  # True = MCAR-consistent
    return entries, flags


def _compare_partitions(column, other, kind, side_a, side_b, alpha, rng) -> MissingnessEntry:
    if len(side_a) == 0 or len(side_b) == 0:
        return MissingnessEntry(column, other, "skipped", float("nan"), False,
                                "degenerate: empty partition")
    if kind == CONTINUOUS:
        a = np.array([float(v) for v in side_a])
        b = np.array([float(v) for v in side_b])
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            return MissingnessEntry(column, other, "skipped", float("nan"), False,
                                    "degenerate: constant partition")
        if _both_normal(a, b, rng):
            stat = stats.ttest_ind(a, b)
            return MissingnessEntry(column, other, "t-test", float(stat.pvalue),
                                    stat.pvalue < alpha)
        stat = stats.mannwhitneyu(a, b, alternative="two-sided")
        return MissingnessEntry(column, other, "mann-whitney", float(stat.pvalue),
                                stat.pvalue < alpha)
    cats = sorted({str(v) for v in side_a} | {str(v) for v in side_b})
    if len(cats) < 2:
        return MissingnessEntry(column, other, "skipped", float("nan"), False,
                                "degenerate: constant partition")
    contingency = np.zeros((2, len(cats)), dtype=np.int64)
    for row, side in enumerate((side_a, side_b)):
        for v in side:
            contingency[row, cats.index(str(v))] += 1
    result = stats.chi2_contingency(contingency)
    return MissingnessEntry(column, other, "chi-square", float(result.pvalue),
                            result.pvalue < alpha)


def _both_normal(a: np.ndarray, b: np.ndarray, rng) -> bool:
    for side in (a, b):
        if len(side) < 3:
            return False  # too small to gate; fall back to the rank test
        sample = side
        if len(side) > SHAPIRO_MAX_N:
            sample = rng.choice(side, size=SHAPIRO_MAX_N, replace=False)
        if stats.shapiro(sample).pvalue < 0.05:
            return False
    return True


def missingness_to_csv(entries: list[MissingnessEntry], flags: dict[str, bool],
                       path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "other_column", "test", "p_value", "significant",
                    "note", "column_mcar_consistent"])
        for e in entries:
            w.writerow([e.column, e.other, e.test,
                        "" if np.isnan(e.p_value) else f"{e.p_value:.6g}",
                        e.significant, e.note, flags.get(e.column, "")])


# --- encoding ----------------------------------------------------------------

@dataclass
class EncoderState:
    """Frozen one-hot vocabularies and min-max statistics from the train split."""

    columns: list[dict]
    clamp: bool = False

    def to_json(self) -> str:
        return json.dumps({"clamp": self.clamp, "columns": self.columns}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EncoderState":
        d = json.loads(text)
        return cls(columns=d["columns"], clamp=d.get("clamp", False))

    @property
    def feature_names(self) -> list[str]:
        names = []
        for col in self.columns:
            if col.get("dropped"):
                continue
            if col["kind"] == CATEGORICAL:
                names.extend(f"{col['name']}={c}" for c in col["categories"])
            else:
                names.append(col["name"])
        return names


def encode_fit(table: TagTable, stat_rows: np.ndarray | None = None,
               clamp: bool = False) -> EncoderState:
    """Learn vocabularies / min-max ranges; complete table expected."""
    if table.mask.any():
        raise ValueError("encode requires a complete (imputed) table")
    rows = np.ones(table.n_rows, dtype=bool) if stat_rows is None else np.asarray(stat_rows)
    columns = []
    for j, name in enumerate(table.names):
        vals = table.values[rows, j]
        if table.kinds[j] == CATEGORICAL:
            columns.append({"name": name, "kind": CATEGORICAL,
                            "categories": sorted({str(v) for v in vals})})
        else:
            nums = np.array([float(v) for v in vals])
            lo, hi = float(nums.min()), float(nums.max())
            col = {"name": name, "kind": CONTINUOUS, "min": lo, "max": hi}
            if hi == lo:
                col["dropped"] = "zero range"
            columns.append(col)
    return EncoderState(columns=columns, clamp=clamp)


def encode_apply(table: TagTable, state: EncoderState) -> tuple[np.ndarray, list[str], dict]:
    """Apply frozen encoder; returns (matrix, feature names, warnings)."""
    if table.mask.any():
        raise ValueError("encode requires a complete (imputed) table")
    blocks = []
    warnings = {"unseen_categories": 0, "out_of_range": 0, "zero_range_dropped": []}
    for col in state.columns:
        name = col["name"]
        if name not in table.names:
            raise ZeroRangeColumnError(f"encoder column {name} absent from table")
        j = table.col_index(name)
        vals = table.values[:, j]
        if col.get("dropped"):
            warnings["zero_range_dropped"].append(name)
            continue
        if col["kind"] == CATEGORICAL:
            cats = col["categories"]
            index = {c: i for i, c in enumerate(cats)}
            block = np.zeros((table.n_rows, len(cats)))
            for i, v in enumerate(vals):
                pos = index.get(str(v))
                if pos is None:
                    warnings["unseen_categories"] += 1
                else:
                    block[i, pos] = 1.0
            blocks.append(block)
        else:
            nums = np.array([float(v) for v in vals])
            span = col["max"] - col["min"]
            scaled = (nums - col["min"]) / span
            out_of_range = (scaled < 0) | (scaled > 1)
            warnings["out_of_range"] += int(out_of_range.sum())
            if state.clamp:
                scaled = np.clip(scaled, 0.0, 1.0)
            blocks.append(scaled[:, None])
    matrix = np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))
    return matrix, state.feature_names, warnings
