"""Pipeline configuration: one JSON file, strictly validated up front."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

_DEFAULTS: dict = {
    "paths": {
        "input_dir": "",
        "diagnoses_csv": "",
        "output_dir": "",
        "bpe_rules": None,       # null -> packaged starter rules
        "stemmer_rules": None,
    },
    "seed": None,                # mandatory
    "workers": 1,
    "exam_id_tag": "StudyInstanceUID",
    "max_files_per_exam": 15,
    "split": {"train": 0.8, "test": 0.1, "val": 0.1},
    "extraction": {"add_tags": [], "remove_tags": []},
    "image": {
        "size": 128,
        "t_v": 0.1,
        "t_s": 0.1,
        "invert_monochrome1": True,
        "pca_components": 32,
        "pca_solver": "randomized",
        # image embedding magnitude grows with pixel count; unit row norm
        # keeps the block comparable with the unit-norm text vectors at fusion
        "normalize_rows": True,
    },
    "tags": {
        "fill_rate_min": 0.35,
        "min_distinct": 2,
        "max_categorical": 50,
        "exclude_targets_from_features": True,
        "missforest_max_iter": 10,
        "missforest_trees": 100,
        "clamp_continuous": False,
        "pca_components": None,   # null -> use the encoded matrix directly
        "pca_solver": "full",
        "normalize_rows": False,
    },
    "text": {
        "method": "tfidf",        # tfidf | bow
        "min_word_frequency": 2,
        "normalize_bow": False,
        "pca_components": None,
        "pca_solver": "full",
        "normalize_rows": False,
    },
    "imports": {"diagnosis": None, "tags": None, "image": None},
    "clustering": {
        "kappa_grid": [5, 10, 15, 20, 25, 30, 40, 50, 75, 100, 150],
        "combos": [["kmeans", "euclidean"],
                   ["kmedoids", "euclidean"],
                   ["kmedoids", "cosine"]],
        "n_init": 10,
        "max_iter": 300,
        "final_algorithm": "kmeans",
        "final_metric": "euclidean",
        "final_kappa": None,      # null -> elbow selection
    },
    "fusion": {
        "method": "embeddings",   # embeddings | clusterdists | clusterprobs
        "normalization_scope": "column",
        "sources": ["diagnosis", "tags", "image"],
    },
    "report": {"svg_charts": True},
}

_VALID_TEXT_METHODS = ("tfidf", "bow")
_VALID_FUSIONS = ("embeddings", "clusterdists", "clusterprobs")
_VALID_SOLVERS = ("full", "iterative", "randomized")


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(_DEFAULTS))

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def fractions(self) -> tuple[float, float, float]:
        s = self.raw["split"]
        return (float(s["train"]), float(s["test"]), float(s["val"]))

    @classmethod
    def from_dict(cls, override: dict) -> "PipelineConfig":
        cfg = cls(_merge(_DEFAULTS, override))
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        r = self.raw
        if r["seed"] is None:
            raise ConfigError("seed is mandatory")
        tr, te, va = self.fractions
        if min(tr, te, va) <= 0 or abs(tr + te + va - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {(tr, te, va)}")
        grid = r["clustering"]["kappa_grid"]
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"kappa_grid must be strictly increasing: {grid}")
        if r["text"]["method"] not in _VALID_TEXT_METHODS:
            raise ConfigError(f"unknown text method {r['text']['method']!r}")
        if r["fusion"]["method"] not in _VALID_FUSIONS:
            raise ConfigError(f"unknown fusion method {r['fusion']['method']!r}")
        for section in ("image", "tags", "text"):
            solver = r[section].get("pca_solver")
            if solver is not None and solver not in _VALID_SOLVERS:
                raise ConfigError(f"unknown PCA solver {solver!r} in {section}")
        for combo in r["clustering"]["combos"]:
            if tuple(combo) not in (("kmeans", "euclidean"),
                                    ("kmedoids", "euclidean"),
                                    ("kmedoids", "cosine")):
                raise ConfigError(f"unsupported clustering combo {combo}")
        if int(r["max_files_per_exam"]) < 1:
            raise ConfigError("max_files_per_exam must be >= 1")
        unknown_sources = set(r["fusion"]["sources"]) - {"diagnosis", "tags", "image"}
        if unknown_sources:
            raise ConfigError(f"unknown fusion sources: {sorted(unknown_sources)}")

    def snapshot(self) -> dict:
        return copy.deepcopy(self.raw)

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.raw, indent=2))


def default_config(input_dir: str, diagnoses_csv: str, output_dir: str,
                   seed: int, **overrides) -> PipelineConfig:
    base = {"paths": {"input_dir": input_dir, "diagnoses_csv": diagnoses_csv,
                      "output_dir": output_dir}, "seed": seed}
    base.update(overrides)
    return PipelineConfig.from_dict(base)
