"""Stage orchestration: ingest -> images -> tags -> text -> features ->
clustering -> fusion -> evaluation -> bulk labeling.

Every stage reads its inputs from and writes its outputs to the run
directory, so the CLI subcommands can re-run any stage in isolation. All
fit-time statistics (corpus, encoder, imputation forests, PCA, distance
normalizers, cluster models) come from the training split only and are
frozen under models/ for later bulk labeling.
"""

from __future__ import annotations

import csv
import hashlib
import json
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import imaging, textprep
from .cluster import (
    KMEANS,
    ClusterModel,
    assign,
    elbow,
    kmeans_fit,
    kmedoids_fit,
)
from .config import PipelineConfig
from .dicom_io import parse_file, tag_extraction_list
from .errors import MedclustError, SchemaDriftError
from .fusion import (
    DistanceNormalizer,
    fit_distance_normalizer,
    fuse_clusterdists,
    fuse_clusterprobs,
    fuse_embeddings,
)
from .metrics import composition_report, evaluate_clustering
from .missforest import MissForestModel, apply_missforest, missforest_impute
from .pca import PcaModel, pca_fit, pca_transform
from .report import (
    composition_svg,
    write_cluster_sizes,
    write_composition_csv,
    write_report_csv,
    write_report_json,
)
from .rnem import EmbeddingMatrix, import_embeddings, read_rnem, write_rnem
from .splits import read_splits_csv, split_by_exam, write_splits_csv
from .tags import (
    DEFAULT_BLOCKLIST,
    EncoderState,
    TagTable,
    default_bpe_rules,
    encode_apply,
    encode_fit,
    filter_tags,
    impute_bpe_column,
    infer_kinds,
    load_bpe_rules,
    missingness_report,
    missingness_to_csv,
    split_multivalue,
    table_from_instances,
)

SOURCES = ("diagnosis", "tags", "image")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


@dataclass
class StageRecord:
    name: str
    seconds: float = 0.0
    outputs: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failed: str = ""


@dataclass
class RunManifest:
    config: dict
    stages: list[StageRecord] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(not s.failed for s in self.stages)

    def save(self, path: Path) -> None:
        payload = {
            "config": self.config,
            "ok": self.ok,
            "stages": [{"name": s.name, "seconds": round(s.seconds, 3),
                        "outputs": s.outputs, "counts": s.counts,
                        "warnings": s.warnings, "failed": s.failed}
                       for s in self.stages],
        }
        path.write_text(json.dumps(payload, indent=2))


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.cfg = config
        self.out = Path(config["paths"]["output_dir"])
        self.manifest = RunManifest(config.snapshot())

    # --- helpers -------------------------------------------------------------

    def _dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _record(self, record: StageRecord, *paths: Path) -> None:
        for p in paths:
            if p.is_file():
                record.outputs[str(p.relative_to(self.out))] = _sha256(p)
        self.manifest.stages.append(record)

    def _rules(self):
        path = self.cfg["paths"]["bpe_rules"]
        return load_bpe_rules(path) if path else default_bpe_rules()

    def _stemmer(self):
        path = self.cfg["paths"]["stemmer_rules"]
        return (textprep.StemmerRules.load(path) if path
                else textprep.StemmerRules.default())

    def _accepted_ids(self) -> list[str]:
        path = self.out / "images" / "accepted.txt"
        return path.read_text().splitlines()

    def _split_of_instances(self, ids: list[str]) -> np.ndarray:
        exams = {}
        with open(self.out / "ingest" / "instances.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                exams[row["instance_id"]] = row["exam_id"]
        splits = read_splits_csv(self.out / "ingest" / "splits.csv")
        return np.array([splits[exams[i]] for i in ids])

    def _parse_tree(self, input_dir: Path, extraction, exam_tag):
        files = sorted(p for p in input_dir.rglob("*") if p.is_file())
        workers = max(1, int(self.cfg["workers"]))

        def _one(path: Path):
            try:
                inst = parse_file(path.read_bytes(), extraction, exam_tag,
                                  source_path=str(path))
                return (path, inst, "")
            except MedclustError as exc:
                return (path, None, f"{type(exc).__name__}: {exc}")

        if workers == 1:
            results = [_one(p) for p in files]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_one, files))
        results.sort(key=lambda r: (r[1].instance_id if r[1] else "", str(r[0])))
        return results

    # --- stages --------------------------------------------------------------

    def ingest(self) -> StageRecord:
        rec = StageRecord("ingest")
        t0 = time.perf_counter()
        cfg = self.cfg
        ingest_dir = self._dir("ingest")
        extraction = tag_extraction_list(cfg["extraction"]["add_tags"],
                                         cfg["extraction"]["remove_tags"])
        results = self._parse_tree(Path(cfg["paths"]["input_dir"]), extraction,
                                   cfg["exam_id_tag"])
        diagnoses, short = textprep.read_diagnoses_csv(cfg["paths"]["diagnoses_csv"])
        rec.counts["diagnoses_too_short"] = len(short)

        by_exam: dict[str, list] = {}
        failures = []
        for path, inst, err in results:
            if inst is None:
                failures.append((str(path), err))
                continue
            by_exam.setdefault(inst.exam_id, []).append(inst)

        instances, rejected = [], []
        for exam_id in sorted(by_exam):
            members = by_exam[exam_id]
            if len(members) > int(cfg["max_files_per_exam"]):
                rejected += [(m, "exam_over_file_limit") for m in members]
            elif exam_id not in diagnoses:
                rejected += [(m, "no_valid_diagnosis") for m in members]
            else:
                instances += members
        instances.sort(key=lambda m: (m.instance_id, m.source_path))
        seen_ids = set()
        unique = []
        for m in instances:
            if m.instance_id in seen_ids:
                rejected.append((m, "duplicate_instance_id"))
            else:
                seen_ids.add(m.instance_id)
                unique.append(m)
        instances = unique

        assignment = split_by_exam([m.exam_id for m in instances],
                                   cfg.fractions, cfg.seed)
        write_splits_csv(assignment, ingest_dir / "splits.csv")

        with open(ingest_dir / "instances.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance_id", "exam_id", "split", "path", "status", "reason"])
            for m in instances:
                w.writerow([m.instance_id, m.exam_id, assignment[m.exam_id],
                            m.source_path, "accepted", ""])
            for m, reason in rejected:
                w.writerow([m.instance_id, m.exam_id, "", m.source_path,
                            "rejected", reason])
            for path, err in failures:
                w.writerow(["", "", "", path, "failed", err])

        table = table_from_instances(instances)
        raw = table.copy()
        # persist multi-value cells backslash-joined, like the wire format
        for i in range(raw.n_rows):
            for j in range(len(raw.names)):
                if isinstance(raw.values[i, j], tuple):
                    raw.values[i, j] = "\\".join(raw.values[i, j])
        raw.to_csv(ingest_dir / "tags_raw.csv")

        with open(ingest_dir / "diagnoses.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["exam_id", "text"])
            for exam_id in sorted(diagnoses):
                w.writerow([exam_id, diagnoses[exam_id]])

        rec.counts.update(processed=len(instances), rejected=len(rejected),
                          failed=len(failures))
        rec.seconds = time.perf_counter() - t0
        self._record(rec, ingest_dir / "instances.csv", ingest_dir / "splits.csv",
                     ingest_dir / "tags_raw.csv", ingest_dir / "diagnoses.csv")
        return rec

    def export_images(self) -> StageRecord:
        rec = StageRecord("export-images")
        t0 = time.perf_counter()
        cfg = self.cfg
        img_dir = self._dir("images")
        extraction = tag_extraction_list(cfg["extraction"]["add_tags"],
                                         cfg["extraction"]["remove_tags"])
        accepted_paths = []
        with open(self.out / "ingest" / "instances.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                if row["status"] == "accepted":
                    accepted_paths.append(row["path"])
        thresholds = imaging.PolicyThresholds(t_v=float(cfg["image"]["t_v"]),
                                              t_s=float(cfg["image"]["t_s"]))
        instances = []
        for path in accepted_paths:
            instances.append(parse_file(Path(path).read_bytes(), extraction,
                                        cfg["exam_id_tag"], source_path=path))
        instances.sort(key=lambda m: m.instance_id)
        outcome = imaging.export_corpus(instances, img_dir, thresholds=thresholds,
                                        size=int(cfg["image"]["size"]))
        accepted = sorted(i for i, reason in outcome.items() if reason == "")
        (img_dir / "accepted.txt").write_text("\n".join(accepted))
        rec.counts.update(exported=len(accepted),
                          rejected=sum(1 for r in outcome.values() if r))
        rec.seconds = time.perf_counter() - t0
        self._record(rec, img_dir / "manifest.csv", img_dir / "accepted.txt")
        return rec

    def prep_tags(self) -> StageRecord:
        rec = StageRecord("prep-tags")
        t0 = time.perf_counter()
        cfg = self.cfg
        tags_dir = self._dir("tags")
        models_dir = self._dir("models")
        rules = self._rules()

        raw = TagTable.from_csv(self.out / "ingest" / "tags_raw.csv")
        raw = _tuplize(raw)
        table = split_multivalue(raw)
        table = impute_bpe_column(table, rules)

        ids = self._accepted_ids()
        table = _subset_rows(table, ids)
        split = self._split_of_instances(ids)
        train = split == "train"

        # evaluation targets, from the full (unfiltered) table
        y_m = [str(v) if v is not None else "UNKNOWN"
               for v in table.column("Modality")]
        jb = table.col_index("BodyPartExamined")
        y_b = [str(table.values[i, jb]) if not table.mask[i, jb] else "UNKNOWN"
               for i in range(table.n_rows)]
        with open(tags_dir / "targets.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance_id", "modality", "body_part"])
            for i, inst_id in enumerate(ids):
                w.writerow([inst_id, y_m[i], y_b[i]])

        table = infer_kinds(table)
        blocklist = tuple(DEFAULT_BLOCKLIST)
        if cfg["tags"]["exclude_targets_from_features"]:
            blocklist += ("Modality", "BodyPartExamined")
        clean, decisions = filter_tags(
            table, fill_rate_min=float(cfg["tags"]["fill_rate_min"]),
            min_distinct=int(cfg["tags"]["min_distinct"]),
            blocklist=blocklist,
            max_categorical=int(cfg["tags"]["max_categorical"]),
            stat_rows=train)
        with open(tags_dir / "filter_decisions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["column", "decision"])
            w.writerows(decisions)
        clean.to_csv(tags_dir / "table_clean.csv")

        entries, flags = missingness_report(_subset_rows(clean, [ids[i] for i in np.where(train)[0]]),
                                            seed=cfg.seed) if clean.mask[train].any() else ([], {})
        missingness_to_csv(entries, flags, tags_dir / "missingness.csv")

        train_table = _subset_rows(clean, [ids[i] for i in np.where(train)[0]])
        imputed_train, mf_model = missforest_impute(
            train_table, seed=cfg.seed,
            max_iter=int(cfg["tags"]["missforest_max_iter"]),
            n_estimators=int(cfg["tags"]["missforest_trees"]))
        imputed = _apply_imputation(clean, train, imputed_train, mf_model)
        imputed.to_csv(tags_dir / "table_imputed.csv")
        # the frozen bundle memoizes fit-time completions so relabeling the
        # fitting corpus is an exact fixpoint
        memo = {imputed.ids[i]: list(imputed.values[i]) for i in range(imputed.n_rows)}
        with open(models_dir / "missforest.pkl", "wb") as fh:
            pickle.dump({"model": mf_model, "memo": memo}, fh)

        encoder = encode_fit(imputed, stat_rows=train,
                             clamp=bool(cfg["tags"]["clamp_continuous"]))
        (models_dir / "encoder.json").write_text(encoder.to_json())
        # fold the encoder state into the persisted table's sidecar schema
        schema_path = tags_dir / "table_imputed.schema.json"
        schema = json.loads(schema_path.read_text())
        schema["encoder"] = json.loads(encoder.to_json())
        schema_path.write_text(json.dumps(schema, indent=2))
        matrix, names, warn = encode_apply(imputed, encoder)
        rec.warnings.append(json.dumps(warn))
        write_rnem(EmbeddingMatrix(ids, matrix, source="tags_encoded"),
                   tags_dir / "tags_encoded.rnem")
        rec.counts.update(rows=len(ids), encoded_dim=matrix.shape[1],
                          missforest_iterations=mf_model.n_iterations)
        rec.seconds = time.perf_counter() - t0
        self._record(rec, tags_dir / "table_clean.csv", tags_dir / "table_imputed.csv",
                     tags_dir / "missingness.csv", tags_dir / "targets.csv",
                     tags_dir / "tags_encoded.rnem", models_dir / "encoder.json")
        return rec

    def prep_text(self) -> StageRecord:
        rec = StageRecord("prep-text")
        t0 = time.perf_counter()
        cfg = self.cfg
        text_dir = self._dir("text")
        models_dir = self._dir("models")
        stemmer = self._stemmer()

        ids = self._accepted_ids()
        split = self._split_of_instances(ids)
        exam_of = {}
        with open(self.out / "ingest" / "instances.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                if row["status"] == "accepted":
                    exam_of[row["instance_id"]] = row["exam_id"]
        texts = {}
        with open(self.out / "ingest" / "diagnoses.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for exam_id, text in reader:
                texts[exam_id] = text

        train_exams = sorted({exam_of[i] for i, s in zip(ids, split) if s == "train"})
        corpus = textprep.build_corpus([texts[e] for e in train_exams],
                                       int(cfg["text"]["min_word_frequency"]),
                                       rules=stemmer, split="train")
        (models_dir / "corpus.json").write_text(corpus.to_json())

        method = cfg["text"]["method"]
        vectors = textprep.vectorize([texts[exam_of[i]] for i in ids], corpus,
                                     method=method, rules=stemmer)
        if method == "bow" and cfg["text"]["normalize_bow"]:
            norms = np.linalg.norm(vectors, axis=1, keepdims=True)
            vectors = np.divide(vectors, np.where(norms == 0, 1.0, norms))
        write_rnem(EmbeddingMatrix(ids, vectors, source=f"text_{method}"),
                   text_dir / "text_vectors.rnem")
        rec.counts.update(vocabulary=len(corpus.vocabulary), rows=len(ids))
        rec.seconds = time.perf_counter() - t0
        self._record(rec, text_dir / "text_vectors.rnem", models_dir / "corpus.json")
        return rec

    def extract(self) -> StageRecord:
        rec = StageRecord("extract")
        t0 = time.perf_counter()
        cfg = self.cfg
        feat_dir = self._dir("features")
        models_dir = self._dir("models")
        ids = self._accepted_ids()
        split = self._split_of_instances(ids)
        train = split == "train"

        raw = {
            "diagnosis": read_rnem(self.out / "text" / "text_vectors.rnem", "diagnosis"),
            "tags": read_rnem(self.out / "tags" / "tags_encoded.rnem", "tags"),
            "image": self._image_matrix(ids),
        }
        pca_for = {"diagnosis": "text", "tags": "tags", "image": "image"}
        for source in SOURCES:
            imported = cfg["imports"][source]
            if imported:
                matrix = import_embeddings(imported, ids, source=source)
                _save_pca(models_dir / f"pca_{source}.npz", None)
            else:
                matrix = raw[source]
                section = cfg[pca_for[source]]
                k = section.get("pca_components")
                model = None
                if k:
                    k = int(min(k, matrix.data[train].shape[0] - 1, matrix.dim))
                    if k < int(section.get("pca_components")):
                        rec.warnings.append(
                            f"{source}: pca components capped at {k}")
                    model = pca_fit(matrix.data[train], k,
                                    solver=section.get("pca_solver", "full"),
                                    seed=cfg.seed)
                    matrix = EmbeddingMatrix(ids, pca_transform(model, matrix.data),
                                             source=source)
                _save_pca(models_dir / f"pca_{source}.npz", model)
                if section.get("normalize_rows"):
                    matrix = EmbeddingMatrix(ids, _unit_rows(matrix.data), source)
            write_rnem(matrix, feat_dir / f"{source}.rnem")
            rec.counts[f"{source}_dim"] = matrix.dim
        rec.seconds = time.perf_counter() - t0
        self._record(rec, *(feat_dir / f"{s}.rnem" for s in SOURCES))
        return rec

    def _image_matrix(self, ids: list[str]) -> EmbeddingMatrix:
        # row-major flattening, intensities scaled to [0, 1] so the image
        # block's magnitude is comparable with the other sources at fusion
        img_dir = self.out / "images"
        rows = []
        for inst_id in ids:
            arr = np.asarray(Image.open(img_dir / f"{inst_id}.png"), dtype=np.float64)
            rows.append(arr.reshape(-1) / 255.0)
        return EmbeddingMatrix(ids, np.stack(rows), source="image")

    def cluster_stage(self) -> StageRecord:
        rec = StageRecord("cluster")
        t0 = time.perf_counter()
        cfg = self.cfg
        clus_dir = self._dir("clustering")
        ids = self._accepted_ids()
        split = self._split_of_instances(ids)
        train = split == "train"
        grid = [int(k) for k in cfg["clustering"]["kappa_grid"]]

        for source in SOURCES:
            matrix = read_rnem(self.out / "features" / f"{source}.rnem", source)
            sdir = clus_dir / source
            sdir.mkdir(parents=True, exist_ok=True)
            for algo, metric in [tuple(c) for c in cfg["clustering"]["combos"]]:
                inertias = []
                for kappa in grid:
                    if kappa > int(train.sum()):
                        break
                    model = _fit_cluster(matrix.data[train], algo, metric, kappa, cfg)
                    labels, _ = assign(model, matrix.data)
                    name = f"{algo}_{metric}_k{kappa}"
                    model.save(sdir / f"{name}.model.json")
                    _write_labels(ids, labels, sdir / f"labels_{name}.csv")
                    inertias.append(model.inertia)
                used_grid = grid[:len(inertias)]
                with open(sdir / f"inertia_{algo}_{metric}.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["kappa", "inertia"])
                    w.writerows(zip(used_grid, inertias))
                if len(used_grid) >= 3:
                    kappa_sel, found = elbow(inertias, used_grid)
                else:
                    kappa_sel, found = used_grid[-1], False
                (sdir / f"elbow_{algo}_{metric}.json").write_text(json.dumps(
                    {"selected_kappa": kappa_sel, "knee_found": found,
                     "grid": used_grid, "inertias": inertias}))
                rec.counts[f"{source}_{algo}_{metric}_elbow"] = kappa_sel
        rec.seconds = time.perf_counter() - t0
        self.manifest.stages.append(rec)
        return rec

    def fuse_stage(self) -> StageRecord:
        rec = StageRecord("fuse")
        t0 = time.perf_counter()
        cfg = self.cfg
        fuse_dir = self._dir("fusion")
        models_dir = self._dir("models")
        ids = self._accepted_ids()
        split = self._split_of_instances(ids)
        train = split == "train"
        method = cfg["fusion"]["method"]
        sources = [s for s in SOURCES if s in cfg["fusion"]["sources"]]
        matrices = {s: read_rnem(self.out / "features" / f"{s}.rnem", s)
                    for s in sources}

        if method == "embeddings":
            fused = fuse_embeddings([matrices[s] for s in sources])
            sidecar = {"method": method, "sources": sources,
                       "dims": {s: matrices[s].dim for s in sources}}
        else:
            distances, kappas = [], {}
            for s in sources:
                model = self._per_source_model(s, train, matrices[s])
                model.save(models_dir / f"cluster_{s}.model.json")
                # reload so distances reflect the persisted (float32) centers,
                # exactly what bulk labeling will see
                model = ClusterModel.load(models_dir / f"cluster_{s}.model.json")
                _, dists = assign(model, matrices[s].data)
                distances.append(dists)
                kappas[s] = model.kappa
            if method == "clusterdists":
                normalizer = fit_distance_normalizer(
                    [d[train] for d in distances],
                    scope=cfg["fusion"]["normalization_scope"])
                (models_dir / "normalizer.json").write_text(normalizer.to_json())
                fused = fuse_clusterdists(distances, normalizer, ids)
            else:
                fused = fuse_clusterprobs(distances, ids)
            sidecar = {"method": method, "sources": sources, "kappas": kappas,
                       "dims": {s: int(k) for s, k in kappas.items()}}
            if method == "clusterdists":
                sidecar["normalizer"] = json.loads(normalizer.to_json())
        write_rnem(fused, fuse_dir / f"fused_{method}.rnem")
        (fuse_dir / f"fused_{method}.json").write_text(json.dumps(sidecar, indent=2))
        rec.counts["fused_dim"] = fused.dim
        rec.seconds = time.perf_counter() - t0
        self._record(rec, fuse_dir / f"fused_{method}.rnem")
        return rec

    def _per_source_model(self, source: str, train: np.ndarray,
                          matrix: EmbeddingMatrix) -> ClusterModel:
        """Per-source clustering at the elbow-selected kappa (frozen for fusion)."""
        cfg = self.cfg
        algo = cfg["clustering"]["final_algorithm"]
        metric = cfg["clustering"]["final_metric"]
        elbow_path = (self.out / "clustering" / source / f"elbow_{algo}_{metric}.json")
        kappa = cfg["clustering"]["final_kappa"]
        if kappa is None and elbow_path.exists():
            kappa = json.loads(elbow_path.read_text())["selected_kappa"]
        if kappa is None:
            kappa = int(cfg["clustering"]["kappa_grid"][0])
        return _fit_cluster(matrix.data[train], algo, metric, int(kappa), cfg)

    def evaluate_stage(self) -> StageRecord:
        rec = StageRecord("evaluate")
        t0 = time.perf_counter()
        cfg = self.cfg
        eval_dir = self._dir("evaluation")
        models_dir = self._dir("models")
        ids = self._accepted_ids()
        split = self._split_of_instances(ids)
        train = split == "train"
        val = split == "val"
        y_m, y_b = _read_targets(self.out / "tags" / "targets.csv", ids)
        image = read_rnem(self.out / "features" / "image.rnem", "image")
        diagnosis = read_rnem(self.out / "features" / "diagnosis.rnem", "diagnosis")
        method = cfg["fusion"]["method"]
        fused = read_rnem(self.out / "fusion" / f"fused_{method}.rnem", "fused")

        kappa = cfg["clustering"]["final_kappa"]
        algo = cfg["clustering"]["final_algorithm"]
        metric = cfg["clustering"]["final_metric"]
        if kappa is None:
            inertias, grid = [], []
            for k in [int(k) for k in cfg["clustering"]["kappa_grid"]]:
                if k > int(train.sum()):
                    break
                inertias.append(_fit_cluster(fused.data[train], algo, metric, k, cfg).inertia)
                grid.append(k)
            kappa = elbow(inertias, grid)[0] if len(grid) >= 3 else grid[-1]
        final = _fit_cluster(fused.data[train], algo, metric, int(kappa), cfg)
        final.save(models_dir / "final_cluster.model.json")
        # assign with the persisted model so fit-time labels are the exact
        # fixpoint of the frozen labeling path
        final = ClusterModel.load(models_dir / "final_cluster.model.json")
        labels, _ = assign(final, fused.data)
        _write_labels(ids, labels, eval_dir / "final_labels.csv")

        report = evaluate_clustering(
            labels[val], np.asarray(y_m)[val], np.asarray(y_b)[val],
            image_embeddings=image.data[val], diagnosis_embeddings=diagnosis.data[val],
            n_clusters=final.kappa,
            context={"model": "fused", "method": method, "algorithm": algo,
                     "metric": metric, "kappa": int(final.kappa), "subset": "val"})
        write_report_json(report, eval_dir / "final_report.json")
        write_report_csv([report], eval_dir / "final_report.csv")
        write_composition_csv(report.composition, ["modality", "body_part"],
                              eval_dir / "final_composition.csv")
        if cfg["report"]["svg_charts"]:
            composition_svg(report.composition, "modality",
                            eval_dir / "final_composition_modality.svg")
            composition_svg(report.composition, "body_part",
                            eval_dir / "final_composition_body_part.svg")
        rec.counts.update(kappa=int(final.kappa), s=round(report.s, 4),
                          d_score=round(report.d, 6))
        rec.seconds = time.perf_counter() - t0
        self._record(rec, eval_dir / "final_labels.csv", eval_dir / "final_report.json")
        return rec

    def compare_sources(self) -> StageRecord:
        """Cluster every source combination and rank S / D_score on validation."""
        rec = StageRecord("compare-sources")
        t0 = time.perf_counter()
        cfg = self.cfg
        eval_dir = self._dir("evaluation")
        ids = self._accepted_ids()
        split = self._split_of_instances(ids)
        train, val = split == "train", split == "val"
        y_m, y_b = _read_targets(self.out / "tags" / "targets.csv", ids)
        y_m, y_b = np.asarray(y_m), np.asarray(y_b)
        matrices = {s: read_rnem(self.out / "features" / f"{s}.rnem", s)
                    for s in SOURCES}
        algo = cfg["clustering"]["final_algorithm"]
        metric = cfg["clustering"]["final_metric"]
        kappa = int(cfg["clustering"]["final_kappa"] or cfg["clustering"]["kappa_grid"][0])

        combos = [("diagnosis",), ("tags",), ("image",),
                  ("diagnosis", "tags"), ("diagnosis", "image"), ("tags", "image"),
                  ("diagnosis", "tags", "image")]
        reports = []
        for combo in combos:
            fused = fuse_embeddings([matrices[s] for s in combo])
            model = _fit_cluster(fused.data[train], algo, metric, kappa, cfg)
            labels, _ = assign(model, fused.data)
            reports.append(evaluate_clustering(
                labels[val], y_m[val], y_b[val],
                image_embeddings=matrices["image"].data[val],
                diagnosis_embeddings=matrices["diagnosis"].data[val],
                n_clusters=kappa,
                context={"combo": "+".join(combo), "kappa": kappa,
                         "algorithm": algo, "metric": metric, "subset": "val"}))
        write_report_csv(reports, eval_dir / "source_comparison.csv")
        rec.counts["combos"] = len(combos)
        rec.seconds = time.perf_counter() - t0
        self._record(rec, eval_dir / "source_comparison.csv")
        return rec

    # --- frozen-model application ---------------------------------------------

    def label_corpus(self, input_dir: str | Path, diagnoses_csv: str | Path,
                     out_name: str = "label") -> StageRecord:
        """Apply the frozen pipeline to a new corpus; nothing is refitted."""
        rec = StageRecord("label")
        t0 = time.perf_counter()
        cfg = self.cfg
        out_dir = self._dir(out_name)
        models_dir = self.out / "models"
        extraction = tag_extraction_list(cfg["extraction"]["add_tags"],
                                         cfg["extraction"]["remove_tags"])
        results = self._parse_tree(Path(input_dir), extraction, cfg["exam_id_tag"])
        diagnoses, _ = textprep.read_diagnoses_csv(diagnoses_csv)
        instances = [inst for _, inst, _ in results
                     if inst is not None and inst.exam_id in diagnoses]
        skipped = len(results) - len(instances)
        instances.sort(key=lambda m: m.instance_id)

        thresholds = imaging.PolicyThresholds(t_v=float(cfg["image"]["t_v"]),
                                              t_s=float(cfg["image"]["t_s"]))
        img_dir = out_dir / "images"
        outcome = imaging.export_corpus(instances, img_dir, thresholds=thresholds,
                                        size=int(cfg["image"]["size"]))
        kept = [m for m in instances if outcome.get(m.instance_id) == ""]
        ids = [m.instance_id for m in kept]

        # tags through the frozen imputation + encoder
        with open(models_dir / "missforest.pkl", "rb") as fh:
            bundle = pickle.load(fh)
        mf_model: MissForestModel = bundle["model"]
        memo: dict = bundle["memo"]
        encoder = EncoderState.from_json((models_dir / "encoder.json").read_text())
        table = split_multivalue(table_from_instances(kept))
        table = impute_bpe_column(table, self._rules())
        y_m = [str(v) if v is not None else "UNKNOWN" for v in table.column("Modality")]
        jb = table.col_index("BodyPartExamined")
        y_b = [str(table.values[i, jb]) if not table.mask[i, jb] else "UNKNOWN"
               for i in range(table.n_rows)]
        table = _ensure_columns(table, mf_model.names)
        table.kinds = list(mf_model.kinds)
        known = [i for i, inst_id in enumerate(table.ids) if inst_id in memo]
        for i in known:
            table.values[i] = np.array(memo[table.ids[i]], dtype=object)
            table.mask[i] = False
        if table.mask.any():
            completed = apply_missforest(table, mf_model)
        else:
            completed = table
        tag_matrix, _, _ = encode_apply(completed, encoder)

        corpus = textprep.Corpus.from_json((models_dir / "corpus.json").read_text())
        stemmer = self._stemmer()
        texts = [diagnoses[m.exam_id] for m in kept]
        text_matrix = textprep.vectorize(texts, corpus,
                                         method=cfg["text"]["method"], rules=stemmer)

        # every value passes through the same float32 artifact precision as
        # the fitting run, keeping frozen relabeling an exact fixpoint
        raw = {
            "diagnosis": EmbeddingMatrix(ids, _f32(text_matrix), "diagnosis"),
            "tags": EmbeddingMatrix(ids, _f32(tag_matrix), "tags"),
            "image": self._label_image_matrix(img_dir, ids),
        }
        features = {}
        section_of = {"diagnosis": "text", "tags": "tags", "image": "image"}
        for source in SOURCES:
            model = _load_pca(models_dir / f"pca_{source}.npz")
            data = raw[source].data
            if model is not None:
                data = pca_transform(model, data)
            if not cfg["imports"][source] and cfg[section_of[source]].get("normalize_rows"):
                data = _unit_rows(data)
            features[source] = EmbeddingMatrix(ids, _f32(data), source)

        method = cfg["fusion"]["method"]
        sources = [s for s in SOURCES if s in cfg["fusion"]["sources"]]
        if method == "embeddings":
            fused = fuse_embeddings([features[s] for s in sources])
        else:
            distances = []
            for s in sources:
                source_model = ClusterModel.load(models_dir / f"cluster_{s}.model.json")
                _, dists = assign(source_model, features[s].data)
                distances.append(dists)
            if method == "clusterdists":
                normalizer = DistanceNormalizer.from_json(
                    (models_dir / "normalizer.json").read_text())
                fused = fuse_clusterdists(distances, normalizer, ids)
            else:
                fused = fuse_clusterprobs(distances, ids)

        final = ClusterModel.load(models_dir / "final_cluster.model.json")
        labels, _ = assign(final, _f32(fused.data))
        _write_labels(ids, labels, out_dir / "labels.csv")
        comp = composition_report(labels, {"modality": y_m, "body_part": y_b},
                                  final.kappa)
        write_composition_csv(comp, ["modality", "body_part"],
                              out_dir / "composition.csv")
        write_cluster_sizes(comp, out_dir / "cluster_sizes.csv")
        if cfg["report"]["svg_charts"]:
            composition_svg(comp, "modality", out_dir / "composition_modality.svg")
            composition_svg(comp, "body_part", out_dir / "composition_body_part.svg")
        rec.counts.update(labeled=len(ids), skipped_files=skipped,
                          rejected_images=sum(1 for r in outcome.values() if r),
                          near_empty_clusters=sum(1 for c in comp if 0 < c["size"] <= 6))
        rec.seconds = time.perf_counter() - t0
        self._record(rec, out_dir / "labels.csv", out_dir / "cluster_sizes.csv")
        return rec

    def _label_image_matrix(self, img_dir: Path, ids: list[str]) -> EmbeddingMatrix:
        rows = [np.asarray(Image.open(img_dir / f"{i}.png"),
                           dtype=np.float64).reshape(-1) / 255.0
                for i in ids]
        return EmbeddingMatrix(ids, np.stack(rows), source="image")

    # --- full run --------------------------------------------------------------

    def run(self) -> RunManifest:
        self.out.mkdir(parents=True, exist_ok=True)
        stages = [self.ingest, self.export_images, self.prep_tags, self.prep_text,
                  self.extract, self.cluster_stage, self.fuse_stage,
                  self.evaluate_stage, self.compare_sources]
        for stage in stages:
            try:
                stage()
            except Exception as exc:
                self.manifest.stages.append(
                    StageRecord(stage.__name__, failed=f"{type(exc).__name__}: {exc}"))
                break
        self.manifest.save(self.out / "manifest.json")
        return self.manifest


# --- module-level helpers -------------------------------------------------------


def _f32(data: np.ndarray) -> np.ndarray:
    """Round through the RNEM on-disk precision."""
    return np.asarray(data).astype("<f4").astype(np.float64)


def _unit_rows(data: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(data, axis=1, keepdims=True)
    return np.divide(data, np.where(norms == 0, 1.0, norms))


def _tuplize(table: TagTable) -> TagTable:
    out = table.copy()
    for i in range(out.n_rows):
        for j in range(len(out.names)):
            v = out.values[i, j]
            if isinstance(v, str) and "\\" in v:
                out.values[i, j] = tuple(v.split("\\"))
    return out


def _subset_rows(table: TagTable, ids: list[str]) -> TagTable:
    index = {inst_id: i for i, inst_id in enumerate(table.ids)}
    rows = [index[i] for i in ids]
    return TagTable(list(ids), list(table.names), list(table.kinds),
                    table.values[rows], table.mask[rows])


def _apply_imputation(clean: TagTable, train: np.ndarray,
                      imputed_train: TagTable, model: MissForestModel) -> TagTable:
    out = clean.copy()
    train_rows = np.where(train)[0]
    for local, global_row in enumerate(train_rows):
        out.values[global_row] = imputed_train.values[local]
        out.mask[global_row] = False
    rest_rows = np.where(~train)[0]
    if rest_rows.size:
        rest = TagTable([clean.ids[i] for i in rest_rows], list(clean.names),
                        list(clean.kinds), clean.values[rest_rows],
                        clean.mask[rest_rows])
        completed = apply_missforest(rest, model)
        for local, global_row in enumerate(rest_rows):
            out.values[global_row] = completed.values[local]
            out.mask[global_row] = False
    return out


def _ensure_columns(table: TagTable, required: list[str]) -> TagTable:
    """Line a new corpus's table up with the frozen model's columns.

    A missing split-sibling (base tag present at lower arity) becomes an
    all-missing column; a missing base tag is schema drift.
    """
    names = set(table.names)
    add = []
    for name in required:
        if name in names:
            continue
        base = name.rstrip("0123456789")
        if base != name and any(n.rstrip("0123456789") == base for n in table.names):
            add.append(name)
        else:
            raise SchemaDriftError(f"new corpus lacks required tag column {name!r}")
    values = table.values
    mask = table.mask
    out_names = list(table.names)
    if add:
        extra_vals = np.full((table.n_rows, len(add)), None, dtype=object)
        extra_mask = np.ones((table.n_rows, len(add)), dtype=bool)
        values = np.hstack([values, extra_vals])
        mask = np.hstack([mask, extra_mask])
        out_names += add
    keep = [out_names.index(n) for n in required]
    return TagTable(list(table.ids), list(required),
                    ["categorical"] * len(required), values[:, keep], mask[:, keep])


def _fit_cluster(X: np.ndarray, algo: str, metric: str, kappa: int,
                 cfg: PipelineConfig) -> ClusterModel:
    if algo == KMEANS:
        return kmeans_fit(X, kappa, seed=cfg.seed,
                          max_iter=int(cfg["clustering"]["max_iter"]),
                          n_init=int(cfg["clustering"]["n_init"]))
    return kmedoids_fit(X, kappa, metric=metric, seed=cfg.seed)


def _write_labels(ids: list[str], labels: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "cluster"])
        for inst_id, label in zip(ids, labels):
            w.writerow([inst_id, int(label)])


def _read_targets(path: Path, ids: list[str]) -> tuple[list[str], list[str]]:
    y_m, y_b = {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            y_m[row["instance_id"]] = row["modality"]
            y_b[row["instance_id"]] = row["body_part"]
    return [y_m[i] for i in ids], [y_b[i] for i in ids]


def _save_pca(path: Path, model: PcaModel | None) -> None:
    if model is None:
        np.savez(path, none=np.array([1]))
    else:
        np.savez(path, mean=model.mean, components=model.components,
                 explained=model.explained_variance,
                 solver=np.array([model.solver]))


def _load_pca(path: Path) -> PcaModel | None:
    with np.load(path, allow_pickle=False) as data:
        if "none" in data:
            return None
        return PcaModel(mean=data["mean"], components=data["components"],
                        explained_variance=data["explained"],
                        solver=str(data["solver"][0]))
