"""End-to-end pipeline behaviour on a small synthetic corpus.

One module-scoped run backs several assertions (artifacts, leakage guards,
label fixpoint); determinism and CLI surface get their own runs.
"""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from medclust.cli import main as cli_main
from medclust.config import PipelineConfig, default_config
from medclust.errors import ConfigError
from medclust.pipeline import Pipeline
from medclust.rnem import read_rnem
from medclust.synth import SynthParams, generate_synthetic


def small_config(corpus: Path, out: Path, seed=3) -> PipelineConfig:
    cfg = default_config(str(corpus / "dicom"), str(corpus / "diagnoses.csv"),
                         str(out), seed=seed)
    cfg.raw["clustering"]["kappa_grid"] = [2, 3, 5]
    cfg.raw["clustering"]["combos"] = [["kmeans", "euclidean"]]
    cfg.raw["clustering"]["final_kappa"] = 5
    cfg.raw["clustering"]["n_init"] = 4
    cfg.raw["image"]["pca_components"] = 12
    cfg.raw["text"]["min_word_frequency"] = 2
    cfg.raw["tags"]["missforest_trees"] = 20
    cfg.validate()
    return cfg


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    generate_synthetic(corpus, SynthParams(classes=5, per_class=16, seed=3,
                                           image_size=48, files_per_exam=2))
    out = root / "run"
    cfg = small_config(corpus, out)
    manifest = Pipeline(cfg).run()
    assert manifest.ok, [s.failed for s in manifest.stages]
    return root, corpus, out, cfg


class TestRunArtifacts:
    def test_manifest_lists_every_stage(self, run_dir):
        _, _, out, _ = run_dir
        manifest = json.loads((out / "manifest.json").read_text())
        names = [s["name"] for s in manifest["stages"]]
        assert names == ["ingest", "export-images", "prep-tags", "prep-text",
                         "extract", "cluster", "fuse", "evaluate", "compare-sources"]
        assert manifest["ok"]

    def test_every_file_accounted_for(self, run_dir):
        _, corpus, out, _ = run_dir
        n_input = len(list((corpus / "dicom").glob("*.dcm")))
        with open(out / "ingest" / "instances.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == n_input
        assert all(r["status"] in ("accepted", "rejected", "failed") for r in rows)

    def test_artifact_digests_recorded(self, run_dir):
        _, _, out, _ = run_dir
        manifest = json.loads((out / "manifest.json").read_text())
        ingest = next(s for s in manifest["stages"] if s["name"] == "ingest")
        assert all(len(d) == 64 for d in ingest["outputs"].values())

    def test_exams_do_not_straddle_splits(self, run_dir):
        _, _, out, _ = run_dir
        with open(out / "ingest" / "instances.csv", newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["status"] == "accepted"]
        by_exam = {}
        for r in rows:
            by_exam.setdefault(r["exam_id"], set()).add(r["split"])
        assert all(len(s) == 1 for s in by_exam.values())

    def test_embeddings_aligned_across_sources(self, run_dir):
        _, _, out, _ = run_dir
        ids = None
        for source in ("diagnosis", "tags", "image"):
            m = read_rnem(out / "features" / f"{source}.rnem")
            assert np.isfinite(m.data).all()
            if ids is None:
                ids = m.ids
            else:
                assert m.ids == ids

    def test_fused_dim_is_sum_of_sources(self, run_dir):
        _, _, out, _ = run_dir
        dims = [read_rnem(out / "features" / f"{s}.rnem").dim
                for s in ("diagnosis", "tags", "image")]
        fused = read_rnem(out / "fusion" / "fused_embeddings.rnem")
        assert fused.dim == sum(dims)

    def test_final_report_written(self, run_dir):
        _, _, out, _ = run_dir
        report = json.loads((out / "evaluation" / "final_report.json").read_text())
        for key in ("nmi_m", "nmi_b", "hs_m", "hs_b", "s", "d_i", "d_d", "d"):
            assert key in report
        assert 0 <= report["s"] <= 1

    def test_composition_svgs_exist(self, run_dir):
        _, _, out, _ = run_dir
        for target in ("modality", "body_part"):
            svg = out / "evaluation" / f"final_composition_{target}.svg"
            assert svg.exists() and svg.read_text().startswith("<svg")

    def test_source_comparison_has_seven_rows(self, run_dir):
        _, _, out, _ = run_dir
        with open(out / "evaluation" / "source_comparison.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 7
        combos = {json.loads(r["context"])["combo"] for r in rows}
        assert "diagnosis+tags+image" in combos

    def test_imputed_table_has_no_missing(self, run_dir):
        _, _, out, _ = run_dir
        from medclust.tags import TagTable
        table = TagTable.from_csv(out / "tags" / "table_imputed.csv")
        assert not table.mask.any()

    def test_export_provenance_recheckable(self, run_dir):
        # r_V recorded in the manifest must match a recount on the stored PNG
        import numpy as np
        from PIL import Image
        _, _, out, _ = run_dir
        with open(out / "images" / "manifest.csv", newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["reject_reason"] == ""]
        assert rows
        for row in rows[:10]:
            img = np.asarray(Image.open(out / "images" / f"{row['instance_id']}.png"))
            assert img.shape == (128, 128)
            assert float(row["r_V"]) > 0.1
            assert float(row["r_S"]) > 0.1

    def test_duplicate_instance_ids_rejected(self, tmp_path):
        corpus = tmp_path / "corpus"
        generate_synthetic(corpus, SynthParams(classes=3, per_class=4, seed=1,
                                               image_size=40))
        files = sorted((corpus / "dicom").glob("*.dcm"))
        (corpus / "dicom" / "copy_of_first.dcm").write_bytes(files[0].read_bytes())
        cfg = small_config(corpus, tmp_path / "run", seed=4)
        pipe = Pipeline(cfg)
        pipe.ingest()
        with open(tmp_path / "run" / "ingest" / "instances.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        reasons = [r["reason"] for r in rows if r["status"] == "rejected"]
        assert "duplicate_instance_id" in reasons


class TestLabelCorpus:
    def test_relabeling_training_corpus_is_fixpoint(self, run_dir):
        _, corpus, out, cfg = run_dir
        pipe = Pipeline(cfg)
        rec = pipe.label_corpus(corpus / "dicom", corpus / "diagnoses.csv",
                                out_name="label_self")
        assert not rec.failed
        fit_labels = dict(_read_labels(out / "evaluation" / "final_labels.csv"))
        relabeled = dict(_read_labels(out / "label_self" / "labels.csv"))
        assert relabeled == fit_labels

    def test_label_outputs_histogram(self, run_dir):
        _, _, out, _ = run_dir
        sizes = (out / "label_self" / "cluster_sizes.csv").read_text().splitlines()
        assert sizes[0] == "cluster,size"
        assert len(sizes) == 6  # header + kappa rows

    def test_unparseable_file_skipped_not_fatal(self, run_dir, tmp_path):
        root, corpus, out, cfg = run_dir
        broken_dir = tmp_path / "broken"
        broken_dir.mkdir()
        for p in list((corpus / "dicom").glob("*.dcm"))[:6]:
            (broken_dir / p.name).write_bytes(p.read_bytes())
        (broken_dir / "junk.dcm").write_bytes(b"\x00" * 300)
        pipe = Pipeline(cfg)
        rec = pipe.label_corpus(broken_dir, corpus / "diagnoses.csv",
                                out_name="label_broken")
        assert rec.counts["skipped_files"] == 1
        assert rec.counts["labeled"] >= 1

    def test_missing_required_tag_column_is_schema_drift(self, run_dir, tmp_path):
        import numpy as np
        from medclust.dicom_io import write_dicom
        from medclust.errors import SchemaDriftError

        root, corpus, out, cfg = run_dir
        drift_dir = tmp_path / "drift"
        drift_dir.mkdir()
        # a corpus whose files carry none of the aux tags the frozen encoder
        # relies on (no Manufacturer, KVP, ...)
        img = (np.arange(48 * 48).reshape(48, 48) % 600).astype(np.uint16)
        blob = write_dicom({"SOPInstanceUID": "9.1", "StudyInstanceUID": "9",
                            "Modality": "CT", "BodyPartExamined": "HEAD",
                            "WindowCenter": 300, "WindowWidth": 600}, pixel=img)
        (drift_dir / "a.dcm").write_bytes(blob)
        diag = tmp_path / "drift_diag.csv"
        diag.write_text("exam_id,text\n9,glava mozak nalaz uredan\n")
        with pytest.raises(SchemaDriftError):
            Pipeline(cfg).label_corpus(drift_dir, diag, out_name="label_drift")


class TestDeterminism:
    def test_two_runs_byte_identical_rnem_and_labels(self, tmp_path):
        corpus = tmp_path / "corpus"
        generate_synthetic(corpus, SynthParams(classes=4, per_class=12, seed=5,
                                               image_size=40))
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            cfg = small_config(corpus, out, seed=8)
            cfg.raw["clustering"]["final_kappa"] = 3
            manifest = Pipeline(cfg).run()
            assert manifest.ok
            outs.append(out)
        a, b = outs
        rnems = sorted(p.relative_to(a) for p in a.rglob("*.rnem"))
        assert rnems
        for rel in rnems:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
        assert (a / "evaluation" / "final_labels.csv").read_bytes() == \
               (b / "evaluation" / "final_labels.csv").read_bytes()


class TestClusterDistanceFusions:
    @pytest.mark.parametrize("method", ["clusterdists", "clusterprobs"])
    def test_full_run_and_label_fixpoint(self, tmp_path, method):
        corpus = tmp_path / "corpus"
        generate_synthetic(corpus, SynthParams(classes=4, per_class=12, seed=6,
                                               image_size=40))
        cfg = small_config(corpus, tmp_path / "run", seed=6)
        cfg.raw["fusion"]["method"] = method
        cfg.raw["clustering"]["final_kappa"] = 4
        manifest = Pipeline(cfg).run()
        assert manifest.ok, [s.failed for s in manifest.stages]
        out = tmp_path / "run"
        fused = read_rnem(out / "fusion" / f"fused_{method}.rnem")
        sidecar = json.loads((out / "fusion" / f"fused_{method}.json").read_text())
        assert fused.dim == sum(sidecar["kappas"].values())
        if method == "clusterprobs":
            start = 0
            for source in ("diagnosis", "tags", "image"):
                width = sidecar["kappas"][source]
                block = fused.data[:, start:start + width]
                assert np.abs(block.sum(axis=1) - 1.0).max() < 1e-6
                start += width
        else:
            assert "normalizer" in sidecar
        rec = Pipeline(cfg).label_corpus(corpus / "dicom", corpus / "diagnoses.csv",
                                         out_name="relabel")
        assert not rec.failed
        fit = dict(_read_labels(out / "evaluation" / "final_labels.csv"))
        relabeled = dict(_read_labels(out / "relabel" / "labels.csv"))
        assert relabeled == fit


class TestWorkers:
    def test_output_independent_of_worker_count(self, tmp_path):
        corpus = tmp_path / "corpus"
        generate_synthetic(corpus, SynthParams(classes=3, per_class=6, seed=9,
                                               image_size=40))
        outs = []
        for name, workers in (("w1", 1), ("w4", 4)):
            cfg = small_config(corpus, tmp_path / name, seed=2)
            cfg.raw["workers"] = workers
            pipe = Pipeline(cfg)
            pipe.ingest()
            pipe.export_images()
            outs.append(tmp_path / name)
        a, b = outs
        assert (a / "ingest" / "tags_raw.csv").read_bytes() == \
               (b / "ingest" / "tags_raw.csv").read_bytes()
        assert (a / "images" / "manifest.csv").read_bytes() == \
               (b / "images" / "manifest.csv").read_bytes()


class TestConfig:
    def test_unknown_key_rejected_before_work(self, tmp_path):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"seed": 1, "bogus_section": {}})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"seed": 1, "image": {"sizzle": 3}})

    def test_seed_mandatory(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"paths": {"input_dir": "x"}})

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"seed": 1, "split": {"train": 0.9,
                                                           "test": 0.2,
                                                           "val": 0.1}})

    def test_grid_strictly_increasing(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({"seed": 1,
                                      "clustering": {"kappa_grid": [5, 5, 10]}})


class TestCli:
    def test_synth_and_staged_run(self, tmp_path, capsys):
        out = tmp_path / "c"
        assert cli_main(["synth", "--out", str(out), "--classes", "4",
                         "--per-class", "12", "--seed", "2",
                         "--image-size", "40"]) == 0
        cfg_path = out / "config.json"
        cfg = json.loads(cfg_path.read_text())
        cfg["clustering"]["kappa_grid"] = [2, 3, 4]
        cfg["clustering"]["combos"] = [["kmeans", "euclidean"]]
        cfg["clustering"]["final_kappa"] = 3
        cfg["image"]["pca_components"] = 8
        cfg["text"]["min_word_frequency"] = 2
        cfg["tags"]["missforest_trees"] = 10
        cfg_path.write_text(json.dumps(cfg))
        for command in ("ingest", "export-images", "prep-tags", "prep-text",
                        "extract", "cluster", "fuse", "evaluate", "report"):
            assert cli_main([command, "--config", str(cfg_path)]) == 0, command
        assert cli_main(["label", "--config", str(cfg_path),
                         "--input", str(out / "dicom"),
                         "--diagnoses", str(out / "diagnoses.csv")]) == 0

    def test_missing_config_errors(self, tmp_path):
        assert cli_main(["run", "--config", str(tmp_path / "none.json")]) == 1


def _read_labels(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            yield row[0], int(row[1])
