from __future__ import annotations

import json
from pathlib import Path

import pytest

from fxbook.orchestrator import (
    MissingFileError,
    PipelineConfig,
    PrerequisiteError,
    ValidationError,
    config_from_dict,
    load_config,
    run,
    run_stage,
)

from e2e_fixture import build_fixture


def test_load_config_minimal_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{}")
    cfg = load_config(path)
    assert cfg.k == 100
    assert cfg.batches == 1
    assert cfg.mode == "base"
    assert cfg.policy.numeric_rel_tol == 1e-6


def test_load_config_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_config(tmp_path / "nope.json")


def test_config_rejects_k_zero():
    with pytest.raises(ValidationError) as exc:
        config_from_dict({"k": 0})
    assert exc.value.field_path == "k"


def test_config_rejects_unknown_key():
    with pytest.raises(ValidationError) as exc:
        config_from_dict({"foo": 1})
    assert exc.value.field_path == "foo"


def test_config_rejects_unknown_policy_key():
    with pytest.raises(ValidationError) as exc:
        config_from_dict({"policy": {"bogus": True}})
    assert exc.value.field_path == "policy"


def test_config_rejects_bad_mode():
    with pytest.raises(ValidationError):
        config_from_dict({"mode": "everything"})


def test_policy_parsed_from_config():
    cfg = config_from_dict({"policy": {"allow_offset": False}})
    assert cfg.policy.allow_offset is False


def test_validate_before_gen_names_missing_artifact(tmp_path):
    cfg = PipelineConfig(out_dir=str(tmp_path / "out"), tables_dir=str(tmp_path))
    with pytest.raises(PrerequisiteError) as exc:
        run_stage("validate", cfg)
    assert "raw_samples" in exc.value.artifact


def test_e2e_counts_and_idempotence(tmp_path):
    paths = build_fixture(tmp_path)
    cfg = load_config(paths["config"])
    assert run("e2e", cfg) == 0

    out = paths["out_dir"]
    raw = [json.loads(l) for l in (out / "raw_samples.jsonl").read_text().splitlines()]
    assert len(raw) == 10

    validated = [json.loads(l) for l in (out / "validated.jsonl").read_text().splitlines()]
    assert len(validated) == 5

    report = json.loads((out / "reject_report.json").read_text())
    assert report["attempted"] == 10
    assert report["exec_fail"] == 3
    assert report["mismatch"] == 2
    assert report["validated"] == 5
    assert report["keep_rate"] == 0.5

    train = (out / "datasets" / "train.jsonl").read_text().splitlines()
    assert len(train) == 5

    # The doc-QA control flowed from the gen stage into the export.
    doc_qa = (out / "doc_qa.jsonl").read_text().splitlines()
    assert len(doc_qa) == 3
    doc_qa_train = (out / "datasets" / "doc_qa_train.jsonl").read_text().splitlines()
    assert len(doc_qa_train) == 3
    raw_docs = (out / "datasets" / "raw_docs_train.jsonl").read_text().splitlines()
    assert len(raw_docs) == 5

    for stage in ("libprep", "gen", "validate", "compile", "export"):
        manifest = json.loads((out / "manifests" / f"{stage}.json").read_text())
        assert manifest["stage"] == stage
        assert manifest["outputs"]

    # Rerun with identical config and transcripts: every stage is a no-op.
    cfg2 = load_config(paths["config"])
    for stage in ("libprep", "gen", "validate", "compile", "export"):
        assert run_stage(stage, cfg2) is False


def test_e2e_digests_stable_across_fresh_runs(tmp_path):
    paths_a = build_fixture(tmp_path / "a")
    paths_b = build_fixture(tmp_path / "b")
    assert run("e2e", load_config(paths_a["config"])) == 0
    assert run("e2e", load_config(paths_b["config"])) == 0
    for rel in ("raw_samples.jsonl", "validated.jsonl", "tutorials.jsonl",
                "datasets/train.jsonl", "datasets/hyperparams.json"):
        a = (paths_a["out_dir"] / rel).read_bytes()
        b = (paths_b["out_dir"] / rel).read_bytes()
        assert a == b, f"{rel} differs between fresh runs"


def test_library_ordering_from_planted_corpus(tmp_path):
    paths = build_fixture(tmp_path)
    cfg = load_config(paths["config"])
    run_stage("libprep", cfg)
    library = json.loads((paths["out_dir"] / "library.json").read_text())
    assert [s["name"] for s in library] == ["ABS", "SUM", "MATCH", "LEN", "IF"]
    usage = json.loads((paths["out_dir"] / "usage_stats.json").read_text())
    assert usage["skipped"] == 1
    assert usage["counts"]["ABS"] == 50


def test_eval_stage_offline(tmp_path, medals_grid):
    from fxbook.evalbench import QATask
    from fxbook.grid import grid_to_json

    tasks_path = tmp_path / "tasks.jsonl"
    rows = []
    for i in range(4):
        task = QATask(f"t{i}", medals_grid, "How many golds for Brazil?", ["13"])
        rows.append(json.dumps(task.to_json()))
    tasks_path.write_text("\n".join(rows) + "\n")

    completions = tmp_path / "completions.jsonl"
    completions.write_text(
        "\n".join(
            json.dumps({"id": f"t{i}", "completion": "```excel\n=C2\n```" if i < 2 else "nope"})
            for i in range(4)
        )
        + "\n"
    )
    cfg = PipelineConfig(out_dir=str(tmp_path / "out"), tasks=str(tasks_path), completions=str(completions))
    assert run("eval", cfg) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["em_percent"] == 50.0
    assert report["schema_version"] == "1"


def test_analyze_command(tmp_path):
    from fxbook.evalbench import EvalRecord, EvalReport

    def report(flags):
        return EvalReport(
            records=[EvalRecord(task_id=f"t{i}", raw_generation="", formula="=SUM(A1:A2)", matched=f)
                     for i, f in enumerate(flags)],
            em_percent=0.0, single_function_percent=0.0, rag_mode="base", model_id="m",
        ).to_json()

    base = tmp_path / "base.json"
    ft = tmp_path / "ft.json"
    base.write_text(json.dumps(report([False, False, True])))
    ft.write_text(json.dumps(report([True, True, True])))
    cfg = PipelineConfig(out_dir=str(tmp_path / "out"))
    assert run("analyze", cfg, base_path=str(base), ft_path=str(ft)) == 0
    pairs = json.loads((tmp_path / "out" / "pairs.json").read_text())
    assert pairs["improvements"]["total"] == 2
    assert pairs["improvements"]["samples"] == "2/2"


def test_cli_end_to_end(tmp_path):
    from fxbook.cli import main

    paths = build_fixture(tmp_path)
    assert main(["e2e", "--config", str(paths["config"])]) == 0
    assert (paths["out_dir"] / "datasets" / "train.jsonl").exists()


def test_cli_stage_by_stage_with_explicit_paths(tmp_path):
    from fxbook.cli import main

    paths = build_fixture(tmp_path)
    cfg_flag = ["--config", str(paths["config"])]
    library = tmp_path / "library.json"
    assert main(["libprep", *cfg_flag, "--corpus", str(paths["corpus"]),
                 "--docs", str(paths["docs_dir"]), "--k", "5", "--out", str(library)]) == 0
    assert library.exists()

    assert main(["gen", *cfg_flag, "--library", str(library),
                 "--tables", str(paths["tables_dir"])]) == 0
    raw = paths["out_dir"] / "raw_samples.jsonl"
    assert len(raw.read_text().splitlines()) == 10

    validated = tmp_path / "validated.jsonl"
    report = tmp_path / "reject_report.json"
    assert main(["validate", *cfg_flag, "--in", str(raw),
                 "--tables", str(paths["tables_dir"]),
                 "--out", str(validated), "--report", str(report)]) == 0
    assert len(validated.read_text().splitlines()) == 5
    assert json.loads(report.read_text())["keep_rate"] == 0.5

    assert main(["export", *cfg_flag, "--tutorials", str(validated),
                 "--tables", str(paths["tables_dir"]), "--heldout", "0"]) == 0
    train = paths["out_dir"] / "datasets" / "train.jsonl"
    assert len(train.read_text().splitlines()) == 5
