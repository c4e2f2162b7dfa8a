from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from fxbook.engine import Array, Plain
from fxbook.evalbench import (
    ChatStudent,
    EvalRecord,
    EvalReport,
    HyperParams,
    IdSetMismatchError,
    MissingOracleError,
    OfflineStudent,
    QATask,
    RagMode,
    SplitTooLargeError,
    answers_match,
    build_eval_prompt,
    build_oracle_solutions,
    export_hyperparams,
    export_sft_dataset,
    paired_improvements,
    recast_dataset,
    run_eval,
    signature_block,
)
from fxbook.genpipe import DocQaExample, TutorialDoc, compile_tutorial
from fxbook.grid import ErrorKind, Grid, grid_to_json
from fxbook.libprep import ArgSpec, FunctionSpec


def make_library(n=5):
    names = ["MATCH", "SUM", "ABS", "LEN", "IF", "MAX", "MIN", "COUNT"][:n]
    return [
        FunctionSpec(name, f"{name}(arg)", [ArgSpec("arg", True)], f"{name} does things.", f"{name} docs")
        for name in names
    ]


def value_task(i, value):
    grid = Grid.from_rows([["v"], [value]], source_id=f"t{i:02d}")
    return QATask(id=f"t{i:02d}", grid=grid, question="What is the value?", gold_answers=[str(value)])


# --- recast_dataset ----------------------------------------------------------


def test_recast_wikitq_record(medals_grid):
    record = {"id": "w1", "table": grid_to_json(medals_grid), "question": "q?", "answers": ["Chile"]}
    (task,) = recast_dataset([record], "wikitq")
    assert task.grid.n_cols == 6
    assert task.context_paragraphs == []


def test_recast_skips_empty_answers(medals_grid, caplog):
    record = {"id": "w1", "table": grid_to_json(medals_grid), "question": "q?", "answers": []}
    assert recast_dataset([record], "wikitq") == []


def test_recast_tatqa_paragraphs(medals_grid):
    record = {
        "id": "f1",
        "table": grid_to_json(medals_grid),
        "question": "q?",
        "answers": ["1"],
        "paragraphs": ["para one", "para two"],
    }
    (task,) = recast_dataset([record], "tatqa")
    assert len(task.context_paragraphs) == 2


# --- oracle building -----------------------------------------------------------


class ScriptedOracle:
    """Answers each prompt with a canned formula keyed by the query line."""

    def __init__(self, mapping):
        self.mapping = mapping

    def complete(self, prompt, temperature=None):
        query = prompt.split("## Query:\n")[1].split("\n")[0]
        return f"```excel\n{self.mapping[query]}\n```"


def test_build_oracle_solutions_retention():
    tasks = [value_task(i, float(i)) for i in range(10)]
    mapping = {}
    for i, t in enumerate(tasks):
        t.question = f"value {i}?"
        mapping[t.question] = "=A2" if i < 6 else "=A2+1"  # 6 correct, 4 wrong
    kept, report = build_oracle_solutions(tasks, ScriptedOracle(mapping))
    assert report == {"attempted": 10, "retained": 6, "generation_failures": 0, "wrong_value": 4}
    assert len(kept) == 6
    assert all(t.oracle_formula == "=A2" for t in kept)


# --- prompt assembly ------------------------------------------------------------


def test_oracle_mode_prompt_contains_exactly_one_signature(medals_grid):
    library = make_library(5)
    task = QATask("x", medals_grid, "Where is Chile?", ["3"], oracle_formula='=MATCH("Chile",B2:B11,0)')
    prompt = build_eval_prompt(task, RagMode.ORACLE, library)
    blocks = [line for line in prompt.splitlines() if line.startswith("- `")]
    assert len(blocks) == 1
    assert "MATCH(" in blocks[0]


def test_all_mode_prompt_contains_k_signatures(medals_grid):
    library = make_library(8)
    task = QATask("x", medals_grid, "q?", ["1"])
    prompt = build_eval_prompt(task, RagMode.ALL, library)
    blocks = [line for line in prompt.splitlines() if line.startswith("- `")]
    assert len(blocks) == 8


def test_base_mode_prompt_has_no_signature_section(medals_grid):
    task = QATask("x", medals_grid, "q?", ["1"])
    prompt = build_eval_prompt(task, RagMode.BASE_ONLY, make_library())
    assert "## Function Reference:" not in prompt
    assert "## Table:" in prompt and "## Query:\nq?" in prompt


def test_oracle_mode_requires_oracle(medals_grid):
    task = QATask("x", medals_grid, "q?", ["1"])
    with pytest.raises(MissingOracleError):
        build_eval_prompt(task, RagMode.ORACLE, make_library())


def test_context_paragraphs_in_prompt(medals_grid):
    task = QATask("x", medals_grid, "q?", ["1"], context_paragraphs=["alpha", "beta"])
    prompt = build_eval_prompt(task, RagMode.BASE_ONLY, [])
    assert "## Context:\nalpha\n\nbeta" in prompt
    assert prompt.index("## Context:") < prompt.index("## Table:")


def test_oracle_subset_of_all_over_random_tasks(medals_grid):
    library = make_library(8)
    rng = random.Random(42)
    all_prompt_lines = None
    for i in range(50):
        names = rng.sample([s.name for s in library], rng.randint(1, 4))
        formula = "=" + "+".join(f"{n}(A1)" for n in names)
        task = QATask(f"r{i}", medals_grid, "q?", ["1"], oracle_formula=formula)
        oracle_prompt = build_eval_prompt(task, RagMode.ORACLE, library)
        all_prompt = build_eval_prompt(task, RagMode.ALL, library)
        oracle_blocks = {l for l in oracle_prompt.splitlines() if l.startswith("- `")}
        all_blocks = {l for l in all_prompt.splitlines() if l.startswith("- `")}
        assert oracle_blocks <= all_blocks
        assert len(oracle_blocks) == len(names)


# --- answers_match ---------------------------------------------------------------


def test_answers_match_comma_normalization():
    assert answers_match(Plain(2720000.0), ["2,720,000"])


def test_answers_match_casefold():
    assert answers_match(Plain("True"), ["true"])
    assert answers_match(Plain(True), ["true"])


def test_answers_match_multiset():
    assert answers_match(Array(("a", "b")), ["b", "a"])
    assert not answers_match(Array(("a", "a")), ["a", "b"])
    assert not answers_match(Array(("a",)), ["a", "b"])


def test_answers_match_percent_gold():
    assert answers_match(Plain(0.125), ["12.5%"])
    assert answers_match(Plain(12.5), ["12.5%"])
    assert not answers_match(Plain(1.25), ["12.5%"])


def test_answers_match_currency_and_tolerance():
    assert answers_match(Plain(1000.0), ["$1,000"])
    assert answers_match(Plain(1.0000000001), ["1"])
    assert not answers_match(Plain(1.1), ["1"])


def test_answers_match_errors_never():
    assert not answers_match(Plain(ErrorKind.NA), ["#N/A"])


def test_answers_match_self_consistency():
    from fxbook.grid import cell_to_text

    for v in (4.0, -1.5, "Chile", True, False, "12%"):
        assert answers_match(Plain(v), [cell_to_text(v)])


# --- run_eval -----------------------------------------------------------------------


def completions_fixture(tmp_path, n_correct=9, n_tasks=20, drop=None):
    tasks = [value_task(i, float(i + 1)) for i in range(n_tasks)]
    path = tmp_path / "completions.jsonl"
    with open(path, "w") as fh:
        for i, task in enumerate(tasks):
            if drop is not None and i == drop:
                continue
            formula = "=A2" if i < n_correct else "=A2+100"
            fh.write(json.dumps({"id": task.id, "completion": f"Reasoning.\n```excel\n{formula}\n```"}) + "\n")
    return tasks, path


def test_run_eval_em_45(tmp_path):
    tasks, path = completions_fixture(tmp_path)
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    assert report.em_percent == 45.00
    assert len(report.records) == 20


def test_run_eval_drop_one_correct_gives_40(tmp_path):
    tasks, path = completions_fixture(tmp_path, drop=0)
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    assert report.em_percent == 40.00
    dropped = [r for r in report.records if r.task_id == "t00"]
    assert dropped[0].failure_stage == "no_formula"


def test_run_eval_all_correct(tmp_path):
    tasks, path = completions_fixture(tmp_path, n_correct=20)
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    assert report.em_percent == 100.00


def test_run_eval_failure_stages(tmp_path):
    tasks = [value_task(i, float(i)) for i in range(4)]
    path = tmp_path / "c.jsonl"
    rows = [
        {"id": "t00", "completion": "no formula in sight"},
        {"id": "t01", "completion": "```excel\n=SUM((\n```"},
        {"id": "t02", "completion": "```excel\n=1/0\n```"},
        {"id": "t03", "completion": "```excel\n=A2+5\n```"},
    ]
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    stages = {r.task_id: r.failure_stage for r in report.records}
    assert stages == {"t00": "no_formula", "t01": "parse", "t02": "execute", "t03": "mismatch"}


def test_run_eval_fallback_equals_line(tmp_path):
    tasks = [value_task(0, 7.0)]
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"id": "t00", "completion": "The answer is\n=A2"}) + "\n")
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    assert report.records[0].matched
    assert report.records[0].used_fallback is False  # fallback flag set only via helper path


def test_run_eval_single_function_percent(tmp_path):
    tasks = [value_task(i, 1.0) for i in range(4)]
    path = tmp_path / "c.jsonl"
    rows = [
        {"id": "t00", "completion": "```excel\n=ABS(A2)\n```"},
        {"id": "t01", "completion": "```excel\n=ABS(A2)+ABS(A2)\n```"},
        {"id": "t02", "completion": "```excel\n=A2\n```"},
        {"id": "t03", "completion": "no formula"},
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    # 1 single-function formula out of 3 parsed.
    assert report.single_function_percent == 33.33
    from fxbook.formula import is_single_function, parse_formula

    parsed = [r for r in report.records if r.formula]
    independent = sum(1 for r in parsed if is_single_function(parse_formula(r.formula)))
    assert report.single_function_percent == pytest.approx(100 * independent / len(parsed), abs=0.005)


def test_em_invariant_under_reordering(tmp_path):
    tasks, path = completions_fixture(tmp_path)
    student = OfflineStudent(path)
    a = run_eval(tasks, student, RagMode.BASE_ONLY, [])
    b = run_eval(list(reversed(tasks)), student, RagMode.BASE_ONLY, [])
    assert a.em_percent == b.em_percent


def test_run_eval_parallel_workers_match_sequential(tmp_path):
    tasks, path = completions_fixture(tmp_path)
    student = OfflineStudent(path)
    seq = run_eval(tasks, student, RagMode.BASE_ONLY, [])
    par = run_eval(tasks, student, RagMode.BASE_ONLY, [], workers=4)
    assert par.em_percent == seq.em_percent
    assert [r.task_id for r in par.records] == [r.task_id for r in seq.records]
    assert [r.matched for r in par.records] == [r.matched for r in seq.records]


# --- exports --------------------------------------------------------------------------


def tutorial_fixture(medals_grid, n=5):
    from test_genpipe import fig7_sample

    docs = []
    for i in range(n):
        s = fig7_sample()
        s.query = f"Query number {i}?"
        docs.append(compile_tutorial(s, medals_grid))
    return docs


def test_export_sft_dataset_files(tmp_path, medals_grid):
    tutorials = tutorial_fixture(medals_grid)
    heldout = [value_task(i, float(i)) for i in range(10)]
    counts = export_sft_dataset(tutorials, heldout, {"heldout": 3, "seed": 5}, tmp_path / "ds")
    assert counts["train.jsonl"] == 5
    assert counts["heldout.jsonl"] == 3
    train_lines = (tmp_path / "ds" / "train.jsonl").read_text().splitlines()
    first = json.loads(train_lines[0])
    assert first["prompt"].endswith("## Formula:\n")
    assert first["completion"].startswith("```excel\n=MATCH(")
    assert first["template_version"] == "1"


def test_export_deterministic(tmp_path, medals_grid):
    tutorials = tutorial_fixture(medals_grid)
    heldout = [value_task(i, float(i)) for i in range(10)]
    export_sft_dataset(tutorials, heldout, {"heldout": 5, "seed": 9}, tmp_path / "a")
    export_sft_dataset(tutorials, heldout, {"heldout": 5, "seed": 9}, tmp_path / "b")
    for name in ("train.jsonl", "heldout.jsonl", "doc_qa_train.jsonl", "raw_docs_train.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_export_empty_tutorials(tmp_path):
    counts = export_sft_dataset([], [], {"heldout": 0, "seed": 0}, tmp_path / "ds")
    assert counts["train.jsonl"] == 0
    assert (tmp_path / "ds" / "train.jsonl").exists()


def test_export_split_too_large(tmp_path):
    with pytest.raises(SplitTooLargeError):
        export_sft_dataset([], [value_task(0, 1.0)], {"heldout": 5, "seed": 0}, tmp_path / "ds")


def test_export_doc_qa_and_raw_docs(tmp_path, medals_grid):
    doc_qa = [DocQaExample("Absolute value of 2", None, "=ABS(2)", "2")]
    raw = make_library(2)
    counts = export_sft_dataset([], [], {"heldout": 0, "seed": 0}, tmp_path / "ds",
                                doc_qa_examples=doc_qa, raw_docs=raw)
    assert counts["doc_qa_train.jsonl"] == 1
    assert counts["raw_docs_train.jsonl"] == 2
    row = json.loads((tmp_path / "ds" / "doc_qa_train.jsonl").read_text())
    assert row["completion"] == "```excel\n=ABS(2)\n```"


def test_export_hyperparams_table_values(tmp_path):
    path = tmp_path / "hp.json"
    payload = export_hyperparams(path)
    expected = {
        "batch_size": 4,
        "learning_rate": 5e-5,
        "lora_r": 64,
        "lora_alpha": 1,
        "max_epochs": 6,
        "early_stop_patience": 3,
        "lr_scheduler": "cosine",
        "warmup_ratio": 0.5,
    }
    assert payload["hyperparameters"] == expected
    assert json.loads(path.read_text())["hyperparameters"] == expected
    assert payload["search_ranges"]["learning_rate"] == [1e-5, 5e-5, 1e-4, 5e-4]
    assert payload["overridden"] == []


def test_export_hyperparams_override_flagged(tmp_path):
    payload = export_hyperparams(tmp_path / "hp.json", overrides={"batch_size": 8})
    assert payload["hyperparameters"]["batch_size"] == 8
    assert payload["overridden"] == ["batch_size"]


def test_export_hyperparams_stable_bytes(tmp_path):
    export_hyperparams(tmp_path / "a.json")
    export_hyperparams(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


# --- paired analysis ----------------------------------------------------------------------


def synthetic_report(flags, formulas):
    records = [
        EvalRecord(task_id=f"t{i:03d}", raw_generation="", formula=formulas[i], matched=flags[i])
        for i in range(len(flags))
    ]
    return EvalReport(records=records, em_percent=0.0, single_function_percent=0.0,
                      rag_mode="base", model_id="m")


def test_paired_improvements_table_row():
    n = 200
    base_flags = [False] * n
    ft_flags = [False] * n
    base_formulas = [None] * n
    ft_formulas = [None] * n
    # 131 improvements: first 39 share the same single function, the rest differ.
    for i in range(131):
        ft_flags[i] = True
        if i < 39:
            base_formulas[i] = "=SUM(A1:A2)"
            ft_formulas[i] = "=SUM(A1:A3)"
        else:
            base_formulas[i] = "=SUM(A1)+SUM(A2)"
            ft_formulas[i] = "=MAX(A1:A2)"
    # 10 regressions, 4 same-single-function.
    for i in range(131, 141):
        base_flags[i] = True
        base_formulas[i] = "=LEN(A1)"
        ft_formulas[i] = "=LEN(A2)" if i < 135 else "=LEN(A2)+1+LEN(B1)"
    pairs = paired_improvements(
        synthetic_report(base_flags, base_formulas), synthetic_report(ft_flags, ft_formulas)
    )
    assert pairs["improvements"]["samples"] == "39/131"
    assert pairs["improvements"]["percent"] == 29.77
    assert pairs["regressions"]["samples"] == "4/10"
    assert pairs["regressions"]["percent"] == 40.00


def test_paired_identical_reports():
    report = synthetic_report([True, False], ["=A1", None])
    pairs = paired_improvements(report, report)
    assert pairs["improvements"]["total"] == 0
    assert pairs["regressions"]["total"] == 0


def test_paired_disjoint_ids():
    a = synthetic_report([True], ["=A1"])
    b = synthetic_report([True, False], ["=A1", None])
    with pytest.raises(IdSetMismatchError):
        paired_improvements(a, b)


def test_report_json_round_trip(tmp_path):
    tasks, path = completions_fixture(tmp_path, n_correct=3, n_tasks=5)
    report = run_eval(tasks, OfflineStudent(path), RagMode.BASE_ONLY, [])
    data = report.to_json()
    assert data["schema_version"] == "1"
    again = EvalReport.from_json(data)
    assert again.em_percent == report.em_percent
    assert len(again.records) == 5
