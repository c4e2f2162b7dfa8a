"""Configuration loading, stage manifests, and subcommand dispatch binding
the pipeline stages into the end-to-end flow."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import evalbench, genpipe, libprep, validator
from .teacher import ChatClient, ReplayClient
from .validator import CannedRunner, EquivalencePolicy, SubprocessRunner

log = logging.getLogger(__name__)

STAGES = ("libprep", "gen", "validate", "compile", "export", "eval", "analyze", "e2e")
E2E_CHAIN = ("libprep", "gen", "validate", "compile", "export")


class ConfigError(Exception):
    pass


class MissingFileError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, field_path: str, detail: str = "") -> None:
        self.field_path = field_path
        super().__init__(f"invalid config field {field_path!r}" + (f": {detail}" if detail else ""))


class PrerequisiteError(Exception):
    def __init__(self, stage: str, artifact: str) -> None:
        self.stage = stage
        self.artifact = artifact
        super().__init__(f"stage {stage!r} requires missing artifact {artifact!r}")


@dataclass
class PipelineConfig:
    corpus: Optional[str] = None
    docs_dir: Optional[str] = None
    tables_dir: Optional[str] = None
    out_dir: str = "out"
    k: int = 100
    batches: int = 1
    seed: int = 0
    pool_size: int = 10
    max_rows: int = 50
    heldout: int = 100
    teacher_endpoint: str = ""
    teacher_model: str = ""
    student_endpoint: str = ""
    student_model: str = ""
    completions: Optional[str] = None
    tasks: Optional[str] = None
    mode: str = "base"
    workers: int = 1
    rate_limit_rpm: int = 60
    runner_cmd: list = field(default_factory=lambda: ["oracle-runner"])
    runner_timeout_ms: int = 5000
    runner_responses: Optional[str] = None
    mock_transcripts: Optional[str] = None
    library: Optional[str] = None
    raw_samples: Optional[str] = None
    validated: Optional[str] = None
    doc_qa: bool = False
    policy: EquivalencePolicy = field(default_factory=EquivalencePolicy)

    # Derived paths; the optional config fields override the out_dir layout.
    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name

    @property
    def library_path(self) -> Path:
        return Path(self.library) if self.library else self.path("library.json")

    @property
    def raw_samples_path(self) -> Path:
        return Path(self.raw_samples) if self.raw_samples else self.path("raw_samples.jsonl")

    @property
    def validated_path(self) -> Path:
        return Path(self.validated) if self.validated else self.path("validated.jsonl")

    @property
    def tutorials_path(self) -> Path:
        return self.path("tutorials.jsonl")

    @property
    def datasets_dir(self) -> Path:
        return self.path("datasets")

    def snapshot(self) -> dict:
        data = dataclasses.asdict(self)
        data["policy"] = self.policy.to_json()
        return data


_INT_FIELDS_MIN = {"k": 1, "batches": 1, "seed": None, "pool_size": 1, "max_rows": 4,
                   "heldout": 0, "workers": 1, "rate_limit_rpm": 0, "runner_timeout_ms": 100}


def config_from_dict(data: dict) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(unknown[0], "unknown key")
    kwargs = dict(data)
    if "policy" in kwargs:
        try:
            kwargs["policy"] = EquivalencePolicy.from_json(kwargs["policy"])
        except (TypeError, ValueError) as exc:
            raise ValidationError("policy", str(exc))
    cfg = PipelineConfig(**kwargs)
    for name, minimum in _INT_FIELDS_MIN.items():
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValidationError(name, "must be an integer")
        if minimum is not None and value < minimum:
            raise ValidationError(name, f"must be >= {minimum}")
    if cfg.mode not in ("base", "rag-all", "rag-oracle"):
        raise ValidationError("mode", "must be base | rag-all | rag-oracle")
    if not isinstance(cfg.runner_cmd, list) or not all(isinstance(x, str) for x in cfg.runner_cmd):
        raise ValidationError("runner_cmd", "must be a list of strings")
    return cfg


def load_config(path) -> PipelineConfig:
    """Parse, default, and validate a JSON config file; unknown keys are
    rejected with their field path."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(str(path))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Clients and runners
# ---------------------------------------------------------------------------


def make_teacher_client(cfg: PipelineConfig):
    if cfg.mock_transcripts:
        paths = sorted(Path(cfg.mock_transcripts).glob("*.jsonl"))
        transcripts = [p for p in paths if p.name != "runner_responses.jsonl"]
        if not transcripts:
            raise MissingFileError(f"no transcript files in {cfg.mock_transcripts}")
        return ReplayClient(transcripts)
    endpoint = cfg.teacher_endpoint or os.environ.get("TEACHER_ENDPOINT", "")
    model = cfg.teacher_model or os.environ.get("TEACHER_MODEL", "")
    if not endpoint:
        raise ConfigError("no teacher endpoint configured (teacher_endpoint or TEACHER_ENDPOINT)")
    transcript = cfg.path("transcripts.jsonl")
    transcript.parent.mkdir(parents=True, exist_ok=True)
    return ChatClient(
        endpoint,
        api_key=os.environ.get("TEACHER_API_KEY", ""),
        model=model,
        rpm=cfg.rate_limit_rpm,
        transcript_path=str(transcript),
    )


def make_runner(cfg: PipelineConfig):
    responses = cfg.runner_responses
    if not responses and cfg.mock_transcripts:
        candidate = Path(cfg.mock_transcripts) / "runner_responses.jsonl"
        if candidate.exists():
            responses = str(candidate)
    if responses:
        return CannedRunner(responses)
    return SubprocessRunner(cfg.runner_cmd, default_timeout_ms=cfg.runner_timeout_ms)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _digest_paths(paths: list) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for child in sorted(p.rglob("*")):
                if child.is_file():
                    out[str(child)] = _sha256_file(child)
        elif p.exists():
            out[str(p)] = _sha256_file(p)
    return out


class ManifestStore:
    def __init__(self, out_dir) -> None:
        self.dir = Path(out_dir) / "manifests"

    def path(self, stage: str) -> Path:
        return self.dir / f"{stage}.json"

    def load(self, stage: str) -> Optional[dict]:
        p = self.path(stage)
        if not p.exists():
            return None
        return json.loads(p.read_text())

    def is_current(self, stage: str, inputs: dict, config: dict) -> bool:
        manifest = self.load(stage)
        if manifest is None:
            return False
        if manifest.get("inputs") != inputs or manifest.get("config") != config:
            return False
        for path, digest in manifest.get("outputs", {}).items():
            if not Path(path).exists() or _sha256_file(Path(path)) != digest:
                return False
        return True

    def write(self, stage: str, inputs: dict, outputs: dict, config: dict) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        record = {
            "stage": stage,
            "inputs": inputs,
            "outputs": outputs,
            "config": config,
            "completed_at": datetime.now(timezone.utc).isoformat(),
        }
        self.path(stage).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _config_subset(cfg: PipelineConfig, keys: tuple) -> dict:
    snap = cfg.snapshot()
    return {k: snap[k] for k in keys}


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _require(stage: str, path, label: str) -> Path:
    if path is None or not Path(path).exists():
        raise PrerequisiteError(stage, label)
    return Path(path)


def run_libprep(cfg: PipelineConfig) -> dict:
    corpus = _require("libprep", cfg.corpus, cfg.corpus or "corpus")
    docs_dir = _require("libprep", cfg.docs_dir, cfg.docs_dir or "docs_dir")
    cfg.library_path.parent.mkdir(parents=True, exist_ok=True)

    with open(corpus) as fh:
        stats = libprep.count_function_usage(fh)
    names = libprep.select_top_k(stats, cfg.k)
    specs = libprep.load_function_docs(docs_dir, names)
    with open(cfg.library_path, "w") as fh:
        json.dump([s.to_json() for s in specs], fh, indent=2, sort_keys=True)
        fh.write("\n")
    usage_path = cfg.path("usage_stats.json")
    with open(usage_path, "w") as fh:
        json.dump(
            {
                "counts": dict(sorted(stats.counts.items())),
                "total_formulas": stats.total_formulas,
                "skipped": stats.skipped,
                "counting": "per Call node, nested occurrences included",
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    return {"outputs": [cfg.library_path, usage_path]}


def _load_library(cfg: PipelineConfig, stage: str) -> list:
    path = _require(stage, cfg.library_path, "library.json")
    return [libprep.FunctionSpec.from_json(d) for d in json.loads(path.read_text())]


def run_gen(cfg: PipelineConfig) -> dict:
    library = _load_library(cfg, "gen")
    tables_dir = _require("gen", cfg.tables_dir, cfg.tables_dir or "tables_dir")
    store = genpipe.TableStore(tables_dir)
    client = make_teacher_client(cfg)
    checkpoint = cfg.path("gen_checkpoint.json")
    resuming = checkpoint.exists()
    out_path = cfg.raw_samples_path
    out_path.parent.mkdir(parents=True, exist_ok=True)
    mode = "a" if resuming and out_path.exists() else "w"
    count = 0
    with open(out_path, mode) as fh:
        for sample in genpipe.run_generation_batch(
            library,
            store,
            client,
            cfg.batches,
            seed=cfg.seed,
            pool_size=cfg.pool_size,
            max_rows=cfg.max_rows,
            checkpoint_path=checkpoint,
        ):
            fh.write(json.dumps(sample.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    log.info("gen: wrote %d samples", count)
    outputs = [out_path, checkpoint]
    if cfg.doc_qa:
        doc_qa_path = cfg.path("doc_qa.jsonl")
        rejects_total = 0
        with open(doc_qa_path, "w") as fh:
            for spec in library:
                examples, rejects = genpipe.reformat_docs_qa(spec, client)
                rejects_total += len(rejects)
                for example in examples:
                    fh.write(json.dumps(example.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        log.info("gen: doc-qa control written (%d rejects)", rejects_total)
        outputs.append(doc_qa_path)
    return {"outputs": outputs}


def run_validate(cfg: PipelineConfig) -> dict:
    raw_path = _require("validate", cfg.raw_samples_path, "raw_samples.jsonl")
    tables_dir = _require("validate", cfg.tables_dir, cfg.tables_dir or "tables_dir")
    samples = genpipe.read_samples_jsonl(raw_path)
    store = genpipe.TableStore(tables_dir)
    client = make_teacher_client(cfg)
    runner = make_runner(cfg)
    try:
        validated, report = validator.validate_batch(samples, store, client, runner, cfg.policy)
    finally:
        if hasattr(runner, "close"):
            runner.close()
    out_path = cfg.validated_path
    with open(out_path, "w") as fh:
        for s in validated:
            fh.write(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    report_path = cfg.path("reject_report.json")
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("validate: kept %d/%d (keep-rate %.2f)", report["validated"], report["attempted"], report["keep_rate"])
    return {"outputs": [out_path, report_path]}


def run_compile(cfg: PipelineConfig) -> dict:
    validated_path = _require("compile", cfg.validated_path, "validated.jsonl")
    tables_dir = _require("compile", cfg.tables_dir, cfg.tables_dir or "tables_dir")
    store = genpipe.TableStore(tables_dir)
    samples = genpipe.read_samples_jsonl(validated_path)
    out_path = cfg.tutorials_path
    with open(out_path, "w") as fh:
        for s in samples:
            doc = genpipe.compile_tutorial(s, store.load(s.table_id), max_rows=cfg.max_rows)
            fh.write(
                json.dumps(
                    {"text": doc.text, "sample_ref": doc.sample_ref, "template_version": doc.template_version},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    return {"outputs": [out_path]}


def _read_tutorials(path) -> list:
    docs = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                docs.append(
                    genpipe.TutorialDoc(
                        text=rec["text"],
                        sample_ref=rec.get("sample_ref", ""),
                        template_version=rec.get("template_version", genpipe.TUTORIAL_TEMPLATE_VERSION),
                    )
                )
    return docs


def _read_tasks(path) -> list:
    tasks = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                tasks.append(evalbench.QATask.from_json(json.loads(line)))
    return tasks


def run_export(cfg: PipelineConfig, tutorials_path=None) -> dict:
    tutorials_path = Path(tutorials_path) if tutorials_path else cfg.tutorials_path
    tutorials_path = _require("export", tutorials_path, tutorials_path.name)
    records = [json.loads(line) for line in tutorials_path.read_text().splitlines() if line.strip()]
    if records and "text" not in records[0]:
        # Validated-sample records: compile on the fly (needs the table store).
        tables_dir = _require("export", cfg.tables_dir, cfg.tables_dir or "tables_dir")
        store = genpipe.TableStore(tables_dir)
        tutorials = [
            genpipe.compile_tutorial(s, store.load(s.table_id), max_rows=cfg.max_rows)
            for s in (genpipe.SynSample.from_json(r) for r in records)
        ]
    else:
        tutorials = _read_tutorials(tutorials_path)

    heldout_tasks = _read_tasks(cfg.tasks) if cfg.tasks and Path(cfg.tasks).exists() else []
    doc_qa_path = cfg.path("doc_qa.jsonl")
    doc_qa = []
    if doc_qa_path.exists():
        for line in doc_qa_path.read_text().splitlines():
            if line.strip():
                doc_qa.append(genpipe.DocQaExample.from_json(json.loads(line)))
    raw_docs = []
    if cfg.library_path.exists():
        raw_docs = [libprep.FunctionSpec.from_json(d) for d in json.loads(cfg.library_path.read_text())]

    counts = evalbench.export_sft_dataset(
        tutorials,
        heldout_tasks,
        {"heldout": cfg.heldout, "seed": cfg.seed},
        cfg.datasets_dir,
        doc_qa_examples=doc_qa,
        raw_docs=raw_docs,
    )
    hyper_path = cfg.datasets_dir / "hyperparams.json"
    evalbench.export_hyperparams(hyper_path)
    log.info("export: %s", counts)
    outputs = [cfg.datasets_dir / name for name in counts] + [hyper_path]
    return {"outputs": outputs}


def run_eval_stage(cfg: PipelineConfig) -> dict:
    tasks_path = _require("eval", cfg.tasks, cfg.tasks or "tasks")
    tasks = _read_tasks(tasks_path)
    library = []
    if cfg.library_path.exists():
        library = _load_library(cfg, "eval")
    mode = evalbench.RagMode(cfg.mode)
    if cfg.completions:
        student = evalbench.OfflineStudent(_require("eval", cfg.completions, cfg.completions))
    else:
        endpoint = cfg.student_endpoint
        if not endpoint:
            raise ConfigError("eval needs either completions or student_endpoint")
        student = evalbench.ChatStudent(
            ChatClient(endpoint, api_key=os.environ.get("TEACHER_API_KEY", ""), model=cfg.student_model, rpm=cfg.rate_limit_rpm)
        )
    report = evalbench.run_eval(tasks, student, mode, library, max_rows=cfg.max_rows, workers=cfg.workers)
    report_path = cfg.path("report.json")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("eval: EM %.2f over %d tasks", report.em_percent, len(report.records))
    return {"outputs": [report_path]}


def run_analyze(cfg: PipelineConfig, base_path, ft_path, out_path=None) -> dict:
    base = evalbench.EvalReport.from_json(json.loads(Path(base_path).read_text()))
    ft = evalbench.EvalReport.from_json(json.loads(Path(ft_path).read_text()))
    pairs = evalbench.paired_improvements(base, ft)
    out_path = Path(out_path) if out_path else cfg.path("pairs.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(pairs, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"outputs": [out_path]}


_STAGE_INPUTS = {
    "libprep": lambda cfg: [cfg.corpus, cfg.docs_dir],
    "gen": lambda cfg: [cfg.library_path, cfg.tables_dir],
    "validate": lambda cfg: [cfg.raw_samples_path, cfg.tables_dir],
    "compile": lambda cfg: [cfg.validated_path, cfg.tables_dir],
    "export": lambda cfg: [cfg.tutorials_path, cfg.tasks, cfg.library_path, cfg.path("doc_qa.jsonl")],
    "eval": lambda cfg: [cfg.tasks, cfg.library_path, cfg.completions],
}

_STAGE_CONFIG_KEYS = {
    "libprep": ("k",),
    "gen": ("batches", "seed", "pool_size", "max_rows", "teacher_model", "mock_transcripts", "doc_qa"),
    "validate": ("policy", "mock_transcripts", "runner_cmd", "runner_responses", "runner_timeout_ms"),
    "compile": ("max_rows",),
    "export": ("heldout", "seed"),
    "eval": ("mode", "student_model", "max_rows"),
}

_STAGE_FN = {
    "libprep": run_libprep,
    "gen": run_gen,
    "validate": run_validate,
    "compile": run_compile,
    "export": run_export,
    "eval": run_eval_stage,
}


def run_stage(stage: str, cfg: PipelineConfig) -> bool:
    """Run one manifest-tracked stage; returns False when skipped as a
    no-op because inputs, config, and outputs all match the manifest."""
    manifests = ManifestStore(cfg.out_dir)
    inputs = _digest_paths([p for p in _STAGE_INPUTS[stage](cfg) if p])
    config = _config_subset(cfg, _STAGE_CONFIG_KEYS[stage])
    if manifests.is_current(stage, inputs, config):
        log.info("%s: up to date, skipping", stage)
        return False
    result = _STAGE_FN[stage](cfg)
    outputs = _digest_paths(result["outputs"])
    manifests.write(stage, inputs, outputs, config)
    return True


def run(command: str, cfg: PipelineConfig, **kwargs) -> int:
    """Dispatch a pipeline command; returns a process exit status."""
    if command not in STAGES:
        raise ValueError(f"unknown command {command!r}")
    try:
        if command == "e2e":
            for stage in E2E_CHAIN:
                run_stage(stage, cfg)
        elif command == "analyze":
            run_analyze(cfg, kwargs["base_path"], kwargs["ft_path"], kwargs.get("out_path"))
        else:
            run_stage(command, cfg)
    except PrerequisiteError as exc:
        log.error("%s", exc)
        return 2
    except (ConfigError, FileNotFoundError, evalbench.SplitTooLargeError, evalbench.IdSetMismatchError) as exc:
        log.error("%s failed: %s", command, exc)
        return 1
    return 0
