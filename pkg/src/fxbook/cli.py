"""Command-line entry point: one binary, one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import orchestrator
from .orchestrator import PipelineConfig, load_config
from .validator import EquivalencePolicy


def _base_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "mock_transcripts", None):
        cfg.mock_transcripts = args.mock_transcripts
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fxbook", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON pipeline config file")
        p.add_argument("--out-dir", help="artifact directory (default: out)")
        p.add_argument("--mock-transcripts", help="directory of replay transcripts for hermetic runs")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("libprep", help="estimate usage, select top-K, load docs")
    add_common(p)
    p.add_argument("--corpus", help="one formula per line")
    p.add_argument("--docs", help="directory of NAME.md documentation files")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", help="library.json path override")

    p = sub.add_parser("gen", help="generate tutorial samples with the teacher")
    add_common(p)
    p.add_argument("--library", help="library.json from libprep")
    p.add_argument("--tables", help="directory of table files")
    p.add_argument("--batches", type=int, default=None)
    p.add_argument("--out", help="raw_samples.jsonl path override")

    p = sub.add_parser("validate", help="execution-filter and cross-validate samples")
    add_common(p)
    p.add_argument("--in", dest="infile", help="raw_samples.jsonl")
    p.add_argument("--tables", help="directory of table files")
    p.add_argument("--out", help="validated.jsonl path override")
    p.add_argument("--report", help="reject_report.json path override")
    p.add_argument("--policy", help="equivalence policy JSON file")

    p = sub.add_parser("compile", help="compile validated samples into tutorials")
    add_common(p)
    p.add_argument("--in", dest="infile", help="validated.jsonl")
    p.add_argument("--tables", help="directory of table files")

    p = sub.add_parser("export", help="export finetuning datasets and hyperparameters")
    add_common(p)
    p.add_argument("--tutorials", help="tutorials.jsonl (or validated.jsonl with --tables)")
    p.add_argument("--tables", help="table directory when compiling on the fly")
    p.add_argument("--tasks", help="heldout task pool (eval-format JSONL)")
    p.add_argument("--heldout", type=int, default=None)
    p.add_argument("--out", help="datasets directory override")

    p = sub.add_parser("eval", help="score a student by execution match")
    add_common(p)
    p.add_argument("--tasks", help="tasks JSONL")
    p.add_argument("--mode", choices=["base", "rag-all", "rag-oracle"], default=None)
    p.add_argument("--library", help="library.json for RAG modes")
    p.add_argument("--student-endpoint", help="chat endpoint for the student")
    p.add_argument("--student-model", help="student model id")
    p.add_argument("--completions", help="offline completions JSONL keyed by task id")
    p.add_argument("--report", help="report.json path override")

    p = sub.add_parser("analyze", help="paired improvement/regression analysis")
    add_common(p)
    p.add_argument("--base", required=True, help="base model report.json")
    p.add_argument("--ft", required=True, help="finetuned model report.json")
    p.add_argument("--out", help="pairs.json path override")

    p = sub.add_parser("e2e", help="libprep -> gen -> validate -> compile -> export")
    add_common(p)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    cfg = _base_config(args)
    command = args.command
    kwargs = {}

    if command == "libprep":
        if args.corpus:
            cfg.corpus = args.corpus
        if args.docs:
            cfg.docs_dir = args.docs
        if args.k is not None:
            cfg.k = args.k
    elif command == "gen":
        if args.tables:
            cfg.tables_dir = args.tables
        if args.batches is not None:
            cfg.batches = args.batches
        if args.library:
            cfg.library = args.library
    elif command in ("validate", "compile"):
        if args.tables:
            cfg.tables_dir = args.tables
        if args.infile:
            if command == "validate":
                cfg.raw_samples = args.infile
            else:
                cfg.validated = args.infile
        if command == "validate" and args.policy:
            with open(args.policy) as fh:
                cfg.policy = EquivalencePolicy.from_json(json.load(fh))
    elif command == "export":
        if args.tables:
            cfg.tables_dir = args.tables
        if args.tasks:
            cfg.tasks = args.tasks
        if args.heldout is not None:
            cfg.heldout = args.heldout
        if args.tutorials:
            kwargs["tutorials_path"] = args.tutorials
    elif command == "eval":
        if args.tasks:
            cfg.tasks = args.tasks
        if args.library:
            cfg.library = args.library
        if args.mode:
            cfg.mode = args.mode
        if args.student_endpoint:
            cfg.student_endpoint = args.student_endpoint
        if args.student_model:
            cfg.student_model = args.student_model
        if args.completions:
            cfg.completions = args.completions
    elif command == "analyze":
        kwargs = {"base_path": args.base, "ft_path": args.ft, "out_path": args.out}

    if command == "export" and "tutorials_path" in kwargs:
        try:
            orchestrator.run_export(cfg, tutorials_path=kwargs["tutorials_path"])
            rc = 0
        except Exception as exc:
            logging.getLogger("fxbook").error("export failed: %s", exc)
            return 1
    else:
        rc = orchestrator.run(command, cfg, **kwargs)
    if rc == 0:
        _copy_requested_outputs(command, args, cfg)
    return rc


def _copy_requested_outputs(command: str, args, cfg: PipelineConfig) -> None:
    """Honor explicit output-path flags by copying the canonical artifacts."""
    import shutil

    def copy(src, dst):
        if dst and str(src) != str(dst):
            shutil.copyfile(src, dst)

    if command == "libprep":
        copy(cfg.library_path, getattr(args, "out", None))
    elif command == "gen":
        copy(cfg.raw_samples_path, getattr(args, "out", None))
    elif command == "validate":
        copy(cfg.validated_path, getattr(args, "out", None))
        copy(cfg.path("reject_report.json"), getattr(args, "report", None))
    elif command == "eval":
        copy(cfg.path("report.json"), getattr(args, "report", None))
    elif command == "export":
        dst = getattr(args, "out", None)
        if dst and str(cfg.datasets_dir) != str(dst):
            shutil.copytree(cfg.datasets_dir, dst, dirs_exist_ok=True)


if __name__ == "__main__":
    sys.exit(main(argv=None))
