"""Single entry point: serve, respond, datagen, eval, stats, compare.

Data-emitting commands print JSON to stdout and log to stderr. Exit codes:
0 success, 1 usage error, 2 runtime error. A flat-JSON config file can
supply any flag's value; explicit flags win and unknown keys are rejected.
The ``mock:`` URL scheme selects in-process deterministic backends.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Any, Sequence

from .backends import BackendError, BackendKind

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="modalgate", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    serve = sub.add_parser("serve", help="run the HTTP gateway", parents=[], add_help=True)
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--llm", default=None, help="LLM base URL or mock: spec")
    serve.add_argument("--image", default=None)
    serve.add_argument("--speech", default=None)
    serve.add_argument("--scorer", default=None)
    serve.add_argument("--artifact-dir", default=None)
    serve.add_argument("--session-dir", default=None)
    serve.add_argument("--max-turns", type=int, default=None)
    serve.add_argument("--policy", choices=("tuned", "fewshot"), default=None)
    serve.add_argument("--config", default=None, help="flat JSON config file")

    respond = sub.add_parser("respond", help="route one instruction")
    respond.add_argument("--instruction", default=None)
    respond.add_argument("--llm", default=None)
    respond.add_argument("--image", default=None)
    respond.add_argument("--speech", default=None)
    respond.add_argument("--policy", choices=("tuned", "fewshot"), default=None)
    respond.add_argument("--max-reasks", type=int, default=None)
    respond.add_argument("--config", default=None)

    datagen = sub.add_parser("datagen", help="generate modality-aligned instructions")
    datagen.add_argument("--modality", choices=("image", "speech"), default=None)
    datagen.add_argument("--captions", default=None, help="caption pool file")
    datagen.add_argument("--seeds", default=None, help="seed instructions JSONL")
    datagen.add_argument("--target", type=int, default=None, help="retained record target")
    datagen.add_argument("--out", default=None, help="output directory")
    datagen.add_argument("--teacher", default=None, help="teacher LLM URL or mock:")
    datagen.add_argument("--rng-seed", default=None)
    datagen.add_argument("--batch-size", type=int, default=None)
    datagen.add_argument("--config", default=None)

    evalp = sub.add_parser("eval", help="run the benchmark over a corpus")
    evalp.add_argument("--corpus", default=None)
    evalp.add_argument("--policy", choices=("tuned", "fewshot"), default=None)
    evalp.add_argument("--llm", default=None)
    evalp.add_argument("--image", default=None)
    evalp.add_argument("--speech", default=None)
    evalp.add_argument("--scorer", default=None)
    evalp.add_argument("--refs", default=None, help="reference image dir for FID")
    evalp.add_argument("--out", default=None)
    evalp.add_argument("--resume", action="store_true", default=None)
    evalp.add_argument("--system-id", default=None)
    evalp.add_argument("--rng-seed", default=None)
    evalp.add_argument(
        "--penalize-mismatch",
        action="store_true",
        default=None,
        help="score gate-excluded items as zero instead of excluding them",
    )
    evalp.add_argument("--config", default=None)

    stats = sub.add_parser("stats", help="verb/noun distribution of a corpus")
    stats.add_argument("--corpus", default=None)
    stats.add_argument("--out", default=None)
    stats.add_argument("--config", default=None)

    compare = sub.add_parser("compare", help="rank systems across reports")
    compare.add_argument("reports", nargs="*", help="report.json paths")
    compare.add_argument("--config", default=None)

    return parser


_DEFAULTS: dict[str, dict[str, Any]] = {
    "serve": {
        "host": "127.0.0.1",
        "port": 8008,
        "llm": "mock:",
        "image": "mock:",
        "speech": "mock:",
        "scorer": None,
        "artifact_dir": "artifacts",
        "session_dir": "sessions",
        "max_turns": 6,
        "policy": "tuned",
    },
    "respond": {
        "instruction": None,
        "llm": "mock:",
        "image": "mock:",
        "speech": "mock:",
        "policy": "tuned",
        "max_reasks": 0,
    },
    "datagen": {
        "modality": None,
        "captions": None,
        "seeds": None,
        "target": None,
        "out": None,
        "teacher": "mock:",
        "rng_seed": "0",
        "batch_size": 60,
    },
    "eval": {
        "corpus": None,
        "policy": "tuned",
        "llm": "mock:",
        "image": "mock:",
        "speech": "mock:",
        "scorer": None,
        "refs": None,
        "out": None,
        "resume": False,
        "system_id": "system",
        "rng_seed": "0",
        "penalize_mismatch": False,
    },
    "stats": {"corpus": None, "out": None},
    "compare": {},
}


def _merge_config(args: argparse.Namespace, command: str) -> dict[str, Any]:
    """Flags override config-file values override hard defaults."""
    merged = dict(_DEFAULTS.get(command, {}))
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            overlay = json.loads(Path(config_path).read_text("utf-8"))
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {config_path}") from None
        if not isinstance(overlay, dict):
            raise _UsageError(f"config file must be a flat JSON object: {config_path}")
        unknown = set(overlay) - set(merged)
        if unknown:
            raise _UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        merged.update(overlay)
    for key in merged:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _require(merged: dict[str, Any], *names: str) -> None:
    missing = [name for name in names if merged.get(name) in (None, "")]
    if missing:
        raise _UsageError(f"missing required options: {', '.join('--' + m.replace('_', '-') for m in missing)}")


def _cmd_serve(merged: dict[str, Any]) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        llm_url=merged["llm"],
        image_url=merged["image"],
        speech_url=merged["speech"],
        scorer_url=merged["scorer"],
        artifact_dir=merged["artifact_dir"],
        session_dir=merged["session_dir"],
        max_turns=merged["max_turns"],
        policy=merged["policy"],
    )
    app = create_app(config)
    uvicorn.run(app, host=merged["host"], port=merged["port"], log_level="info")
    return EXIT_OK


def _cmd_respond(merged: dict[str, Any]) -> int:
    from .router import route_with_retry
    from .service import backend_for

    _require(merged, "instruction")
    result = route_with_retry(
        merged["instruction"],
        llm=backend_for(BackendKind.LLM, merged["llm"]),
        image_backend=backend_for(BackendKind.IMAGE, merged["image"]),
        speech_backend=backend_for(BackendKind.SPEECH, merged["speech"]),
        policy=merged["policy"],
        max_reasks=merged["max_reasks"],
    )
    print(result.to_json())
    return EXIT_OK


def _cmd_datagen(merged: dict[str, Any]) -> int:
    from .datagen import (
        DatasetManifest,
        filter_instructions,
        load_caption_pool,
        load_seeds,
        run_generation,
    )
    from .mocks import make_mock_teacher
    from .schema import Modality, write_records
    from .service import backend_for

    _require(merged, "modality", "captions", "seeds", "out")
    modality = Modality(merged["modality"])
    pool = load_caption_pool(merged["captions"], modality)
    seeds = load_seeds(merged["seeds"])
    teacher_url = merged["teacher"]
    if teacher_url.startswith("mock:"):
        teacher = make_mock_teacher(modality.value)
        teacher_model = teacher.describe()
    else:
        teacher = backend_for(BackendKind.LLM, teacher_url)
        teacher_model = teacher.describe()

    batches = run_generation(
        pool,
        seeds,
        teacher,
        modality,
        rng_seed=merged["rng_seed"],
        batch_size=merged["batch_size"],
    )
    pairs = [pair for batch in batches for pair in batch.parsed]
    records, report = filter_instructions(pairs, modality)
    target = merged["target"]
    if target is not None:
        records = records[:target]

    out = Path(merged["out"])
    out.mkdir(parents=True, exist_ok=True)
    corpus_path = out / "corpus.jsonl"
    write_records(records, corpus_path)
    manifest = DatasetManifest(
        totals={modality.value: len(records)},
        target_total=target if target is not None else len(records),
        mix_ratios={modality.value: 1.0},
        caption_sources={modality.value: pool.source_name},
        teacher_model=teacher_model,
        filter_reports={modality.value: report.to_dict()},
        rng_seed=str(merged["rng_seed"]),
    )
    manifest_path = out / "manifest.json"
    manifest_path.write_text(manifest.to_json() + "\n", "utf-8")
    errors = [batch.error for batch in batches if batch.error]
    print(
        json.dumps(
            {
                "corpus": str(corpus_path),
                "manifest": str(manifest_path),
                "records": len(records),
                "batches": len(batches),
                "batch_errors": errors,
                "filter_report": report.to_dict(),
            }
        )
    )
    return EXIT_OK


def _cmd_eval(merged: dict[str, Any]) -> int:
    from .backends import ReferenceImageStore
    from .evalharness import EvalJob, run_eval, write_report
    from .service import backend_for

    _require(merged, "corpus", "out")
    corpus = Path(merged["corpus"])
    if not corpus.exists():
        raise FileNotFoundError(f"corpus not found: {corpus}")
    out = Path(merged["out"])
    cache_dir = out / "cache"
    if cache_dir.exists() and not merged["resume"]:
        shutil.rmtree(cache_dir)

    scorer = backend_for(BackendKind.SCORER, merged["scorer"]) if merged["scorer"] else None
    refs = ReferenceImageStore.from_dir(merged["refs"]) if merged["refs"] else None
    job = EvalJob(
        corpus_path=corpus,
        llm=backend_for(BackendKind.LLM, merged["llm"]),
        image_backend=backend_for(BackendKind.IMAGE, merged["image"]),
        speech_backend=backend_for(BackendKind.SPEECH, merged["speech"]),
        scorer=scorer,
        reference_store=refs,
        policy=merged["policy"],
        system_id=merged["system_id"],
        cache_dir=cache_dir,
        rng_seed=merged["rng_seed"],
        penalize_mismatch=merged["penalize_mismatch"],
    )
    report = run_eval(job)
    paths = write_report(report, out)
    logging.getLogger("modalgate.cli").info("report written to %s", paths["json"])
    summary = report.to_dict()
    summary.pop("ledger", None)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _cmd_stats(merged: dict[str, Any]) -> int:
    from .datagen import verb_noun_stats
    from .schema import read_records

    _require(merged, "corpus")
    corpus = Path(merged["corpus"])
    if not corpus.exists():
        raise FileNotFoundError(f"corpus not found: {corpus}")
    stats = verb_noun_stats(read_records(corpus))
    payload = json.dumps(stats, indent=2, sort_keys=True)
    if merged.get("out"):
        Path(merged["out"]).write_text(payload + "\n", "utf-8")
    print(payload)
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    from .evalharness import compare_systems, load_report

    if len(args.reports) < 2:
        raise _UsageError("compare needs at least two report.json paths")
    reports = [load_report(path) for path in args.reports]
    print(json.dumps(compare_systems(reports), indent=2, sort_keys=True))
    return EXIT_OK


def dispatch(argv: Sequence[str]) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if args.command == "compare":
            return _cmd_compare(args)
        merged = _merge_config(args, args.command)
        handler = {
            "serve": _cmd_serve,
            "respond": _cmd_respond,
            "datagen": _cmd_datagen,
            "eval": _cmd_eval,
            "stats": _cmd_stats,
        }[args.command]
        return handler(merged)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (OSError, ValueError, KeyError, BackendError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
