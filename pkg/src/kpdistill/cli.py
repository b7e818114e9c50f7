"""Single entry point exposing every pipeline stage as a subcommand.

Every stage writes a manifest carrying the config hash; chaining stages whose
inputs were produced under a different config fails fast unless
``--allow-mixed`` is passed. Exit codes: 0 success, 1 operational error,
2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from . import evaluation as ev
from .client import ReplayStore, SamplingParams, TeacherClient
from .config import PipelineConfig, load_config
from .errors import ConfigError, PipelineError
from .filtering import filter_cot, filter_pot
from .inference import Topology, infer_batch
from .records import Format, MathProblem, ReasoningRecord, InferenceTrace, Verdict, read_jsonl, write_jsonl
from .sandbox import interpreter_version
from .subsets import build_subsets, export_split, stats
from .synthesis import PromptTemplate, default_demonstrations, load_demonstrations, synthesize


def _parse_duration(text: str) -> float:
    """Accept plain seconds or an 's' suffix: "5", "5s", "2.5s"."""
    text = text.strip().lower()
    if text.endswith("s"):
        text = text[:-1]
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"invalid duration {text!r}")


_SIZE_SUFFIXES = {"k": 1024, "m": 1024**2, "g": 1024**3}


def _parse_size(text: str) -> int:
    """Accept plain bytes or K/M/G binary suffixes: "256M", "1G"."""
    text = text.strip().lower().rstrip("ib")
    factor = 1
    if text and text[-1] in _SIZE_SUFFIXES:
        factor = _SIZE_SUFFIXES[text[-1]]
        text = text[:-1]
    try:
        return int(float(text) * factor)
    except ValueError:
        raise ConfigError(f"invalid size {text!r}")


def _manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


def write_manifest(path: Path, stage: str, config: PipelineConfig, counts: Mapping[str, Any],
                   extra: Optional[Mapping[str, Any]] = None) -> None:
    manifest: dict[str, Any] = {
        "stage": stage,
        "config_hash": config.config_hash(),
        "interpreter": interpreter_version(config.exec_limits.interpreter),
        "counts": dict(counts),
    }
    if extra:
        manifest.update(extra)
    _manifest_path(path).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def check_input_manifest(path: Path, config: PipelineConfig, allow_mixed: bool) -> None:
    manifest_path = _manifest_path(path)
    if not manifest_path.exists():
        return
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    found = manifest.get("config_hash")
    if found and found != config.config_hash() and not allow_mixed:
        raise ConfigError(
            f"{path} was produced under config {found}, current is "
            f"{config.config_hash()}; pass --allow-mixed to continue"
        )


def _load_problems(path: str, adapter: str = "problems") -> list[MathProblem]:
    if adapter == "problems":
        return list(read_jsonl(path, MathProblem.from_dict))
    return ev.ingest_benchmark(path, adapter)


def _make_client(config: PipelineConfig, backend: Optional[str], store_path: Optional[str]) -> TeacherClient:
    backend = backend or config.backend
    store = None
    if backend in ("replay", "record"):
        path = store_path or config.replay_store
        if path is None:
            raise ConfigError(f"backend {backend!r} requires --store or replay_store in config")
        store = ReplayStore(path)
    return TeacherClient(config.teacher, backend=backend, store=store)


def _sampling(config: PipelineConfig, paths: Optional[int]) -> SamplingParams:
    if paths is None:
        return config.sampling
    base = config.sampling.to_dict()
    base["n_paths"] = paths
    return SamplingParams(**base)


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    fmt = Format(args.format)
    demos = load_demonstrations(args.demos) if args.demos else default_demonstrations(fmt)
    template = PromptTemplate(format=fmt, demonstrations=demos)
    problems = _load_problems(args.problems)
    client = _make_client(config, args.backend, args.store)
    params = _sampling(config, args.paths)
    records = synthesize(problems, template, params, client)
    if args.dedup:
        seen: set[tuple[str, str]] = set()
        unique = []
        for record in records:
            key = (record.problem_id, record.rationale)
            if key not in seen:
                seen.add(key)
                unique.append(record)
        records = unique
    out = Path(args.out)
    write_jsonl(out, records)
    write_manifest(out, "synth", config, {"problems": len(problems), "records": len(records)},
                   {"format": fmt.value, "paths": params.n_paths})
    print(f"synth: wrote {len(records)} records to {out}")
    return 0


def cmd_filter(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides={"tolerance": args.tol})
    fmt = Format(args.format)
    in_path = Path(args.records)
    check_input_manifest(in_path, config, args.allow_mixed)
    records = list(read_jsonl(in_path, ReasoningRecord.from_dict))
    problems = _load_problems(args.problems)
    if fmt is Format.COT:
        filtered = filter_cot(records, problems, tol=config.tolerance)
    else:
        limits = config.exec_limits
        if args.timeout is not None or args.mem is not None:
            limits = dataclasses.replace(
                limits,
                timeout_s=_parse_duration(args.timeout) if args.timeout else limits.timeout_s,
                memory_bytes=_parse_size(args.mem) if args.mem else limits.memory_bytes,
            )
        filtered = filter_pot(records, problems, limits=limits, tol=config.tolerance)
    out = Path(args.out)
    write_jsonl(out, filtered)
    report = stats(records, filtered)
    write_manifest(out, "filter", config, {"records": len(filtered)},
                   {"format": fmt.value, "stats": report.to_dict()})
    print(f"filter: kept {report.kept_count}/{report.raw_count} records -> {out}")
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    in_path = Path(args.records)
    check_input_manifest(in_path, config, args.allow_mixed)
    records = list(read_jsonl(in_path, ReasoningRecord.from_dict))
    problems = _load_problems(args.problems)
    kept = [r for r in records if r.verdict is Verdict.KEPT]
    bundle = build_subsets(kept, problems, config.prompts)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_extra = {"config_hash": config.config_hash(),
                      "interpreter": interpreter_version(config.exec_limits.interpreter)}
    for name, subset in (("core", bundle.core), ("info", bundle.info), ("solve", bundle.solve)):
        export_split(subset, out_dir / f"{name}.jsonl", manifest_extra)
    report = stats(records, records)
    write_manifest(out_dir / "build", "build", config,
                   {"kept": len(kept), "per_role": len(bundle.core)},
                   {"stats": report.to_dict()})
    print(f"build: {len(kept)} kept records -> 3 x {len(bundle.core)} examples in {out_dir}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    topology = Topology.load(args.topology)
    problems = _load_problems(args.bench, args.adapter)
    if not config.students:
        raise ConfigError("no [[students]] endpoints in config")
    traces, summary = infer_batch(
        problems,
        topology,
        config.students,
        limits=config.exec_limits,
        prompts=config.prompts,
        max_workers=args.workers,
    )
    out = Path(args.out)
    write_jsonl(out, traces)
    write_manifest(out, "infer", config, {"traces": len(traces)},
                   {"topology": topology.id, "summary": summary.to_dict()})
    print(f"infer: {summary.predicted}/{summary.n} predictions -> {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides={"tolerance": args.tol})
    traces = list(read_jsonl(args.traces, InferenceTrace.from_dict))
    problems = _load_problems(args.bench, args.adapter)
    report = ev.score(traces, problems, tol=config.tolerance)
    payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    print(f"{'dataset':<12} {'n':>6} {'correct':>8} {'accuracy':>9}")
    for name, group in sorted(report.per_dataset.items()):
        print(f"{name:<12} {group.n:>6} {group.correct:>8} {group.accuracy:>9.4f}")
    print(f"{'macro avg':<12} {report.n:>6} {report.correct:>8} {report.macro_average:>9.4f}")
    if report.failure_counts:
        print("failures:", json.dumps(dict(sorted(report.failure_counts.items()))))
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.analyze_cmd == "sample":
        traces = list(read_jsonl(args.traces, InferenceTrace.from_dict))
        problems = _load_problems(args.bench, args.adapter)
        seed = args.seed if args.seed is not None else config.seed
        rows = ev.sample_for_analysis(traces, problems, args.n, seed, tol=config.tolerance)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        print(f"analyze sample: wrote {len(rows)} worksheet rows to {out}")
        return 0
    if args.analyze_cmd == "aggregate":
        annotations = list(read_jsonl(args.annotations, ev.ErrorAnnotation.from_dict))
        aggregate = ev.aggregate_errors(annotations)
        print(json.dumps(aggregate.to_dict(), indent=2, sort_keys=True))
        return 0
    if args.analyze_cmd == "flag":
        traces = list(read_jsonl(args.traces, InferenceTrace.from_dict))
        flags = ev.auto_flag_calculation_errors(traces, tol=config.tolerance)
        flagged = [t.problem_id for t, f in zip(traces, flags) if f]
        print(json.dumps({"flagged": flagged, "count": len(flagged)}, sort_keys=True))
        return 0
    raise ConfigError(f"unknown analyze subcommand {args.analyze_cmd!r}")


def cmd_pipeline(args: argparse.Namespace) -> int:
    """synth -> filter -> build; stops before training, which a separate trainer owns."""
    config = load_config(args.config)
    out_dir = Path(args.out_dir) if args.out_dir else config.work_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = Format(args.format)
    demos = load_demonstrations(args.demos) if args.demos else default_demonstrations(fmt)
    template = PromptTemplate(format=fmt, demonstrations=demos)
    problems = _load_problems(args.problems)
    client = _make_client(config, args.backend, args.store)
    params = _sampling(config, args.paths)

    raw_records = synthesize(problems, template, params, client)
    raw_path = out_dir / "raw.jsonl"
    write_jsonl(raw_path, raw_records)
    write_manifest(raw_path, "synth", config,
                   {"problems": len(problems), "records": len(raw_records)},
                   {"format": fmt.value, "paths": params.n_paths})

    if fmt is Format.COT:
        filtered = filter_cot(raw_records, problems, tol=config.tolerance)
    else:
        filtered = filter_pot(raw_records, problems, limits=config.exec_limits,
                              tol=config.tolerance)
    filtered_path = out_dir / "filtered.jsonl"
    write_jsonl(filtered_path, filtered)
    report = stats(raw_records, filtered)
    write_manifest(filtered_path, "filter", config, {"records": len(filtered)},
                   {"format": fmt.value, "stats": report.to_dict()})

    kept = [r for r in filtered if r.verdict is Verdict.KEPT]
    bundle = build_subsets(kept, problems, config.prompts)
    subsets_dir = out_dir / "subsets"
    subsets_dir.mkdir(parents=True, exist_ok=True)
    manifest_extra = {"config_hash": config.config_hash(),
                      "interpreter": interpreter_version(config.exec_limits.interpreter)}
    for name, subset in (("core", bundle.core), ("info", bundle.info), ("solve", bundle.solve)):
        export_split(subset, subsets_dir / f"{name}.jsonl", manifest_extra)
    write_manifest(out_dir / "build", "build", config,
                   {"kept": len(kept), "per_role": len(bundle.core)},
                   {"stats": report.to_dict()})
    print(
        f"pipeline: {len(raw_records)} raw -> {len(kept)} kept -> "
        f"3 x {len(bundle.core)} examples in {out_dir}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kpdistill",
                                     description="Key-point-driven distillation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--allow-mixed", action="store_true",
                       help="allow inputs produced under a different config hash")

    p = sub.add_parser("synth", help="generate reasoning records from the teacher")
    common(p)
    p.add_argument("--format", choices=["cot", "pot"], required=True)
    p.add_argument("--in", dest="problems", required=True, help="problems JSONL")
    p.add_argument("--out", required=True, help="output records JSONL")
    p.add_argument("--paths", type=int, default=None, help="reasoning paths per question")
    p.add_argument("--demos", default=None, help="demonstrations JSONL (default: shipped set)")
    p.add_argument("--backend", choices=["live", "replay", "record"], default=None)
    p.add_argument("--store", default=None, help="replay store path")
    p.add_argument("--dedup", action="store_true", help="drop duplicate rationales per question")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filter", help="assign correctness verdicts")
    common(p)
    p.add_argument("--format", choices=["cot", "pot"], required=True)
    p.add_argument("--in", dest="records", required=True, help="raw records JSONL")
    p.add_argument("--problems", required=True, help="problems JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", default=None, help="relative answer tolerance")
    p.add_argument("--timeout", default=None, help="program wall-clock limit, e.g. 5s")
    p.add_argument("--mem", default=None, help="program memory ceiling, e.g. 256M")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("build", help="construct the three role subsets")
    common(p)
    p.add_argument("--in", dest="records", required=True, help="filtered records JSONL")
    p.add_argument("--problems", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("infer", help="run staged inference against student endpoints")
    common(p)
    p.add_argument("--topology", required=True, help="topology JSON file")
    p.add_argument("--bench", required=True, help="benchmark file")
    p.add_argument("--adapter", default="problems",
                   choices=["problems", "gsm8k", "asdiv", "svamp", "multiarith", "generic_jsonl"])
    p.add_argument("--out", required=True, help="traces JSONL")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score traces against gold answers")
    common(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--bench", required=True)
    p.add_argument("--adapter", default="problems",
                   choices=["problems", "gsm8k", "asdiv", "svamp", "multiarith", "generic_jsonl"])
    p.add_argument("--tol", default=None)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="error-analysis workflow")
    common(p)
    analyze_sub = p.add_subparsers(dest="analyze_cmd", required=True)
    ps = analyze_sub.add_parser("sample", help="sample incorrect traces into a worksheet")
    ps.add_argument("--traces", required=True)
    ps.add_argument("--bench", required=True)
    ps.add_argument("--adapter", default="problems",
                    choices=["problems", "gsm8k", "asdiv", "svamp", "multiarith", "generic_jsonl"])
    ps.add_argument("--n", type=int, required=True)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--out", required=True)
    pa = analyze_sub.add_parser("aggregate", help="aggregate annotation labels")
    pa.add_argument("--annotations", required=True)
    pf = analyze_sub.add_parser("flag", help="auto-flag failed arithmetic steps")
    pf.add_argument("--traces", required=True)
    for sp in (ps, pa, pf):
        sp.set_defaults(func=cmd_analyze)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pipeline", help="synth -> filter -> build")
    common(p)
    p.add_argument("--format", choices=["cot", "pot"], default="cot")
    p.add_argument("--in", dest="problems", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--demos", default=None)
    p.add_argument("--backend", choices=["live", "replay", "record"], default=None)
    p.add_argument("--store", default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        _emit_error(exc)
        return 2
    except (PipelineError, OSError) as exc:
        _emit_error(exc)
        return 1


def _emit_error(exc: Exception) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
