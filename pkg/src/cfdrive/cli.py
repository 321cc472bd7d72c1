"""Command-line pipeline: validate, select keyframes, build the maneuver
library, simulate and check candidates, assemble prompts, generate QA,
evaluate predictions, serve the review UI and export reviewed data.

Every stage reads and writes plain files so a human review pass can happen
between generation and dataset finalization. Output files are written
atomically and ordered by scene id regardless of worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .attention import build_attention_tree, close_objects, render_attention_tree
from .backends import HttpBackend, LlmBackend, TemplateBackend
from .checklist import run_checklist
from .config import RuleConfig
from .keyframe import load_embeddings, select_dynamics, select_semantic
from .maneuver import cluster_trajectories, instantiate_candidates, load_library, save_library
from .metrics import evaluate_answers, open_loop_report
from .promptqa import (
    ALL_TYPES,
    ConversationType,
    build_prompt_context,
    generate_qa,
    parse_trajectory,
    read_qa_jsonl,
    render_prompt,
    serialize_trajectory,
)
from .review import create_app, export_reviewed, load_store, read_verdict_records
from .scene import SceneError, Trajectory, expert_trajectory, load_scene

from . import cider as cider_module

log = logging.getLogger("cfdrive")


@dataclass
class PipelineConfig:
    """File-level configuration; any field can be overridden by a CLI flag."""

    scenes_dir: str | None = None
    embeddings_file: str | None = None
    library_file: str | None = None
    output_dir: str = "out"
    cache_dir: str | None = None
    rules: RuleConfig = field(default_factory=RuleConfig)
    fraction: float = 0.2
    k: int = 200
    candidate_limit: int | None = None
    backend: str = "template"
    backend_url: str | None = None
    backend_model: str = "gpt-4"
    backend_token_env: str = "CFDRIVE_API_TOKEN"
    backend_timeout: float = 30.0
    backend_retries: int = 2
    conversation_types: tuple[str, ...] = tuple(t.value for t in ALL_TYPES)
    seed: int = 0
    jobs: int = 1

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        rules = RuleConfig.from_dict(doc.pop("rules", {}))
        types = tuple(doc.pop("conversation_types", [t.value for t in ALL_TYPES]))
        cfg = cls(rules=rules, conversation_types=types)
        for key, value in doc.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config field {key!r}")
            setattr(cfg, key, value)
        return cfg


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_jsonl(path, records) -> None:
    _atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _scene_files(scenes_dir) -> list[Path]:
    files = sorted(Path(scenes_dir).glob("*.json"))
    if not files:
        raise SystemExit(f"no scene files in {scenes_dir}")
    return files


def _build_backend(cfg: PipelineConfig) -> LlmBackend:
    if cfg.backend == "template":
        return TemplateBackend()
    if cfg.backend == "http":
        if not cfg.backend_url:
            raise SystemExit("--backend http requires --backend-url (or backend_url in config)")
        return HttpBackend(
            base_url=cfg.backend_url,
            model=cfg.backend_model,
            token_env=cfg.backend_token_env,
            timeout=cfg.backend_timeout,
            retries=cfg.backend_retries,
            cache_dir=cfg.cache_dir,
        )
    raise SystemExit(f"unknown backend {cfg.backend!r}")


def _enabled_types(cfg: PipelineConfig) -> tuple[ConversationType, ...]:
    return tuple(ConversationType(t) for t in cfg.conversation_types)


# --- per-scene pipeline (shared by check / prompts / generate) -------------


def _scene_bundle(scene_path, cfg: PipelineConfig, library):
    scene = load_scene(scene_path)
    t0 = time.perf_counter()
    expert = expert_trajectory(scene)
    expert_verdict = run_checklist(scene, expert, cfg.rules, trajectory_id="expert")
    candidates = instantiate_candidates(scene, library, cfg.candidate_limit) if library else []
    cand_verdicts = [
        run_checklist(scene, traj, cfg.rules, trajectory_id=f"cand-{i:02d}")
        for i, traj in enumerate(candidates)
    ]
    close = close_objects(scene, expert, cfg.rules)
    tree = build_attention_tree(scene, close, cfg.rules)
    ctx = build_prompt_context(
        expert, expert_verdict, tree, list(zip(candidates, cand_verdicts)), scene.caption
    )
    log.info(
        "scene=%s stage=pipeline candidates=%d close=%d elapsed_ms=%.1f",
        scene.scene_id, len(candidates), len(close), 1e3 * (time.perf_counter() - t0),
    )
    return scene, expert, expert_verdict, candidates, cand_verdicts, close, tree, ctx


def _verdict_records(scene, expert, expert_verdict, candidates, cand_verdicts) -> list[dict]:
    records = []
    for role, traj, verdict in [
        ("expert", expert, expert_verdict),
        *[("simulated", t, v) for t, v in zip(candidates, cand_verdicts)],
    ]:
        doc = verdict.to_dict()
        doc["scene_id"] = scene.scene_id
        doc["role"] = role
        doc["trajectory"] = serialize_trajectory(traj)
        records.append(doc)
    return records


def _generate_worker(args: tuple) -> tuple[str, list[dict], list[dict]]:
    """Worker for `generate`: returns (scene_id, verdict records, QA records)."""
    scene_path, cfg = args
    library = load_library(cfg.library_file) if cfg.library_file else None
    backend = _build_backend(cfg)
    scene, expert, expert_verdict, candidates, cand_verdicts, _, _, ctx = _scene_bundle(
        scene_path, cfg, library
    )
    items = generate_qa(
        ctx, cand_verdicts, backend, scene_id=scene.scene_id, enabled=_enabled_types(cfg)
    )
    return (
        scene.scene_id,
        _verdict_records(scene, expert, expert_verdict, candidates, cand_verdicts),
        [item.to_dict() for item in items],
    )


# --- subcommands -----------------------------------------------------------


def cmd_validate(cfg: PipelineConfig, args) -> int:
    failures = 0
    paths = []
    for target in args.paths:
        p = Path(target)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    for path in paths:
        try:
            scene = load_scene(path, strict=not args.lenient)
            print(f"OK    {path} scene_id={scene.scene_id}")
        except SceneError as exc:
            failures += 1
            print(f"ERROR {path}: {exc}")
    return 1 if failures else 0


def cmd_keyframes(cfg: PipelineConfig, args) -> int:
    semantic: list[str] = []
    dynamics: list[str] = []
    if cfg.embeddings_file:
        records = load_embeddings(cfg.embeddings_file)
        semantic = select_semantic(records, cfg.fraction, seed=cfg.seed)
        log.info("stage=keyframes kind=semantic selected=%d of=%d", len(semantic), len(records))
    if cfg.scenes_dir:
        pairs = []
        for path in _scene_files(cfg.scenes_dir):
            scene = load_scene(path)
            pairs.append((scene.scene_id, expert_trajectory(scene)))
        k = min(cfg.k, len(pairs))
        dynamics = select_dynamics(pairs, k=k, seed=cfg.seed)
        log.info("stage=keyframes kind=dynamics selected=%d of=%d", len(dynamics), len(pairs))
    if not semantic and not dynamics:
        raise SystemExit("keyframes needs an embeddings file and/or a scenes dir")
    doc = {
        "semantic": semantic,
        "dynamics": dynamics,
        "selected": sorted(set(semantic) | set(dynamics)),
    }
    _atomic_write_text(args.out, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"selected {len(doc['selected'])} keyframes -> {args.out}")
    return 0


def cmd_build_library(cfg: PipelineConfig, args) -> int:
    trajs = []
    for path in _scene_files(cfg.scenes_dir):
        scene = load_scene(path)
        trajs.append(expert_trajectory(scene))
    k = min(cfg.k, len(trajs))
    if k < cfg.k:
        log.warning("stage=build-library clamping k from %d to %d (dataset size)", cfg.k, k)
    library = cluster_trajectories(trajs, k=k, seed=cfg.seed, config=cfg.rules)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_library(library, args.out)
    print(f"library with {len(library)} maneuvers -> {args.out}")
    return 0


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    library = load_library(cfg.library_file)
    records = []
    for path in _scene_files(cfg.scenes_dir):
        scene = load_scene(path)
        for i, traj in enumerate(instantiate_candidates(scene, library, cfg.candidate_limit)):
            records.append(
                {
                    "scene_id": scene.scene_id,
                    "trajectory_id": f"cand-{i:02d}",
                    "decision": library.entries[i].decision.decision_string(),
                    "trajectory": serialize_trajectory(traj),
                }
            )
        log.info("scene=%s stage=simulate", scene.scene_id)
    records.sort(key=lambda r: (r["scene_id"], r["trajectory_id"]))
    _write_jsonl(args.out, records)
    print(f"{len(records)} candidate trajectories -> {args.out}")
    return 0


def cmd_check(cfg: PipelineConfig, args) -> int:
    library = load_library(cfg.library_file) if cfg.library_file else None
    records = []
    for path in _scene_files(cfg.scenes_dir):
        scene, expert, expert_verdict, candidates, cand_verdicts, _, _, _ = _scene_bundle(
            path, cfg, library
        )
        records.extend(_verdict_records(scene, expert, expert_verdict, candidates, cand_verdicts))
    records.sort(key=lambda r: (r["scene_id"], r["trajectory_id"]))
    _write_jsonl(args.out, records)
    unsafe = sum(1 for r in records if not r["safe"])
    print(f"{len(records)} verdicts ({unsafe} unsafe) -> {args.out}")
    return 0


def cmd_attention(cfg: PipelineConfig, args) -> int:
    records = []
    for path in _scene_files(cfg.scenes_dir):
        scene = load_scene(path)
        expert = expert_trajectory(scene)
        close = close_objects(scene, expert, cfg.rules)
        tree = build_attention_tree(scene, close, cfg.rules)
        records.append(
            {
                "scene_id": scene.scene_id,
                "close": [[c.agent_id, c.distance, c.time] for c in close],
                "tree": render_attention_tree(tree),
            }
        )
        log.info("scene=%s stage=attention close=%d", scene.scene_id, len(close))
    records.sort(key=lambda r: r["scene_id"])
    _write_jsonl(args.out, records)
    print(f"attention for {len(records)} scenes -> {args.out}")
    return 0


def cmd_prompts(cfg: PipelineConfig, args) -> int:
    library = load_library(cfg.library_file) if cfg.library_file else None
    records = []
    for path in _scene_files(cfg.scenes_dir):
        scene, *_rest, ctx = _scene_bundle(path, cfg, library)
        records.append({"scene_id": scene.scene_id, "prompt": render_prompt(ctx)})
    records.sort(key=lambda r: r["scene_id"])
    _write_jsonl(args.out, records)
    print(f"prompts for {len(records)} scenes -> {args.out}")
    return 0


def cmd_generate(cfg: PipelineConfig, args) -> int:
    files = _scene_files(cfg.scenes_dir)
    tasks = [(path, cfg) for path in files]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_generate_worker, tasks))
    else:
        results = [_generate_worker(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    qa_records = [doc for _, _, docs in results for doc in docs]
    verdict_records = [doc for _, docs, _ in results for doc in docs]
    _write_jsonl(args.out, qa_records)
    if args.verdicts_out:
        _write_jsonl(args.verdicts_out, verdict_records)
    print(f"{len(qa_records)} QA items over {len(results)} scenes -> {args.out}")
    return 0


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    report: dict = {}
    undefined = False

    if args.pred:
        preds = {}
        with open(args.pred, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    preds[doc["scene_id"]] = parse_trajectory(doc["trajectory"])
        samples = []
        for path in _scene_files(cfg.scenes_dir):
            scene = load_scene(path)
            if scene.scene_id in preds:
                samples.append((scene, preds[scene.scene_id], expert_trajectory(scene)))
        if not samples:
            raise SystemExit("no predictions match the scene set")
        ol = open_loop_report(samples, cfg.rules)
        report["open_loop"] = ol.to_dict()
        undefined = undefined or ol.has_undefined()
        print(ol.render_table())

    if args.qa_pred and args.qa_gt:
        gt_items = read_qa_jsonl(args.qa_gt)
        pred_answers = {}
        with open(args.qa_pred, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    doc = json.loads(line)
                    pred_answers[doc["id"]] = doc["answer"]

        verdict_categories = {}
        if args.verdicts:
            for record in read_verdict_records(args.verdicts):
                key = (record.scene_id, record.trajectory_id)
                verdict_categories[key] = record.verdict.categories()

        cf_answers, cf_truth = {}, {}
        references = {}
        for item in gt_items:
            if item.id in pred_answers:
                references[item.id] = [item.final_answer()]
            if item.conversation_type is ConversationType.COUNTERFACTUAL and item.id in pred_answers:
                key = (item.provenance.scene_id, *(item.provenance.trajectory_ids[:1]))
                if len(key) == 2 and key in verdict_categories:
                    cf_answers[item.id] = pred_answers[item.id]
                    cf_truth[item.id] = verdict_categories[key]

        if cf_answers:
            pr = evaluate_answers(cf_answers, cf_truth)
            report["counterfactual"] = pr.to_dict()
            undefined = undefined or pr.has_undefined()
            for cat, stats in sorted(pr.to_dict().items()):
                p = "undef" if stats["precision"] is None else f"{100 * stats['precision']:.1f}%"
                r = "undef" if stats["recall"] is None else f"{100 * stats['recall']:.1f}%"
                print(f"counterfactual {cat:<14s} P={p:<7s} R={r}")
        if references:
            candidates = {i: pred_answers[i] for i in references}
            scores, mean = cider_module.cider(candidates, references)
            report["cider"] = {"mean": mean, "per_item": scores}
            print(f"CIDEr mean: {mean:.4f} over {len(scores)} items")

    if not report:
        raise SystemExit("nothing to evaluate: pass --pred and/or --qa-pred/--qa-gt")
    if args.out:
        _atomic_write_text(args.out, json.dumps(report, indent=1, sort_keys=True) + "\n")
    if undefined and not args.allow_undefined:
        print("undefined/NaN aggregates present (pass --allow-undefined to ignore)", file=sys.stderr)
        return 3
    return 0


def cmd_serve(cfg: PipelineConfig, args) -> int:
    import uvicorn

    data = Path(args.data)
    store = load_store(
        qa_path=data / "qa.jsonl",
        verdicts_path=data / "verdicts.jsonl",
        scenes_dir=cfg.scenes_dir or data / "scenes",
        log_path=data / "reviews.jsonl",
    )
    app = create_app(store, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_export_review(cfg: PipelineConfig, args) -> int:
    store = load_store(
        qa_path=args.qa,
        verdicts_path=None,
        scenes_dir=None,
        log_path=args.log,
    )
    gaps_path = args.gaps or (str(args.out) + ".gaps.json")
    count, summary = export_reviewed(store, args.out, gaps_path)
    if count == 0:
        log.warning("stage=export-review no accepted or edited items; export is empty")
    print(f"{count} reviewed items -> {args.out} (gap tags: {sum(summary.values())})")
    return 0


def cmd_demo(cfg: PipelineConfig, args) -> int:
    from .demo import write_demo_dataset

    paths = write_demo_dataset(args.out)
    print(f"demo dataset -> {paths['scenes_dir'].parent}")
    return 0


# --- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfdrive",
        description="Counterfactual scene checking, QA generation and evaluation pipeline.",
    )
    parser.add_argument("--config", help="pipeline config JSON file")
    parser.add_argument("--scenes", help="scenes directory")
    parser.add_argument("--library", help="maneuver library file")
    parser.add_argument("--embeddings", help="embeddings file")
    parser.add_argument("--cache-dir", help="backend response cache directory")
    parser.add_argument("--seed", type=int, help="seed for all stochastic steps")
    parser.add_argument("--jobs", type=int, help="parallel scene workers")
    parser.add_argument("--limit", type=int, help="max candidates per scene")
    parser.add_argument("--fraction", type=float, help="semantic keyframe fraction")
    parser.add_argument("--k", type=int, help="cluster count")
    parser.add_argument("--backend", choices=["template", "http"], help="QA backend")
    parser.add_argument("--backend-url", help="HTTP backend base URL")
    parser.add_argument("--backend-model", help="HTTP backend model name")
    parser.add_argument("--types", help="comma-separated conversation types")
    parser.add_argument("--quiet", action="store_true", help="suppress per-scene logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate scene files")
    p.add_argument("paths", nargs="+")
    p.add_argument("--lenient", action="store_true", help="ignore unknown fields")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("keyframes", help="semantic + dynamics key-frame selection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keyframes)

    p = sub.add_parser("build-library", help="cluster expert trajectories into a library")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_library)

    p = sub.add_parser("simulate", help="instantiate candidate trajectories per scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="run the counterfactual checklist")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("attention", help="close objects and attention trees")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attention)

    p = sub.add_parser("prompts", help="render prompt contexts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prompts)

    p = sub.add_parser("generate", help="generate QA items")
    p.add_argument("--out", required=True)
    p.add_argument("--verdicts-out", help="also write the verdict records used")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="open-loop and QA evaluation")
    p.add_argument("--pred", help="JSONL of {scene_id, trajectory} predictions")
    p.add_argument("--qa-pred", help="JSONL of {id, answer} QA predictions")
    p.add_argument("--qa-gt", help="ground-truth QA JSONL (from `generate`)")
    p.add_argument("--verdicts", help="verdict records JSONL (from `check`/`generate`)")
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--allow-undefined", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the review service")
    p.add_argument("--data", required=True, help="directory with qa.jsonl/verdicts.jsonl/scenes/")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", help="directory with the built review UI")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-review", help="export accepted/edited QA items")
    p.add_argument("--qa", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gaps", help="gap-tag summary path (default: <out>.gaps.json)")
    p.set_defaults(func=cmd_export_review)

    p = sub.add_parser("demo", help="write the built-in demo dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)

    return parser


def _merge_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {
        "scenes_dir": args.scenes,
        "library_file": args.library,
        "embeddings_file": args.embeddings,
        "cache_dir": args.cache_dir,
        "seed": args.seed,
        "jobs": args.jobs,
        "candidate_limit": args.limit,
        "fraction": args.fraction,
        "k": args.k,
        "backend": args.backend,
        "backend_url": args.backend_url,
        "backend_model": args.backend_model,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.types:
        cfg.conversation_types = tuple(t.strip() for t in args.types.split(",") if t.strip())
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    cfg = _merge_config(args)
    return args.func(cfg, args)


if __name__ == "__main__":
    raise SystemExit(main())
