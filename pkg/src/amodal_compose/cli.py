"""Command-line entry point: gen-data, train, compose, eval, demo.

Exit codes: 0 success, 1 validation/usage error, 2 runtime failure. Every
run writes a resolved_config.json into its output directory so it can be
replayed exactly. AMODAL_NUM_WORKERS caps data-parallel evaluation
(default 1, the deterministic mode).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .core import Rng, save_image
from .errors import AmodalError, ConfigurationError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="amodal-compose",
        description="Amodal object completion and color-consistent layered composition.",
        epilog="AMODAL_NUM_WORKERS caps evaluation parallelism (default 1).",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic layered-shapes dataset")
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one of the three networks")
    p.add_argument("--net", required=True, choices=["content", "comp", "shape"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)

    p = sub.add_parser("compose", help="compose a scene manifest into one image")
    p.add_argument("--scene", required=True)
    p.add_argument("--shape-ckpt", required=True)
    p.add_argument("--content-ckpt", required=True)
    p.add_argument("--comp-ckpt", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--trace-dir", default=None)
    p.add_argument("--lenient", action="store_true")

    p = sub.add_parser("eval", help="run a benchmark task and emit a report")
    p.add_argument("--task", required=True, choices=["completion", "composition", "shape"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--shape-ckpt", default=None)
    p.add_argument("--content-ckpt", default=None)
    p.add_argument("--comp-ckpt", default=None)
    p.add_argument("--ablation-comp-ckpt", default=None, help="second compositing checkpoint for the input-format comparison")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--metrics-region", choices=["full", "bbox"], default="full")

    p = sub.add_parser("demo", help="full recipe: data, training, composition, eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--channel-mult", type=float, default=0.25)
    p.add_argument("--steps-content", type=int, default=-1, help="-1 uses the per-net default budget")
    p.add_argument("--steps-comp", type=int, default=-1)
    p.add_argument("--steps-shape", type=int, default=-1)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lenient-checks", action="store_true")
    return parser


def _write_resolved_config(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"command": command}
    record.update(payload)
    (out_dir / "resolved_config.json").write_text(json.dumps(record, indent=1, default=str))


def _cmd_gen_data(args) -> int:
    from .data.synthetic import generate_synthetic_dataset

    out = Path(args.out)
    _write_resolved_config(
        out, "gen-data", {"scenes": args.scenes, "seed": args.seed, "resolution": args.resolution, "out": str(out)}
    )
    generate_synthetic_dataset(args.scenes, Rng(args.seed), out, args.resolution)
    return 0


def _cmd_train(args) -> int:
    from .training import TrainConfig, run_training

    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    raw["net"] = args.net
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # results stay inside --out
    raw["checkpoint_path"] = str(out / Path(raw.get("checkpoint_path", "checkpoint.zip")).name)
    raw["log_path"] = str(out / Path(raw.get("log_path", "runlog.jsonl")).name)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    cfg = TrainConfig(**raw)
    _write_resolved_config(out, "train", {"resume": args.resume, **cfg.to_dict()})
    path = run_training(cfg, resume=args.resume)
    print(f"checkpoint written to {path}")
    return 0


def _cmd_compose(args) -> int:
    from .pipeline import compose_scene, load_pipeline_nets, load_scene_manifest, write_trace

    scene = load_scene_manifest(args.scene)
    nets, meta = load_pipeline_nets(args.shape_ckpt, args.content_ckpt, args.comp_ckpt)
    out_png = Path(args.out)
    _write_resolved_config(
        out_png.parent,
        "compose",
        {
            "scene": args.scene,
            "shape_ckpt": args.shape_ckpt,
            "content_ckpt": args.content_ckpt,
            "comp_ckpt": args.comp_ckpt,
            "out": str(out_png),
            "trace_dir": args.trace_dir,
            "lenient": args.lenient,
            "resolution": meta["resolution"],
        },
    )
    composite, trace = compose_scene(scene, nets, meta["resolution"], lenient=args.lenient)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    save_image(composite, out_png)
    if args.trace_dir:
        write_trace(trace, args.trace_dir)
    print(f"composite written to {out_png}")
    return 0


def _cmd_eval(args) -> int:
    from .data.manifest import load_manifest
    from .evaluation import (
        compare_input_modes,
        completion_fn_from,
        composition_fn_from,
        emit_report,
        run_benchmark,
        shape_fn_from,
    )
    from .pipeline import load_comp_net, load_content_net, load_shape_net

    manifest = load_manifest(args.manifest)
    if args.task == "completion":
        if not args.content_ckpt:
            raise ConfigurationError("completion eval needs --content-ckpt")
        net, meta = load_content_net(args.content_ckpt)
        model_fn = completion_fn_from(net)
    elif args.task == "composition":
        if not args.comp_ckpt:
            raise ConfigurationError("composition eval needs --comp-ckpt")
        net, meta = load_comp_net(args.comp_ckpt)
        model_fn = composition_fn_from(net)
    else:
        if not args.shape_ckpt:
            raise ConfigurationError("shape eval needs --shape-ckpt")
        net, meta = load_shape_net(args.shape_ckpt)
        model_fn = shape_fn_from(net)
    resolution = args.resolution or meta["resolution"]
    out = Path(args.out)
    _write_resolved_config(out, "eval", {k: v for k, v in vars(args).items() if k != "command"})
    report = run_benchmark(
        manifest, args.task, model_fn, seed=args.seed, resolution=resolution,
        limit=args.limit, metrics_region=args.metrics_region,
    )
    emit_report(report, out)
    if args.ablation_comp_ckpt:
        if args.task != "composition":
            raise ConfigurationError("--ablation-comp-ckpt only applies to the composition task")
        other, _ = load_comp_net(args.ablation_comp_ckpt)
        other_report = run_benchmark(
            manifest, "composition", composition_fn_from(other), seed=args.seed, resolution=resolution, limit=args.limit
        )
        emit_report(other_report, out / "ablation")
        comparison = compare_input_modes(report, other_report)
        (out / "ablation_comparison.json").write_text(json.dumps(comparison, indent=1))
        print(f"ablation comparison: {comparison}")
    mean_psnr = report.aggregates["psnr"]["mean"]
    mean_miou = report.aggregates["miou"]["mean"]
    print(f"eval {args.task}: rows={len(report.rows)} psnr={mean_psnr} miou={mean_miou}")
    return 0


def _cmd_demo(args) -> int:
    from .demo import run_demo

    out = Path(args.out)
    _write_resolved_config(out, "demo", {k: v for k, v in vars(args).items() if k != "command"})
    summary = run_demo(
        seed=args.seed,
        out_dir=out,
        scenes=args.scenes,
        resolution=args.resolution,
        channel_mult=args.channel_mult,
        steps_content=args.steps_content,
        steps_comp=args.steps_comp,
        steps_shape=args.steps_shape,
        batch_size=args.batch_size,
        lenient_checks=args.lenient_checks,
    )
    print(json.dumps(summary["checks"], indent=1))
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "compose": _cmd_compose,
    "eval": _cmd_eval,
    "demo": _cmd_demo,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        return _HANDLERS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"E_USAGE: {exc}", file=sys.stderr)
        return 1
    except AmodalError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"E_RUNTIME: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
