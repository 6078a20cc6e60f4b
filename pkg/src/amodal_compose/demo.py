"""End-to-end desk-scale recipe: synthesize data, train the three nets,
compose a scene, and evaluate. Every stage is seeded; two runs with the
same arguments produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .core import Rng, save_image
from .data.synthetic import generate_synthetic_dataset, make_background
from .errors import AmodalError
from .evaluation import (
    composition_fn_from,
    emit_report,
    miou,
    run_benchmark,
    shape_fn_from,
)
from .pipeline import (
    Placement,
    SceneInstanceRef,
    SceneManifest,
    apply_placement,
    compose_scene,
    load_pipeline_nets,
    write_trace,
)
from .training import RunLog, TrainConfig, run_training

ALPHA_MIOU_THRESHOLD = 0.6  # frozen from the first oracle run
EVAL_LIMIT = 32


class DemoStageError(AmodalError):
    code = "E_RUNTIME"
    exit_code = 2


def _stage(name: str, fn, timings: dict):
    t0 = time.perf_counter()
    try:
        result = fn()
    except Exception as exc:
        raise DemoStageError(f"[stage={name}] {type(exc).__name__}: {exc}") from exc
    timings[name] = time.perf_counter() - t0
    return result


def _loss_decreased(log_path) -> tuple[bool, float, float]:
    records = RunLog.read(log_path)
    first, last = records[0]["total"], records[-1]["total"]
    return last < first, first, last


def _build_demo_scene(out: Path, manifest, instances, rng: Rng, resolution: int):
    """A fresh background plus up to three dataset instances with placements."""
    bg = make_background(rng.child("bg"), resolution)
    bg_path = out / "scene_background.png"
    save_image(bg, bg_path)
    entry_by_id = {e.id: e for e in manifest.entries}
    occluded = [i for i in instances if i.amodal_mask is not None and i.amodal_mask.sum() > i.visible_mask.sum()]
    intact = [i for i in instances if i.amodal_mask is not None and i.amodal_mask.sum() == i.visible_mask.sum()]
    picks = []
    if intact:
        picks.append((intact[0], False))
    for inst in occluded[:2]:
        picks.append((inst, True))
    while len(picks) < 2 and len(instances) > len(picks):
        picks.append((instances[len(picks)], False))
    shift = resolution // 8
    placements = [Placement(0, 0, 1.0), Placement(-shift, shift // 2, 1.0), Placement(shift, -shift // 2, 1.0)]
    refs = []
    gt_masks = []
    for (inst, occ), placement in zip(picks, placements):
        entry = entry_by_id[inst.id]
        refs.append(
            SceneInstanceRef(
                image=str(manifest.root / entry.image),
                visible_mask=str(manifest.root / entry.visible_mask),
                occluded=occ,
                placement=placement,
            )
        )
        gt = inst.amodal_mask if inst.amodal_mask is not None else inst.visible_mask
        gt_masks.append((gt, placement))
    scene = SceneManifest(background=str(bg_path), instances=refs, root=Path("."))
    scene_path = out / "scene.json"
    scene_path.write_text(
        json.dumps(
            {
                "background": scene.background,
                "instances": [
                    {
                        "image": r.image,
                        "visible_mask": r.visible_mask,
                        "occluded": r.occluded,
                        "placement": {"dx": r.placement.dx, "dy": r.placement.dy, "scale": r.placement.scale},
                    }
                    for r in refs
                ],
            },
            indent=1,
        )
    )
    return scene, gt_masks


def run_demo(
    seed: int,
    out_dir,
    scenes: int = 200,
    resolution: int = 64,
    channel_mult: float = 0.25,
    steps_content: int = -1,
    steps_comp: int = -1,
    steps_shape: int = -1,
    batch_size: int = 8,
    lenient_checks: bool = False,
) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    summary: dict = {"seed": seed, "checks": {}}

    data_dir = out / "dataset"
    manifest = _stage(
        "gen-data",
        lambda: generate_synthetic_dataset(scenes, Rng(seed), data_dir, resolution),
        timings,
    )

    ckpts = {}
    logs = {}
    for net, steps in (("shape", steps_shape), ("content", steps_content), ("comp", steps_comp)):
        cfg = TrainConfig(
            net=net,
            manifest=str(data_dir / "manifest.json"),
            steps=steps,
            batch_size=batch_size,
            seed=seed,
            resolution=resolution,
            channel_mult=channel_mult,
            checkpoint_path=str(out / f"{net}.ckpt.zip"),
            log_path=str(out / f"{net}.runlog.jsonl"),
        )
        ckpts[net] = _stage(f"train-{net}", lambda c=cfg: run_training(c), timings)
        logs[net] = cfg.log_path

    def compose_stage():
        from .data.manifest import load_all_instances, load_manifest

        loaded = load_manifest(data_dir / "manifest.json")
        instances = load_all_instances(loaded, resolution)
        scene, gt_masks = _build_demo_scene(out, loaded, instances, Rng(seed).child("demo"), resolution)
        nets, meta = load_pipeline_nets(ckpts["shape"], ckpts["content"], ckpts["comp"])
        # lenient: a failed instance is recorded in the trace, not fatal
        composite, trace = compose_scene(scene, nets, meta["resolution"], lenient=True)
        save_image(composite, out / "composite.png")
        write_trace(trace, out / "trace")
        return trace, gt_masks

    trace, gt_masks = _stage("compose", compose_stage, timings)

    def eval_stage():
        from .data.manifest import load_manifest
        from .pipeline import load_comp_net, load_shape_net

        loaded = load_manifest(data_dir / "manifest.json")
        shape_net, _ = load_shape_net(ckpts["shape"])
        comp_net, _ = load_comp_net(ckpts["comp"])
        shape_report = run_benchmark(
            loaded, "shape", shape_fn_from(shape_net), seed=seed, resolution=resolution, limit=EVAL_LIMIT
        )
        comp_report = run_benchmark(
            loaded, "composition", composition_fn_from(comp_net), seed=seed, resolution=resolution, limit=EVAL_LIMIT
        )
        emit_report(shape_report, out / "report_shape")
        emit_report(comp_report, out / "report_composition")
        return shape_report, comp_report

    shape_report, comp_report = _stage("eval", eval_stage, timings)

    # run-time checks
    failures = []
    for net, log_path in logs.items():
        ok, first, last = _loss_decreased(log_path)
        summary["checks"][f"{net}_loss_decreased"] = {"ok": ok, "first": first, "last": last}
        if not ok:
            failures.append(f"{net} loss did not decrease ({first:.4f} -> {last:.4f})")
    alpha_ious = []
    for step, (gt, placement) in zip(trace.steps, gt_masks):
        if step.alpha is None:
            continue
        canvas = gt[..., None].repeat(3, axis=2)
        _, placed_gt = apply_placement(canvas, gt, placement)
        alpha_ious.append(miou(step.alpha > 0.5, placed_gt))
    mean_alpha_iou = sum(alpha_ious) / len(alpha_ious) if alpha_ious else 0.0
    summary["checks"]["alpha_miou"] = {"ok": mean_alpha_iou > ALPHA_MIOU_THRESHOLD, "value": mean_alpha_iou}
    if mean_alpha_iou <= ALPHA_MIOU_THRESHOLD:
        failures.append(f"alpha mIoU {mean_alpha_iou:.3f} <= {ALPHA_MIOU_THRESHOLD}")

    summary["timings"] = timings
    summary["shape_miou"] = shape_report.aggregates["miou"]["mean"]
    summary["composition_psnr"] = comp_report.aggregates["psnr"]["mean"]
    (out / "demo_summary.json").write_text(json.dumps(summary, indent=1))
    if failures and not lenient_checks:
        raise DemoStageError("[stage=checks] " + "; ".join(failures))
    return summary
