"""Training loops for the three networks, plus run configuration and logging.

All randomness flows through per-step child streams of the run seed, so a
run saved at step k and resumed reproduces an uninterrupted run bit-exactly
(single-worker mode). Optimizer moments travel inside the checkpoint.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from . import losses
from .core import Rng, erode
from .data.factories import (
    InpaintCache,
    make_comp_pair,
    make_shape_sample,
    sample_occlusion_retrying,
)
from .data.manifest import load_all_instances, load_manifest
from .errors import ConfigurationError, SamplingFailureError, TrainingDivergedError
from .nets import (
    CompNet,
    ContentGenerator,
    Critic,
    ShapeNet,
    load_checkpoint,
    restore_net,
    restore_optimizer,
    save_checkpoint,
)

DEFAULT_LR = {"content": 1e-4, "comp": 2e-4, "shape": 1e-3}
DEFAULT_STEPS = {"content": 2500, "comp": 3000, "shape": 3000}


@dataclass
class TrainConfig:
    net: str
    manifest: str
    steps: int = -1  # -1 -> per-net default
    batch_size: int = 8
    learning_rate: float = 0.0  # 0 -> per-net default
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0
    resolution: int = 64
    channel_mult: float = 0.25
    checkpoint_path: str = "checkpoint.zip"
    log_path: str = "runlog.jsonl"
    # content
    lambda_refine: float = 1.2
    lambda_coarse: float = 1.2
    lambda_adv: float = 1e-3
    beta_visible: float = 5.0
    sigma_gp: float = 10.0
    region_normalized: bool = False
    critic_steps_per_gen: int = 1
    content_include_background: bool = False
    # comp
    lambda_mask_initial: float = 50.0
    lambda_mask_late: float = 5.0
    lambda_reg: float = 0.005
    gamma: float = 2.0
    lambda4_switch_step: int = -1  # -1 -> 1.5% of steps
    mask_erosion_switch_step: int = -1  # -1 -> 1.0% of steps
    mask_erosion_pixels: int = 3
    comp_input_mode: str = "concat"
    color_space: str = "lab"
    stats_on_object: bool = False
    # shape
    omega: float = 5.0
    holdout_fraction: float = 0.1
    eval_every: int = 250
    edit_max_pixels: int = 2
    grad_clip_norm: float = 0.0  # 0 -> off

    def __post_init__(self):
        if self.net not in ("content", "comp", "shape"):
            raise ConfigurationError(f"unknown net {self.net!r}")
        if self.steps < 0:
            self.steps = DEFAULT_STEPS[self.net]
        if self.learning_rate == 0.0:
            self.learning_rate = DEFAULT_LR[self.net]
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigurationError("batch_size/learning_rate must be positive")
        if self.resolution % 32:
            raise ConfigurationError("resolution must be divisible by 32")
        if self.lambda4_switch_step < 0:
            self.lambda4_switch_step = max(1, round(0.015 * self.steps))
        if self.mask_erosion_switch_step < 0:
            self.mask_erosion_switch_step = max(1, round(0.010 * self.steps))

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


class RunLog:
    """Append-only JSON-lines log of per-step loss components."""

    def __init__(self, path):
        self.path = Path(path)
        self.records: list[dict] = []

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("RunLog steps must be strictly increasing")
        self.records.append(record)
        with open(self.path, "a") as f:
            f.write(json.dumps(record) + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


def images_to_torch(arrs) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrs)).permute(0, 3, 1, 2).contiguous().float()


def masks_to_torch(arrs) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrs)).unsqueeze(1).contiguous().float()


def _check_finite(value: torch.Tensor, net: str, step: int) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergedError(
            f"non-finite loss in {net} training at step {step} (batch seed child('{net}', {step}))"
        )


def _load_instances(cfg: TrainConfig):
    manifest = load_manifest(cfg.manifest)
    instances = load_all_instances(manifest, cfg.resolution)
    if not instances:
        raise ConfigurationError("manifest holds no instances")
    return instances


def _resume_meta(resume):
    if resume is None:
        return None
    return load_checkpoint(resume)


def train_content(cfg: TrainConfig, resume=None) -> Path:
    """Alternating WGAN-GP training of the two-stage completion generator."""
    instances = _load_instances(cfg)
    donor_masks = [inst.visible_mask for inst in instances]
    root = Rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    gen = ContentGenerator(cfg.channel_mult)
    critic = Critic(cfg.channel_mult)
    hp = losses.ContentHyperParams(
        lambda_refine=cfg.lambda_refine,
        lambda_coarse=cfg.lambda_coarse,
        lambda_adv=cfg.lambda_adv,
        beta_visible=cfg.beta_visible,
        sigma_gp=cfg.sigma_gp,
        region_normalized=cfg.region_normalized,
    )
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    start = 0
    ckpt = _resume_meta(resume)
    if ckpt is not None:
        restore_net(gen, ckpt, "generator")
        restore_net(critic, ckpt, "critic")
        restore_optimizer(opt_g, gen, ckpt, "generator")
        restore_optimizer(opt_d, critic, ckpt, "critic")
        start = ckpt.meta["step"]
    log = RunLog(cfg.log_path)
    gen.train()
    critic.train()
    critic_steps = gen_steps = 0
    t0 = time.perf_counter()
    def draw_sample(idx, slot_rng):
        # fall through to neighbouring instances when one cannot satisfy
        # the overlap-ratio window (e.g. a tiny visible sliver)
        for probe in range(len(instances)):
            inst = instances[(idx + probe) % len(instances)]
            try:
                return sample_occlusion_retrying(
                    inst,
                    donor_masks,
                    slot_rng.child(probe),
                    include_background=cfg.content_include_background,
                )
            except SamplingFailureError:
                continue
        raise SamplingFailureError("no instance admits an occlusion sample")

    for step in range(start, cfg.steps):
        step_rng = root.child("content", step)
        idxs = step_rng.child("batch").integers(0, len(instances), cfg.batch_size)
        samples = [draw_sample(int(i), step_rng.child("occ", j)) for j, i in enumerate(idxs)]
        masked = images_to_torch([s.masked_object for s in samples])
        m_vis = masks_to_torch([s.m_vis for s in samples])
        m_inv = masks_to_torch([s.m_inv for s in samples])
        target = images_to_torch([s.target for s in samples])

        # one generator forward serves both phases: its detached output is
        # the critic's fake batch, the graph is kept for the generator step
        coarse, refined = gen(masked, m_vis, m_inv)
        fake = refined.detach()
        d_loss_val = 0.0
        for k in range(cfg.critic_steps_per_gen):
            eps = torch.from_numpy(step_rng.child("gp", k).uniform(size=cfg.batch_size)).float()
            interp = losses.make_interpolates(target, fake, eps)
            d_loss = losses.critic_loss(critic(fake), critic(target), interp, critic, hp.sigma_gp)
            _check_finite(d_loss, "content", step)
            opt_d.zero_grad()
            d_loss.backward()
            if cfg.grad_clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(critic.parameters(), cfg.grad_clip_norm)
            opt_d.step()
            critic_steps += 1
            d_loss_val = d_loss.item()

        l_refine = losses.refine_recon_loss(
            refined, target, m_vis, m_inv, hp.beta_visible, hp.region_normalized
        )
        l_coarse = losses.coarse_recon_loss(
            coarse, target, m_vis, m_inv, hp.beta_visible, hp.region_normalized
        )
        l_adv = losses.adv_g_loss(critic(refined))
        total = losses.content_total_loss(l_refine, l_coarse, l_adv, hp)
        _check_finite(total, "content", step)
        opt_g.zero_grad()
        total.backward()
        if cfg.grad_clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(gen.parameters(), cfg.grad_clip_norm)
        opt_g.step()
        gen_steps += 1

        log.append(
            {
                "step": step,
                "total": total.item(),
                "refine": l_refine.item(),
                "coarse": l_coarse.item(),
                "adv": l_adv.item(),
                "critic": d_loss_val,
                "wall_time": time.perf_counter() - t0,
            }
        )

    meta = {
        "net_id": "content",
        "step": cfg.steps,
        "resolution": cfg.resolution,
        "channel_mult": cfg.channel_mult,
        "critic_steps": critic_steps,
        "generator_steps": gen_steps,
        "config": cfg.to_dict(),
    }
    path = Path(cfg.checkpoint_path)
    save_checkpoint(path, {"generator": gen, "critic": critic}, meta, {"generator": opt_g, "critic": opt_d})
    return path


def train_comp(cfg: TrainConfig, resume=None) -> Path:
    """Supervised training of the RGBA compositing net with scheduled weights."""
    instances = _load_instances(cfg)
    root = Rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    net = CompNet(cfg.channel_mult, input_mode=cfg.comp_input_mode)
    hp = losses.CompHyperParams(
        lambda_mask_initial=cfg.lambda_mask_initial,
        lambda_mask_late=cfg.lambda_mask_late,
        lambda_reg=cfg.lambda_reg,
        gamma=cfg.gamma,
    )
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    start = 0
    ckpt = _resume_meta(resume)
    if ckpt is not None:
        restore_net(net, ckpt, "comp")
        restore_optimizer(opt, net, ckpt, "comp")
        start = ckpt.meta["step"]
    cache = InpaintCache()
    log = RunLog(cfg.log_path)
    net.train()
    t0 = time.perf_counter()
    for step in range(start, cfg.steps):
        step_rng = root.child("comp", step)
        idxs = step_rng.child("batch").integers(0, len(instances), cfg.batch_size)
        ref_idxs = step_rng.child("ref").integers(0, len(instances), cfg.batch_size)
        pairs = [
            make_comp_pair(
                instances[int(i)],
                instances[int(r)],
                step_rng.child("pair", j),
                inpainter=cache.for_instance(instances[int(i)]),
                color_space=cfg.color_space,
                stats_on_object=cfg.stats_on_object,
            )
            for j, (i, r) in enumerate(zip(idxs, ref_idxs))
        ]
        bg = images_to_torch([p.background for p in pairs])
        obj = images_to_torch([p.edited_object for p in pairs])
        target = images_to_torch([p.target for p in pairs])
        gt = masks_to_torch([p.gt_mask for p in pairs])
        support = masks_to_torch([p.support_mask for p in pairs])

        i_out, alpha = net(bg, obj, support)
        composite = alpha * i_out + (1.0 - alpha) * bg
        l_recon = losses.comp_recon_loss(composite, target)
        eroded = step >= cfg.mask_erosion_switch_step and cfg.mask_erosion_pixels > 0
        if eroded:
            pos = []
            for p in pairs:
                er = erode(p.gt_mask, cfg.mask_erosion_pixels)
                pos.append(er if er.sum() > 0 else p.gt_mask)
            positive = masks_to_torch(pos)
        else:
            positive = gt
        l_mask = losses.mask_loss(alpha, gt, positive_mask=positive)
        l_reg = losses.reg_loss(alpha, hp.gamma)
        lam = hp.lambda_mask(step, cfg.lambda4_switch_step)
        total = losses.comp_total_loss(l_recon, l_mask, l_reg, hp, lam)
        _check_finite(total, "comp", step)
        opt.zero_grad()
        total.backward()
        if cfg.grad_clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip_norm)
        opt.step()
        log.append(
            {
                "step": step,
                "total": total.item(),
                "recon": l_recon.item(),
                "mask": l_mask.item(),
                "reg": l_reg.item(),
                "lambda_mask": lam,
                "mask_eroded": eroded,
                "wall_time": time.perf_counter() - t0,
            }
        )

    meta = {
        "net_id": "comp",
        "step": cfg.steps,
        "resolution": cfg.resolution,
        "channel_mult": cfg.channel_mult,
        "input_mode": cfg.comp_input_mode,
        "config": cfg.to_dict(),
    }
    path = Path(cfg.checkpoint_path)
    save_checkpoint(path, {"comp": net}, meta, {"comp": opt})
    return path


def _miou_batch(pred: torch.Tensor, target: torch.Tensor) -> float:
    p = pred > 0.5
    t = target > 0.5
    inter = (p & t).sum(dim=(1, 2, 3)).double()
    union = (p | t).sum(dim=(1, 2, 3)).double()
    iou = torch.where(union > 0, inter / union.clamp(min=1), torch.ones_like(inter))
    return float(iou.mean())


def train_shape(cfg: TrainConfig, resume=None) -> Path:
    """Supervised training of the visible+amodal mask predictor."""
    instances = _load_instances(cfg)
    if any(inst.amodal_mask is None for inst in instances):
        raise ConfigurationError("shape training requires amodal masks for every instance")
    root = Rng(cfg.seed)
    perm = root.child("split").gen.permutation(len(instances))
    n_hold = max(1, math.ceil(cfg.holdout_fraction * len(instances))) if len(instances) > 1 else 0
    holdout = [instances[int(i)] for i in perm[:n_hold]]
    train_set = [instances[int(i)] for i in perm[n_hold:]] or instances

    torch.manual_seed(cfg.seed)
    net = ShapeNet(cfg.channel_mult)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))
    start = 0
    ckpt = _resume_meta(resume)
    if ckpt is not None:
        restore_net(net, ckpt, "shape")
        restore_optimizer(opt, net, ckpt, "shape")
        start = ckpt.meta["step"]
    log = RunLog(cfg.log_path)
    t0 = time.perf_counter()
    last_miou = None
    for step in range(start, cfg.steps):
        step_rng = root.child("shape", step)
        idxs = step_rng.child("batch").integers(0, len(train_set), cfg.batch_size)
        samples = [
            make_shape_sample(train_set[int(i)], step_rng.child("edit", j), cfg.edit_max_pixels)
            for j, i in enumerate(idxs)
        ]
        image = images_to_torch([s.image for s in samples])
        m_edit = masks_to_torch([s.m_edit for s in samples])
        t_vis = masks_to_torch([s.target_vis for s in samples])
        t_amodal = masks_to_torch([s.target_amodal for s in samples])
        net.train()
        pred_vis, pred_amodal = net(image, m_edit)
        total = losses.shape_total_loss(pred_vis, pred_amodal, t_vis, t_amodal, cfg.omega)
        _check_finite(total, "shape", step)
        opt.zero_grad()
        total.backward()
        if cfg.grad_clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip_norm)
        opt.step()
        record = {
            "step": step,
            "total": total.item(),
            "wall_time": time.perf_counter() - t0,
        }
        if holdout and (step % cfg.eval_every == cfg.eval_every - 1 or step == cfg.steps - 1):
            last_miou = evaluate_shape_miou(net, holdout)
            record["holdout_miou"] = last_miou
        log.append(record)

    meta = {
        "net_id": "shape",
        "step": cfg.steps,
        "resolution": cfg.resolution,
        "channel_mult": cfg.channel_mult,
        "holdout_miou": last_miou,
        "config": cfg.to_dict(),
    }
    path = Path(cfg.checkpoint_path)
    save_checkpoint(path, {"shape": net}, meta, {"shape": opt})
    return path


def evaluate_shape_miou(net: ShapeNet, instances, batch_size: int = 16) -> float:
    """Mean amodal-mask IoU with the unedited visible mask as input."""
    was_training = net.training
    net.eval()
    scores = []
    with torch.no_grad():
        for i in range(0, len(instances), batch_size):
            chunk = instances[i : i + batch_size]
            image = images_to_torch([c.image for c in chunk])
            m_edit = masks_to_torch([c.visible_mask for c in chunk])
            t_amodal = masks_to_torch([c.amodal_mask for c in chunk])
            _, pred_amodal = net(image, m_edit)
            scores.append(_miou_batch(pred_amodal, t_amodal) * len(chunk))
    if was_training:
        net.train()
    return sum(scores) / len(instances)


TRAINERS = {"content": train_content, "comp": train_comp, "shape": train_shape}


def run_training(cfg: TrainConfig, resume=None) -> Path:
    return TRAINERS[cfg.net](cfg, resume=resume)
