"""Alternating D1 / D2 / G updates, learning-rate schedule, checkpointed fitting."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, restore_into, save_checkpoint
from .dataset import GALLERY_POSE, ImageRecord, align_face, apply_transform
from .images import read_image, read_masks
from .losses import (
    LossBreakdown,
    LossWeights,
    adversarial_loss,
    identity_loss,
    pixel_loss,
    total_generator_loss,
    tv_loss,
    weighted_sum,
)
from .networks import ConvIdentityExtractor, Generator, GlobalDiscriminator, LocalDiscriminator
from .parsing import LandmarkParser, apply_attention_batch, parse_masks


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 2e-4
    lr_decay_per_epoch: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    image_size: int = 128
    max_steps: int | None = None
    align: bool = True
    gen_base: int = 32
    gen_res: int = 2
    disc_base: int = 32
    local_base: int = 16
    extractor_seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("weights"), dict):
            data["weights"] = LossWeights(**data["weights"])
        elif isinstance(data.get("weights"), (list, tuple)):
            data["weights"] = LossWeights(*data["weights"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Linear decay: lr0 minus one decrement per completed epoch, floored at 0."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return max(0.0, config.lr0 - epoch * config.lr_decay_per_epoch)


@dataclass
class Models:
    generator: Generator
    d_global: GlobalDiscriminator
    d_local: LocalDiscriminator
    extractor: ConvIdentityExtractor
    opt_g: torch.optim.Adam
    opt_d1: torch.optim.Adam
    opt_d2: torch.optim.Adam

    def trainable(self) -> dict:
        return {"generator": self.generator, "d_global": self.d_global, "d_local": self.d_local}

    def all_models(self) -> dict:
        return dict(self.trainable(), extractor=self.extractor)

    def optimizers(self) -> dict:
        return {"generator": self.opt_g, "d_global": self.opt_d1, "d_local": self.opt_d2}

    def set_lr(self, lr: float) -> None:
        for opt in self.optimizers().values():
            for group in opt.param_groups:
                group["lr"] = lr


def build_models(config: TrainConfig, dtype=torch.float32) -> Models:
    s = config.seed
    g = Generator(config.image_size, base=config.gen_base, n_res=config.gen_res, seed=s).to(dtype)
    d1 = GlobalDiscriminator(base=config.disc_base, seed=s + 1).to(dtype)
    d2 = LocalDiscriminator(base=config.local_base, seed=s + 2).to(dtype)
    ext = ConvIdentityExtractor(seed=config.extractor_seed).to(dtype)

    def adam(m):
        return torch.optim.Adam(
            m.parameters(), lr=config.lr0, betas=(config.beta1, config.beta2), eps=config.adam_eps, weight_decay=0.0
        )

    return Models(g, d1, d2, ext, adam(g), adam(d1), adam(d2))


@dataclass
class StepTrace:
    step: int
    epoch: int
    lr: float
    losses: LossBreakdown
    d1_loss: float
    d2_loss: float
    d1_real: float
    d1_fake: float
    d2_real: float
    d2_fake: float
    mask_checksum: float
    wall_time: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["losses"] = self.losses.as_dict()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "StepTrace":
        d = dict(d)
        d["losses"] = LossBreakdown(**d["losses"])
        return cls(**d)


def _check_finite(name: str, value: float, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"step {step}: non-finite loss {name} = {value}")


def train_step(models: Models, batch, config: TrainConfig, step: int = 0, epoch: int = 0) -> StepTrace:
    """One alternating update: D1, then D2, then G.

    ``batch`` is (X, Y, masks) with X, Y of shape (N, 3, S, S) and masks
    (N, 3, S, S) holding hair/skin/face planes computed from Y. The same
    masks weight both the real and the synthesized image.
    """
    t0 = time.perf_counter()
    x, y, masks = batch
    g, d1, d2 = models.generator, models.d_global, models.d_local
    lr = models.opt_g.param_groups[0]["lr"]

    y_hat = g(x)
    fake = y_hat.detach()
    real_views = apply_attention_batch(y, masks)
    fake_views = apply_attention_batch(fake, masks)

    for p in g.parameters():
        p.requires_grad_(False)
    models.opt_d1.zero_grad(set_to_none=True)
    p_real1, p_fake1 = d1(y), d1(fake)
    loss_d1 = adversarial_loss(p_real1, p_fake1, "discriminator")
    _check_finite("d1_loss", loss_d1.item(), step)
    loss_d1.backward()
    models.opt_d1.step()

    models.opt_d2.zero_grad(set_to_none=True)
    p_real2, p_fake2 = d2(*real_views), d2(*fake_views)
    loss_d2 = adversarial_loss(p_real2, p_fake2, "discriminator")
    _check_finite("d2_loss", loss_d2.item(), step)
    loss_d2.backward()
    models.opt_d2.step()
    for p in g.parameters():
        p.requires_grad_(True)

    for m in (d1, d2):
        for p in m.parameters():
            p.requires_grad_(False)
    models.opt_g.zero_grad(set_to_none=True)
    parts = (
        pixel_loss(y_hat, y),
        adversarial_loss(None, d1(y_hat), "generator"),
        adversarial_loss(None, d2(*apply_attention_batch(y_hat, masks)), "generator"),
        identity_loss(y_hat, y, models.extractor),
        tv_loss(y_hat),
    )
    for name, part in zip(("l_pixel", "l_adv1", "l_adv2", "l_id", "l_tv"), parts):
        _check_finite(name, part.item(), step)
    weighted_sum(parts, config.weights).backward()
    models.opt_g.step()
    for m in (d1, d2):
        for p in m.parameters():
            p.requires_grad_(True)

    return StepTrace(
        step=step,
        epoch=epoch,
        lr=lr,
        losses=total_generator_loss(parts, config.weights),
        d1_loss=loss_d1.item(),
        d2_loss=loss_d2.item(),
        d1_real=p_real1.mean().item(),
        d1_fake=p_fake1.mean().item(),
        d2_real=p_real2.mean().item(),
        d2_fake=p_fake2.mean().item(),
        mask_checksum=float(masks.sum().item()),
        wall_time=time.perf_counter() - t0,
    )


# -- data ---------------------------------------------------------------------


class PairDataset:
    """In-memory (X, Y, masks) triples, float tensors in NCHW layout."""

    def __init__(self, x, y, masks, records=None):
        if not (len(x) == len(y) == len(masks)):
            raise ValueError("x, y and masks must have the same length")
        self.x = torch.as_tensor(x)
        self.y = torch.as_tensor(y)
        self.masks = torch.as_tensor(masks)
        self.records = records

    def __len__(self) -> int:
        return len(self.x)

    def to(self, dtype) -> "PairDataset":
        return PairDataset(self.x.to(dtype), self.y.to(dtype), self.masks.to(dtype), self.records)

    def batch(self, idx):
        idx = torch.as_tensor(np.asarray(idx, dtype=np.int64))
        return self.x[idx], self.y[idx], self.masks[idx]


def frontal_partner(records) -> dict:
    """Map (subject, attribute, illumination) -> the frontal record for that combination."""
    table = {}
    for r in records:
        if r.pose == GALLERY_POSE:
            table[(r.subject_id, r.attribute, r.illumination)] = r
    return table


def load_aligned(record: ImageRecord, root: Path, size: int, align: bool):
    """Image (H, W, C) in [-1, 1] plus its landmarks in output coordinates."""
    img = read_image(root / record.image_ref)
    lm = record.landmark_array()
    if align:
        img, tform = align_face(img, lm, out_size=size, return_transform=True)
        lm = apply_transform(tform, lm)
    elif img.shape[:2] != (size, size):
        raise ValueError(f"{record.image_ref}: image is {img.shape[:2]}, expected {size}x{size} (align disabled)")
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return img, lm


def build_pair_dataset(records, root, size: int, align: bool = True, parser=None) -> PairDataset:
    """Pair every non-frontal record with its same-attribute, same-lighting frontal image."""
    root = Path(root)
    parser = parser or LandmarkParser()
    partners = frontal_partner(records)
    cache = {}
    xs, ys, ms, used = [], [], [], []
    for rec in records:
        if rec.pose == GALLERY_POSE:
            continue
        key = (rec.subject_id, rec.attribute, rec.illumination)
        front = partners.get(key)
        if front is None:
            raise ValueError(f"no frontal image for subject {rec.subject_id} ({rec.attribute}, {rec.illumination})")
        if key not in cache:
            y_img, y_lm = load_aligned(front, root, size, align)
            if front.mask_ref is not None:
                planes = read_masks(root / front.mask_ref)
                if planes.shape[1:] != (size, size):
                    raise ValueError(f"{front.mask_ref}: mask size {planes.shape[1:]} != {size}")
            else:
                planes = parse_masks(y_img, parser, y_lm).stack()
            cache[key] = (y_img.transpose(2, 0, 1), planes)
        x_img, _ = load_aligned(rec, root, size, align)
        xs.append(x_img.transpose(2, 0, 1))
        ys.append(cache[key][0])
        ms.append(cache[key][1])
        used.append(rec)
    if not xs:
        raise ValueError("no non-frontal training records")
    to_t = lambda a: torch.from_numpy(np.stack(a).astype(np.float32))
    return PairDataset(to_t(xs), to_t(ys), to_t(ms), used)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


# -- fitting ------------------------------------------------------------------

LATEST = "LATEST"


def checkpoint_name(epoch: int, batch_index: int) -> str:
    if batch_index == 0:
        return f"epoch-{epoch:04d}.ckpt"
    return f"epoch-{epoch:04d}-b{batch_index:05d}.ckpt"


def fit(models: Models, dataset: PairDataset, config: TrainConfig, checkpoint_dir, trace_path=None, resume: bool = True):
    """Train for ``config.epochs`` epochs (or until ``config.max_steps``).

    Writes a checkpoint after every epoch (and when stopping on max_steps)
    with a LATEST pointer, and appends one JSON line per step to the trace
    log. If ``resume`` and a LATEST checkpoint exists, training continues
    from that position with the same batch order and schedule.

    Returns (models, traces) where traces are this call's StepTraces.
    """
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    ckdir = Path(checkpoint_dir)
    try:
        ckdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CheckpointError(f"cannot create checkpoint dir {ckdir}: {exc}") from exc
    trace_path = Path(trace_path) if trace_path else ckdir / "trace.jsonl"

    start_epoch, start_batch, step = 0, 0, 0
    latest = ckdir / LATEST
    if resume and latest.exists():
        header = restore_into(ckdir / latest.read_text().strip(), models.trainable(), models.optimizers())
        meta = header["meta"]
        start_epoch, start_batch, step = meta["epoch"], meta["batch_index"], meta["step"]

    n = len(dataset)
    bs = config.batch_size
    n_batches = math.ceil(n / bs)
    traces = []
    done = False

    def save(epoch, batch_index):
        name = checkpoint_name(epoch, batch_index)
        save_checkpoint(
            ckdir / name,
            models.trainable(),
            models.optimizers(),
            seed=config.seed,
            step=step,
            epoch=epoch,
            batch_index=batch_index,
            config=config.to_dict(),
        )
        tmp = ckdir / (LATEST + ".tmp")
        tmp.write_text(name + "\n")
        tmp.replace(latest)

    models.extractor.eval()
    with open(trace_path, "a", encoding="utf-8") as log:
        for epoch in range(start_epoch, config.epochs):
            models.set_lr(lr_at_epoch(config, epoch))
            order = epoch_order(n, config.seed, epoch)
            first = start_batch if epoch == start_epoch else 0
            for b in range(first, n_batches):
                if config.max_steps is not None and step >= config.max_steps:
                    save(epoch, b)
                    done = True
                    break
                batch = dataset.batch(order[b * bs : (b + 1) * bs])
                trace = train_step(models, batch, config, step=step, epoch=epoch)
                step += 1
                traces.append(trace)
                log.write(json.dumps(trace.to_json()) + "\n")
                log.flush()
            if done:
                break
            save(epoch + 1, 0)
    return models, traces


def read_trace(path) -> list[StepTrace]:
    with open(path, encoding="utf-8") as fh:
        return [StepTrace.from_json(json.loads(line)) for line in fh if line.strip()]


def parameter_snapshot(module: torch.nn.Module) -> dict[str, bytes]:
    """Raw bytes of every parameter and buffer, for bit-exact comparisons."""
    return {k: v.detach().cpu().numpy().tobytes() for k, v in module.state_dict().items()}
