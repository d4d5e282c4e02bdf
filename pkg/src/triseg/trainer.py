"""Joint SGD training of the three networks: scribble partial cross-entropy
plus dice against the mixed pseudo label, polynomial learning-rate decay,
periodic validation, and best-checkpoint selection.

Run directory contract: ``config.txt`` (flat key=value echo), ``loss.csv``
(iter,pce1,pce2,pce3,dice1,dice2,dice3,total), ``val.csv``, ``best.ckpt``
(WMUC format), ``report.csv`` (test metrics of the best checkpoint).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .tensor import Tensor, softmax_channels
from . import backbones, checkpoint
from .data import DatasetIndex, load_index, load_sample
from .losses import LossBreakdown, pce_loss, total_loss
from .metrics import confusion_metrics, evaluate
from .mixer import sample_mix_weights, mix_pseudo

__all__ = ["TrainConfig", "RunState", "sgd_step", "train_iteration", "fit",
           "fit_baseline_pce", "load_networks", "ensemble_predict"]

_KIND_CODE = {"cnn": 0.0, "attn": 1.0, "ssm": 2.0}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    val_every: int = 200
    seed: int = 0
    backbones: tuple = ("cnn", "attn", "ssm")
    image_size: int = 64
    width: int = 16
    num_classes: int = 4
    coverage: float = 0.5
    lr_decay_power: float = 0.9
    loss_mode: str = "mean"  # mean | sum over scribbled pixels
    augment: bool = False

    def __post_init__(self):
        if isinstance(self.backbones, (list, str)):
            bb = self.backbones.split(",") if isinstance(self.backbones, str) \
                else self.backbones
            self.backbones = tuple(s.strip() for s in bb)
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.val_every > self.iterations:
            raise ValueError("val_every must not exceed iterations")
        for k in self.backbones:
            if k not in backbones.BACKBONE_KINDS:
                raise ValueError(f"unknown backbone kind {k!r}")

    def echo(self) -> str:
        d = asdict(self)
        d["backbones"] = ",".join(self.backbones)
        return "".join(f"{k}={d[k]}\n" for k in sorted(d))


@dataclass
class RunState:
    iteration: int = 0
    velocities: list = field(default_factory=list)  # per net: name -> ndarray
    best_val_dice: float = -1.0
    loss_history: list = field(default_factory=list)


def _lr_at(cfg: TrainConfig, it: int) -> float:
    return cfg.lr0 * (1.0 - it / cfg.iterations) ** cfg.lr_decay_power


def _consistency_at(cfg: TrainConfig, it: int) -> float:
    """Weight of the pseudo-label dice term, ramped from ~0 to 1 over the
    run.  An immediate full-strength consensus pull freezes the networks'
    early coarse agreement (pseudo-label confirmation bias); ramping lets
    the scribble term shape the predictions first."""
    return float(np.exp(-5.0 * (1.0 - it / cfg.iterations) ** 2))


def sgd_step(params: dict[str, Tensor], velocity: dict[str, np.ndarray],
             lr: float, momentum: float, weight_decay: float):
    """v <- momentum*v + (g + wd*p); p <- p - lr*v (in place)."""
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise RuntimeError(f"non-finite gradient in parameter {name!r}")
        v = velocity.get(name)
        upd = g + weight_decay * p.data
        v = upd if v is None else momentum * v + upd
        velocity[name] = v
        p.data = p.data - lr * v


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_iteration(nets, batch, rng: np.random.Generator, state: RunState,
                    cfg: TrainConfig) -> LossBreakdown:
    """One joint update of all three networks on (images, scribbles)."""
    images, scribs = batch
    probs = [softmax_channels(net.forward(images)) for net in nets]
    w = sample_mix_weights(rng)
    pseudo = mix_pseudo(probs[0].data, probs[1].data, probs[2].data, w)
    breakdown, per_net = total_loss(probs, scribs, pseudo, cfg.loss_mode,
                                    _consistency_at(cfg, state.iteration))
    if not np.isfinite(breakdown.total):
        raise RuntimeError(
            f"non-finite loss at iteration {state.iteration}: {breakdown}")
    lr = _lr_at(cfg, state.iteration)
    for net, loss, vel in zip(nets, per_net, state.velocities):
        net.zero_grad()
        loss.backward()
        sgd_step(net.params, vel, lr * net.LR_SCALE, cfg.momentum,
                 cfg.weight_decay)
    state.iteration += 1
    state.loss_history.append(breakdown.total)
    return breakdown


def _load_batch(index, ids, split, cfg, rng=None):
    images, labels = [], []
    for sid in ids:
        img, lab = load_sample(index, sid, split, cfg.image_size,
                               cfg.num_classes)
        if cfg.augment and rng is not None:
            if rng.random() < 0.5:
                img, lab = img[:, :, ::-1], lab[:, ::-1]
            rot = int(rng.integers(4))
            img = np.rot90(img, rot, axes=(1, 2))
            lab = np.rot90(lab, rot, axes=(0, 1))
        images.append(np.ascontiguousarray(img))
        labels.append(np.ascontiguousarray(lab))
    return np.stack(images), np.stack(labels)


def ensemble_predict(nets, image: np.ndarray) -> np.ndarray:
    """Per-pixel argmax of the equal-weight mean of the networks' softmax
    probabilities; `image` is (1,H,W) or (N,1,H,W)."""
    batch = image[None] if image.ndim == 3 else image
    acc = None
    for net in nets:
        p = _softmax_np(net.forward(batch).data)
        acc = p if acc is None else acc + p
    pred = acc.argmax(axis=1).astype(np.uint8)
    return pred[0] if image.ndim == 3 else pred


def _mean_fg_dice(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> float:
    return float(np.mean([confusion_metrics(pred, gt, k)[0]
                          for k in range(1, num_classes)]))


def _validate(nets, index, cfg) -> tuple[list[float], float]:
    per_net = [[] for _ in nets]
    ens = []
    for sid in index.ids("val"):
        img, gt = load_sample(index, sid, "val", cfg.image_size, cfg.num_classes)
        batch = img[None]
        probs = [_softmax_np(net.forward(batch).data) for net in nets]
        for i, p in enumerate(probs):
            per_net[i].append(_mean_fg_dice(
                p.argmax(axis=1)[0], gt, cfg.num_classes))
        mean_p = sum(probs) / len(probs)
        ens.append(_mean_fg_dice(mean_p.argmax(axis=1)[0], gt, cfg.num_classes))
    return [float(np.mean(d)) for d in per_net], float(np.mean(ens))


def _save_checkpoint(path, nets, cfg):
    tensors = {"meta/arch": np.array(
        [len(nets), cfg.image_size, cfg.width, cfg.num_classes]
        + [_KIND_CODE[n.kind] for n in nets], np.float32)}
    for i, net in enumerate(nets):
        for name, arr in net.state_dict().items():
            tensors[f"net{i}/{name}"] = arr
    checkpoint.save_tensors(path, tensors)


def load_networks(path):
    """Rebuild and restore the networks stored in a checkpoint."""
    tensors = checkpoint.load_tensors(path)
    meta = tensors["meta/arch"]
    n_nets, image_size, width, num_classes = (int(v) for v in meta[:4])
    nets = []
    for i in range(n_nets):
        kind = _CODE_KIND[float(meta[4 + i])]
        net = backbones.build(kind, image_size, num_classes, width, seed=0)
        net.load_state({name[len(f"net{i}/"):]: arr
                        for name, arr in tensors.items()
                        if name.startswith(f"net{i}/")})
        nets.append(net)
    return nets


def _run(cfg: TrainConfig, index: DatasetIndex, out_dir, nets,
         pce_only: bool) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    rng = np.random.default_rng(cfg.seed)
    state = RunState(velocities=[{} for _ in nets])
    train_ids = index.ids("train")
    loss_rows = ["iter,pce1,pce2,pce3,dice1,dice2,dice3,total\n"]
    val_rows = ["iter,%s,ensemble,is_best\n"
                % ",".join(f"dice{i+1}" for i in range(len(nets)))]
    best_path = out / "best.ckpt"
    for it in range(cfg.iterations):
        ids = list(rng.choice(train_ids, size=cfg.batch_size,
                              replace=len(train_ids) < cfg.batch_size))
        images, scribs = _load_batch(index, ids, "train", cfg, rng)
        if pce_only:
            net = nets[0]
            logits = net.forward(images)
            loss = pce_loss(softmax_channels(logits), scribs, cfg.loss_mode)
            if not np.isfinite(loss.item()):
                raise RuntimeError(f"non-finite loss at iteration {it}")
            net.zero_grad()
            loss.backward()
            sgd_step(net.params, state.velocities[0],
                     _lr_at(cfg, it) * net.LR_SCALE,
                     cfg.momentum, cfg.weight_decay)
            state.iteration += 1
            bd = LossBreakdown([loss.item(), 0.0, 0.0], [0.0, 0.0, 0.0],
                               loss.item())
        else:
            bd = train_iteration(nets, (images, scribs), rng, state, cfg)
        loss_rows.append(
            f"{it},{bd.pce[0]:.6f},{bd.pce[1]:.6f},{bd.pce[2]:.6f},"
            f"{bd.dice[0]:.6f},{bd.dice[1]:.6f},{bd.dice[2]:.6f},"
            f"{bd.total:.6f}\n")
        if (it + 1) % cfg.val_every == 0 or it + 1 == cfg.iterations:
            per_net, ens = _validate(nets, index, cfg)
            is_best = ens > state.best_val_dice
            if is_best:
                state.best_val_dice = ens
                _save_checkpoint(best_path, nets, cfg)
            val_rows.append(f"{it + 1}," +
                            ",".join(f"{d:.6f}" for d in per_net) +
                            f",{ens:.6f},{int(is_best)}\n")
    (out / "loss.csv").write_text("".join(loss_rows))
    (out / "val.csv").write_text("".join(val_rows))
    best_nets = load_networks(best_path)
    evaluate(lambda img: ensemble_predict(best_nets, img), index, "test",
             cfg.image_size, cfg.num_classes, csv_path=out / "report.csv")
    return out


def fit(cfg: TrainConfig, data_root, out_dir) -> Path:
    """Train the configured backbone triple; returns the run directory."""
    index = load_index(data_root)
    if len(cfg.backbones) != 3:
        raise ValueError("fit expects exactly three backbones")
    nets = [backbones.build(kind, cfg.image_size, cfg.num_classes, cfg.width,
                            seed=cfg.seed + i)
            for i, kind in enumerate(cfg.backbones)]
    return _run(cfg, index, out_dir, nets, pce_only=False)


def fit_baseline_pce(cfg: TrainConfig, data_root, out_dir) -> Path:
    """Single-network scribble baseline: partial cross-entropy only."""
    index = load_index(data_root)
    net = backbones.build(cfg.backbones[0], cfg.image_size, cfg.num_classes,
                          cfg.width, seed=cfg.seed)
    return _run(cfg, index, out_dir, [net], pce_only=True)
