"""Three-phase training: losses, learning-rate schedules, the phase loop, evaluation."""
import dataclasses
import json
import logging
import math
import zlib
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import PhasePlan, PreprocessConfig
from .data import load_lrw_layout
from .model import load_checkpoint, save_checkpoint
from .preprocess import prepare

log = logging.getLogger(__name__)


class PrerequisiteError(RuntimeError):
    pass


class NumericError(RuntimeError):
    pass


def label_smoothed_ce(logits, targets, eps=0.1):
    """Mean over the batch of ``-sum_i q_i log softmax(logits)_i``,
    with ``q = (1 - eps) * onehot + eps / K``."""
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits")
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    uniform = -logp.mean(dim=-1)
    return ((1 - eps) * nll + eps * uniform).mean()


def smoothed_target_entropy(k, eps):
    """Lower bound of :func:`label_smoothed_ce`: the entropy of the smoothed target."""
    hi = 1 - eps + eps / k
    lo = eps / k
    out = -hi * math.log(hi)
    if lo > 0:
        out -= (k - 1) * lo * math.log(lo)
    return out


def cosine_warm_restart_lr(epoch_progress, lr0, t0=5.0, t_mul=1.0, eta_min=0.0):
    """SGDR cosine annealing with warm restarts at a fractional epoch."""
    if epoch_progress < 0:
        raise ValueError("epoch_progress must be >= 0")
    if t_mul == 1:
        t_cur, t_i = math.fmod(epoch_progress, t0), t0
    else:
        n = int(math.log(epoch_progress / t0 * (t_mul - 1) + 1, t_mul))
        t_cur = epoch_progress - t0 * (t_mul ** n - 1) / (t_mul - 1)
        t_i = t0 * t_mul ** n
    return eta_min + 0.5 * (lr0 - eta_min) * (1 + math.cos(math.pi * t_cur / t_i))


def warmup_lr(step, warmup_steps, scheduled_lr):
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup_steps <= 0:
        return scheduled_lr
    return scheduled_lr * min(1.0, step / warmup_steps)


class Plateau:
    """Counts lr reductions: one each time ``patience`` evaluations in a row
    fail to beat the best loss so far (the counter then restarts)."""

    def __init__(self, factor=2.0, patience=1):
        self.factor, self.patience = factor, patience
        self.best = math.inf
        self.bad = 0
        self.reductions = 0

    def update(self, loss):
        if loss < self.best:
            self.best, self.bad = loss, 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.reductions += 1
                self.bad = 0
        return self.scale

    @property
    def scale(self):
        return self.factor ** -self.reductions


def plateau_reduce(lr, val_losses, factor=2.0, patience=1):
    if not len(val_losses):
        raise ValueError("empty validation history")
    p = Plateau(factor, patience)
    for v in val_losses:
        p.update(v)
    return lr * p.scale


def scheduled_lr(plan: PhasePlan, step, steps_per_epoch, plateau_scale=1.0):
    """Closed-form lr for ``step`` of a phase (before any plateau feedback)."""
    lr = plan.lr0
    for name in plan.schedulers:
        if name == "cosine":
            lr = cosine_warm_restart_lr(step / steps_per_epoch, lr, plan.t0, plan.t_mul, plan.eta_min)
        elif name == "plateau":
            lr = lr * plateau_scale
        elif name == "warmup":
            lr = warmup_lr(step, plan.warmup_steps, lr)
        else:
            raise ValueError(f"unknown scheduler {name!r}")
    return lr


class ClipSet:
    """In-memory clips plus the preprocessing used to turn them into batches.

    Training augmentation draws from ``default_rng([seed, epoch, crc32(id)])``
    per clip, so results do not depend on batch composition or worker order.
    """

    def __init__(self, clips, pre: PreprocessConfig):
        if not clips:
            raise ValueError("empty split")
        self.clips = list(clips)
        self.pre = pre
        self._eval_cache = None

    @classmethod
    def from_layout(cls, root, split, pre, expected_frames=29):
        return cls(list(load_lrw_layout(root, split, expected_frames)), pre)

    def __len__(self):
        return len(self.clips)

    @property
    def labels(self):
        return np.array([c.label for c in self.clips])

    @staticmethod
    def _stack(clips, dtype):
        x = np.stack([c.frames for c in clips]).transpose(0, 4, 1, 2, 3)   # B,C,T,H,W
        return torch.from_numpy(np.ascontiguousarray(x)).to(dtype)

    def eval_batches(self, batch_size, dtype=torch.float32):
        if self._eval_cache is None:
            self._eval_cache = [prepare(c, self.pre)[0] for c in self.clips]
        for i in range(0, len(self.clips), batch_size):
            chunk = self._eval_cache[i:i + batch_size]
            yield self._stack(chunk, dtype), torch.tensor([c.label for c in chunk])

    def train_batches(self, batch_size, seed, epoch, dtype=torch.float32, aug_log=None):
        order = np.random.default_rng([seed, epoch]).permutation(len(self.clips))
        # A trailing batch of one clip is dropped: batch norm over a single
        # length-1 sequence has no variance to normalise by.
        if len(order) % batch_size == 1 and len(order) > 1:
            order = order[:-1]
        for i in range(0, len(order), batch_size):
            chunk = []
            for j in order[i:i + batch_size]:
                clip = self.clips[j]
                rng = np.random.default_rng([seed, epoch, zlib.crc32(clip.clip_id.encode())])
                out, params = prepare(clip, self.pre, rng, train=True)
                if aug_log is not None:
                    aug_log.write(json.dumps({"epoch": epoch, "clip_id": clip.clip_id,
                                              **params.to_json()}) + "\n")
                chunk.append(out)
            yield self._stack(chunk, dtype), torch.tensor([c.label for c in chunk]), \
                [c.clip_id for c in chunk]

    def steps_per_epoch(self, batch_size):
        n = len(self.clips)
        if n % batch_size == 1 and n > 1:
            n -= 1
        return math.ceil(n / batch_size)


def _dtype(model):
    return next(model.parameters()).dtype


@torch.no_grad()
def evaluate(model, data: ClipSet, batch_size=32, eps=None):
    """Top-1 accuracy with eval transforms and no dropout.

    With ``eps`` given, returns ``(accuracy, mean label-smoothed loss)``.
    Ties between logits go to the lower class index.
    """
    was_training = model.training
    model.eval()
    correct = total = 0
    loss_sum = 0.0
    for x, y in data.eval_batches(batch_size, _dtype(model)):
        logits = model(x)
        correct += int((logits.argmax(dim=1) == y).sum())
        total += len(y)
        if eps is not None:
            loss_sum += float(label_smoothed_ce(logits, y, eps)) * len(y)
    model.train(was_training)
    if total == 0:
        raise ValueError("empty split")
    acc = correct / total
    return (acc, loss_sum / total) if eps is not None else acc


def _param_hash(module):
    import hashlib
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def parameter_hash(model, group=None):
    return _param_hash(model if group is None else model.group(group))


def _set_train_mode(model, frozen):
    model.train()
    for name in frozen:
        model.group(name).eval()


def run_phase(model, plan: PhasePlan, train_data: ClipSet, out_dir, val_data: ClipSet = None,
              seed=0, resume=None, log_augment=False, eval_train=True, meta=None):
    """Train one phase; returns the list of metric records also written to
    ``out_dir/metrics.jsonl``.

    Phases 2 and 3 start from the previous phase's checkpoint (``resume``,
    default ``out_dir/phase{p-1}.ckpt``), which is loaded into ``model``.
    Frozen groups get no optimizer and stay in eval mode, so their
    parameters and buffers are untouched. ``meta`` is merged into every
    checkpoint's metadata.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    p = plan.phase_id
    if p > 1:
        resume = Path(resume) if resume else out_dir / f"phase{p - 1}.ckpt"
        if not resume.exists():
            raise PrerequisiteError(f"phase {p} needs the phase {p - 1} checkpoint {resume}")
        prev, prev_meta = load_checkpoint(resume, dtype=_dtype(model))
        if prev_meta.get("phase") != p - 1:
            raise PrerequisiteError(f"{resume} holds phase {prev_meta.get('phase')}, expected {p - 1}")
        model.load_state_dict(prev.state_dict())
    if "plateau" in plan.schedulers and val_data is None:
        raise ValueError("plateau scheduling needs validation data")

    torch.manual_seed(seed * 1000 + p)
    model.use_transformer = plan.use_transformer
    frozen = set(plan.frozen)
    for name in frozen:
        for prm in model.group(name).parameters():
            prm.requires_grad_(False)
    params = [prm for prm in model.parameters() if prm.requires_grad]
    opt = torch.optim.Adam(params, lr=plan.lr0, weight_decay=plan.weight_decay)
    dtype = _dtype(model)

    steps_per_epoch = train_data.steps_per_epoch(plan.batch_size)
    base_meta = {**(meta or {}), "phase": p, "seed": seed,
                 "preprocess": dataclasses.asdict(train_data.pre)}
    info = dict(base_meta)
    plateau = Plateau(plan.plateau_factor, plan.plateau_patience)
    records = []
    metrics = open(out_dir / "metrics.jsonl", "a")
    aug_log = open(out_dir / f"augment_phase{p}.jsonl", "w") if log_augment else None
    step = 0
    try:
        for epoch in range(plan.epochs):
            _set_train_mode(model, frozen)
            for x, y, ids in train_data.train_batches(plan.batch_size, seed, epoch + 100 * p, dtype, aug_log):
                lr = scheduled_lr(plan, step, steps_per_epoch, plateau.scale)
                for g in opt.param_groups:
                    g["lr"] = lr
                logits = model(x)
                if not torch.isfinite(logits).all():
                    _dump(out_dir, p, step, lr, ids, model)
                    raise NumericError(f"non-finite logits at phase {p} step {step}")
                loss = label_smoothed_ce(logits, y, plan.label_smoothing)
                if not torch.isfinite(loss):
                    _dump(out_dir, p, step, lr, ids, model)
                    raise NumericError(f"non-finite loss at phase {p} step {step}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                acc = float((logits.argmax(1) == y).float().mean())
                rec = {"phase": p, "step": step, "lr": lr, "loss": float(loss.detach()), "acc": acc}
                records.append(rec)
                metrics.write(json.dumps(rec) + "\n")
                step += 1
            summary = {"event": "epoch", "phase": p, "epoch": epoch}
            if eval_train:
                summary["train_acc"] = evaluate(model, train_data)
            if val_data is not None:
                summary["val_acc"], summary["val_loss"] = evaluate(model, val_data, eps=plan.label_smoothing)
                if "plateau" in plan.schedulers:
                    plateau.update(summary["val_loss"])
                    summary["plateau_reductions"] = plateau.reductions
            records.append(summary)
            metrics.write(json.dumps(summary) + "\n")
            metrics.flush()
            log.info("phase %d epoch %d: %s", p, epoch, summary)
            info = {**base_meta, "epoch": epoch,
                    **{k: v for k, v in summary.items() if k not in ("event", "phase", "epoch")}}
            save_checkpoint(out_dir / f"phase{p}_epoch{epoch}.ckpt", model, info)
        save_checkpoint(out_dir / f"phase{p}.ckpt", model, info)
    finally:
        metrics.close()
        if aug_log is not None:
            aug_log.close()
        for name in frozen:
            for prm in model.group(name).parameters():
                prm.requires_grad_(True)
    return records


def _dump(out_dir, phase, step, lr, ids, model):
    bad = [n for n, prm in model.named_parameters() if not torch.isfinite(prm).all()]
    with open(Path(out_dir) / f"phase{phase}_nonfinite.json", "w") as fh:
        json.dump({"phase": phase, "step": step, "lr": lr, "clip_ids": ids,
                   "nonfinite_params": bad}, fh, indent=1)


def run_all(model, plans, train_data, out_dir, val_data=None, seed=0, **kw):
    out = []
    for plan in plans:
        out += run_phase(model, plan, train_data, out_dir, val_data, seed, **kw)
    return out
