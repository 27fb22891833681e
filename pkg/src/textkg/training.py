"""Teacher-forced training under the two-stream loss."""

import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .data import clip_knowledge
from .embeddings import EOS_ID, PAD_ID
from .optim import AdamState, LrSchedule, TrainingDivergence, adam_step, lr_at

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class AblationError(ValueError):
    pass


def two_stream_loss(z_ext, z_int, targets, lambda1=0.5, lambda2=0.5):
    """-sum_i (lambda1 log z_ext[i, t_i] + lambda2 log z_int[i, t_i]), PAD rows skipped."""
    targets = np.asarray(targets, dtype=np.int64)
    n, vocab = z_ext.shape
    if z_int.shape != z_ext.shape:
        raise ValueError(f"stream outputs differ in shape: {z_ext.shape} vs {z_int.shape}")
    if len(targets) != n:
        raise ValueError(f"{len(targets)} targets for {n} caption rows")
    if len(targets) and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"target index outside vocabulary of size {vocab}")
    keep = (targets != PAD_ID).astype(np.float64)
    loss = None
    for z, lam in ((z_ext, lambda1), (z_int, lambda2)):
        if lam == 0:
            continue
        term = ag.sum(ag.mul(ag.log(ag.pick(z, targets), floor=LOG_FLOOR), -lam * keep))
        loss = term if loss is None else ag.add(loss, term)
    return loss if loss is not None else ag.Tensor(0.0)


def caption_targets(vocab, words):
    """Next-word targets for the inputs BOS + words: words + EOS."""
    return vocab.encode(words) + [EOS_ID]


def apply_ablation(clip, switches, kg=None, table=None, config=None):
    """Return a copy of ``clip`` with disabled modalities emptied.

    Knowledge is (re)selected from ``clip.candidates`` under the KG switches;
    without knowledge selection the retrieval order is truncated to N_k.
    """
    if not (switches.use_video or switches.use_regions or switches.use_text or switches.use_kg):
        raise AblationError("every input modality is disabled")
    changes = {}
    if not switches.use_video:
        changes["video"] = clip.video[:0]
    if not switches.use_regions:
        changes["region_feats"] = clip.region_feats[:0]
        changes["region_categories"] = []
    if not switches.use_text:
        changes["transcript"] = []
    if kg is not None and config is not None:
        changes["knowledge"] = clip_knowledge(clip, kg, table, config, switches)
    elif not switches.use_kg:
        changes["knowledge"] = []
    return clip.copy(**changes)


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0
    checkpoint: str = ""


def clip_loss(model, clip, lambda1, lambda2):
    words = clip.caption
    z_ext, z_int = model(clip, words)
    return two_stream_loss(z_ext, z_int, caption_targets(model.vocab, words), lambda1, lambda2)


def train(model, clips, config, out_dir=None, on_epoch=None):
    """Optimize ``model`` on prepared clips.

    Gradients are averaged over ``batch_size`` clips per Adam step; the
    learning rate follows ``lr_at`` over all steps.  Writes ``model.tkg`` and
    ``metrics.tsv`` into ``out_dir`` when given.
    """
    if not clips:
        raise ValueError("training set is empty")
    start = time.perf_counter()
    report = TrainReport()
    params = model.parameters()
    n_batches = math.ceil(len(clips) / config.batch_size)
    total = config.epochs * n_batches
    state = AdamState(weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    metrics = []
    if total:
        schedule = LrSchedule(total, config.base_lr, config.warmup_fraction)
    for epoch in range(config.epochs):
        order = rng.permutation(len(clips))
        losses = []
        lr = 0.0
        for b in range(n_batches):
            batch = [clips[i] for i in order[b * config.batch_size:(b + 1) * config.batch_size]]
            model.zero_grad()
            for clip in batch:
                loss = clip_loss(model, clip, config.lambda1, config.lambda2)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingDivergence(f"non-finite loss on clip {clip.video_id}/{clip.clip_id}")
                losses.append(value)
                ag.backward(ag.mul(loss, 1.0 / len(batch)))
            report.steps += 1
            lr = lr_at(schedule, report.steps)
            report.lr_trace.append(lr)
            adam_step(params, state, lr)
        mean = float(np.mean(losses))
        report.epoch_loss.append(mean)
        metrics.append(f"{epoch + 1}\t{mean!r}\t{lr!r}")
        log.info("epoch %d loss %.6f lr %.3g", epoch + 1, mean, lr)
        if on_epoch is not None and on_epoch(epoch, mean) is False:
            break
    report.wall_time = time.perf_counter() - start
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.checkpoint = os.path.join(out_dir, "model.tkg")
        model.save(report.checkpoint)
        with open(os.path.join(out_dir, "metrics.tsv"), "w", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in metrics))
    return report


def evaluate_loss(model, clips, lambda1=0.5, lambda2=0.5):
    """Mean per-clip loss, no graph built."""
    with ag.no_grad():
        return float(np.mean([float(clip_loss(model, c, lambda1, lambda2).data) for c in clips]))
