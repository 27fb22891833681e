"""Finite-difference check of every parameter gradient of the full model.

A tiny random clip with every token kind present is pushed through the full
forward pass and the two-stream loss.  Each parameter tensor is probed on its
largest-magnitude gradient entries, a seeded random sample of entries, and
random-direction directional derivatives, all with central differences.
"""

import contextlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import kernels
from .config import ModalityConfig
from .embeddings import EmbeddingTable, Vocabulary
from .knowledge import GENERAL, KnowledgeTriple
from .tokens import ClipInputs
from .training import caption_targets, two_stream_loss

EPS = 1e-5
TOLERANCE = 1e-4
# gradients below this magnitude are compared in absolute terms: one ulp of
# an O(10) loss divided by 2*EPS is about 2e-10 of rounding noise, and some
# gradients (attention key biases) are exactly zero
GRAD_FLOOR = 1e-5
MAX_D_MODEL = 32


def tiny_config():
    return ModalityConfig(d_model=16, heads=2, n_blocks=2, n_r=2, n_k=2, max_caption=6,
                          max_transcript=8, appearance_dim=3, motion_dim=3, region_dim=5,
                          word_dim=8, max_frames=3, max_objects=2)


def tiny_problem(config, vocab_size=30, seed=0):
    """A random clip using every token kind: (vocab, relations, table, clip)."""
    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(vocab_size - 4)]
    vocab = Vocabulary(words)
    table = EmbeddingTable(config.word_dim, {w: rng.standard_normal(config.word_dim) for w in words})
    relations = ["has_property", "used_for"]
    cats = ["c0", "c1"]
    frames = min(2, config.max_frames)
    n_regions = frames * min(2, config.n_r)
    region_cats = [cats[i % 2] for i in range(n_regions)]
    knowledge = [(KnowledgeTriple(cats[i % 2], relations[i % 2], words[5 + i], GENERAL), cats[i % 2])
                 for i in range(min(3, max(1, config.n_k * config.max_objects)))]
    n_cap = min(4, config.max_caption)
    clip = ClipInputs(
        video_id="gc", clip_id="0",
        video=rng.standard_normal((frames, config.appearance_dim + config.motion_dim)),
        region_feats=rng.standard_normal((n_regions, config.region_dim)),
        region_categories=region_cats,
        transcript=[words[i] for i in rng.integers(0, len(words), min(4, config.max_transcript))],
        captions=[[words[i] for i in rng.integers(0, len(words), n_cap)]],
        candidates=cats,
        knowledge=knowledge,
    )
    return vocab, relations, table, clip


@dataclass
class GroupResult:
    name: str
    size: int
    checked: int
    max_rel_error: float


@dataclass
class GradCheckReport:
    groups: list = field(default_factory=list)
    tolerance: float = TOLERANCE
    seconds: float = 0.0

    @property
    def max_rel_error(self):
        return max((g.max_rel_error for g in self.groups), default=0.0)

    @property
    def passed(self):
        return all(g.max_rel_error < self.tolerance for g in self.groups)

    def lines(self):
        out = [f"{g.name}\t{g.size}\t{g.checked}\t{g.max_rel_error:.3e}\t"
               f"{'ok' if g.max_rel_error < self.tolerance else 'FAIL'}" for g in self.groups]
        out.append(f"overall\t{sum(g.size for g in self.groups)}\t{sum(g.checked for g in self.groups)}"
                   f"\t{self.max_rel_error:.3e}\t{'ok' if self.passed else 'FAIL'}")
        return out


def rel_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_FLOOR)


@contextlib.contextmanager
def corrupted_backward(kernel="gelu_backward", scale=1.01):
    """Test hook: scale the output of one backward kernel (negative control)."""
    original = getattr(kernels, kernel)

    def broken(*args):
        out = original(*args)
        if isinstance(out, tuple):
            return tuple(scale * o for o in out)
        return scale * out

    setattr(kernels, kernel, broken)
    try:
        yield
    finally:
        setattr(kernels, kernel, original)


def grad_check(config=None, seed=0, vocab_size=30, top=4, random_entries=4, directions=2,
               lambda1=0.5, lambda2=0.5):
    """Run the suite; returns a GradCheckReport with one group per parameter."""
    from .model import TextKGModel

    config = config or tiny_config()
    if config.d_model > MAX_D_MODEL:
        raise ValueError(f"grad check needs d_model <= {MAX_D_MODEL}, got {config.d_model}")
    start = time.perf_counter()
    vocab, relations, table, clip = tiny_problem(config, vocab_size, seed)
    model = TextKGModel(config, vocab, relations, table, seed=seed)
    targets = caption_targets(vocab, clip.caption)

    def loss_value():
        with ag.no_grad():
            z_ext, z_int = model(clip, clip.caption)
            return float(two_stream_loss(z_ext, z_int, targets, lambda1, lambda2).data)

    model.zero_grad()
    z_ext, z_int = model(clip, clip.caption)
    ag.backward(two_stream_loss(z_ext, z_int, targets, lambda1, lambda2))
    rng = np.random.default_rng(seed + 1)
    report = GradCheckReport()
    for name, p in model.params.items():
        flat = p.data.reshape(-1)
        grad = p.grad.reshape(-1).copy()
        picks = list(np.argsort(-np.abs(grad), kind="stable")[:top])
        picks += [int(i) for i in rng.integers(0, flat.size, random_entries)]
        worst = 0.0
        for i in dict.fromkeys(picks):
            old = flat[i]
            flat[i] = old + EPS
            up = loss_value()
            flat[i] = old - EPS
            down = loss_value()
            flat[i] = old
            worst = max(worst, rel_error(grad[i], (up - down) / (2 * EPS)))
        base = flat.copy()
        for _ in range(directions):
            u = rng.standard_normal(flat.size)
            u /= np.linalg.norm(u)
            flat[:] = base + EPS * u
            up = loss_value()
            flat[:] = base - EPS * u
            down = loss_value()
            flat[:] = base
            worst = max(worst, rel_error(float(grad @ u), (up - down) / (2 * EPS)))
        report.groups.append(GroupResult(name, flat.size, len(dict.fromkeys(picks)) + directions, worst))
    report.seconds = time.perf_counter() - start
    return report
