"""The two-stream transformer: parameters, forward pass, fusion and decoding."""

import json
import struct

import numpy as np

from . import autograd as ag
from .embeddings import EOS_ID, Vocabulary
from .masks import build_cross_mask, build_external_mask, build_internal_mask
from .tokens import (CAPTION, EXTERNAL, INTERNAL, KINDS, KNOWLEDGE, REGION, TRANSCRIPT, VIDEO,
                     assemble_external, assemble_internal, make_caption_tokens,
                     make_knowledge_tokens, make_text_tokens, _project)

MAGIC = b"TKG1"
TIE_TOLERANCE = 1e-12
STREAMS = (EXTERNAL, INTERNAL)
MODULES = ("self", "cross")


class CheckpointError(ValueError):
    pass


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class TextKGModel:
    """All learnable parameters plus the pieces needed to run them.

    ``params`` is an insertion-ordered dict name -> Parameter; the order is
    the checkpoint order and the initialization order.
    """

    def __init__(self, config, vocab, relations, table, seed=0):
        self.config = config.validate()
        self.vocab = vocab
        self.relations = list(relations)
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self.table = table
        self.params = {}
        self.omega = (config.omega1, config.omega2)
        self._init_params(np.random.default_rng(seed))

    # -------------------------------------------------------------- parameters

    def _add(self, name, data, decay):
        self.params[name] = ag.Parameter(data, name=name, decay=decay)

    def _linear(self, rng, name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        self._add(name + ".w", _uniform(rng, (fan_in, fan_out), bound), True)
        self._add(name + ".b", np.zeros(fan_out), False)

    def _norm(self, name, d):
        self._add(name + ".gain", np.ones(d), False)
        self._add(name + ".bias", np.zeros(d), False)

    def _init_params(self, rng):
        c = self.config
        d = c.d_model
        self._linear(rng, "tok.video", c.appearance_dim + c.motion_dim, d)
        self._linear(rng, "tok.region", c.region_dim, d)
        self._linear(rng, "tok.word", c.word_dim, d)
        self._add("tok.bos", _uniform(rng, (d,), 0.1), False)
        self._add("tok.relation", _uniform(rng, (len(self.relations) + 1, c.word_dim),
                                           1.0 / np.sqrt(c.word_dim)), False)
        sizes = {REGION: c.n_r * c.max_frames, KNOWLEDGE: max(1, c.n_k * c.max_objects),
                 TRANSCRIPT: c.max_transcript, CAPTION: c.max_caption + 1, VIDEO: c.max_frames}
        for kind in KINDS:
            self._add(f"pos.{kind}", _uniform(rng, (sizes[kind], d), 0.1), False)
        for stream in STREAMS:
            self._add(f"type.{stream}", _uniform(rng, (len(KINDS), d), 0.1), False)
        hidden = c.ffn_mult * d
        for stream in STREAMS:
            for b in range(c.n_blocks):
                for mod in MODULES:
                    pre = f"{stream}.{b}.{mod}"
                    for m in ("q", "k", "v", "o"):
                        self._linear(rng, f"{pre}.attn.{m}", d, d)
                    self._norm(f"{pre}.ln1", d)
                    self._linear(rng, f"{pre}.ffn.1", d, hidden)
                    self._linear(rng, f"{pre}.ffn.2", hidden, d)
                    self._norm(f"{pre}.ln2", d)
        for stream in STREAMS:
            self._linear(rng, f"head.{stream}", d, len(self.vocab))

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def p(self, name):
        return self.params[name]

    def _lin(self, name):
        return self.params[name + ".w"], self.params[name + ".b"]

    # -------------------------------------------------------------- tokens

    def positions(self):
        return {kind: self.params[f"pos.{kind}"] for kind in KINDS}

    def encode(self, clip, caption_words):
        """Assemble both streams for ``clip`` with the given caption prefix."""
        c = self.config
        word = self._lin("tok.word")
        transcript = make_text_tokens(clip.transcript, self.table, c.max_transcript, word)
        caption = make_caption_tokens(caption_words, self.table, c.max_caption, word,
                                      self.params["tok.bos"])
        regions = _project(clip.region_feats.reshape(len(clip.region_categories), c.region_dim),
                           self._lin("tok.region"))
        knowledge, kcats = make_knowledge_tokens(clip.knowledge, self.table,
                                                 self.params["tok.relation"],
                                                 self.relation_index, self._lin("tok.word"))
        video = _project(clip.video.reshape(-1, c.appearance_dim + c.motion_dim),
                         self._lin("tok.video"))
        pos = self.positions()
        ext = assemble_external(regions, knowledge, transcript, caption, pos,
                                self.params["type.external"], clip.region_categories, kcats)
        int_ = assemble_internal(transcript, caption, video, pos, self.params["type.internal"])
        return ext, int_

    # -------------------------------------------------------------- blocks

    def attention(self, prefix, x_q, x_kv, mask, allow_empty=False, trace=None):
        return attention_sublayer(x_q, x_kv, mask, self._attn_params(prefix), self.config.heads,
                                  allow_empty=allow_empty, trace=trace)

    def _attn_params(self, prefix):
        p = self.params
        out = {}
        for m in "qkvo":
            out[m + "w"] = p[f"{prefix}.attn.{m}.w"]
            out[m + "b"] = p[f"{prefix}.attn.{m}.b"]
        out["ln_gain"] = p[f"{prefix}.ln1.gain"]
        out["ln_bias"] = p[f"{prefix}.ln1.bias"]
        return out

    def feed_forward(self, prefix, x):
        h = ag.gelu(ag.add(ag.matmul(x, self.params[f"{prefix}.ffn.1.w"]), self.params[f"{prefix}.ffn.1.b"]))
        y = ag.add(ag.matmul(h, self.params[f"{prefix}.ffn.2.w"]), self.params[f"{prefix}.ffn.2.b"])
        return ag.layer_norm(ag.add(x, y), self.params[f"{prefix}.ln2.gain"], self.params[f"{prefix}.ln2.bias"])

    def forward(self, ext, int_, trace=None):
        """Run both stacks; returns (z_ext, z_int), caption rows x vocabulary.

        ``trace``, when a list, receives a dict per attention sublayer with
        the attention weights (heads x Lq x Lk) and the mask used.
        """
        ce, ci = ext.segmap.segment(CAPTION), int_.segmap.segment(CAPTION)
        if ce.length != ci.length:
            raise ValueError(f"caption segments differ: external {ce.length} vs internal {ci.length}")
        m_ext = build_external_mask(ext.segmap)
        m_int = build_internal_mask(int_.segmap)
        m_ei = build_cross_mask(ext.segmap, int_.segmap)
        m_ie = build_cross_mask(int_.segmap, ext.segmap)
        xe, xi = ext.tokens, int_.tokens
        for b in range(self.config.n_blocks):
            pe, pi = f"{EXTERNAL}.{b}", f"{INTERNAL}.{b}"
            se = self.feed_forward(pe + ".self", self.attention(
                pe + ".self", xe, xe, m_ext.values, trace=_tag(trace, EXTERNAL, b, "self", m_ext)))
            si = self.feed_forward(pi + ".self", self.attention(
                pi + ".self", xi, xi, m_int.values, trace=_tag(trace, INTERNAL, b, "self", m_int)))
            xe = self.feed_forward(pe + ".cross", self.attention(
                pe + ".cross", se, si, m_ei.values, allow_empty=True,
                trace=_tag(trace, EXTERNAL, b, "cross", m_ei)))
            xi = self.feed_forward(pi + ".cross", self.attention(
                pi + ".cross", si, se, m_ie.values, allow_empty=True,
                trace=_tag(trace, INTERNAL, b, "cross", m_ie)))
        z_ext = ag.softmax(ag.add(ag.matmul(ag.rows(xe, ce.start, ce.stop),
                                            self.params["head.external.w"]),
                                  self.params["head.external.b"]))
        z_int = ag.softmax(ag.add(ag.matmul(ag.rows(xi, ci.start, ci.stop),
                                            self.params["head.internal.w"]),
                                  self.params["head.internal.b"]))
        return z_ext, z_int

    def __call__(self, clip, caption_words, trace=None):
        return self.forward(*self.encode(clip, caption_words), trace=trace)

    # -------------------------------------------------------------- checkpoints

    def manifest(self):
        return {
            "params": [[n, list(p.shape)] for n, p in self.params.items()],
            "vocab": self.vocab.itos,
            "relations": self.relations,
            "config": dict(vars(self.config)),
        }

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(checkpoint_bytes(self))

    @classmethod
    def load(cls, path, table, config=None):
        with open(path, "rb") as fh:
            return from_checkpoint_bytes(fh.read(), table, config)


def _tag(trace, stream, block, kind, mask):
    if trace is None:
        return None
    entry = {"stream": stream, "block": block, "kind": kind, "mask": mask}
    trace.append(entry)
    return entry


def attention_sublayer(x_q, x_kv, mask, params, heads, allow_empty=False, trace=None):
    """Multi-head masked attention, residual add and layer norm.

    ``params`` holds qw, qb, kw, kb, vw, vb, ow, ob, ln_gain, ln_bias.
    """
    d = x_q.shape[1]
    if x_kv.shape[1] != d:
        raise ag.ShapeError(f"query width {d} != key width {x_kv.shape[1]}")
    mask = np.asarray(mask)
    if mask.shape != (x_q.shape[0], x_kv.shape[0]):
        raise ag.ShapeError(f"mask {mask.shape} vs queries {x_q.shape[0]} x keys {x_kv.shape[0]}")
    dh = d // heads
    q = ag.split_heads(ag.add(ag.matmul(x_q, params["qw"]), params["qb"]), heads)
    k = ag.split_heads(ag.add(ag.matmul(x_kv, params["kw"]), params["kb"]), heads)
    v = ag.split_heads(ag.add(ag.matmul(x_kv, params["vw"]), params["vb"]), heads)
    logits = ag.mul(ag.bmm(q, ag.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    weights = ag.masked_softmax(logits, mask, allow_empty=allow_empty)
    if trace is not None:
        trace["weights"] = weights.data
    out = ag.add(ag.matmul(ag.merge_heads(ag.bmm(weights, v)), params["ow"]), params["ob"])
    return ag.layer_norm(ag.add(x_q, out), params["ln_gain"], params["ln_bias"])


def fuse_and_argmax(z_ext_row, z_int_row, omega1=0.8, omega2=0.2):
    """Weighted sum of the two stream distributions and its argmax.

    Ties resolve to the lowest index.  Entries within a relative
    ``TIE_TOLERANCE`` of the maximum count as tied, so a tie in exact
    arithmetic is not broken by one ulp of rounding in the weighted sum
    (0.8*0.6 + 0.2*0.1 and 0.8*0.4 + 0.2*0.9 differ by 1.1e-16).
    """
    z_ext_row = np.asarray(z_ext_row, dtype=np.float64)
    z_int_row = np.asarray(z_int_row, dtype=np.float64)
    if z_ext_row.shape != z_int_row.shape:
        raise ValueError(f"row shapes differ: {z_ext_row.shape} vs {z_int_row.shape}")
    p = omega1 * z_ext_row + omega2 * z_int_row
    top = p.max()
    return p, int(np.flatnonzero(p >= top - TIE_TOLERANCE * abs(top))[0])


def greedy_decode(model, clip, max_caption=None):
    """Decode from BOS, one fused argmax per step, until EOS or the cap."""
    cap = model.config.max_caption if max_caption is None else max_caption
    words = []
    with ag.no_grad():
        for _ in range(cap):
            z_ext, z_int = model(clip, words)
            _, y = fuse_and_argmax(z_ext.data[-1], z_int.data[-1], *model.omega)
            if y == EOS_ID:
                break
            words.append(model.vocab.itos[y])
    return words


def teacher_forced_predictions(model, clip, caption_words):
    """Fused argmax at every position given the ground-truth prefix."""
    with ag.no_grad():
        z_ext, z_int = model(clip, caption_words)
    return [fuse_and_argmax(a, b, *model.omega)[1] for a, b in zip(z_ext.data, z_int.data)]


# ------------------------------------------------------------------ checkpoint format


def checkpoint_bytes(model):
    manifest = json.dumps(model.manifest(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(manifest)), manifest]
    for p in model.params.values():
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def from_checkpoint_bytes(blob, table, config=None):
    from .config import ModalityConfig

    if blob[:4] != MAGIC:
        raise CheckpointError("not a TKG1 checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", blob[4:12])
    manifest = json.loads(blob[12:12 + n].decode("utf-8"))
    stored = ModalityConfig(**manifest["config"])
    if config is not None and vars(config) != vars(stored):
        diff = sorted(k for k in vars(stored) if vars(stored)[k] != vars(config)[k])
        raise CheckpointError(f"checkpoint model config differs from run config in {diff}")
    vocab = Vocabulary()
    vocab.itos = list(manifest["vocab"])
    vocab.stoi = {w: i for i, w in enumerate(vocab.itos)}
    model = TextKGModel(stored, vocab, manifest["relations"], table, seed=0)
    offset = 12 + n
    names = [name for name, _ in manifest["params"]]
    if names != list(model.params):
        raise CheckpointError("checkpoint parameter manifest does not match the model layout")
    for name, shape in manifest["params"]:
        p = model.params[name]
        if tuple(shape) != p.shape:
            raise CheckpointError(f"{name}: stored shape {shape} != expected {p.shape}")
        size = int(np.prod(shape)) * 8
        if offset + size > len(blob):
            raise CheckpointError("checkpoint payload truncated")
        p.data[...] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=offset).reshape(shape)
        offset += size
    if offset != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return model
