import numpy as np
import pytest

from textkg import autograd as ag
from textkg.embeddings import EOS_ID
from textkg.model import (CheckpointError, TextKGModel, attention_sublayer, checkpoint_bytes,
                          from_checkpoint_bytes, fuse_and_argmax, greedy_decode)
from textkg.tokens import CAPTION


def attn_params(rng, d, zero_qk=False):
    p = {}
    for m in "qkvo":
        w = np.zeros((d, d)) if zero_qk and m in "qk" else rng.standard_normal((d, d)) / np.sqrt(d)
        p[m + "w"] = ag.Tensor(w)
        p[m + "b"] = ag.Tensor(np.zeros(d) if zero_qk and m in "qk" else rng.standard_normal(d) * 0.1)
    p["ln_gain"] = ag.Tensor(1 + 0.1 * rng.standard_normal(d))
    p["ln_bias"] = ag.Tensor(0.1 * rng.standard_normal(d))
    return p


def ln(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * g + b


def test_zero_qk_gives_uniform_attention():
    rng = np.random.default_rng(0)
    x = ag.Tensor(rng.standard_normal((4, 6)))
    mask = np.zeros((4, 4))
    mask[0, 3] = -np.inf
    trace = {}
    attention_sublayer(x, x, mask, attn_params(rng, 6, zero_qk=True), 1, trace=trace)
    w = trace["weights"][0]
    np.testing.assert_allclose(w[0], [1 / 3, 1 / 3, 1 / 3, 0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(w[1:], 0.25, rtol=0, atol=1e-15)


def test_diagonal_mask_hand_trace():
    rng = np.random.default_rng(1)
    d = 6
    x = rng.standard_normal((3, d))
    p = attn_params(rng, d)
    mask = np.where(np.eye(3, dtype=bool), 0.0, -np.inf)
    out = attention_sublayer(ag.Tensor(x), ag.Tensor(x), mask, p, 2).data
    v = x @ p["vw"].data + p["vb"].data
    expect = ln(x + v @ p["ow"].data + p["ob"].data, p["ln_gain"].data, p["ln_bias"].data)
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_masked_keys_equal_deleted_keys():
    rng = np.random.default_rng(2)
    xq, xkv = rng.standard_normal((5, 8)), rng.standard_normal((7, 8))
    p = attn_params(rng, 8)
    drop = [1, 4]
    mask = np.zeros((5, 7))
    mask[:, drop] = -np.inf
    a = attention_sublayer(ag.Tensor(xq), ag.Tensor(xkv), mask, p, 2).data
    b = attention_sublayer(ag.Tensor(xq), ag.Tensor(np.delete(xkv, drop, 0)), np.zeros((5, 5)), p, 2).data
    assert np.max(np.abs(a - b)) < 1e-9


def test_attention_shape_errors():
    rng = np.random.default_rng(3)
    p = attn_params(rng, 4)
    with pytest.raises(ag.ShapeError):
        attention_sublayer(ag.Tensor(np.zeros((2, 4))), ag.Tensor(np.zeros((3, 4))), np.zeros((2, 2)), p, 2)
    with pytest.raises(ag.MaskError):
        attention_sublayer(ag.Tensor(np.zeros((1, 4))), ag.Tensor(np.zeros((1, 4))),
                           np.full((1, 1), -np.inf), p, 2)


def test_outputs_are_distributions(tiny):
    model, clip = tiny
    z_ext, z_int = model(clip, clip.caption)
    n = len(clip.caption) + 1
    for z in (z_ext, z_int):
        assert z.shape == (n, len(model.vocab))
        assert np.all(z.data >= 0)
        np.testing.assert_allclose(z.data.sum(1), 1.0, rtol=0, atol=1e-9)


def test_causality_on_tiny(tiny):
    model, clip = tiny
    words = clip.caption
    base_e, base_i = (z.data for z in model(clip, words))
    for t in range(len(words)):
        changed = list(words[:t]) + ["w25"] * (len(words) - t)
        z_e, z_i = (z.data for z in model(clip, changed))
        assert np.array_equal(z_e[:t + 1], base_e[:t + 1])
        assert np.array_equal(z_i[:t + 1], base_i[:t + 1])


def test_empty_knowledge_still_well_formed(tiny):
    model, clip = tiny
    z_ext, _ = model(clip.copy(knowledge=[]), clip.caption)
    np.testing.assert_allclose(z_ext.data.sum(1), 1.0, rtol=0, atol=1e-9)


def test_unequal_caption_segments(tiny):
    model, clip = tiny
    ext, _ = model.encode(clip, clip.caption)
    _, int_ = model.encode(clip, clip.caption[:1])
    with pytest.raises(ValueError, match="caption"):
        model.forward(ext, int_)


def test_trace_records_every_sublayer(tiny):
    model, clip = tiny
    trace = []
    model(clip, clip.caption, trace=trace)
    assert len(trace) == 4 * model.config.n_blocks
    assert all(t["weights"].shape[0] == model.config.heads for t in trace)


# ------------------------------------------------------------------ fusion and decoding


def test_fusion_examples():
    assert fuse_and_argmax([0.1, 0.7, 0.2], [0.9, 0.05, 0.05], 1.0, 0.0)[1] == 1
    p, y = fuse_and_argmax([0.6, 0.4], [0.1, 0.9], 0.8, 0.2)
    np.testing.assert_allclose(p, [0.5, 0.5], rtol=0, atol=1e-15)
    assert y == 0


def test_fusion_scale_invariance():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, b = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        assert fuse_and_argmax(a, b, 0.8, 0.2)[1] == fuse_and_argmax(a, b, 0.8 * 3.5, 0.2 * 3.5)[1]


def force_eos(model):
    for stream in ("external", "internal"):
        model.params[f"head.{stream}.w"].data[...] = 0.0
        model.params[f"head.{stream}.b"].data[...] = -50.0
        model.params[f"head.{stream}.b"].data[EOS_ID] = 50.0


def test_greedy_eos_gives_empty_caption(tiny):
    model, clip = tiny
    force_eos(model)
    assert greedy_decode(model, clip) == []


def test_greedy_respects_cap(tiny):
    model, clip = tiny
    assert len(greedy_decode(model, clip, max_caption=1)) <= 1
    assert len(greedy_decode(model, clip)) <= model.config.max_caption


def test_greedy_is_deterministic(tiny):
    model, clip = tiny
    assert greedy_decode(model, clip) == greedy_decode(model, clip)


# ------------------------------------------------------------------ checkpoints


def test_checkpoint_round_trip_is_byte_exact(tiny, tmp_path):
    model, clip = tiny
    path = tmp_path / "m.tkg"
    model.save(path)
    blob = path.read_bytes()
    assert blob[:4] == b"TKG1"
    loaded = TextKGModel.load(path, model.table, model.config)
    assert checkpoint_bytes(loaded) == blob
    assert loaded.vocab == model.vocab
    assert np.array_equal(loaded(clip, clip.caption)[0].data, model(clip, clip.caption)[0].data)


def test_checkpoint_errors(tiny):
    model, _ = tiny
    blob = checkpoint_bytes(model)
    with pytest.raises(CheckpointError, match="magic"):
        from_checkpoint_bytes(b"XXXX" + blob[4:], model.table)
    with pytest.raises(CheckpointError, match="truncated"):
        from_checkpoint_bytes(blob[:-8], model.table)
    with pytest.raises(CheckpointError, match="trailing"):
        from_checkpoint_bytes(blob + b"\0" * 8, model.table)
    other = model.config.__class__(**{**vars(model.config), "heads": 4})
    with pytest.raises(CheckpointError, match="heads"):
        from_checkpoint_bytes(blob, model.table, other)


def test_parameter_layout(tiny):
    model, _ = tiny
    names = list(model.params)
    assert names.index("head.external.w") > names.index("external.1.cross.ln2.bias")
    assert not model.params["tok.bos"].decay and not model.params["external.0.self.ln1.gain"].decay
    assert model.params["external.0.self.attn.q.w"].decay
    assert not model.params["external.0.self.attn.q.b"].decay
    assert model.params["external.0.self.ffn.1.w"].shape == (16, 64)
    assert model(tiny[1], [])[0].shape[0] == 1
    assert model.encode(tiny[1], [])[0].segmap.segment(CAPTION).length == 1
