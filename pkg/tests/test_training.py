import math
from dataclasses import replace

import numpy as np
import pytest

from textkg import autograd as ag
from textkg.config import ModalityConfig, Switches, TrainConfig
from textkg.embeddings import EmbeddingTable
from textkg.knowledge import KnowledgeGraph, KnowledgeTriple
from textkg.model import checkpoint_bytes
from textkg.optim import LrSchedule, TrainingDivergence, lr_at
from textkg.tokens import ClipInputs
from textkg.training import (AblationError, apply_ablation, caption_targets, clip_loss,
                             two_stream_loss, train)


def probs(rows):
    return ag.Parameter(np.asarray(rows, dtype=np.float64))


def test_loss_zero_at_certainty():
    z = probs([[0.0, 1.0], [1.0, 0.0]])
    assert float(two_stream_loss(z, z, [1, 0]).data) == 0.0


def test_loss_hand_value():
    loss = two_stream_loss(probs([[0.5, 0.5]]), probs([[0.75, 0.25]]), [1])
    assert abs(float(loss.data) - 1.5 * math.log(2)) < 1e-12


def test_loss_lambda_one_zero_ignores_internal():
    z_ext = probs([[0.2, 0.3, 0.5]])
    a = two_stream_loss(z_ext, probs([[0.1, 0.1, 0.8]]), [2], 1.0, 0.0)
    b = two_stream_loss(z_ext, probs([[0.7, 0.2, 0.1]]), [2], 1.0, 0.0)
    assert float(a.data) == float(b.data) == -math.log(0.5)


def test_loss_skips_pad_and_floors():
    z = probs([[0.0, 1.0], [0.01, 0.99]])
    assert float(two_stream_loss(z, z, [1, 0]).data) == 0.0
    z0 = probs([[1.0, 0.0]])
    assert float(two_stream_loss(z0, z0, [1]).data) == pytest.approx(-math.log(1e-12), rel=1e-12)


def test_loss_target_out_of_vocab():
    z = probs([[0.5, 0.5]])
    with pytest.raises(IndexError):
        two_stream_loss(z, z, [2])


def test_loss_non_negative():
    rng = np.random.default_rng(0)
    for _ in range(50):
        z1, z2 = rng.dirichlet(np.ones(5), 3), rng.dirichlet(np.ones(5), 3)
        assert float(two_stream_loss(probs(z1), probs(z2), rng.integers(1, 5, 3), *rng.random(2)).data) >= 0


def test_caption_targets_shifted(tiny):
    model, clip = tiny
    t = caption_targets(model.vocab, ["w00", "w01"])
    assert t == [model.vocab.index("w00"), model.vocab.index("w01"), 2]


# ------------------------------------------------------------------ ablation


def ablation_clip():
    return ClipInputs("v", "c", np.ones((2, 3)), np.ones((2, 4)), ["knife", "knife"],
                      ["the", "blade", "is", "sharp"], [["cut", "it"]], ["knife"],
                      [(KnowledgeTriple("knife", "r", "x"), "knife")])


def test_ablation_all_on_unchanged():
    clip = ablation_clip()
    assert apply_ablation(clip, Switches()) == clip


def test_ablation_text_and_all_off():
    out = apply_ablation(ablation_clip(), replace(Switches(), use_text=False))
    assert out.transcript == []
    off = Switches(False, False, False, False, False, True)
    with pytest.raises(AblationError):
        apply_ablation(ablation_clip(), off)


def test_ablation_no_kg_and_no_video_regions():
    out = apply_ablation(ablation_clip(), Switches(False, False, True, False, False, True))
    assert out.video.shape == (0, 3) and out.region_feats.shape[0] == 0
    assert out.region_categories == [] and out.knowledge == []


def test_knowledge_selection_switch():
    table = EmbeddingTable(2, {"sharp": np.array([1.0, 0.0]), "dull": np.array([0.0, 1.0]),
                               "knife": np.zeros(2), "r": np.zeros(2)})
    triples = [KnowledgeTriple("knife", "r", w) for w in ("dull", "dull", "sharp")]
    triples[1] = KnowledgeTriple("knife", "r", "knife")
    kg = KnowledgeGraph(triples)
    cfg = ModalityConfig(n_k=1)
    clip = ablation_clip().copy(transcript=["sharp"])
    ranked = apply_ablation(clip, Switches(), kg, table, cfg).knowledge
    plain = apply_ablation(clip, replace(Switches(), use_knowledge_selection=False), kg, table, cfg).knowledge
    assert [t.tail for t, _ in ranked] == ["sharp"]
    assert [t.tail for t, _ in plain] == ["dull"]


# ------------------------------------------------------------------ train loop


def quick_config(**kw):
    base = dict(base_lr=1e-2, batch_size=1, epochs=2, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_epochs_leaves_parameters(tiny, tmp_path):
    model, clip = tiny
    before = checkpoint_bytes(model)
    report = train(model, [clip], quick_config(epochs=0), str(tmp_path))
    assert checkpoint_bytes(model) == before
    assert report.lr_trace == [] and report.epoch_loss == [] and report.steps == 0


def test_training_reduces_loss_and_logs(tiny, tmp_path):
    model, clip = tiny
    clips = [clip, clip.copy(clip_id="1")]
    report = train(model, clips, quick_config(epochs=5, batch_size=2), str(tmp_path))
    assert report.epoch_loss[-1] < report.epoch_loss[0]
    schedule = LrSchedule(5, 1e-2)
    assert report.lr_trace == [lr_at(schedule, s) for s in range(1, 6)]
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].split("\t")[0] == "1" and len(lines[0].split("\t")) == 3
    assert (tmp_path / "model.tkg").read_bytes()[:4] == b"TKG1"


def test_training_is_deterministic(tmp_path):
    from textkg import gradcheck
    from textkg.model import TextKGModel

    blobs = []
    for run in range(2):
        config = gradcheck.tiny_config()
        vocab, relations, table, clip = gradcheck.tiny_problem(config, 30, seed=0)
        model = TextKGModel(config, vocab, relations, table, seed=0)
        train(model, [clip, clip.copy(clip_id="1"), clip.copy(clip_id="2")],
              quick_config(batch_size=2, epochs=3), str(tmp_path / str(run)))
        blobs.append((tmp_path / str(run) / "model.tkg").read_bytes())
    assert blobs[0] == blobs[1]


def test_nan_loss_names_clip(tiny):
    model, clip = tiny
    model.params["head.external.w"].data[0, 0] = np.nan
    with pytest.raises(TrainingDivergence, match="gc/0"):
        train(model, [clip], quick_config())


def test_internal_head_gets_no_gradient_with_lambda_one_zero(tiny):
    model, clip = tiny
    model.omega = (1.0, 0.0)
    model.zero_grad()
    ag.backward(clip_loss(model, clip, 1.0, 0.0))
    assert not model.params["head.internal.w"].grad.any()
    assert not model.params["head.internal.b"].grad.any()
    assert model.params["head.external.w"].grad.any()


def test_empty_training_set(tiny):
    with pytest.raises(ValueError):
        train(tiny[0], [], quick_config())
