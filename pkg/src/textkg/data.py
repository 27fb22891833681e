"""Dataset manifest, feature files and per-clip input preparation."""

import json
import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .knowledge import GENERAL, SPECIFIC, select_knowledge
from .tokens import ClipInputs, select_regions

FEATURE_MAGIC = b"TKGF"


class ManifestError(ValueError):
    pass


_PUNCT = re.compile(r"[^\w\s']")


def tokenize(text):
    """Lowercase, drop punctuation except apostrophes, split on whitespace."""
    if not isinstance(text, str):
        text = " ".join(text)
    return _PUNCT.sub(" ", text.lower()).split()


# ------------------------------------------------------------------ feature files


def write_features(path, array):
    array = np.atleast_2d(np.asarray(array, dtype=np.float64))
    if str(path).endswith(".bin"):
        rows, cols = array.shape
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC + struct.pack("<III", rows, cols, 0))
            fh.write(array.astype("<f4").tobytes())
        return
    with open(path, "w", encoding="utf-8") as fh:
        for row in array:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_features(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:4] == FEATURE_MAGIC:
            rows, cols, _ = struct.unpack("<III", head[4:16])
            data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
            if data.size != rows * cols:
                raise ManifestError(f"{path}: expected {rows}x{cols} floats, found {data.size}")
            return data.reshape(rows, cols)
    with open(path, encoding="utf-8") as fh:
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    if rows and len({len(r) for r in rows}) != 1:
        raise ManifestError(f"{path}: ragged feature rows")
    return np.array(rows, dtype=np.float64)


# ------------------------------------------------------------------ manifest


@dataclass
class Region:
    category: str
    confidence: float
    frame: int = 0
    feature: list = None
    feature_path: str = None


@dataclass
class Clip:
    clip_id: str
    appearance: str
    motion: str
    regions: list = field(default_factory=list)
    transcript: list = field(default_factory=list)
    captions: list = field(default_factory=list)


@dataclass
class Video:
    video_id: str
    clips: list
    split: str = "train"


@dataclass
class DatasetManifest:
    videos: list
    root: str = "."

    def clips(self, split=None):
        """(video, clip) pairs in manifest order, optionally one split only."""
        return [(v, c) for v in self.videos if split is None or v.split == split for c in v.clips]

    def path(self, rel):
        return rel if os.path.isabs(rel) else os.path.join(self.root, rel)

    def to_dict(self):
        out = []
        for v in self.videos:
            clips = []
            for c in v.clips:
                regions = []
                for r in c.regions:
                    item = {"category": r.category, "confidence": r.confidence, "frame": r.frame}
                    if r.feature_path is not None:
                        item["feature_path"] = r.feature_path
                    else:
                        item["feature"] = list(r.feature)
                    regions.append(item)
                clips.append({"clip_id": c.clip_id, "appearance": c.appearance, "motion": c.motion,
                              "regions": regions, "transcript": list(c.transcript),
                              "captions": [list(x) for x in c.captions]})
            out.append({"video_id": v.video_id, "split": v.split, "clips": clips})
        return {"videos": out}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_manifest(path, check_files=True):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: {exc}") from None
    root = os.path.dirname(os.path.abspath(path))
    videos = []
    for v in data.get("videos", []):
        clips = []
        for c in v["clips"]:
            regions = [Region(r["category"], float(r["confidence"]), int(r.get("frame", 0)),
                              r.get("feature"), r.get("feature_path")) for r in c.get("regions", [])]
            transcript = c.get("transcript", [])
            captions = c.get("captions", [])
            clips.append(Clip(
                clip_id=str(c["clip_id"]), appearance=c["appearance"], motion=c["motion"],
                regions=regions,
                transcript=tokenize(transcript) if isinstance(transcript, str) else list(transcript),
                captions=[tokenize(x) if isinstance(x, str) else list(x) for x in captions]))
        videos.append(Video(str(v["video_id"]), clips, v.get("split", "train")))
    manifest = DatasetManifest(videos, root)
    validate_manifest(manifest, check_files)
    return manifest


def validate_manifest(manifest, check_files=True):
    """Raise ManifestError listing every problem found, not just the first."""
    problems = []
    seen = set()
    for v, c in manifest.clips():
        key = (v.video_id, c.clip_id)
        if key in seen:
            problems.append(f"duplicate clip {v.video_id}/{c.clip_id}")
        seen.add(key)
        refs = [c.appearance, c.motion] + [r.feature_path for r in c.regions if r.feature_path]
        if check_files:
            for rel in refs:
                if not os.path.exists(manifest.path(rel)):
                    problems.append(f"missing file {rel} ({v.video_id}/{c.clip_id})")
        for r in c.regions:
            if r.feature is None and r.feature_path is None:
                problems.append(f"region without feature in {v.video_id}/{c.clip_id}")
        last = {}
        for r in c.regions:
            if r.confidence > last.get(r.frame, np.inf):
                problems.append(f"confidences not descending in frame {r.frame} of {v.video_id}/{c.clip_id}")
                break
            last[r.frame] = r.confidence
    if problems:
        raise ManifestError("; ".join(problems))


# ------------------------------------------------------------------ clip preparation


def load_clip_arrays(manifest, clip):
    app = read_features(manifest.path(clip.appearance))
    mot = read_features(manifest.path(clip.motion))
    if app.shape[0] != mot.shape[0]:
        raise ManifestError(f"{clip.clip_id}: appearance has {app.shape[0]} frames, motion {mot.shape[0]}")
    feats = []
    for r in clip.regions:
        if r.feature_path is not None:
            feats.append(read_features(manifest.path(r.feature_path)).reshape(-1))
        else:
            feats.append(np.asarray(r.feature, dtype=np.float64))
    return app, mot, feats


def prepare_clip(manifest, video, clip, config):
    """Load features, keep top-N_r regions per frame, truncate text.

    ``config`` is a ModalityConfig.  Knowledge is retrieved for the first
    ``max_objects`` distinct region categories, which are kept as
    ``candidates``; ``apply_ablation`` performs the knowledge selection.
    """
    app, mot, feats = load_clip_arrays(manifest, clip)
    video_feats = np.concatenate([app, mot], axis=1) if app.size else np.zeros(
        (0, config.appearance_dim + config.motion_dim))
    if video_feats.shape[1] != config.appearance_dim + config.motion_dim:
        raise ManifestError(f"{clip.clip_id}: video feature width {video_feats.shape[1]} "
                            f"!= {config.appearance_dim}+{config.motion_dim}")
    cats = [r.category for r in clip.regions]
    region_arr = np.array(feats).reshape(len(feats), config.region_dim) if feats else np.zeros((0, config.region_dim))
    region_arr, cats = select_regions(region_arr, cats, config.n_r, [r.frame for r in clip.regions])
    distinct = []
    for c in cats:
        if c not in distinct:
            distinct.append(c)
    distinct = distinct[:config.max_objects]
    return ClipInputs(
        video_id=video.video_id,
        clip_id=clip.clip_id,
        video=video_feats,
        region_feats=region_arr,
        region_categories=cats,
        transcript=list(clip.transcript)[:config.max_transcript],
        captions=[list(c)[:config.max_caption] for c in clip.captions],
        candidates=distinct,
    )


def clip_knowledge(clip, kg, table, config, switches):
    """Select knowledge for a prepared clip under the given switches."""
    if kg is None or not switches.use_kg:
        return []
    sources = [s for s, on in ((GENERAL, switches.use_general_kg), (SPECIFIC, switches.use_specific_kg)) if on]
    transcript = clip.transcript if switches.use_text else []
    return select_knowledge(kg, clip.candidates, transcript, table, config.n_k,
                            use_ranking=switches.use_knowledge_selection, sources=sources)
