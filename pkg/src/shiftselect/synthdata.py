"""Synthetic text-video corpora with planted fine-grained signals.

Objects are fixed signature vectors occupying one patch over a contiguous
frame span. Motions are period-2 alternations ``x, D x, x, D x, ...`` of a
random carrier ``x`` at one patch, where ``D`` is the motion's diagonal sign
pattern: any single frame looks like Gaussian clutter, and only the product of
adjacent frames (``x * D x = D x**2``) reveals which motion it is.

Signature templates depend only on ``template_seed`` so train and test
corpora generated with different ``seed`` values share one vocabulary.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .numerics import container, keyed_rng

TEMPLATE_STREAM = 7001
SAMPLE_STREAM = 7002


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusSpec:
    n_samples: int = 512
    frames: int = 8
    grid: int = 4
    patch_dim: int = 12
    n_objects: int = 24
    n_motions: int = 8
    objects_per_video: int = 2
    motions_per_video: int = 1
    clutter: float = 1.0
    object_scale: float = 1.0
    motion_scale: float = 1.0
    min_span: int = 0
    seed: int = 0
    template_seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "frames", "grid", "patch_dim"):
            if getattr(self, name) < 1:
                raise CorpusError(f"{name} must be positive")
        if self.objects_per_video < 0 or self.motions_per_video < 0:
            raise CorpusError("symbol counts must be non-negative")
        if self.objects_per_video + self.motions_per_video < 1:
            raise CorpusError("captions need at least one symbol")
        if self.objects_per_video + self.motions_per_video > self.n_patches:
            raise CorpusError("more planted symbols than patch locations")
        if self.objects_per_video > self.n_objects or self.motions_per_video > self.n_motions:
            raise CorpusError("symbols per video exceed the vocabulary")
        if self.clutter < 0 or self.object_scale <= 0 or self.motion_scale <= 0:
            raise CorpusError("noise levels must be non-negative and scales positive")
        if self.min_span > self.frames:
            raise CorpusError("min_span exceeds the frame count")

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def span_floor(self) -> int:
        """Shortest planted span; motions need two frames to be visible at all."""
        return max(self.min_span or math.ceil(self.frames / 2), min(2, self.frames))

    @property
    def pad_id(self) -> int:
        return self.n_objects + self.n_motions

    @property
    def eos_id(self) -> int:
        return self.n_objects + self.n_motions + 1

    @property
    def vocab_size(self) -> int:
        return self.n_objects + self.n_motions + 2

    @property
    def caption_length(self) -> int:
        return self.objects_per_video + self.motions_per_video + 1

    def distinct_captions(self) -> int:
        return math.comb(self.n_objects, self.objects_per_video) * math.comb(self.n_motions, self.motions_per_video)

    def motion_share(self) -> float:
        return self.motions_per_video / (self.objects_per_video + self.motions_per_video)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    video: np.ndarray  # (T, N, patch_dim)
    caption: np.ndarray  # symbol ids, [EOS] last
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and np.array_equal(self.video, other.video)
            and np.array_equal(self.caption, other.caption)
            and self.meta == other.meta
        )


@dataclass
class Corpus:
    spec: CorpusSpec
    samples: list[Sample]

    def __len__(self):
        return len(self.samples)

    @property
    def videos(self) -> np.ndarray:
        return np.stack([s.video for s in self.samples])

    @property
    def captions(self) -> list[np.ndarray]:
        return [s.caption for s in self.samples]

    def subset(self, indices) -> "Corpus":
        return Corpus(self.spec, [self.samples[i] for i in indices])


@dataclass(frozen=True)
class Templates:
    objects: np.ndarray  # (|O|, patch_dim)
    motions: np.ndarray  # (|M|, patch_dim) of +-1


def make_templates(spec: CorpusSpec) -> Templates:
    rng = keyed_rng(spec.template_seed, TEMPLATE_STREAM)
    objects = spec.object_scale * rng.standard_normal((spec.n_objects, spec.patch_dim))
    motions = np.empty((spec.n_motions, spec.patch_dim))
    seen: set[bytes] = set()
    for i in range(spec.n_motions):
        for _ in range(1000):
            pattern = rng.choice([-1.0, 1.0], size=spec.patch_dim)
            if pattern.tobytes() not in seen and not np.all(pattern > 0):
                break
        seen.add(pattern.tobytes())
        motions[i] = pattern
    return Templates(objects, motions)


def _draw_symbols(rng, spec: CorpusSpec, taken: set, max_tries: int = 1000) -> tuple[list[int], list[int]]:
    for _ in range(max_tries):
        objs = sorted(rng.choice(spec.n_objects, size=spec.objects_per_video, replace=False).tolist())
        mots = sorted(rng.choice(spec.n_motions, size=spec.motions_per_video, replace=False).tolist())
        key = (tuple(objs), tuple(mots))
        if key not in taken:
            taken.add(key)
            return objs, mots
    raise CorpusError(f"rejection sampling failed to find an unused symbol set after {max_tries} tries")


def _draw_span(rng, spec: CorpusSpec) -> tuple[int, int]:
    length = int(rng.integers(spec.span_floor, spec.frames + 1))
    start = int(rng.integers(0, spec.frames - length + 1))
    return start, start + length


def generate_corpus(spec: CorpusSpec) -> Corpus:
    """Deterministic in ``spec.seed``; every caption symbol is planted in its video."""
    if spec.distinct_captions() < spec.n_samples:
        raise CorpusError(
            f"vocabulary admits only {spec.distinct_captions()} distinct symbol sets "
            f"({spec.objects_per_video} of {spec.n_objects} objects, {spec.motions_per_video} of "
            f"{spec.n_motions} motions) but {spec.n_samples} unique captions were requested"
        )
    templates = make_templates(spec)
    symbol_rng = keyed_rng(spec.seed, SAMPLE_STREAM, 0)
    taken: set = set()
    symbol_sets = [_draw_symbols(symbol_rng, spec, taken) for _ in range(spec.n_samples)]
    samples = [_make_sample(spec, templates, i, *symbol_sets[i]) for i in range(spec.n_samples)]
    return Corpus(spec, samples)


def _make_sample(spec: CorpusSpec, templates: Templates, index: int, objs, mots) -> Sample:
    rng = keyed_rng(spec.seed, SAMPLE_STREAM, index + 1)
    t, n, p = spec.frames, spec.n_patches, spec.patch_dim
    video = spec.clutter * rng.standard_normal((t, n, p))
    locations = rng.choice(n, size=len(objs) + len(mots), replace=False).tolist()
    planted = []
    for sym, loc in zip(objs, locations):
        start, stop = _draw_span(rng, spec)
        video[start:stop, loc] = templates.objects[sym]
        planted.append({"symbol": int(sym), "kind": "object", "location": int(loc), "span": [start, stop]})
    for sym, loc in zip(mots, locations[len(objs) :]):
        start, stop = _draw_span(rng, spec)
        carrier = spec.motion_scale * rng.standard_normal(p)
        pattern = templates.motions[sym]
        for f in range(start, stop):
            video[f, loc] = carrier if (f - start) % 2 == 0 else pattern * carrier
        planted.append(
            {"symbol": int(spec.n_objects + sym), "kind": "motion", "location": int(loc), "span": [start, stop]}
        )
    caption = np.array([*objs, *(spec.n_objects + m for m in mots), spec.eos_id], dtype=np.int64)
    return Sample(video=video, caption=caption, meta={"planted": planted})


# ---------------------------------------------------------------------------
# persistence: <name>.manifest.json + <name>.tensors
# ---------------------------------------------------------------------------


def _paths(path) -> tuple[Path, Path]:
    base = Path(path)
    return base.with_name(base.name + ".manifest.json"), base.with_name(base.name + ".tensors")


def save_corpus(corpus: Corpus, path) -> None:
    manifest_path, tensor_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    records = {}
    for i, s in enumerate(corpus.samples):
        records[f"sample{i}.video"] = s.video
        records[f"sample{i}.caption"] = s.caption.astype(np.float64)
    payload = container.dumps(records)
    tensor_path.write_bytes(payload)
    manifest = {
        "spec": corpus.spec.to_dict(),
        "n_samples": len(corpus.samples),
        "checksum": hashlib.sha256(payload).hexdigest(),
        "meta": [s.meta for s in corpus.samples],
    }
    manifest_path.write_text(json.dumps(manifest, indent=1))


def load_corpus(path) -> Corpus:
    manifest_path, tensor_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    payload = tensor_path.read_bytes()
    records = container.loads(payload)
    n = int(manifest["n_samples"])
    if len(records) != 2 * n:
        raise CorpusError(f"manifest lists {n} samples but the archive holds {len(records)} records (expected {2 * n})")
    if hashlib.sha256(payload).hexdigest() != manifest["checksum"]:
        raise CorpusError("archive checksum does not match the manifest")
    spec = CorpusSpec(**manifest["spec"])
    metas = manifest.get("meta") or [{} for _ in range(n)]
    samples = []
    for i in range(n):
        try:
            video, caption = records[f"sample{i}.video"], records[f"sample{i}.caption"]
        except KeyError as exc:
            raise CorpusError(f"archive is missing record {exc.args[0]!r}") from None
        samples.append(Sample(video=video, caption=caption.astype(np.int64), meta=metas[i]))
    return Corpus(spec, samples)
