"""Training, checkpointing and evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..matching import inverted_softmax
from ..metrics import RetrievalReport, both_directions
from ..model import RetrievalModel
from ..numerics import container, keyed_rng, no_grad
from ..numerics.rng import stream_key
from ..synthdata import Corpus, load_corpus
from ..transformer import TextBatch
from .config import ConfigError, RunConfig
from .optim import BACKBONE, SELECTION, Adam, partition, scheduled_lr

log = logging.getLogger(__name__)

BATCH_STREAM = 21
NOISE_STREAM = 22
CONFIG_RECORD = "meta.config"
STEP_RECORD = "meta.step"


class NumericFailure(RuntimeError):
    pass


class IncompatibleCheckpoint(ValueError):
    pass


@dataclass
class TrainResult:
    model: RetrievalModel
    config: RunConfig
    losses: list[float]
    checkpoint: Path | None
    log_path: Path | None


def resolve_dims(cfg: RunConfig, corpus: Corpus) -> RunConfig:
    """Fill data-dependent model dims from the corpus, checking any already set."""
    spec = corpus.spec
    wanted = {
        "vocab_size": spec.vocab_size,
        "max_text_len": spec.caption_length,
        "n_patches": spec.n_patches,
        "patch_dim": spec.patch_dim,
        "max_frames": spec.frames,
    }
    for name, value in wanted.items():
        have = getattr(cfg.model, name)
        if have == 0:
            cfg = cfg.override(f"model.{name}", value)
        elif name in ("n_patches", "patch_dim", "vocab_size") and have != value:
            raise IncompatibleCheckpoint(f"model.{name}={have} but the corpus needs {value}")
        elif name in ("max_text_len", "max_frames") and have < value:
            raise IncompatibleCheckpoint(f"model.{name}={have} is smaller than the corpus' {value}")
    return cfg


def text_batch(corpus: Corpus, indices) -> TextBatch:
    return TextBatch.from_sequences([corpus.samples[i].caption for i in indices], corpus.spec.pad_id)


def batch_order(seed: int, n: int, batch_size: int, steps: int) -> list[np.ndarray]:
    """Shuffled epochs, cut into fixed-size batches (a short tail is dropped)."""
    bs = min(batch_size, n)
    batches, epoch = [], 0
    while len(batches) < steps:
        perm = keyed_rng(seed, BATCH_STREAM, epoch).permutation(n)
        batches.extend(perm[i : i + bs] for i in range(0, n - bs + 1, bs))
        epoch += 1
    return batches[:steps]


def save_checkpoint(path, model: RetrievalModel, step: int) -> None:
    records = model.state_dict()
    records[CONFIG_RECORD] = container.encode_text(model.cfg.dumps())
    records[STEP_RECORD] = np.array([float(step)])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    container.save(path, records)


def load_checkpoint(path, cfg: RunConfig | None = None) -> RetrievalModel:
    records = container.load(path)
    if CONFIG_RECORD not in records:
        raise IncompatibleCheckpoint(f"{path} carries no embedded config")
    stored = RunConfig.loads(container.decode_text(records.pop(CONFIG_RECORD)))
    records.pop(STEP_RECORD, None)
    if cfg is not None and cfg.model != stored.model:
        raise IncompatibleCheckpoint("checkpoint model dimensions differ from the supplied config")
    model = RetrievalModel(cfg or stored)
    try:
        model.load_state_dict(records)
    except (KeyError, ValueError) as exc:
        raise IncompatibleCheckpoint(str(exc)) from None
    return model


def train(
    cfg: RunConfig,
    corpus: Corpus | None = None,
    eval_corpus: Corpus | None = None,
    out_dir=None,
    write: bool = True,
) -> TrainResult:
    """Run the full pipeline with two learning-rate groups and linear warmup."""
    cfg.validate()
    corpus = corpus if corpus is not None else load_corpus(cfg.data.train)
    cfg = resolve_dims(cfg, corpus).validate()
    model = RetrievalModel(cfg)
    groups = partition(model.named_parameters())
    log.info("parameter groups: %s", {g: [n for n, _ in ps] for g, ps in groups.items()})
    opt = Adam(groups, (cfg.optim.beta1, cfg.optim.beta2), cfg.optim.adam_eps, cfg.optim.weight_decay)

    out = Path(out_dir or cfg.out_dir)
    log_path = ckpt_path = None
    log_file = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(cfg.dumps())
        (out / "groups.json").write_text(json.dumps({g: [n for n, _ in ps] for g, ps in groups.items()}, indent=1))
        log_path, ckpt_path = out / "log.jsonl", out / "checkpoint.tensors"
        log_file = log_path.open("w")

    videos = corpus.videos
    o = cfg.optim
    losses: list[float] = []
    started = time.time()
    try:
        for step, idx in enumerate(batch_order(cfg.seed, len(corpus), o.batch_size, o.steps)):
            lrs = {
                BACKBONE: scheduled_lr(o.lr_backbone, step, o.warmup_steps, o.steps, o.decay),
                SELECTION: scheduled_lr(o.lr_select, step, o.warmup_steps, o.steps, o.decay),
            }
            noise_seed = stream_key(cfg.seed, NOISE_STREAM, step) % (2**63)
            loss = model.loss_fn(text_batch(corpus, idx), videos[idx], training=True, noise_seed=noise_seed)
            value = loss.item()
            if not math.isfinite(value):
                dump = {"step": step, "loss": repr(value), "batch": idx.tolist()}
                if write:
                    (out / f"nonfinite_step{step}.json").write_text(json.dumps(dump))
                raise NumericFailure(f"non-finite loss {value} at step {step}; batch {idx.tolist()}")
            loss.backward()
            opt.step(lrs)
            opt.zero_grad()
            losses.append(value)
            record = {"step": step, "loss": value, "lr_b": lrs[BACKBONE], "lr_s": lrs[SELECTION]}
            if eval_corpus is not None and cfg.eval.every and (step + 1) % cfg.eval.every == 0:
                t2v, _ = evaluate_model(model, eval_corpus)
                record["eval"] = t2v.to_dict()
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if step % 50 == 0:
                log.info("step %d loss %.4f (%.1fs)", step, value, time.time() - started)
        if write:
            save_checkpoint(ckpt_path, model, len(losses))
    finally:
        if log_file:
            log_file.close()
    return TrainResult(model, cfg, losses, ckpt_path, log_path)


def embed_corpus(model: RetrievalModel, corpus: Corpus, batch_size: int = 64):
    queries, frames = [], []
    with no_grad():
        for start in range(0, len(corpus), batch_size):
            idx = np.arange(start, min(start + batch_size, len(corpus)))
            queries.append(model.encode_texts(text_batch(corpus, idx)).data)
            frames.append(model.encode_videos(corpus.videos[idx], training=False).data)
    return np.concatenate(queries), np.concatenate(frames)


def similarity_for(model: RetrievalModel, corpus: Corpus) -> np.ndarray:
    q, v = embed_corpus(model, corpus, model.cfg.eval.batch_size)
    with no_grad():
        return model.similarity(q, v).data


def check_compatible(model: RetrievalModel, corpus: Corpus) -> None:
    m, spec = model.cfg.model, corpus.spec
    problems = []
    if m.n_patches != spec.n_patches:
        problems.append(f"n_patches {m.n_patches} vs {spec.n_patches}")
    if m.patch_dim != spec.patch_dim:
        problems.append(f"patch_dim {m.patch_dim} vs {spec.patch_dim}")
    if m.vocab_size != spec.vocab_size:
        problems.append(f"vocab_size {m.vocab_size} vs {spec.vocab_size}")
    if m.max_frames < spec.frames:
        problems.append(f"max_frames {m.max_frames} < {spec.frames}")
    if m.max_text_len < spec.caption_length:
        problems.append(f"max_text_len {m.max_text_len} < {spec.caption_length}")
    if problems:
        raise IncompatibleCheckpoint("checkpoint and corpus disagree: " + "; ".join(problems))


def evaluate_model(
    model: RetrievalModel,
    corpus: Corpus,
    inverted: bool | None = None,
    beta: float | None = None,
    return_sim: bool = False,
):
    """Hard top-K selection, full similarity matrix, reports in both directions."""
    check_compatible(model, corpus)
    ev = model.cfg.eval
    inverted = ev.inverted_softmax if inverted is None else inverted
    beta = ev.beta if beta is None else beta
    sim = similarity_for(model, corpus)
    t2v_sim = inverted_softmax(sim, beta) if inverted else None
    reports = both_directions(sim, ks=tuple(ev.ks), t2v_sim=t2v_sim)
    return (*reports, sim) if return_sim else reports


def evaluate(checkpoint, corpus_path, inverted: bool | None = None, beta: float | None = None, sim_out=None):
    model = load_checkpoint(checkpoint)
    corpus = load_corpus(corpus_path)
    t2v, v2t, sim = evaluate_model(model, corpus, inverted, beta, return_sim=True)
    if sim_out:
        container.save(sim_out, {"similarity": sim})
    return t2v, v2t


def total_rsum(t2v: RetrievalReport, v2t: RetrievalReport) -> float:
    return t2v.rsum + v2t.rsum
