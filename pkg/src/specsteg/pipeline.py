"""End-to-end batch commands: corpus generation, per-window training,
feature extraction, fusion training, and evaluation.

Every command is a pure function of its inputs and seeds; rebuilt artifacts
are byte-identical across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .audio_io import read_wav, write_wav, segment
from .codec import CodecConfig, encode_clip, decode_clip
from .embed import Scheme, make_job, embed
from .errors import ManifestError
from .fusion import COVER, STEGO, fuse, metrics, save_features, export_features_csv
from .manifest import (DatasetManifest, ManifestEntry, save_manifest, split_clip_ids)
from .network import NetConfig, ResidualNet, load_checkpoint, save_checkpoint
from .residual_filters import apply_filter_bank, default_filter_bank
from .spectrogram import spectrogram
from .svm import MarginModel, save_margin_model, svm_train
from .training import AdamState, PairDataset, train


@dataclass
class RunConfig:
    window_sizes: tuple = (1024, 512, 256)
    epochs: int = 30
    seed: int = 0
    lr: float = 1e-3
    lr_decay: float = 0.9
    weight_decay: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    svm_c: float = 1.0
    train_fraction: float = 0.5
    units_per_group: int = 5
    batch_pairs: int = 16
    dtype: str = "float32"

    def __post_init__(self):
        self.window_sizes = tuple(int(n) for n in self.window_sizes)
        if len(self.window_sizes) != 3 or len(set(self.window_sizes)) != 3:
            raise ManifestError("exactly three distinct window sizes required")
        for n in self.window_sizes:
            if n < 4 or n & (n - 1):
                raise ManifestError(f"window sizes must be powers of two, got {n}")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(**payload)

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                         eps=self.adam_eps, lr_decay=self.lr_decay,
                         weight_decay=self.weight_decay)


def _derived_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _scheme_list(schemes) -> list[Scheme]:
    out = []
    for s in schemes:
        out.append(s if isinstance(s, Scheme) else Scheme(str(s).lower()))
    return out


def _build_segment_outputs(task):
    """Worker for one source segment: write the cover and all stego variants."""
    (clip_id, samples, rate, codec_dict, schemes, ebrs, master_seed, out_dir) = task
    from .audio_io import AudioClip  # local import keeps the task picklable

    seg = AudioClip(samples=samples, sample_rate=rate)
    entry_seed = _derived_seed(master_seed, clip_id)
    config = CodecConfig(frame_len=codec_dict["frame_len"],
                         quant_step=codec_dict["quant_step"], seed=entry_seed)
    stream = encode_clip(seg, config)
    entries = []
    cover_name = f"cover_{clip_id:05d}.wav"
    write_wav(decode_clip(stream), Path(out_dir) / cover_name)
    entries.append(dict(clip_id=clip_id, path=cover_name, role="cover", seed=entry_seed))
    for si, scheme in enumerate(_scheme_list(schemes)):
        for ebr in ebrs:
            stego_seed = _derived_seed(master_seed, clip_id, si, int(round(ebr * 1000)))
            job = make_job(stream, scheme, ebr, message_seed=stego_seed)
            stego_stream = embed(stream, job)
            name = f"stego_{clip_id:05d}_{scheme.value}_e{int(round(ebr * 100)):03d}.wav"
            write_wav(decode_clip(stego_stream), Path(out_dir) / name)
            entries.append(dict(clip_id=clip_id, path=name, role="stego",
                                seed=stego_seed, scheme=scheme.value, ebr=ebr))
    return entries


def make_dataset(source_dir, out_dir, schemes, ebrs, codec: CodecConfig, seed: int,
                 duration_s: float = 2.0, workers: int = 1,
                 manifest_name: str = "manifest.json") -> Path:
    """Segment every source WAV and emit cover/stego clip files plus a manifest."""
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = sorted(source_dir.glob("*.wav"))
    if not sources:
        raise ManifestError(f"no .wav files under {source_dir}")
    rate = None
    segments = []
    for src in sources:
        clip = read_wav(src)
        if rate is None:
            rate = clip.sample_rate
        elif clip.sample_rate != rate:
            raise ManifestError(
                f"{src}: sample rate {clip.sample_rate} differs from {rate}"
            )
        segments.extend(segment(clip, duration_s))
    if not segments:
        raise ManifestError("sources yielded no full segments")

    codec_dict = {"frame_len": codec.frame_len, "quant_step": codec.quant_step}
    tasks = [
        (clip_id, seg.samples, rate, codec_dict, [s.value for s in _scheme_list(schemes)],
         list(ebrs), seed, str(out_dir))
        for clip_id, seg in enumerate(segments)
    ]
    if workers > 1:
        with Pool(workers) as pool:
            results = pool.map(_build_segment_outputs, tasks)
    else:
        results = [_build_segment_outputs(t) for t in tasks]

    entries = [ManifestEntry(**e) for batch in results for e in batch]
    manifest = DatasetManifest(sample_rate=rate, clip_duration_s=duration_s,
                               codec=codec, entries=entries, base_dir=str(out_dir))
    manifest.validate()
    path = out_dir / manifest_name
    save_manifest(manifest, path)
    return path


def clip_input(path, window_size: int, bank=None) -> np.ndarray:
    """Filtered spectrogram of one clip file: float32 (4, n, m)."""
    spec = spectrogram(read_wav(path), window_size)
    filtered = apply_filter_bank(spec, bank if bank is not None else default_filter_bank())
    return filtered[0].astype(np.float32)


def _subset_ids(manifest: DatasetManifest, cfg: RunConfig, subset: str) -> set:
    train_ids, test_ids = split_clip_ids(manifest, cfg.seed, cfg.train_fraction)
    if subset == "train":
        return train_ids
    if subset == "test":
        return test_ids
    if subset == "all":
        return train_ids | test_ids
    raise ManifestError(f"unknown subset {subset!r} (want train/test/all)")


def train_window(manifest: DatasetManifest, window_size: int, cfg: RunConfig,
                 checkpoint_path, history_path=None, log=None) -> list[dict]:
    """Train one per-window model on the manifest's training half."""
    train_ids = _subset_ids(manifest, cfg, "train")
    bank = default_filter_bank()
    cover_inputs = {}
    pairs_cover = []
    pairs_stego = []
    for cover in sorted(manifest.covers(), key=lambda e: e.clip_id):
        if cover.clip_id not in train_ids:
            continue
        twins = sorted(manifest.stego_for_cover(cover.clip_id),
                       key=lambda e: (e.scheme, e.ebr))
        if not twins:
            continue
        cov = clip_input(manifest.resolve(cover), window_size, bank)
        for twin in twins:
            pairs_cover.append(cov)
            pairs_stego.append(clip_input(manifest.resolve(twin), window_size, bank))
    if len(pairs_cover) < cfg.batch_pairs:
        raise ManifestError(
            f"training split provides {len(pairs_cover)} pairs, fewer than one "
            f"batch of {cfg.batch_pairs}"
        )
    dataset = PairDataset(covers=np.stack(pairs_cover), stegos=np.stack(pairs_stego))
    net = ResidualNet(
        NetConfig(units_per_group=cfg.units_per_group, window_size=window_size),
        seed=cfg.seed, dtype=np.dtype(cfg.dtype), bank=bank,
    )
    adam = cfg.adam()
    history = train(net, dataset, adam, epochs=cfg.epochs, seed=cfg.seed,
                    batch_pairs=cfg.batch_pairs, log=log)
    save_checkpoint(net, checkpoint_path, adam_state=None)
    if history_path is not None:
        with open(history_path, "w") as fh:
            json.dump(history, fh, indent=1)
            fh.write("\n")
    return history


def _ordered_entries(manifest: DatasetManifest, ids: set) -> list[ManifestEntry]:
    return [e for e in manifest.entries if e.clip_id in ids]


def compute_fused_features(manifest: DatasetManifest, checkpoints: dict, cfg: RunConfig,
                           subset: str = "all", nets: dict | None = None):
    """Fused feature matrix for the chosen subset.

    Returns (entries, vectors (n, 120), labels (n,)). `checkpoints` maps each
    window size to its checkpoint path; preloaded nets can be passed instead.
    """
    ids = _subset_ids(manifest, cfg, subset)
    entries = _ordered_entries(manifest, ids)
    if not entries:
        raise ManifestError(f"subset {subset!r} selected no entries")
    sizes = sorted(checkpoints or nets, reverse=True)
    per_window = {}
    for n in sizes:
        if nets and n in nets:
            net = nets[n]
        else:
            net, _ = load_checkpoint(checkpoints[n], dtype=np.dtype(cfg.dtype))
        bank = net.bank
        specs = [clip_input(manifest.resolve(e), n, bank) for e in entries]
        per_window[n] = _features_from_inputs(net, specs)
    vectors = np.stack([
        fuse([per_window[n][i] for n in sizes], sizes).vector
        for i in range(len(entries))
    ])
    labels = np.array([STEGO if e.role == "stego" else COVER for e in entries])
    return entries, vectors, labels


def _features_from_inputs(net: ResidualNet, inputs, batch_size: int = 16) -> np.ndarray:
    feats = []
    for start in range(0, len(inputs), batch_size):
        x = np.stack(inputs[start : start + batch_size])
        _, features = net.forward(x, train=False)
        feats.append(features.astype(np.float64))
    return np.concatenate(feats, axis=0)


def extract_features(manifest: DatasetManifest, checkpoints: dict, cfg: RunConfig,
                     out_path, subset: str = "all", csv_path=None) -> int:
    """Write the fused 120-d features of a manifest subset to a feature file."""
    _, vectors, labels = compute_fused_features(manifest, checkpoints, cfg, subset)
    sizes = sorted(checkpoints, reverse=True)
    save_features(out_path, vectors, labels, sizes)
    if csv_path is not None:
        export_features_csv(csv_path, vectors, labels)
    return vectors.shape[0]


def fuse_train(vectors: np.ndarray, labels: np.ndarray, window_sizes, c_value: float,
               model_path=None) -> MarginModel:
    model = svm_train(vectors, labels, C=c_value, window_sizes=tuple(window_sizes))
    if model_path is not None:
        save_margin_model(model, model_path)
    return model


def evaluate_fused(manifest: DatasetManifest, model: MarginModel, checkpoints: dict,
                   cfg: RunConfig, subset: str = "test", nets: dict | None = None) -> dict:
    """Fused-classifier report over a manifest subset."""
    entries, vectors, labels = compute_fused_features(manifest, checkpoints, cfg,
                                                      subset, nets=nets)
    scores = model.decision(vectors)
    preds = np.where(scores >= 0, STEGO, COVER)
    return _build_report(entries, preds, scores, labels, mode="fused-svm", subset=subset)


def evaluate_window(manifest: DatasetManifest, checkpoint_path, cfg: RunConfig,
                    subset: str = "test", threshold: float = 0.5) -> dict:
    """Single-window softmax report over a manifest subset."""
    net, _ = load_checkpoint(checkpoint_path, dtype=np.dtype(cfg.dtype))
    ids = _subset_ids(manifest, cfg, subset)
    entries = _ordered_entries(manifest, ids)
    if not entries:
        raise ManifestError(f"subset {subset!r} selected no entries")
    window = net.config.window_size
    inputs = [clip_input(manifest.resolve(e), window, net.bank) for e in entries]
    probs = []
    for start in range(0, len(inputs), 16):
        x = np.stack(inputs[start : start + 16])
        logits, _ = net.forward(x, train=False)
        z = logits.astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs.extend((e[:, 1] / e.sum(axis=1)).tolist())
    probs = np.array(probs)
    preds = np.where(probs >= threshold, STEGO, COVER)
    labels = np.array([STEGO if e.role == "stego" else COVER for e in entries])
    return _build_report(entries, preds, probs, labels,
                         mode=f"window-softmax-N{window}", subset=subset)


def _build_report(entries, preds, scores, labels, mode: str, subset: str) -> dict:
    tpr, tnr, acc = metrics(preds, labels)
    cells = []
    keys = sorted({(e.scheme, e.ebr) for e in entries if e.role == "stego"})
    for scheme, ebr in keys:
        mask = np.array([e.role == "stego" and e.scheme == scheme and e.ebr == ebr
                         for e in entries])
        cell_tpr = float((preds[mask] == STEGO).mean())
        cells.append({"scheme": scheme, "ebr": ebr, "tpr": cell_tpr, "n": int(mask.sum())})
    predictions = [
        {
            "clip_id": e.clip_id, "path": e.path, "role": e.role,
            "scheme": e.scheme, "ebr": e.ebr,
            "prediction": "stego" if p == STEGO else "cover",
            "score": float(s),
        }
        for e, p, s in zip(entries, preds, scores)
    ]
    return {
        "mode": mode,
        "subset": subset,
        "n_entries": len(entries),
        "tnr": tnr,
        "cells": cells,
        "acc": acc,
        "predictions": predictions,
    }


def format_report(report: dict) -> str:
    lines = [
        f"mode: {report['mode']}   subset: {report['subset']}   "
        f"entries: {report['n_entries']}",
        "",
        f"{'scheme':<10} {'EBR':>6} {'TPR':>8} {'n':>6}",
    ]
    for cell in report["cells"]:
        lines.append(f"{cell['scheme']:<10} {cell['ebr']:>6.2f} "
                     f"{cell['tpr']:>8.4f} {cell['n']:>6}")
    lines.append("")
    lines.append(f"cover TNR: {report['tnr']:.4f}")
    lines.append(f"ACC:       {report['acc']:.4f}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_prefix) -> None:
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    slim = {k: v for k, v in report.items() if k != "predictions"}
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(slim, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(prefix.with_suffix(".txt"), "w") as fh:
        fh.write(format_report(report))
    with open(str(prefix) + "_predictions.json", "w") as fh:
        json.dump(report["predictions"], fh, indent=1)
        fh.write("\n")
