"""Dataset manifests: which clip files exist, their roles, and how they were made."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .codec import CodecConfig
from .errors import ManifestError

ROLES = ("cover", "stego")


@dataclass
class ManifestEntry:
    clip_id: int
    path: str  # relative to the manifest file
    role: str
    seed: int
    scheme: str | None = None
    ebr: float | None = None

    def validate(self):
        if self.role not in ROLES:
            raise ManifestError(f"entry {self.clip_id}: unknown role {self.role!r}")
        if self.role == "stego" and (self.scheme is None or self.ebr is None):
            raise ManifestError(f"entry {self.clip_id}: stego entries need scheme and ebr")
        if self.role == "cover" and (self.scheme is not None or self.ebr is not None):
            raise ManifestError(f"entry {self.clip_id}: cover entries carry no scheme/ebr")


@dataclass
class DatasetManifest:
    sample_rate: int
    clip_duration_s: float
    codec: CodecConfig
    entries: list = field(default_factory=list)
    base_dir: str = "."

    def validate(self):
        if self.sample_rate <= 0:
            raise ManifestError("sample rate must be positive")
        for entry in self.entries:
            entry.validate()

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.base_dir) / entry.path

    def covers(self):
        return [e for e in self.entries if e.role == "cover"]

    def stegos(self):
        return [e for e in self.entries if e.role == "stego"]

    def stego_for_cover(self, clip_id: int):
        return [e for e in self.stegos() if e.clip_id == clip_id]


def save_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "sample_rate": manifest.sample_rate,
        "clip_duration_s": manifest.clip_duration_s,
        "codec": {
            "frame_len": manifest.codec.frame_len,
            "quant_step": manifest.codec.quant_step,
            "seed": manifest.codec.seed,
        },
        "entries": [
            {k: v for k, v in asdict(e).items() if v is not None} for e in manifest.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    try:
        codec = CodecConfig(**payload["codec"])
        entries = [ManifestEntry(**e) for e in payload["entries"]]
        manifest = DatasetManifest(
            sample_rate=int(payload["sample_rate"]),
            clip_duration_s=float(payload["clip_duration_s"]),
            codec=codec,
            entries=entries,
            base_dir=str(path.parent),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest ({exc})") from exc
    manifest.validate()
    return manifest


def split_clip_ids(manifest: DatasetManifest, seed: int,
                   train_fraction: float = 0.5) -> tuple[set, set]:
    """Deterministic clip-level split, stratified by the (scheme, ebr)
    combination each clip's stego twins realize.

    A cover and every stego derived from it land on the same side, so no
    test clip can influence training artifacts.
    """
    strata: dict[tuple, list[int]] = {}
    for cover in manifest.covers():
        key = tuple(sorted((s.scheme, s.ebr) for s in manifest.stego_for_cover(cover.clip_id)))
        strata.setdefault(key, []).append(cover.clip_id)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5F17])))
    train: set = set()
    test: set = set()
    for key in sorted(strata):
        ids = sorted(strata[key])
        order = rng.permutation(len(ids))
        n_train = int(train_fraction * len(ids))
        for rank, idx in enumerate(order):
            (train if rank < n_train else test).add(ids[idx])
    return train, test


def subset_entries(manifest: DatasetManifest, clip_ids: set) -> list:
    return [e for e in manifest.entries if e.clip_id in clip_ids]
