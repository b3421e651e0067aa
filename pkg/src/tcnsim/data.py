"""Sequence containers and the on-disk dataset store.

The training path only ever sees :class:`MultiViewSequence` (synchronized
per-view frame arrays). Hidden per-frame annotations used for evaluation
(attributes, keyframes, joint targets) live in sidecar files loaded through a
separate entry point, so a store can be handed to training code with the
sidecars physically absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class ManifestError(ValueError):
    """Dataset manifest missing or malformed; message names the field."""


@dataclass
class MultiViewSequence:
    """Synchronized observation streams of one latent process.

    frames has shape (views, time, dim); all views share the timestamps.
    """

    sequence_id: str
    frames: np.ndarray
    frame_rate: float
    timestamps: np.ndarray = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (views, time, dim), got shape {self.frames.shape}")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.timestamps is None:
            self.timestamps = np.arange(self.frames.shape[1]) / self.frame_rate
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.timestamps.shape != (self.frames.shape[1],):
            raise ValueError("timestamps length must equal the frame count")
        if self.frames.shape[1] > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def n_views(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.frames.shape[2]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    def view(self, index: int) -> np.ndarray:
        """Frames of one view, shape (time, dim)."""
        return self.frames[index]


@dataclass
class EvalSidecar:
    """Hidden per-frame annotations; evaluation-only by construction."""

    sequence_id: str
    attributes: dict[str, np.ndarray] = field(default_factory=dict)
    keyframes: np.ndarray | None = None
    joints: np.ndarray | None = None
    agent: str | None = None
    latent_trace: np.ndarray | None = None


@dataclass
class SequenceRecord:
    sequence_id: str
    split: str
    n_views: int
    n_frames: int
    obs_dim: int
    blob: str
    sidecar: str
    agent: str | None = None


_REQUIRED_MANIFEST_FIELDS = ("version", "kind", "frame_rate", "sequences")
_REQUIRED_SEQUENCE_FIELDS = ("id", "split", "n_views", "n_frames", "obs_dim", "blob", "sidecar")


def write_dataset(
    root: str | Path,
    kind: str,
    frame_rate: float,
    entries: list[tuple[MultiViewSequence, EvalSidecar, str]],
    extra: dict | None = None,
) -> Path:
    """Write manifest + per-sequence blobs + sidecars under ``root``.

    ``entries`` holds (sequence, sidecar, split) triples. Float frames are
    stored as 64-bit in (view, time, dim) order.
    """
    root = Path(root)
    (root / "blobs").mkdir(parents=True, exist_ok=True)
    (root / "sidecars").mkdir(parents=True, exist_ok=True)
    records = []
    for seq, sidecar, split in entries:
        blob_rel = f"blobs/{seq.sequence_id}.npy"
        sidecar_rel = f"sidecars/{seq.sequence_id}.npz"
        np.save(root / blob_rel, seq.frames.astype(np.float64))
        _save_sidecar(root / sidecar_rel, sidecar)
        records.append(
            {
                "id": seq.sequence_id,
                "split": split,
                "agent": sidecar.agent,
                "n_views": seq.n_views,
                "n_frames": seq.n_frames,
                "obs_dim": seq.obs_dim,
                "blob": blob_rel,
                "sidecar": sidecar_rel,
            }
        )
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": kind,
        "frame_rate": frame_rate,
        "sequences": records,
    }
    if extra:
        manifest.update(extra)
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return root


def _save_sidecar(path: Path, sidecar: EvalSidecar) -> None:
    payload = {}
    meta = {"sequence_id": sidecar.sequence_id, "agent": sidecar.agent, "attribute_names": sorted(sidecar.attributes)}
    for name, values in sidecar.attributes.items():
        payload[f"attr_{name}"] = np.asarray(values)
    if sidecar.keyframes is not None:
        payload["keyframes"] = np.asarray(sidecar.keyframes, dtype=np.int64)
    if sidecar.joints is not None:
        payload["joints"] = np.asarray(sidecar.joints, dtype=np.float64)
    if sidecar.latent_trace is not None:
        payload["latent_trace"] = np.asarray(sidecar.latent_trace, dtype=np.float64)
    payload["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_manifest(root: str | Path) -> dict:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_NAME} under {root}")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    for fieldname in _REQUIRED_MANIFEST_FIELDS:
        if fieldname not in manifest:
            raise ManifestError(f"manifest missing field '{fieldname}'")
    if manifest["version"] != MANIFEST_VERSION:
        raise ManifestError(f"manifest field 'version' is {manifest['version']}, expected {MANIFEST_VERSION}")
    if not isinstance(manifest["sequences"], list):
        raise ManifestError("manifest field 'sequences' must be a list")
    for i, rec in enumerate(manifest["sequences"]):
        for fieldname in _REQUIRED_SEQUENCE_FIELDS:
            if fieldname not in rec:
                raise ManifestError(f"manifest sequence entry {i} missing field '{fieldname}'")
    return manifest


def manifest_records(manifest: dict) -> list[SequenceRecord]:
    return [
        SequenceRecord(
            sequence_id=rec["id"],
            split=rec["split"],
            n_views=rec["n_views"],
            n_frames=rec["n_frames"],
            obs_dim=rec["obs_dim"],
            blob=rec["blob"],
            sidecar=rec["sidecar"],
            agent=rec.get("agent"),
        )
        for rec in manifest["sequences"]
    ]


def load_split(
    root: str | Path, split: str | None = None, agent: str | None = None
) -> list[MultiViewSequence]:
    """Load the training-path view of a dataset: frames only, no sidecars."""
    root = Path(root)
    manifest = load_manifest(root)
    out = []
    for rec in manifest_records(manifest):
        if split is not None and rec.split != split:
            continue
        if agent is not None and rec.agent != agent:
            continue
        frames = np.load(root / rec.blob)
        if frames.shape != (rec.n_views, rec.n_frames, rec.obs_dim):
            raise ManifestError(
                f"blob shape {frames.shape} for sequence '{rec.sequence_id}' does not match its manifest entry"
            )
        out.append(MultiViewSequence(rec.sequence_id, frames, manifest["frame_rate"]))
    return out


def load_sidecar(root: str | Path, sequence_id: str) -> EvalSidecar:
    """Evaluation-only entry point for the hidden annotations of one sequence."""
    root = Path(root)
    manifest = load_manifest(root)
    rec = next((r for r in manifest_records(manifest) if r.sequence_id == sequence_id), None)
    if rec is None:
        raise ManifestError(f"sequence '{sequence_id}' not present in manifest")
    path = root / rec.sidecar
    if not path.exists():
        raise ManifestError(f"sidecar file for sequence '{sequence_id}' is absent")
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        attributes = {name: data[f"attr_{name}"] for name in meta["attribute_names"]}
        return EvalSidecar(
            sequence_id=meta["sequence_id"],
            attributes=attributes,
            keyframes=data["keyframes"] if "keyframes" in data else None,
            joints=data["joints"] if "joints" in data else None,
            agent=meta.get("agent"),
            latent_trace=data["latent_trace"] if "latent_trace" in data else None,
        )
