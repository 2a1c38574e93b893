"""On-disk formats for range-Doppler datasets.

One map per file: a little-endian header (magic ``RDM1``, u32 rows, u32
cols) followed by row-major float32 values, with a JSON sidecar carrying the
metadata record.  Datasets are laid out as::

    <root>/<class_name>/<aspect_deg>/<frame_index>.rdm

with a top-level ``manifest.json`` enumerating classes, aspects and counts.

Raw (pre-FFT) frames use the same layout with ``.npy`` complex arrays and the
same sidecar convention; these feed the ``preprocess`` CLI stage.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .radar import ChirpConfig, MapMeta, RangeDopplerMap, RawFrame, resize_bilinear

RDM_MAGIC = b"RDM1"


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_rdm(path, rdmap: RangeDopplerMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(rdmap.values, dtype="<f4")
    rows, cols = values.shape
    with open(path, "wb") as fh:
        fh.write(RDM_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(values.tobytes())
    _sidecar(path).write_text(json.dumps(rdmap.meta.to_dict(), sort_keys=True))


def read_rdm(path) -> RangeDopplerMap:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != RDM_MAGIC:
        raise FormatError(f"{path}: not an RDM1 file (bad magic or truncated header)")
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = 12 + rows * cols * 4
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}")
    values = np.frombuffer(blob[12:], dtype="<f4").reshape(rows, cols).copy()
    meta = MapMeta.from_dict(json.loads(_sidecar(path).read_text())) \
        if _sidecar(path).exists() else MapMeta()
    return RangeDopplerMap(values=values, meta=meta)


def write_raw_frame(path, frame: RawFrame, meta: MapMeta) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, frame.samples.astype(np.complex64))
    record = {"meta": meta.to_dict(), "chirp_config": frame.config.to_dict()}
    _sidecar(path).write_text(json.dumps(record, sort_keys=True))


def read_raw_frame(path) -> tuple:
    """Returns (RawFrame, MapMeta)."""
    path = Path(path)
    samples = np.load(path).astype(np.complex128)
    record = json.loads(_sidecar(path).read_text())
    config = ChirpConfig(**record["chirp_config"])
    meta = MapMeta.from_dict(record["meta"])
    return RawFrame(samples=samples, config=config), meta


def frame_rel_path(meta: MapMeta, suffix: str = ".rdm") -> Path:
    aspect = f"{meta.aspect_deg:g}"
    return Path(meta.class_label) / aspect / f"{meta.frame_index:04d}{suffix}"


def write_manifest(root, manifest: dict) -> None:
    Path(root, "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(root) -> dict:
    path = Path(root, "manifest.json")
    if not path.exists():
        raise FormatError(f"{root}: missing manifest.json (not a dataset directory?)")
    return json.loads(path.read_text())


def iter_dataset_files(root, suffix: str = ".rdm"):
    """Yield dataset files in a deterministic sorted order."""
    root = Path(root)
    yield from sorted(root.glob(f"*/*/*{suffix}"))


@dataclass
class RdmDataset:
    """All maps of a dataset, resized once for the network and kept in memory.

    ``images`` holds single-channel maps (n, h, w) in [0, 1]; channel
    replication happens at episode assembly.  Metadata columns are aligned
    with ``images`` along axis 0.
    """

    images: np.ndarray
    class_idx: np.ndarray
    aspect: np.ndarray
    subject: np.ndarray
    distance: np.ndarray
    frame_index: np.ndarray
    class_names: list

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, mask: np.ndarray) -> "RdmDataset":
        return replace(self, images=self.images[mask], class_idx=self.class_idx[mask],
                       aspect=self.aspect[mask], subject=self.subject[mask],
                       distance=self.distance[mask], frame_index=self.frame_index[mask])

    def filter(self, aspects=None, subjects=None, distances=None) -> "RdmDataset":
        mask = np.ones(len(self), dtype=bool)
        if aspects is not None:
            mask &= np.isin(self.aspect, np.asarray(list(aspects), dtype=float))
        if subjects is not None:
            mask &= np.isin(self.subject, np.asarray(list(subjects), dtype=int))
        if distances is not None:
            dmask = np.zeros(len(self), dtype=bool)
            for d in distances:
                dmask |= np.isclose(self.distance, float(d))
            mask &= dmask
        return self.subset(mask)

    def indices_by_class(self) -> dict:
        """class index -> sorted array of sample positions present in this view."""
        out = {}
        for c in np.unique(self.class_idx):
            out[int(c)] = np.flatnonzero(self.class_idx == c)
        return out

    def stack_images(self, positions: np.ndarray, channels: int = 3) -> np.ndarray:
        """Gather maps and replicate across channels: (len, h, w, channels)
        float32, channels-last as the network consumes them."""
        imgs = self.images[np.asarray(positions, dtype=np.intp)]
        return np.repeat(imgs[:, :, :, None], channels, axis=3).astype(np.float32)


def load_dataset(root, image_hw=(84, 84)) -> RdmDataset:
    """Read every map under ``root`` and resize to the network input size."""
    root = Path(root)
    manifest = read_manifest(root)
    class_names = list(manifest["classes"])
    name_to_idx = {n: i for i, n in enumerate(class_names)}
    files = list(iter_dataset_files(root))
    if not files:
        raise FormatError(f"{root}: manifest present but no .rdm files found")
    h, w = image_hw
    images = np.empty((len(files), h, w), dtype=np.float32)
    class_idx = np.empty(len(files), dtype=np.int64)
    aspect = np.empty(len(files), dtype=np.float64)
    subject = np.empty(len(files), dtype=np.int64)
    distance = np.empty(len(files), dtype=np.float64)
    frame_index = np.empty(len(files), dtype=np.int64)
    for i, path in enumerate(files):
        rdmap = read_rdm(path)
        if rdmap.meta.class_label not in name_to_idx:
            raise FormatError(f"{path}: class {rdmap.meta.class_label!r} not in manifest")
        images[i] = resize_bilinear(rdmap.values, h, w)
        class_idx[i] = name_to_idx[rdmap.meta.class_label]
        aspect[i] = rdmap.meta.aspect_deg
        subject[i] = rdmap.meta.subject_id
        distance[i] = rdmap.meta.distance_m
        frame_index[i] = rdmap.meta.frame_index
    return RdmDataset(images=images, class_idx=class_idx, aspect=aspect,
                      subject=subject, distance=distance, frame_index=frame_index,
                      class_names=class_names)
