"""Grayscale frame sequences, the VSEQ container, and PGM frame ingestion."""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VSEQ_MAGIC = b"VSEQ"
VSEQ_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIB3x")  # magic, version, n, T, H, W, dtype, reserved


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


@dataclass
class ImageSequence:
    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 3 or f.shape[0] < 1:
            raise ValueError(f"frames must be T x H x W with T >= 1, got shape {f.shape}")
        if not np.isfinite(f).all() or f.min() < 0.0 or f.max() > 1.0:
            raise ValueError("frame values must be finite and lie in [0, 1]")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class SequenceDataset:
    sequences: list
    train_idx: list
    test_idx: list

    def __post_init__(self):
        tr, te = set(self.train_idx), set(self.test_idx)
        if tr & te:
            raise ValueError("train and test splits overlap")
        if tr | te != set(range(len(self.sequences))):
            raise ValueError("train/test split must cover every sequence exactly once")

    def __len__(self):
        return len(self.sequences)

    @classmethod
    def with_split(cls, sequences, train_fraction=0.9):
        n = len(sequences)
        n_train = int(round(train_fraction * n))
        return cls(list(sequences), list(range(n_train)), list(range(n_train, n)))

    def stack(self, which="all"):
        idx = {"all": range(len(self)), "train": self.train_idx, "test": self.test_idx}[which]
        return np.stack([self.sequences[i].frames for i in idx]) if len(idx) else np.zeros((0, 0, 0, 0), np.float32)

    def subset(self, which):
        idx = {"train": self.train_idx, "test": self.test_idx}[which]
        seqs = [self.sequences[i] for i in idx]
        if which == "train":
            return SequenceDataset(seqs, list(range(len(seqs))), [])
        return SequenceDataset(seqs, [], list(range(len(seqs))))


def save_dataset(ds, path):
    """Write ``ds`` as a VSEQ file (little-endian, float32, sequence-major)."""
    if not ds.sequences:
        raise ValueError("cannot save an empty dataset")
    shape = ds.sequences[0].shape
    for i, s in enumerate(ds.sequences):
        if s.shape != shape:
            raise ValueError(f"sequence {i} has shape {s.shape}, expected {shape}")
    t, h, w = shape
    meta = {
        "split": {"train": list(map(int, ds.train_idx)), "test": list(map(int, ds.test_idx))},
        "sequences": [s.meta for s in ds.sequences],
    }
    blob = json.dumps(meta, sort_keys=True, default=_json_default).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VSEQ_MAGIC, VSEQ_VERSION, len(ds.sequences), t, h, w, 1))
        for s in ds.sequences:
            fh.write(s.frames.astype("<f4").tobytes())
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def load_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, version, n, t, h, w, dtype = _HEADER.unpack_from(raw, 0)
    if magic != VSEQ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != VSEQ_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 4")
    if dtype != 1:
        raise FormatError(f"{path}: unsupported dtype code {dtype} at byte offset 24")
    off = _HEADER.size
    nbytes = n * t * h * w * 4
    if len(raw) < off + nbytes:
        raise FormatError(f"{path}: truncated frame data at byte offset {len(raw)} (expected {off + nbytes})")
    data = np.frombuffer(raw, dtype="<f4", count=n * t * h * w, offset=off).reshape(n, t, h, w)
    off += nbytes
    meta = {}
    if len(raw) > off:
        if len(raw) < off + 8:
            raise FormatError(f"{path}: truncated metadata length at byte offset {off}")
        (mlen,) = struct.unpack_from("<Q", raw, off)
        off += 8
        if len(raw) < off + mlen:
            raise FormatError(f"{path}: truncated metadata at byte offset {len(raw)} (expected {off + mlen})")
        meta = json.loads(raw[off:off + mlen].decode())
    seq_meta = meta.get("sequences") or [{} for _ in range(n)]
    seqs = [ImageSequence(data[i].astype(np.float32), seq_meta[i]) for i in range(n)]
    split = meta.get("split")
    if split is None:
        return SequenceDataset.with_split(seqs)
    return SequenceDataset(seqs, split["train"], split["test"])


def read_pgm(path):
    """Read an 8-bit binary (P5) PGM into floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise FormatError(f"{path}: not a binary P5 PGM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: malformed header at byte offset {pos}")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    if len(raw) < pos + w * h:
        raise FormatError(f"{path}: truncated pixel data at byte offset {len(raw)} (expected {pos + w * h})")
    pix = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return pix.astype(np.float32) / np.float32(maxval)


def write_pgm(path, frame):
    frame = np.clip(np.asarray(frame, dtype=np.float64), 0, 1)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.round(frame * 255).astype(np.uint8).tobytes())


def _clip_dirs(root):
    root = Path(root)
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    return subdirs if subdirs else [root]


def crop_windows(frames, grid=(3, 3), scales=(1,), size=32):
    """Cut ``size x size`` crops from a T x H x W clip.

    For scale ``s`` a window of ``size*s`` pixels is block-averaged down by
    ``s``. Window positions are evenly spaced over the valid range on a
    ``grid[0] x grid[1]`` lattice. Yields (row, col, scale, crop).
    """
    t, h, w = frames.shape
    rows, cols = grid
    for s in scales:
        win = size * s
        if win > h or win > w:
            raise ValueError(f"crop window {win} px does not fit a {h}x{w} frame")
        ys = np.linspace(0, h - win, rows).round().astype(int) if rows > 1 else [(h - win) // 2]
        xs = np.linspace(0, w - win, cols).round().astype(int) if cols > 1 else [(w - win) // 2]
        for y0 in ys:
            for x0 in xs:
                crop = frames[:, y0:y0 + win, x0:x0 + win]
                if s > 1:
                    crop = crop.reshape(t, size, s, size, s).mean(axis=(2, 4))
                yield int(y0), int(x0), int(s), crop


def ingest_frames(directory, crop_grid=(3, 3), scales=(1,), size=32, train_fraction=0.9):
    """Turn directories of P5 PGM frames into 32x32 crop sequences.

    ``directory`` either holds frames directly (one clip) or one
    sub-directory per clip. Frames are ordered lexicographically.
    """
    seqs = []
    for clip in _clip_dirs(directory):
        files = sorted(p for p in clip.iterdir() if p.is_file())
        if not files:
            continue
        frames = np.stack([read_pgm(f) for f in files])
        for y0, x0, s, crop in crop_windows(frames, crop_grid, scales, size):
            meta = {"source": "ingest", "clip": os.fspath(clip.name), "y0": y0, "x0": x0, "scale": s}
            seqs.append(ImageSequence(np.clip(crop, 0, 1), meta))
    if not seqs:
        raise ValueError(f"no frames found under {directory}")
    return SequenceDataset.with_split(seqs, train_fraction)
