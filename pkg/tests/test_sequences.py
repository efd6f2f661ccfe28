import struct

import numpy as np
import pytest

from nextframe.leaves import generate_dataset
from nextframe.sequences import (
    FormatError,
    ImageSequence,
    SequenceDataset,
    crop_windows,
    ingest_frames,
    load_dataset,
    read_pgm,
    save_dataset,
    write_pgm,
)


def test_vseq_round_trip(tmp_path):
    ds = generate_dataset(2, 10)
    path = tmp_path / "d.vseq"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.train_idx == ds.train_idx and back.test_idx == ds.test_idx
    for a, b in zip(ds.sequences, back.sequences):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.meta["radii"] == b.meta["radii"]


def test_vseq_header_layout(tmp_path):
    seqs = [ImageSequence(np.full((2, 4, 6), 0.25)) for _ in range(3)]
    path = tmp_path / "h.vseq"
    save_dataset(SequenceDataset.with_split(seqs), path)
    raw = path.read_bytes()
    assert raw[:4] == b"VSEQ"
    assert struct.unpack_from("<IIIIIB", raw, 4) == (1, 3, 2, 4, 6, 1)
    assert raw[25:28] == b"\0\0\0"
    first = np.frombuffer(raw, "<f4", count=1, offset=28)[0]
    assert first == 0.25
    (mlen,) = struct.unpack_from("<Q", raw, 28 + 3 * 2 * 4 * 6 * 4)
    assert len(raw) == 28 + 3 * 2 * 4 * 6 * 4 + 8 + mlen


def test_vseq_errors(tmp_path):
    ds = generate_dataset(2, 3)
    path = tmp_path / "d.vseq"
    save_dataset(ds, path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.vseq"
    bad.write_bytes(b"XSEQ" + raw[4:])
    with pytest.raises(FormatError, match="magic.*offset 0"):
        load_dataset(bad)
    bad.write_bytes(raw[:500])
    with pytest.raises(FormatError, match="truncated.*offset 500"):
        load_dataset(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(FormatError, match="offset 10"):
        load_dataset(bad)


def test_pgm_rescaling(tmp_path):
    path = tmp_path / "f.pgm"
    path.write_bytes(b"P5\n# comment\n3 1\n255\n" + bytes([0, 128, 255]))
    px = read_pgm(path)
    assert px.shape == (1, 3)
    assert px[0, 0] == 0.0 and px[0, 2] == 1.0


def test_non_p5_rejected_by_name(tmp_path):
    clip = tmp_path / "clip"
    clip.mkdir()
    (clip / "0001.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0\n")
    with pytest.raises(FormatError, match="0001.pgm"):
        ingest_frames(tmp_path)


def test_crop_grid_count(tmp_path, rng):
    clip = tmp_path / "clipA"
    clip.mkdir()
    for t in range(5):
        write_pgm(clip / f"{t:04d}.pgm", rng.random((96, 96)))
    ds = ingest_frames(tmp_path, crop_grid=(3, 3), scales=(1,))
    assert len(ds) == 9
    assert ds.sequences[0].frames.shape == (5, 32, 32)
    ds2 = ingest_frames(tmp_path, crop_grid=(3, 3), scales=(1, 2, 3))
    assert len(ds2) == 27


def test_crop_downscale_is_block_mean():
    frames = np.arange(64 * 64, dtype=np.float32).reshape(1, 64, 64) / 4096
    (_, _, s, crop), = list(crop_windows(frames, (1, 1), (2,), 32))
    assert s == 2
    assert crop[0, 0, 0] == pytest.approx(frames[0, :2, :2].mean())


def test_split_validation():
    seqs = [ImageSequence(np.zeros((1, 2, 2))) for _ in range(3)]
    with pytest.raises(ValueError):
        SequenceDataset(seqs, [0, 1], [1, 2])
    with pytest.raises(ValueError):
        SequenceDataset(seqs, [0], [1])


def test_frames_must_be_in_unit_range():
    with pytest.raises(ValueError):
        ImageSequence(np.full((1, 2, 2), 1.5))
