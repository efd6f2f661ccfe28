"""Procedural "moving leaves": two depth-ordered disks on smooth random paths.

Both disks have the same physical size, so the projected radius is
``radius_ref / depth`` and the nearer (larger) disk always occludes the other.
Each centre coordinate follows a Gaussian process with an RBF kernel whose
length-scale grows with depth, so far disks move slower and more smoothly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .sequences import ImageSequence, SequenceDataset


@dataclass
class LeavesConfig:
    size: int = 32
    n_frames: int = 11
    depth_min: float = 1.0
    depth_max: float = 3.0
    radius_ref: float = 8.0        # projected radius in px at depth 1
    gp_lengthscale: float = 3.0    # frames, at depth 1; scales linearly with depth
    gp_amplitude: float = 6.0      # px, std of each coordinate around its mean
    min_contrast: float = 0.1
    supersample: int = 4
    min_occlusion: float = 0.5
    train_fraction: float = 0.9
    jitter: float = 1e-8
    max_reject_rate: float = 0.99
    probe_radius: float = 5.0
    probe_speed: float = 2.0
    probe_separation: float = 6.0  # centre distance in the hidden target frame
    probe_max_dr: float = 6.0
    probe_luminance: tuple = (0.35, 0.85, 0.1)  # left, right, background

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown leaves config keys: {sorted(unknown)}")
        d = dict(d)
        if "probe_luminance" in d:
            d["probe_luminance"] = tuple(d["probe_luminance"])
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


@dataclass
class DiskScene:
    depths: np.ndarray       # [2]
    radii: np.ndarray        # [2] px
    luminances: np.ndarray   # [2]
    background: float
    trajectory: np.ndarray   # [T, 2 disks, (x, y)] px, pixel j spans [j, j+1)

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.luminances = np.asarray(self.luminances, dtype=np.float64)
        self.trajectory = np.asarray(self.trajectory, dtype=np.float64)
        if np.any(self.luminances < 0) or np.any(self.luminances > 1) or not 0 <= self.background <= 1:
            raise ValueError("luminances must lie in [0, 1]")
        if self.trajectory.ndim != 3 or self.trajectory.shape[1:] != (2, 2):
            raise ValueError(f"trajectory must be T x 2 x 2, got {self.trajectory.shape}")

    @property
    def front(self):
        """Index of the occluding disk (larger projected radius; ties go to disk 1)."""
        return 0 if self.radii[0] > self.radii[1] else 1

    def to_meta(self):
        return {
            "source": "moving_leaves",
            "depths": self.depths.tolist(),
            "radii": self.radii.tolist(),
            "luminances": self.luminances.tolist(),
            "background": float(self.background),
            "trajectory": self.trajectory.tolist(),
        }


def rbf_kernel(n_frames, lengthscale, amplitude):
    t = np.arange(n_frames, dtype=np.float64)
    return amplitude ** 2 * np.exp(-0.5 * ((t[:, None] - t[None, :]) / lengthscale) ** 2)


def sample_gp_paths(rng, n_frames, lengthscale, amplitude, n_paths, jitter=1e-8):
    """Draw ``n_paths`` zero-mean GP paths of length ``n_frames`` via Cholesky."""
    k = rbf_kernel(n_frames, lengthscale, amplitude)
    chol = np.linalg.cholesky(k + jitter * np.eye(n_frames))
    return (chol @ rng.standard_normal((n_frames, n_paths))).T


def _luminances(rng, min_contrast):
    while True:
        lum = rng.uniform(0.0, 1.0, 3)
        if min(abs(lum[0] - lum[1]), abs(lum[0] - lum[2]), abs(lum[1] - lum[2])) >= min_contrast:
            return lum


def sample_scene(rng, cfg=None, depths=None):
    cfg = cfg or LeavesConfig()
    depths = rng.uniform(cfg.depth_min, cfg.depth_max, 2) if depths is None else np.asarray(depths, dtype=np.float64)
    radii = cfg.radius_ref / depths
    lum = _luminances(rng, cfg.min_contrast)
    traj = np.empty((cfg.n_frames, 2, 2))
    for d in range(2):
        ell = cfg.gp_lengthscale * depths[d]
        for _ in range(10):
            try:
                paths = sample_gp_paths(rng, cfg.n_frames, ell, cfg.gp_amplitude, 2, cfg.jitter)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise RuntimeError(f"GP covariance not positive definite for lengthscale {ell}")
        centre = rng.uniform(0.0, cfg.size, 2)
        traj[:, d, :] = centre[None, :] + paths.T
    return DiskScene(depths, radii, lum[:2], float(lum[2]), traj)


def _subpixel_grid(size, ss):
    c = (np.arange(size * ss) + 0.5) / ss
    return c[None, :], c[:, None]  # x varies along columns, y along rows


def disk_masks(scene, t, size, ss):
    """Boolean masks of both disks on the ``size*ss`` supersampled grid at frame t."""
    xs, ys = _subpixel_grid(size, ss)
    out = []
    for d in range(2):
        cx, cy = scene.trajectory[t, d]
        out.append((xs - cx) ** 2 + (ys - cy) ** 2 <= scene.radii[d] ** 2)
    return out


def render_frame(scene, t, size=32, ss=4):
    masks = disk_masks(scene, t, size, ss)
    hi = np.full((size * ss, size * ss), scene.background, dtype=np.float64)
    front = scene.front
    for d in (1 - front, front):  # painter's order: far disk first
        hi[masks[d]] = scene.luminances[d]
    return hi.reshape(size, ss, size, ss).mean(axis=(1, 3))


def render_sequence(scene, cfg=None):
    cfg = cfg or LeavesConfig()
    frames = np.stack([render_frame(scene, t, cfg.size, cfg.supersample) for t in range(len(scene.trajectory))])
    return ImageSequence(np.clip(frames, 0.0, 1.0).astype(np.float32), scene.to_meta())


def occlusion_fractions(scene, cfg=None):
    """Per frame: fraction of the back disk's visible-canvas area covered by the front disk."""
    cfg = cfg or LeavesConfig()
    front = scene.front
    out = np.zeros(len(scene.trajectory))
    for t in range(len(scene.trajectory)):
        masks = disk_masks(scene, t, cfg.size, cfg.supersample)
        back_area = masks[1 - front].sum()
        if back_area:
            out[t] = (masks[1 - front] & masks[front]).sum() / back_area
    return out


def _could_overlap(scene, cfg):
    dist = np.linalg.norm(scene.trajectory[:, 0] - scene.trajectory[:, 1], axis=1)
    return np.any(dist <= scene.radii.sum())


def accept_scene(scene, cfg):
    return _could_overlap(scene, cfg) and occlusion_fractions(scene, cfg).max() >= cfg.min_occlusion


def generate_sequence(seed, index, cfg, max_attempts=None):
    """Rejection-sample one accepted sequence from its own RNG stream."""
    rng = np.random.default_rng([seed, index])
    limit = max_attempts or int(np.ceil(1.0 / (1.0 - cfg.max_reject_rate))) * 10
    for attempt in range(1, limit + 1):
        scene = sample_scene(rng, cfg)
        if accept_scene(scene, cfg):
            return render_sequence(scene, cfg), attempt
    raise RuntimeError(
        f"sequence {index}: no scene accepted in {limit} attempts; "
        f"the occlusion requirement is (nearly) unsatisfiable under this config")


def generate_dataset(seed, n_sequences, cfg=None):
    """``n_sequences`` accepted sequences with a train/test split.

    Sequence ``i`` uses the RNG stream ``(seed, i)``, so results do not depend
    on generation order. Aborts if the overall rejection rate exceeds
    ``cfg.max_reject_rate``.
    """
    cfg = cfg or LeavesConfig()
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    seqs, attempts = [], 0
    for i in range(n_sequences):
        seq, a = generate_sequence(seed, i, cfg)
        attempts += a
        seqs.append(seq)
        if i >= 20 and 1.0 - (i + 1) / attempts > cfg.max_reject_rate:
            raise RuntimeError(f"rejection rate {1 - (i + 1) / attempts:.3f} exceeds {cfg.max_reject_rate}")
    return SequenceDataset.with_split(seqs, cfg.train_fraction)


def make_probe(dr, cfg=None, luminance=None):
    """Two disks on a horizontal collision course, plus the hidden next frame.

    The left disk has radius ``r - dr/2`` and the right one ``r + dr/2``; they
    approach at equal speed and overlap only in the third (target) frame. The
    ground-truth label is +1 when the right disk occludes (dr > 0), -1 when the
    left one does, 0 when ambiguous.
    """
    cfg = cfg or LeavesConfig()
    if abs(dr) > cfg.probe_max_dr:
        raise ValueError(f"|dr|={abs(dr)} exceeds probe_max_dr={cfg.probe_max_dr}")
    r = cfg.probe_radius
    radii = np.array([r - dr / 2.0, r + dr / 2.0])
    if radii.min() <= 0:
        raise ValueError(f"dr={dr} gives a non-positive radius")
    mid = cfg.size / 2.0
    v, sep = cfg.probe_speed, cfg.probe_separation
    traj = np.zeros((3, 2, 2))
    for t in range(3):
        half = sep / 2.0 + (2 - t) * v
        traj[t, 0] = (mid - half, mid)
        traj[t, 1] = (mid + half, mid)
    for d in range(2):
        lo = traj[:, d, 0].min() - radii[d]
        hi = traj[:, d, 0].max() + radii[d]
        if lo < 0 or hi > cfg.size or mid - radii[d] < 0 or mid + radii[d] > cfg.size:
            raise ValueError(f"probe geometry with dr={dr} does not fit a {cfg.size}px canvas")
    left, right, bg = luminance or cfg.probe_luminance
    scene = DiskScene(cfg.radius_ref / radii, radii, [left, right], bg, traj)
    seq = render_sequence(scene, cfg)

    ss = cfg.supersample
    masks = disk_masks(scene, 2, cfg.size, ss)
    both = (masks[0] & masks[1]).reshape(cfg.size, ss, cfg.size, ss).all(axis=(1, 3))
    if not both.any():
        raise ValueError(f"probe with dr={dr} has no full-pixel overlap in the target frame")
    seq.meta.update({
        "probe_dr": float(dr),
        "n_conditioning": 2,
        "label": int(np.sign(dr)),
        "overlap_mask": both.astype(int).tolist(),
        "left_luminance": float(left),
        "right_luminance": float(right),
    })
    return seq
