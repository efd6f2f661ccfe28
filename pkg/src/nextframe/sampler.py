"""Sampling next frames by iterative partial denoising.

Each chain starts from noise and repeatedly moves along the denoiser residual
``f = x_hat - y`` while injecting a controlled amount of fresh noise, so that
its effective noise level (the RMS of ``f``) shrinks at every step. Many
chains are advanced together as one batch; each has its own RNG stream
seeded with ``seed + chain index``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .sequences import ImageSequence


@dataclass
class SamplerConfig:
    beta: float = 0.5
    sigma0: float = 0.01
    alpha_init: float = 0.1
    alpha_ratio: float = 1.05
    alpha_cap: float = 1.0
    max_iters: int = 500
    init_mean: float = 0.5
    init_std: float = 1.0
    seed: int = 0
    snapshot_every: int = 0  # keep every n-th iterate in the trajectory (0 = none)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be > 0")
        if not 0.0 < self.alpha_init <= self.alpha_cap <= 1.0:
            raise ValueError("need 0 < alpha_init <= alpha_cap <= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def alpha(self, k):
        """Geometric step size for iteration k = 1, 2, ..."""
        return min(self.alpha_cap, self.alpha_init * self.alpha_ratio ** (k - 1))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def noise_amplitude(alpha, beta, sigma):
    """gamma with (1 - alpha)^2 sigma^2 + gamma^2 = (1 - beta alpha)^2 sigma^2."""
    g2 = ((1.0 - beta * alpha) ** 2 - (1.0 - alpha) ** 2) * np.square(sigma, dtype=np.float64)
    return np.sqrt(np.maximum(g2, 0.0))


@dataclass
class SampleResult:
    frames: np.ndarray          # [n, H, W]
    converged: np.ndarray       # [n] bool
    iterations: np.ndarray      # [n]
    sigmas: list                # per chain: effective noise level at each iteration
    alphas: list
    gammas: list
    snapshots: list = field(default_factory=list)  # (iteration, [n, H, W]) pairs

    @property
    def all_converged(self):
        return bool(self.converged.all())


def sample_next_frame(model, c, cfg=None, n_samples=1, y0=None):
    """Draw ``n_samples`` next frames given conditioning ``c`` (``[tau, H, W]``).

    A chain stops once its effective noise level is <= ``cfg.sigma0``; its
    final step is then a full denoising step (alpha = 1, no noise). Chains
    that reach ``max_iters`` first are returned as they are and flagged in
    ``converged``.
    """
    cfg = cfg or SamplerConfig()
    tau = model.arch.tau
    c = np.asarray(c, dtype=np.float32)
    if c.ndim == 2 and tau == 1:
        c = c[None]
    if tau == 0 and c.size == 0:
        h = w = None
    else:
        if c.shape[0] != tau:
            raise ValueError(f"model needs {tau} conditioning frames, got {c.shape[0]}")
        h, w = c.shape[1:]
    rngs = [np.random.default_rng(cfg.seed + i) for i in range(n_samples)]
    if y0 is None:
        if h is None:
            raise ValueError("an unconditional model needs y0 to fix the frame size")
        y = np.stack([cfg.init_mean + cfg.init_std * r.standard_normal((h, w)) for r in rngs]).astype(np.float32)
    else:
        y = np.array(np.broadcast_to(np.asarray(y0, dtype=np.float32), (n_samples,) + np.shape(y0)[-2:]))
        h, w = y.shape[1:]
    cc = np.broadcast_to(c.reshape((1, tau, h, w)), (n_samples, tau, h, w))
    d = h * w

    active = np.ones(n_samples, dtype=bool)
    iters = np.zeros(n_samples, dtype=int)
    sigmas = [[] for _ in range(n_samples)]
    alphas = [[] for _ in range(n_samples)]
    gammas = [[] for _ in range(n_samples)]
    snaps = []
    for k in range(1, cfg.max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        yk = y[idx]
        xhat = model(yk, cc[idx])
        f = xhat - yk
        sig = np.sqrt(np.sum(np.square(f, dtype=np.float64), axis=(1, 2)) / d)
        a = cfg.alpha(k)
        gam = noise_amplitude(a, cfg.beta, sig)
        for j, i in enumerate(idx):
            sigmas[i].append(float(sig[j]))
            iters[i] = k
            if sig[j] <= cfg.sigma0:
                y[i] = xhat[j]
                alphas[i].append(1.0)
                gammas[i].append(0.0)
                active[i] = False
                continue
            alphas[i].append(a)
            gammas[i].append(float(gam[j]))
            step = xhat[j] if a == 1.0 else yk[j] + np.float32(a) * f[j]
            if gam[j] > 0:
                step = step + np.float32(gam[j]) * rngs[i].standard_normal((h, w)).astype(np.float32)
            y[i] = step
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            snaps.append((k, y.copy()))
    return SampleResult(y, ~active, iters, sigmas, alphas, gammas, snaps)


def one_step_estimate(model, c, cfg=None, n_samples=1):
    """Denoise pure noise once: the least-squares (posterior-mean) prediction."""
    cfg = cfg or SamplerConfig()
    tau = model.arch.tau
    c = np.asarray(c, dtype=np.float32).reshape((tau,) + np.shape(c)[-2:])
    h, w = c.shape[1:]
    rngs = [np.random.default_rng(cfg.seed + i) for i in range(n_samples)]
    y0 = np.stack([cfg.init_mean + cfg.init_std * r.standard_normal((h, w)) for r in rngs]).astype(np.float32)
    return model(y0, np.broadcast_to(c[None], (n_samples, tau, h, w)))


def rollout(model, seed_frames, n_steps, cfg=None, mode="sample"):
    """Generate ``n_steps`` frames recursively, conditioning on the latest ``tau``.

    ``seed_frames`` are in temporal order (oldest first). Generated frames are
    clipped to [0, 1] before being fed back. ``meta['flags']`` lists steps whose
    sampler did not converge.
    """
    cfg = cfg or SamplerConfig()
    if mode not in ("sample", "one_step"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    frames = [np.asarray(f, dtype=np.float32) for f in seed_frames]
    tau = model.arch.tau
    if len(frames) < max(tau, 1):
        raise ValueError(f"need at least {max(tau, 1)} seed frames")
    flags = []
    for step in range(n_steps):
        c = np.stack(frames[::-1][:tau]) if tau else np.zeros((0,) + frames[0].shape, np.float32)
        step_cfg = SamplerConfig(**{**cfg.to_dict(), "seed": cfg.seed + 1000 * step})
        if mode == "sample":
            y0 = None if tau else step_cfg.init_mean + step_cfg.init_std * np.random.default_rng(step_cfg.seed).standard_normal(frames[0].shape)
            res = sample_next_frame(model, c, step_cfg, 1, y0=y0)
            if not res.all_converged:
                flags.append(step)
            nxt = res.frames[0]
        else:
            if tau:
                nxt = one_step_estimate(model, c, step_cfg)[0]
            else:
                y0 = step_cfg.init_mean + step_cfg.init_std * np.random.default_rng(step_cfg.seed).standard_normal(frames[0].shape)
                nxt = model(y0.astype(np.float32))
        frames.append(np.clip(nxt, 0.0, 1.0))
    return ImageSequence(np.stack(frames), {"source": f"rollout:{mode}", "n_seed": len(seed_frames), "flags": flags})


LEFT, RIGHT, UNDECIDED = "left_occludes", "right_occludes", "undecided"


def occlusion_outcome(frame, probe_meta, tol=0.1):
    """Which disk a predicted frame shows on top, judged in the overlap region."""
    mask = np.asarray(probe_meta.get("overlap_mask", []), dtype=bool)
    if mask.size == 0 or not mask.any():
        raise ValueError("probe has no overlap region")
    m = float(np.mean(np.asarray(frame)[mask]))
    dl = abs(m - probe_meta["left_luminance"])
    dr = abs(m - probe_meta["right_luminance"])
    if dr <= tol < dl:
        return RIGHT
    if dl <= tol < dr:
        return LEFT
    return UNDECIDED


def classify_outcomes(frames, probe_meta, tol=0.1):
    return [occlusion_outcome(f, probe_meta, tol) for f in frames]
