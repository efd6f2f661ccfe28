"""Blind conditional denoiser training: noise of random level on the target
frame, clean conditioning frames, mean squared error, Adam."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .numerics import AdamState, NonFiniteError, Tensor, adam_step, backward, mse_loss
from .unet import save_model

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 4
    lr: float = 3e-4
    patience: int = 10            # evaluations without enough improvement before halving lr
    min_improvement: float = 1e-3  # relative improvement that counts as progress
    eval_examples: int = 256
    seed: int = 0
    max_seconds: float = 0.0      # 0 = no wall-clock limit

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)


def sample_noise_levels(rng, n):
    """sigma = u**2 with u ~ U(0, 1): the square root of the level is uniform."""
    return rng.uniform(0.0, 1.0, n) ** 2


def prediction_targets(n_frames, tau):
    """Indices t of frames that have ``tau`` predecessors inside a sequence."""
    return list(range(tau, n_frames))


def make_examples(frames, tau):
    """All (sequence, target index) pairs of a ``[N, T, H, W]`` array."""
    n, t = frames.shape[:2]
    return np.array([(s, k) for s in range(n) for k in prediction_targets(t, tau)], dtype=np.int64).reshape(-1, 2)


def gather(frames, pairs, tau):
    """Targets ``[B, H, W]`` and conditioning ``[B, tau, H, W]`` (most recent first)."""
    s, t = pairs[:, 0], pairs[:, 1]
    x = frames[s, t]
    c = np.stack([frames[s, t - j] for j in range(1, tau + 1)], axis=1) if tau else \
        np.zeros((len(pairs), 0) + frames.shape[2:], np.float32)
    return x, c


def noisy_batch(rng, x):
    sig = sample_noise_levels(rng, len(x)).astype(np.float32)
    y = x + sig[:, None, None] * rng.standard_normal(x.shape).astype(np.float32)
    return y, sig


def evaluate(model, frames, pairs, seed=12345, batch=64):
    """Mean denoising MSE with a fixed noise draw (inference mode)."""
    if len(pairs) == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    tau = model.arch.tau
    was = model.training
    model.eval()
    total = 0.0
    for i in range(0, len(pairs), batch):
        x, c = gather(frames, pairs[i:i + batch], tau)
        y, _ = noisy_batch(rng, x)
        total += float(np.sum((model(y, c) - x).astype(np.float64) ** 2))
    model.training = was
    return total / (len(pairs) * frames.shape[2] * frames.shape[3])


def _predictor_inputs(model, y, c):
    inp, _ = model.stack_inputs(y, c)
    return inp


def train(model, ds, cfg=None, checkpoint=None, on_epoch=None):
    """Fit ``model`` on the train split of ``ds``; the test split drives lr halving.

    ``checkpoint`` (a path) is rewritten after every epoch. A non-finite loss
    aborts training after writing ``<checkpoint>.nan`` for diagnosis.
    """
    cfg = cfg or TrainConfig()
    if cfg.batch_size < 1 or cfg.lr <= 0:
        raise ValueError("batch_size must be >= 1 and lr > 0")
    tau = model.arch.tau
    train_frames = ds.stack("train")
    test_frames = ds.stack("test")
    if train_frames.shape[1] < tau + 1:
        raise ValueError(f"sequences of length {train_frames.shape[1]} cannot train tau={tau}")
    pairs = make_examples(train_frames, tau)
    rng = np.random.default_rng(cfg.seed)
    eval_pairs = make_examples(test_frames, tau) if len(test_frames) else np.zeros((0, 2), np.int64)
    if len(eval_pairs) > cfg.eval_examples:
        eval_pairs = eval_pairs[np.random.default_rng(cfg.seed + 1).choice(len(eval_pairs), cfg.eval_examples, replace=False)]

    names = model.trainable_names()
    state = AdamState(lr=cfg.lr)
    best, stale = np.inf, 0
    history = []
    t0 = time.time()
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(pairs))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = pairs[order[i:i + cfg.batch_size]]
            x, c = gather(train_frames, batch, tau)
            y, _ = noisy_batch(rng, x)
            weights = {k: Tensor(model.params[k], requires_grad=True) for k in names}
            try:
                out = model.forward_tensor(Tensor(_predictor_inputs(model, y, c)), weights)
                loss = mse_loss(out, Tensor(x[:, None]))
                backward(loss)
            except NonFiniteError as exc:
                if checkpoint:
                    save_model(model, f"{checkpoint}.nan", {"epoch": epoch, "error": str(exc)})
                raise RuntimeError(f"non-finite value during training at epoch {epoch}: {exc}") from exc
            new = adam_step([model.params[k] for k in names], [weights[k].grad for k in names], state)
            for k, v in zip(names, new):
                model.params[k] = v
            losses.append(float(loss.data[0]))
        test_loss = evaluate(model, test_frames, eval_pairs)
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "test_loss": test_loss,
               "lr": state.lr, "seconds": time.time() - t0}
        history.append(rec)
        log.info("epoch %d train %.5f test %.5f lr %.2e", epoch, rec["train_loss"], test_loss, state.lr)
        if np.isfinite(test_loss):
            if test_loss < best * (1.0 - cfg.min_improvement):
                best, stale = test_loss, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    state.lr *= 0.5
                    stale = 0
                    log.info("test loss plateaued; lr halved to %.2e", state.lr)
        if checkpoint:
            save_model(model, checkpoint, {"history": history, "train_config": cfg.to_dict()})
        if on_epoch:
            on_epoch(rec)
        if cfg.max_seconds and time.time() - t0 > cfg.max_seconds:
            log.info("wall-clock budget reached after epoch %d", epoch)
            break
    model.eval()
    return TrainResult(model, history)
