"""Quantitative analyses of a trained conditional denoiser.

PSNR performance curves, adaptive filters (one Jacobian row by reverse mode),
the split of an estimate into observation and conditioning contributions with
the corresponding partition of squared error, and occlusion psychometrics.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .leaves import make_probe
from .numerics import Tensor, backward, pixel_select
from .sampler import LEFT, RIGHT, UNDECIDED, SamplerConfig, classify_outcomes, sample_next_frame

log = logging.getLogger(__name__)

PSNR_CAP = 100.0


def psnr(x, xhat, i_range=1.0):
    """10 log10(I^2 / MSE), clamped at 100 dB for an exact match."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"psnr: shape mismatch {x.shape} vs {xhat.shape}")
    mse = np.mean((x - xhat) ** 2)
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(i_range ** 2 / mse)))


def sigma_for_psnr(db, i_range=1.0):
    """Noise std whose expected input PSNR is ``db``."""
    return i_range * 10.0 ** (-np.asarray(db, dtype=np.float64) / 20.0)


def default_input_psnrs():
    return np.arange(-10.0, 45.0 + 1e-9, 5.0)


# ---------------------------------------------------------------- curves

@dataclass
class PsnrPoint:
    input_psnr: float
    output_psnr: float
    tau: int
    sequence_id: object  # int for a single sequence, "mean" for an average
    sigma: float = float("nan")


def performance_curve(model, frames, sigmas=None, seed=0, target_index=-1):
    """Average input and output PSNR over test sequences at each noise level.

    ``frames`` is ``[N, T, H, W]``. One target frame per sequence is used
    (``target_index``), preceded by its ``tau`` conditioning frames. The noise
    draw depends only on ``seed`` and the sequence, so curves of different
    models are paired.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or len(frames) == 0:
        raise ValueError("performance_curve needs a non-empty [N, T, H, W] test set")
    tau = model.arch.tau
    t = target_index % frames.shape[1]
    if t < tau:
        raise ValueError(f"target index {t} has fewer than tau={tau} predecessors")
    sigmas = sigma_for_psnr(default_input_psnrs()) if sigmas is None else np.asarray(sigmas, dtype=np.float64)
    x = frames[:, t]
    c = np.stack([frames[:, t - j] for j in range(1, tau + 1)], axis=1) if tau else None
    points = []
    for k, sig in enumerate(sigmas):
        rng = np.random.default_rng([seed, k])
        y = (x + np.float32(sig) * rng.standard_normal(x.shape).astype(np.float32)).astype(np.float32)
        out = []
        for i in range(0, len(x), 64):
            out.append(model(y[i:i + 64], None if c is None else c[i:i + 64]))
        xhat = np.concatenate(out)
        pin = np.mean([psnr(a, b) for a, b in zip(x, y)])
        pout = np.mean([psnr(a, b) for a, b in zip(x, xhat)])
        points.append(PsnrPoint(float(pin), float(pout), tau, "mean", float(sig)))
    return points


def fit_slope(points, lo=0.0, hi=30.0):
    """Least-squares slope of output against input PSNR on [lo, hi] dB."""
    sel = [(p.input_psnr, p.output_psnr) for p in points if lo <= p.input_psnr <= hi]
    if len(sel) < 2:
        raise ValueError(f"need >= 2 curve points in [{lo}, {hi}] dB, got {len(sel)}")
    a = np.array(sel)
    return float(np.polyfit(a[:, 0], a[:, 1], 1)[0])


def write_csv(path, rows, header=None):
    """Write dataclasses or dicts as CSV with a header line."""
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else dict(r) for r in rows]
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in header})


# ---------------------------------------------------------------- adaptive filters

@dataclass
class AdaptiveFilter:
    weights: np.ndarray  # [in_channels, H, W]: y first (if used), then c most recent first
    value: float         # x_hat at the pixel
    pixel: tuple
    inputs: np.ndarray   # the network input the row was taken at

    def euler_sum(self):
        return float(np.sum(self.weights.astype(np.float64) * self.inputs))


def adaptive_filter(model, y, c, pixel):
    """Gradient of output pixel ``(i, j)`` with respect to every input pixel."""
    inp, _ = model.stack_inputs(y, c)
    h, w = inp.shape[2:]
    i, j = pixel
    if not (0 <= i < h and 0 <= j < w):
        raise ValueError(f"pixel {pixel} outside a {h}x{w} frame")
    was = model.training
    model.eval()
    x = Tensor(inp, requires_grad=True)
    out = model.forward_tensor(x)
    val = pixel_select(out, (0, 0, i, j))
    backward(val)
    model.training = was
    return AdaptiveFilter(x.grad[0].copy(), float(val.data[0]), (i, j), inp[0].astype(np.float64))


# ---------------------------------------------------------------- cue decomposition

def eq7_terms(x, xhat_y, xhat_c):
    """Terms of the squared-error partition, in float64."""
    x, a, b = (np.asarray(v, dtype=np.float64).ravel() for v in (x, xhat_y, xhat_c))
    return {
        "err_c": float(np.sum((x - b) ** 2)),
        "err_y": float(np.sum((x - a) ** 2)),
        "norm_x": float(np.sum(x ** 2)),
        "inner": float(np.sum(a * b)),
    }


def eq7_rhs(terms):
    """||x - x_hat_c||^2 + ||x - x_hat_y||^2 - ||x||^2 + 2 <x_hat_y, x_hat_c>."""
    return terms["err_c"] + terms["err_y"] - terms["norm_x"] + 2.0 * terms["inner"]


@dataclass
class CueDecomposition:
    x: np.ndarray
    xhat: np.ndarray
    xhat_y: np.ndarray
    xhat_c: np.ndarray
    eps: float
    euler_residual: float
    flagged: bool
    terms: dict = field(default_factory=dict)

    @property
    def total_error(self):
        return float(np.sum((self.x.astype(np.float64) - self.xhat) ** 2))


def _directional(model, y, c, which, eps):
    """J v along v = the input itself, by central differences scaled by eps."""
    if which == "y":
        hi, lo = model(y * (1 + eps), c), model(y * (1 - eps), c)
    else:
        hi, lo = model(y, c * (1 + eps)), model(y, c * (1 - eps))
    return (hi.astype(np.float64) - lo) / (2 * eps)


def cue_decomposition(model, x, y, c, eps=1e-3, tol=1e-2, retries=2):
    """Split x_hat(y, c) into the observation part J_y y and conditioning part J_c c.

    Both parts come from directional differences with relative step ``eps``.
    When their sum misses x_hat by more than ``tol`` (relative), the step
    straddled a kink of the network and is retried at eps/10; the result is
    flagged if that still fails.
    """
    y = np.asarray(y, dtype=np.float32)
    c = np.asarray(c, dtype=np.float32)
    if model.arch.tau == 0 or not model.arch.use_observation:
        raise ValueError("cue decomposition needs both an observation and conditioning frames")
    xhat = model(y, c).astype(np.float64)
    denom = max(np.linalg.norm(xhat), 1e-12)
    for attempt in range(retries + 1):
        xy = _directional(model, y, c, "y", eps)
        xc = _directional(model, y, c, "c", eps)
        res = float(np.linalg.norm(xy + xc - xhat) / denom)
        if res <= tol:
            break
        if attempt < retries:
            log.info("cue_decomposition: euler residual %.3g at eps=%g, retrying", res, eps)
            eps /= 10.0
    flagged = res > tol
    if flagged:
        log.warning("cue_decomposition: euler residual %.3g exceeds %g", res, tol)
    return CueDecomposition(np.asarray(x, np.float64), xhat, xy, xc, eps, res, flagged, eq7_terms(x, xy, xc))


@dataclass
class CuePoint:
    input_psnr: float
    psnr_full: float
    psnr_y: float
    psnr_c: float
    euler_residual: float
    flagged: bool


def cue_curves(model, x, c, input_psnrs=None, seed=0, n_draws=4):
    """PSNR of x_hat, x_hat_y and x_hat_c against input PSNR for one target."""
    input_psnrs = default_input_psnrs() if input_psnrs is None else input_psnrs
    x = np.asarray(x, dtype=np.float32)
    rows = []
    for k, db in enumerate(input_psnrs):
        rng = np.random.default_rng([seed, k])
        acc = []
        for _ in range(n_draws):
            y = x + np.float32(sigma_for_psnr(db)) * rng.standard_normal(x.shape).astype(np.float32)
            d = cue_decomposition(model, x, y, c)
            acc.append((psnr(x, y), psnr(x, d.xhat), psnr(x, d.xhat_y), psnr(x, d.xhat_c), d.euler_residual, d.flagged))
        a = np.array([r[:5] for r in acc])
        rows.append(CuePoint(*map(float, a.mean(axis=0)), any(r[5] for r in acc)))
    return rows


def crossing_point(rows):
    """Input PSNR where the observation curve overtakes the conditioning curve.

    Returns None when the curves do not cross on the grid.
    """
    xs = np.array([r.input_psnr for r in rows])
    d = np.array([r.psnr_y - r.psnr_c for r in rows])
    for k in range(len(d) - 1):
        if d[k] < 0 <= d[k + 1]:
            return float(xs[k] + (xs[k + 1] - xs[k]) * (-d[k]) / (d[k + 1] - d[k]))
    return None


def static_probe(frames, tau):
    """Conditioning and target for a scene that does not move: the frame repeated."""
    f = np.asarray(frames[-1], dtype=np.float32)
    return f, np.stack([f] * tau)


# ---------------------------------------------------------------- psychometrics

def logistic(dr, mu, s):
    return 1.0 / (1.0 + np.exp(-(np.asarray(dr, dtype=np.float64) - mu) / s))


def _nll(params, dr, k, n):
    mu, log_s = params
    p = np.clip(logistic(dr, mu, np.exp(log_s)), 1e-12, 1 - 1e-12)
    return -float(np.sum(k * np.log(p) + (n - k) * np.log1p(-p)))


def fit_logistic(dr, k, n):
    """Maximum-likelihood (mu, s) for binomial counts ``k`` of ``n`` at each ``dr``.

    A coarse grid picks the start, Nelder-Mead refines it. Returns
    (mu, s, loglik, converged).
    """
    dr, k, n = (np.asarray(v, dtype=np.float64) for v in (dr, k, n))
    span = max(np.ptp(dr), 1.0)
    mus = np.linspace(dr.min() - span / 2, dr.max() + span / 2, 41)
    logs = np.log(np.logspace(-2, 1, 31) * span)
    best = min(((m, ls) for m in mus for ls in logs), key=lambda p: _nll(p, dr, k, n))
    res = minimize(_nll, best, args=(dr, k, n), method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 2000})
    mu, log_s = res.x
    return float(mu), float(np.exp(log_s)), -float(res.fun), bool(res.success)


@dataclass
class PsychometricFit:
    dr: list
    n: int
    right: list
    left: list
    undecided: list
    mu: float
    s: float
    loglik: float
    converged: bool
    flagged: bool

    @property
    def freq(self):
        return [r / self.n for r in self.right]

    def rows(self):
        return [{"dr": d, "n": self.n, "right": r, "left": l, "undecided": u, "freq_right": r / self.n,
                 "fit": float(logistic(d, self.mu, self.s))}
                for d, r, l, u in zip(self.dr, self.right, self.left, self.undecided)]


def classify_samples(frames, meta, tol=0.1):
    counts = {LEFT: 0, RIGHT: 0, UNDECIDED: 0}
    for o in classify_outcomes(frames, meta, tol):
        counts[o] += 1
    return counts


def psychometric(model, drs, n_samples=64, cfg=None, probe_cfg=None, tol=0.1, max_undecided=0.2):
    """Right-occlusion frequency at each radius difference, with a logistic fit.

    Undecided samples count as "not right" in the frequency. The fit is
    flagged when more than ``max_undecided`` of the samples at some point
    were undecided, or when the optimiser did not converge.
    """
    cfg = cfg or SamplerConfig()
    right, left, und = [], [], []
    for k, dr in enumerate(drs):
        probe = make_probe(dr, probe_cfg)
        c = probe.frames[1::-1]  # most recent first
        res = sample_next_frame(model, c, SamplerConfig(**{**cfg.to_dict(), "seed": cfg.seed + 10_000 * k}), n_samples)
        counts = classify_samples(res.frames, probe.meta, tol)
        right.append(counts[RIGHT])
        left.append(counts[LEFT])
        und.append(counts[UNDECIDED])
        log.info("dr=%+.1f right=%d left=%d undecided=%d unconverged=%d", dr, counts[RIGHT], counts[LEFT],
                 counts[UNDECIDED], int((~res.converged).sum()))
    mu, s, ll, ok = fit_logistic(drs, right, [n_samples] * len(drs))
    flagged = (not ok) or any(u > max_undecided * n_samples for u in und)
    return PsychometricFit(list(map(float, drs)), n_samples, right, left, und, mu, s, ll, ok, flagged)


def monotone_within_noise(freqs, n, z=2.0):
    """No drop between neighbouring points larger than z binomial standard errors."""
    f = np.asarray(freqs, dtype=np.float64)
    for a, b in zip(f[:-1], f[1:]):
        p = min(max((a + b) / 2, 1.0 / n), 1 - 1.0 / n)
        if a - b > z * np.sqrt(2 * p * (1 - p) / n):
            return False
    return True


# ---------------------------------------------------------------- frame statistics

def edge_sharpness(frame, top_fraction=0.05):
    """Mean gradient magnitude over the strongest ``top_fraction`` of pixels."""
    f = np.asarray(frame, dtype=np.float64)
    gx = np.diff(f, axis=1)[:-1, :]
    gy = np.diff(f, axis=0)[:, :-1]
    mag = np.hypot(gx, gy).ravel()
    k = max(1, int(round(top_fraction * mag.size)))
    return float(np.mean(np.sort(mag)[-k:]))


def frame_variance(frame):
    return float(np.var(np.asarray(frame, dtype=np.float64)))
