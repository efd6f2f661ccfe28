"""Executable acceptance checks, shared by ``nextframe selftest`` and the test-suite.

Each check returns a :class:`Check`. Checks 6, 7, 9, 10 and the trained half
of 11 need trained models (``leaves_tau{0,1,2}.bfun`` in a model directory)
and the moving-leaves test split they were trained against.
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis as an
from .checks import fd_check, naive_conv2d
from .ebayes import GaussianMixture1D, bimodal, mmse_denoise, noisy_score, sample_1d
from .leaves import LeavesConfig, disk_masks, DiskScene, generate_dataset, generate_sequence, occlusion_fractions
from .numerics import bf_norm, concat, conv2d, downsample2x, mse_loss, relu, upsample2x
from .numerics import Tensor
from .sampler import SamplerConfig, noise_amplitude, one_step_estimate, rollout, sample_next_frame
from .sequences import load_dataset, save_dataset
from .unet import ModelArch, UNet, load_model, read_checkpoint, save_model


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn, *args, **kw):
    t0 = time.time()
    ok, detail = fn(*args, **kw)
    return Check(name, bool(ok), detail, time.time() - t0)


# ------------------------------------------------------------------ 1

def miyasawa(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    t0 = time.time()
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(1, 5))
        w = rng.dirichlet(np.ones(k))
        w[-1] = 1.0 - w[:-1].sum()
        gm = GaussianMixture1D(tuple(w), tuple(rng.uniform(-3, 3, k)), tuple(rng.uniform(0, 1.5, k)))
        y, sig = rng.uniform(-5, 5), rng.uniform(0.05, 3)
        worst = max(worst, abs(mmse_denoise(gm, y, sig) - (y + sig ** 2 * noisy_score(gm, y, sig))))
    dt = time.time() - t0
    return worst <= 1e-9 and dt < 1.0, f"max |mmse - tweedie| = {worst:.2e} over {n} triples in {dt:.2f}s"


# ------------------------------------------------------------------ 2

def autodiff(seed=0):
    rng = np.random.default_rng(seed)
    t0 = time.time()
    errs = {}

    def shape():
        return int(rng.integers(1, 3)), int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4))

    n, c, h, w = shape()
    co = int(rng.integers(1, 4))
    x, k = rng.standard_normal((n, c, h, w)), rng.standard_normal((co, c, 3, 3))
    errs["conv2d.x"] = fd_check(conv2d, [x, k], 0, rng=rng)
    errs["conv2d.k"] = fd_check(conv2d, [x, k], 1, rng=rng)
    errs["relu"] = fd_check(relu, [rng.standard_normal(shape())], 0, rng=rng)
    errs["downsample2x"] = fd_check(downsample2x, [rng.standard_normal(shape())], 0, rng=rng)
    errs["upsample2x"] = fd_check(upsample2x, [rng.standard_normal(shape())], 0, rng=rng)
    a, b = rng.standard_normal(shape()), None
    b = rng.standard_normal((a.shape[0], 2) + a.shape[2:])
    errs["concat"] = fd_check(lambda p, q: concat([p, q]), [a, b], 1, rng=rng)
    errs["mse_loss"] = fd_check(mse_loss, [a, rng.standard_normal(a.shape)], 0, rng=rng)
    n, c, h, w = shape()
    xb = rng.standard_normal((max(n, 2), c, h, w)) + 0.3
    g = rng.uniform(0.5, 1.5, c)
    for training in (True, False):
        rs = np.ones(c, np.float32)
        errs[f"bf_norm.{'train' if training else 'eval'}"] = fd_check(
            lambda p, q: bf_norm(p, q, rs.copy(), training), [xb, g], 0, rng=rng)
    xs, ks = rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3))
    conv_err = float(np.max(np.abs(conv2d(Tensor(xs), Tensor(ks)).data - naive_conv2d(xs.astype(np.float32), ks.astype(np.float32)))))
    dt = time.time() - t0
    worst = max(errs, key=errs.get)
    ok = max(errs.values()) <= 1e-2 and conv_err <= 1e-6 * max(1.0, np.abs(xs).max() * np.abs(ks).sum() / 4) and dt < 30
    return ok, f"worst fd rel err {errs[worst]:.1e} ({worst}); conv vs loops {conv_err:.1e}; {dt:.1f}s"


# ------------------------------------------------------------------ 3

def homogeneity(models, seed=0, size=32):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in models:
        m.eval()
        tau = m.arch.tau
        y = rng.random((2, size, size)).astype(np.float32)
        c = rng.random((2, tau, size, size)).astype(np.float32)
        base = m(y, c).astype(np.float64)
        for lam in (0.5, 2.0, 10.0):
            out = m(np.float32(lam) * y, np.float32(lam) * c)
            worst = max(worst, np.linalg.norm(out - lam * base) / np.linalg.norm(lam * base))
    return worst <= 1e-4, f"max rel err {worst:.1e} over {len(models)} model(s), lambda in (0.5, 2, 10)"


# ------------------------------------------------------------------ 4

def dataset_invariants(n=1000, seed=7):
    cfg = LeavesConfig()
    ds = generate_dataset(seed, n, cfg)
    bad = []
    for i, s in enumerate(ds.sequences):
        f = s.frames
        if f.shape != (11, 32, 32) or f.min() < 0 or f.max() > 1:
            bad.append((i, "shape/range"))
            continue
        m = s.meta
        scene = DiskScene(m["depths"], m["radii"], m["luminances"], m["background"], m["trajectory"])
        if occlusion_fractions(scene, cfg).max() < cfg.min_occlusion:
            bad.append((i, "occlusion"))
        front = scene.front
        for t in range(len(f)):
            mk = disk_masks(scene, t, cfg.size, cfg.supersample)
            both = (mk[0] & mk[1]).reshape(32, cfg.supersample, 32, cfg.supersample).all(axis=(1, 3))
            if both.any() and not np.allclose(f[t][both], scene.luminances[front], atol=1e-6):
                bad.append((i, f"front rule t={t}"))
                break
    again = [generate_sequence(seed, i, cfg)[0].frames.tobytes() for i in range(0, n, max(1, n // 50))]
    same = all(a == ds.sequences[i].frames.tobytes() for a, i in zip(again, range(0, n, max(1, n // 50))))
    return not bad and same, f"{n} sequences, {len(bad)} violations{' e.g. ' + str(bad[:3]) if bad else ''}; regeneration identical: {same}"


# ------------------------------------------------------------------ 5

def sampling_1d():
    tr = sample_1d(bimodal(), -2.0, alpha=0.5, beta=1.0, sigma0=0.01, max_iters=200)
    det = bool(tr.converged[0]) and abs(tr.final[0] + 0.5) <= 1e-3
    rng = np.random.default_rng(5)
    tr2 = sample_1d(bimodal(), rng.standard_normal(2000), alpha=0.5, beta=0.5, sigma0=0.01, rng=rng, max_iters=200)
    frac = float(np.mean(tr2.final > 0))
    ok = det and tr2.converged.all() and 0.44 <= frac <= 0.56
    return ok, f"deterministic end {tr.final[0]:+.6f} after {tr.iterations[0]} its; right-mode fraction {frac:.3f} of 2000"


# ------------------------------------------------------------------ 8

def sampler_algebra(model=None):
    model = model or UNet(ModelArch(tau=2, base_channels=4), seed=3)
    rng = np.random.default_rng(8)
    c = rng.random((model.arch.tau, 16, 16)).astype(np.float32)
    cfg = SamplerConfig(max_iters=60, seed=1)
    res = sample_next_frame(model, c, cfg, n_samples=3)
    worst = 0.0
    for s_list, a_list, g_list in zip(res.sigmas, res.alphas, res.gammas):
        for s, a, g in zip(s_list, a_list, g_list):
            if a == 1.0 and g == 0.0 and s <= cfg.sigma0:
                continue  # the final full-denoise step
            lhs = (1 - a) ** 2 * s ** 2 + g ** 2
            rhs = (1 - cfg.beta * a) ** 2 * s ** 2
            worst = max(worst, abs(lhs - rhs) / rhs)
    alphas = np.linspace(0.01, 1.0, 50)
    beta_one = bool(np.all(noise_amplitude(alphas, 1.0, 0.37) == 0.0))
    det = sample_next_frame(model, c, SamplerConfig(beta=1.0, max_iters=20, seed=4), 2)
    beta_one &= all(g == 0.0 for gl in det.gammas for g in gl)
    one = SamplerConfig(alpha_init=1.0, beta=1.0, max_iters=1, seed=9)
    bitwise = np.array_equal(sample_next_frame(model, c, one, 2).frames, one_step_estimate(model, c, one, 2))
    ok = worst <= 1e-12 and beta_one and bitwise
    return ok, f"max rel residual of the gamma rule {worst:.1e}; beta=1 gives gamma=0: {beta_one}; one step bitwise: {bitwise}"


# ------------------------------------------------------------------ 11a

def eq7_identity(n=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 500))
        x, a, b = rng.standard_normal((3, d)) * rng.uniform(0.1, 10)
        lhs = np.sum((x - (a + b)) ** 2)
        worst = max(worst, abs(lhs - an.eq7_rhs(an.eq7_terms(x, a, b))) / max(lhs, 1e-300))
    return worst <= 1e-10, f"max rel residual {worst:.1e} over {n} random vector triples"


# ------------------------------------------------------------------ 12

def round_trips():
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp)
        ds = generate_dataset(3, 20)
        save_dataset(ds, p / "d.vseq")
        back = load_dataset(p / "d.vseq")
        vseq = all(a.frames.tobytes() == b.frames.tobytes() for a, b in zip(ds.sequences, back.sequences))
        vseq &= back.train_idx == ds.train_idx and back.test_idx == ds.test_idx
        save_dataset(back, p / "e.vseq")
        vseq &= (p / "d.vseq").read_bytes() == (p / "e.vseq").read_bytes()
        m = UNet(ModelArch(tau=2, base_channels=4), seed=2)
        save_model(m, p / "m.bfun")
        m2 = load_model(p / "m.bfun")
        bfun = all(m.params[k].tobytes() == m2.params[k].tobytes() for k in m.params)
        save_model(m2, p / "n.bfun")
        bfun &= read_checkpoint(p / "n.bfun")[1].keys() == m.params.keys()
        bfun &= (p / "m.bfun").read_bytes() == (p / "n.bfun").read_bytes()
    return vseq and bfun, f"VSEQ bit-exact: {vseq}; BFUN bit-exact: {bfun}"


def offline_checks():
    """Everything that runs without trained models."""
    return [
        _timed("1 miyasawa identity", miyasawa),
        _timed("2 autodiff soundness", autodiff),
        _timed("3 homogeneity (untrained)", homogeneity, [UNet(ModelArch(tau=t, base_channels=8), seed=t) for t in (0, 1, 2)]),
        _timed("4 dataset invariants", dataset_invariants),
        _timed("5 1D sampling", sampling_1d),
        _timed("8 sampler schedule algebra", sampler_algebra),
        _timed("11 partition identity", eq7_identity),
        _timed("12 round trips", round_trips),
    ]


# ------------------------------------------------------------------ trained-model checks

TRAIN_DATA_SEED = 2024
TRAIN_DATA_SIZE = 4000


def load_trained(model_dir):
    model_dir = Path(model_dir)
    out = {}
    for tau in (0, 1, 2):
        p = model_dir / f"leaves_tau{tau}.bfun"
        if p.exists():
            out[tau] = load_model(p, expect={"tau": tau})
    return out


def held_out_frames(n=256, seed=TRAIN_DATA_SEED, total=TRAIN_DATA_SIZE):
    """Test-split sequences of the training dataset, regenerated from their seed.

    The split is the last 10% of indices, so they can be rebuilt one by one
    without regenerating the training part.
    """
    cfg = LeavesConfig()
    first = int(round(cfg.train_fraction * total))
    idx = range(first, min(total, first + n))
    return np.stack([generate_sequence(seed, i, cfg)[0].frames for i in idx])


def curve_ordering(models, frames):
    curves = {t: an.performance_curve(models[t], frames, seed=1) for t in (0, 1, 2)}
    rows = []
    ok = True
    for p0, p1, p2 in zip(curves[0], curves[1], curves[2]):
        if 0.0 <= p0.input_psnr <= 10.0:
            good = p2.output_psnr >= p0.output_psnr + 2.0 and p0.output_psnr < p1.output_psnr < p2.output_psnr
            ok &= good
            rows.append(f"{p0.input_psnr:.1f}dB: {p0.output_psnr:.2f}/{p1.output_psnr:.2f}/{p2.output_psnr:.2f}")
    return ok and bool(rows), "tau0/tau1/tau2 output PSNR at " + "; ".join(rows), curves


def unconditional_slope(model, frames):
    pts = an.performance_curve(model, frames, sigmas=an.sigma_for_psnr(np.arange(0.0, 30.01, 2.5)), seed=2)
    s = an.fit_slope(pts, 0.0, 30.0)
    return 0.35 <= s <= 0.65, f"slope {s:.3f} over [0, 30] dB"


def occlusion_decisions(model, n_samples=64, drs=(-6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0)):
    fit = an.psychometric(model, list(drs), n_samples, SamplerConfig(seed=100))
    f = dict(zip(fit.dr, fit.freq))
    mono = an.monotone_within_noise(fit.freq, n_samples)
    ok = f[4.0] >= 0.9 and f[-4.0] <= 0.1 and 0.3 <= f[0.0] <= 0.7 and mono and fit.converged
    und = sum(fit.undecided) / (n_samples * len(drs))
    detail = (f"P(right) at dr=-4/0/+4: {f[-4.0]:.2f}/{f[0.0]:.2f}/{f[4.0]:.2f}; monotone {mono}; "
              f"logistic mu={fit.mu:.2f} s={fit.s:.2f} converged {fit.converged}; undecided {und:.0%}")
    return ok, detail, fit


def rollout_quality(model, frames, n=20, steps=5, cfg=None):
    """One-step collapse and sampled sharpness over ``n`` rollouts."""
    cfg = cfg or SamplerConfig()
    tau = model.arch.tau
    collapsed = sharp = 0
    ratios = []
    for i in range(n):
        seq = frames[i]
        seed_frames = seq[:tau]
        truth = seq[tau:tau + steps]
        one = rollout(model, seed_frames, steps, SamplerConfig(**{**cfg.to_dict(), "seed": 7000 + i}), "one_step").frames[tau:]
        v = [an.frame_variance(f) for f in one]
        collapsed += v[-1] < 0.25 * v[0]
        smp = rollout(model, seed_frames, steps, SamplerConfig(**{**cfg.to_dict(), "seed": 9000 + i}), "sample").frames[tau:]
        ref = np.mean([an.edge_sharpness(f) for f in truth])
        r = [an.edge_sharpness(f) / ref for f in smp]
        ratios.append(np.median(r))
        sharp += all(0.5 <= x <= 1.5 for x in r)
    ok = collapsed >= 0.8 * n and sharp >= 0.6 * n
    return ok, (f"one-step variance below 25% of first frame by step {steps}: {collapsed}/{n}; "
                f"sampled sharpness within 50% of truth: {sharp}/{n} (median ratio {np.median(ratios):.2f})")


def cue_crossing(model, frames, n_probes=4):
    tau = model.arch.tau
    static_rows, moving_rows = [], []
    for i in range(n_probes):
        seq = frames[i]
        x = seq[-1]
        c = seq[-2:-2 - tau:-1]
        moving_rows.append(an.cue_curves(model, x, c, seed=i, n_draws=2))
        xs, cs = an.static_probe(seq, tau)
        static_rows.append(an.cue_curves(model, xs, cs, seed=i, n_draws=2))

    def mean_rows(groups):
        return [an.CuePoint(*[float(np.mean([g[k].__dict__[f] for g in groups])) for f in
                              ("input_psnr", "psnr_full", "psnr_y", "psnr_c", "euler_residual")],
                            any(g[k].flagged for g in groups)) for k in range(len(groups[0]))]

    st, mv = mean_rows(static_rows), mean_rows(moving_rows)
    cs, cm = an.crossing_point(st), an.crossing_point(mv)
    ok = cs is not None and cm is not None and cs > cm
    fmt = lambda v: "none" if v is None else f"{v:.1f} dB"  # noqa: E731
    return ok, f"crossing static {fmt(cs)} vs moving {fmt(cm)}", {"static": st, "moving": mv}


def trained_checks(model_dir, n_frames=256, quick=False):
    models = load_trained(model_dir)
    missing = [t for t in (0, 1, 2) if t not in models]
    if missing:
        return [Check("6-11 trained-model criteria", False, f"missing models for tau={missing} in {model_dir}")]
    frames = held_out_frames(n_frames)
    out = [_timed("3 homogeneity (trained)", homogeneity, list(models.values()))]
    t0 = time.time()
    ok, detail, _ = curve_ordering(models, frames)
    out.append(Check("6 training ordering", ok, detail, time.time() - t0))
    out.append(_timed("7 unconditional slope", unconditional_slope, models[0], frames))
    t0 = time.time()
    ok, detail, _ = occlusion_decisions(models[2], n_samples=16 if quick else 64)
    out.append(Check("9 occlusion decisions", ok, detail, time.time() - t0))
    out.append(_timed("10 one-step collapse vs sampled coherence", rollout_quality, models[2], frames,
                      n=5 if quick else 20))
    t0 = time.time()
    ok, detail, _ = cue_crossing(models[2], frames)
    out.append(Check("11 cue crossing (trained)", ok, detail, time.time() - t0))
    return out
