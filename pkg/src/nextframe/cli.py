"""Command-line entry point: ``nextframe <subcommand> ...``.

Options can also come from ``--config file.json``; explicit flags win over the
file and unknown keys are rejected. Every run that writes artifacts leaves a
``manifest.json`` (or ``<output>.manifest.json``) with the resolved settings.
Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import subprocess
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

log = logging.getLogger("nextframe")

FORMAT_VERSION = 1


class UsageError(Exception):
    pass


# Per-subcommand options: name -> (type, default, help). Nested config
# sections ("leaves", "sampler", "train") are only settable from the JSON file.
OPTIONS = {
    "gen-leaves": {
        "n": (int, 100, "number of sequences"),
        "seed": (int, 0, "base seed"),
        "out": (str, None, "output .vseq file"),
        "preview": (int, 4, "sequences shown in the preview figure (0 = none)"),
    },
    "ingest": {
        "dir": (str, None, "directory of clips (subdirectories of .pgm frames)"),
        "out": (str, None, "output .vseq file"),
        "crop_grid": (str, "3x3", "crop locations per frame, RxC"),
        "scales": (str, "1", "comma-separated crop scales"),
        "size": (int, 32, "crop size in pixels"),
        "seed": (int, 0, "unused; recorded for the manifest"),
    },
    "train": {
        "data": (str, None, "training .vseq file"),
        "tau": (int, 2, "number of conditioning frames"),
        "epochs": (int, 150, "maximum epochs"),
        "seed": (int, 0, "initialisation and batch-order seed"),
        "out": (str, None, "output .bfun checkpoint"),
        "base_channels": (int, 64, "channels at the finest scale"),
        "batch_size": (int, 4, "examples per step"),
        "lr": (float, 3e-4, "Adam learning rate"),
        "max_seconds": (float, 0.0, "wall-clock budget (0 = none)"),
        "no_observation": (bool, False, "prediction-only baseline without the noisy frame"),
    },
    "denoise": {
        "model": (str, None, "checkpoint"),
        "data": (str, None, ".vseq file"),
        "sigma": (float, 0.1, "noise std added to the target frame"),
        "split": (str, "test", "which split to evaluate (train|test|all)"),
        "seed": (int, 0, "noise seed"),
        "out": (str, None, "output directory"),
    },
    "sample": {
        "model": (str, None, "checkpoint"),
        "cond": (str, None, "conditioning as <file.vseq>:<sequence index>[:<target frame>]"),
        "probe": (float, None, "use an occlusion probe with this radius difference instead of --cond"),
        "n_samples": (int, 8, "number of samples"),
        "beta": (float, 0.5, "injected-noise fraction"),
        "sigma0": (float, 0.01, "stopping noise level"),
        "seed": (int, 0, "base seed (chain i uses seed + i)"),
        "snapshot_every": (int, 5, "keep every n-th iterate of chain 0 (0 = none)"),
        "out": (str, None, "output directory"),
    },
    "rollout": {
        "model": (str, None, "checkpoint"),
        "cond": (str, None, "seed frames as <file.vseq>:<sequence index>"),
        "steps": (int, 5, "frames to generate"),
        "mode": (str, "sample", "sample | one_step"),
        "seed": (int, 0, "base seed"),
        "out": (str, None, "output directory"),
    },
    "demo1d": {
        "out": (str, None, "output directory"),
        "seed": (int, 0, "seed for the noisy chains"),
        "n_chains": (int, 2000, "chains for the mode-frequency run"),
    },
    "selftest": {
        "trained_model": (str, None, "directory with leaves_tau{0,1,2}.bfun; enables the trained-model checks"),
        "quick": (bool, False, "fewer samples in the trained-model checks"),
        "seed": (int, 0, "unused; recorded for the manifest"),
    },
}

ANALYZE_OPTIONS = {
    "curve": {
        "model": (str, None, "comma-separated checkpoints"),
        "data": (str, None, ".vseq file (its test split is used)"),
        "psnrs": (str, "-10:45:5", "input PSNR grid lo:hi:step in dB"),
        "seed": (int, 0, "noise seed"),
        "out": (str, None, "output directory"),
    },
    "filter": {
        "model": (str, None, "checkpoint"),
        "cond": (str, None, "<file.vseq>:<sequence index>[:<target frame>]"),
        "pixel": (str, "16,16", "output pixel row,col"),
        "sigma": (float, 0.2, "noise std on the target"),
        "seed": (int, 0, "noise seed"),
        "out": (str, None, "output directory"),
    },
    "cues": {
        "model": (str, None, "checkpoint"),
        "cond": (str, None, "<file.vseq>:<sequence index>"),
        "seed": (int, 0, "noise seed"),
        "draws": (int, 4, "noise draws per input level"),
        "out": (str, None, "output directory"),
    },
    "psycho": {
        "model": (str, None, "checkpoint (tau = 2)"),
        "drs": (str, "-6,-4,-2,0,2,4,6", "radius differences in px"),
        "n_samples": (int, 64, "samples per radius difference"),
        "beta": (float, 0.5, "injected-noise fraction"),
        "sigma0": (float, 0.01, "stopping noise level"),
        "seed": (int, 0, "base seed"),
        "out": (str, None, "output directory"),
    },
}

SECTIONS = ("leaves", "sampler", "train")


def _add_options(p, spec):
    for name, (typ, _default, hlp) in spec.items():
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, dest=name, action="store_const", const=True, default=None, help=hlp)
        else:
            p.add_argument(flag, dest=name, type=typ, default=None, help=hlp)


def build_parser():
    p = argparse.ArgumentParser(prog="nextframe", description="Conditional denoising, sampling and analysis of next-frame prediction.")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, spec in OPTIONS.items():
        _add_options(sub.add_parser(name), spec)
    an = sub.add_parser("analyze")
    asub = an.add_subparsers(dest="analysis", required=True)
    for name, spec in ANALYZE_OPTIONS.items():
        _add_options(asub.add_parser(name), spec)
    return p


def resolve(args):
    """Merge defaults, the JSON config and explicit flags into one dict."""
    spec = ANALYZE_OPTIONS[args.analysis] if args.command == "analyze" else OPTIONS[args.command]
    cfg = {k: v[1] for k, v in spec.items()}
    sections = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(doc) - set(spec) - set(SECTIONS)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        for k, v in doc.items():
            if k in SECTIONS:
                sections[k] = v
            else:
                cfg[k] = v
    for k in spec:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg, sections


def _need(cfg, *names):
    missing = [n for n in names if cfg.get(n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _code_version():
    try:
        ver = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        ver = "unknown"
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent).stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        rev = None
    return {"package": ver, "git": rev, "python": platform.python_version(), "numpy": np.__version__}


def write_manifest(path, command, cfg, sections, extra=None):
    doc = {"format_version": FORMAT_VERSION, "command": command, "argv": sys.argv[1:], "config": cfg,
           "sections": sections, "code": _code_version(), "time": time.strftime("%Y-%m-%dT%H:%M:%S")}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=1, default=_jsonable))
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _outdir(cfg):
    _need(cfg, "out")
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _parse_cond(spec, tau):
    """``file.vseq:index[:target]`` -> (sequence, conditioning most recent first, target or None)."""
    from .sequences import load_dataset

    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"--cond must look like file.vseq:index[:target], got {spec!r}")
    ds = load_dataset(parts[0])
    seq = ds.sequences[int(parts[1])].frames
    t = int(parts[2]) if len(parts) == 3 else min(tau, len(seq) - 1) if tau else len(seq) - 1
    if t < tau or t >= len(seq):
        raise UsageError(f"target frame {t} needs {tau} predecessors inside a {len(seq)}-frame sequence")
    c = seq[t - tau:t][::-1]
    return seq, c, seq[t]


# ------------------------------------------------------------------ subcommands

def cmd_gen_leaves(cfg, sections):
    from .leaves import LeavesConfig, generate_dataset
    from .sequences import save_dataset

    _need(cfg, "out")
    lc = LeavesConfig.from_dict(sections.get("leaves", {}))
    ds = generate_dataset(cfg["seed"], cfg["n"], lc)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    if cfg["preview"]:
        from .plotting import plot_frames

        k = min(cfg["preview"], len(ds))
        plot_frames([ds.sequences[i].frames for i in range(k)], out.with_suffix(".png"),
                    [f"seq {i}" for i in range(k)])
    write_manifest(f"{out}.manifest.json", "gen-leaves", cfg, {"leaves": lc.to_dict()},
                   {"n_train": len(ds.train_idx), "n_test": len(ds.test_idx)})
    print(f"wrote {len(ds)} sequences ({len(ds.train_idx)} train / {len(ds.test_idx)} test) to {out}")


def cmd_ingest(cfg, sections):
    from .sequences import ingest_frames, save_dataset

    _need(cfg, "dir", "out")
    try:
        grid = tuple(int(v) for v in cfg["crop_grid"].lower().split("x"))
        scales = tuple(int(v) for v in str(cfg["scales"]).split(","))
    except ValueError as exc:
        raise UsageError(f"bad --crop-grid or --scales: {exc}") from exc
    ds = ingest_frames(cfg["dir"], grid, scales, cfg["size"])
    save_dataset(ds, cfg["out"])
    write_manifest(f"{cfg['out']}.manifest.json", "ingest", cfg, sections)
    print(f"wrote {len(ds)} sequences to {cfg['out']}")


def cmd_train(cfg, sections):
    from .sequences import load_dataset
    from .train import TrainConfig, train
    from .unet import ModelArch, UNet

    _need(cfg, "data", "out")
    tc = TrainConfig.from_dict({**sections.get("train", {}), "epochs": cfg["epochs"], "seed": cfg["seed"],
                                "batch_size": cfg["batch_size"], "lr": cfg["lr"], "max_seconds": cfg["max_seconds"]})
    arch = ModelArch(tau=cfg["tau"], base_channels=cfg["base_channels"], use_observation=not cfg["no_observation"])
    ds = load_dataset(cfg["data"])
    model = UNet(arch, seed=cfg["seed"])
    res = train(model, ds, tc, checkpoint=cfg["out"],
                on_epoch=lambda r: print(f"epoch {r['epoch']}: train {r['train_loss']:.5f} test {r['test_loss']:.5f}", flush=True))
    write_manifest(f"{cfg['out']}.manifest.json", "train", cfg, {"train": tc.to_dict()},
                   {"arch": arch.to_dict(), "history": res.history})


def cmd_denoise(cfg, sections):
    from .analysis import psnr, write_csv
    from .plotting import plot_frames
    from .sequences import load_dataset
    from .unet import load_model

    _need(cfg, "model", "data")
    out = _outdir(cfg)
    model = load_model(cfg["model"])
    tau = model.arch.tau
    frames = load_dataset(cfg["data"]).stack(cfg["split"])
    if len(frames) == 0:
        raise ValueError(f"split {cfg['split']!r} is empty")
    t = frames.shape[1] - 1
    x = frames[:, t]
    c = np.stack([frames[:, t - j] for j in range(1, tau + 1)], axis=1) if tau else None
    rng = np.random.default_rng(cfg["seed"])
    y = (x + np.float32(cfg["sigma"]) * rng.standard_normal(x.shape).astype(np.float32)).astype(np.float32)
    xhat = np.concatenate([model(y[i:i + 64], None if c is None else c[i:i + 64]) for i in range(0, len(x), 64)])
    rows = [{"sequence": i, "input_psnr": psnr(a, b), "output_psnr": psnr(a, d)} for i, (a, b, d) in enumerate(zip(x, y, xhat))]
    write_csv(out / "denoise.csv", rows)
    k = min(6, len(x))
    plot_frames([np.clip(y[:k], 0, 1), np.clip(xhat[:k], 0, 1), x[:k]], out / "denoise.png", ["noisy", "denoised", "clean"])
    write_manifest(out / "manifest.json", "denoise", cfg, sections)
    print(f"mean PSNR {np.mean([r['input_psnr'] for r in rows]):.2f} dB -> {np.mean([r['output_psnr'] for r in rows]):.2f} dB over {len(rows)} frames")


def _sampler_cfg(cfg, sections):
    from .sampler import SamplerConfig

    base = dict(sections.get("sampler", {}))
    for k in ("beta", "sigma0", "seed", "snapshot_every"):
        if k in cfg and cfg[k] is not None:
            base[k] = cfg[k]
    return SamplerConfig.from_dict(base)


def cmd_sample(cfg, sections):
    from .leaves import LeavesConfig, make_probe
    from .plotting import plot_frames
    from .sampler import classify_outcomes
    from .sequences import ImageSequence, SequenceDataset, save_dataset
    from .unet import load_model

    _need(cfg, "model")
    out = _outdir(cfg)
    model = load_model(cfg["model"])
    sc = _sampler_cfg(cfg, sections)
    meta = None
    if cfg["probe"] is not None:
        if model.arch.tau != 2:
            raise UsageError("occlusion probes provide two conditioning frames; use a tau=2 model")
        probe = make_probe(cfg["probe"], LeavesConfig.from_dict(sections.get("leaves", {})))
        c, target, meta = probe.frames[1::-1], probe.frames[2], probe.meta
    elif cfg["cond"]:
        _, c, target = _parse_cond(cfg["cond"], model.arch.tau)
    else:
        raise UsageError("give --cond or --probe")
    from .sampler import sample_next_frame

    res = sample_next_frame(model, c, sc, cfg["n_samples"])
    frames = np.clip(res.frames, 0, 1)
    seqs = [ImageSequence(f[None], {"chain": i, "converged": bool(res.converged[i]), "iterations": int(res.iterations[i])})
            for i, f in enumerate(frames)]
    save_dataset(SequenceDataset(seqs, [], list(range(len(seqs)))), out / "samples.vseq")
    if res.snapshots:
        traj = np.stack([np.clip(s[0], 0, 1) for _, s in res.snapshots])
        save_dataset(SequenceDataset([ImageSequence(traj, {"chain": 0, "iterations": [k for k, _ in res.snapshots]})], [], [0]),
                     out / "trajectory.vseq")
    rows = [{"chain": i, "converged": bool(res.converged[i]), "iterations": int(res.iterations[i]),
             "final_sigma": res.sigmas[i][-1]} for i in range(len(frames))]
    summary = {}
    if meta is not None:
        outcomes = classify_outcomes(frames, meta)
        for r, o in zip(rows, outcomes):
            r["outcome"] = o
        summary = {o: outcomes.count(o) for o in set(outcomes)}
    from .analysis import write_csv

    write_csv(out / "samples.csv", rows)
    plot_frames([np.concatenate([c[::-1], target[None]]), frames[:8]], out / "samples.png", ["conditioning + truth", "samples"])
    write_manifest(out / "manifest.json", "sample", cfg, {"sampler": sc.to_dict(), **sections}, {"outcomes": summary})
    bad = int((~res.converged).sum())
    print(f"{len(frames)} samples written to {out}" + (f"; {bad} did not converge" if bad else "") +
          (f"; outcomes {summary}" if summary else ""))


def cmd_rollout(cfg, sections):
    from .plotting import plot_frames
    from .sampler import rollout
    from .sequences import SequenceDataset, save_dataset
    from .unet import load_model

    _need(cfg, "model", "cond")
    if cfg["mode"] not in ("sample", "one_step"):
        raise UsageError("--mode must be sample or one_step")
    out = _outdir(cfg)
    model = load_model(cfg["model"])
    tau = model.arch.tau
    parts = cfg["cond"].split(":")
    seq, _, _ = _parse_cond(f"{parts[0]}:{parts[1]}:{max(tau, 1)}", tau)
    seed_frames = seq[:max(tau, 1)]
    sc = _sampler_cfg(cfg, sections)
    gen = rollout(model, seed_frames, cfg["steps"], sc, cfg["mode"])
    save_dataset(SequenceDataset([gen], [], [0]), out / "rollout.vseq")
    truth = seq[:len(gen.frames)]
    plot_frames([truth, gen.frames], out / "rollout.png", ["truth", cfg["mode"]])
    write_manifest(out / "manifest.json", "rollout", cfg, {"sampler": sc.to_dict(), **sections}, {"flags": gen.meta["flags"]})
    print(f"rollout of {cfg['steps']} frames written to {out}")


def cmd_demo1d(cfg, sections):
    from .analysis import write_csv
    from .ebayes import bimodal, blind_denoise_map, mmse_denoise, noisy_logpdf, noisy_score, sample_1d
    from .plotting import plot_demo1d

    out = _outdir(cfg)
    gm = bimodal()
    y = np.linspace(-3.0, 3.0, 601)
    grid, rows = {}, []
    for sig in (0.05, 0.1, 0.25, 0.5, 1.0):
        d = {"y": y, "noisy_pdf": np.exp(noisy_logpdf(gm, y, sig)), "score": noisy_score(gm, y, sig),
             "denoised": mmse_denoise(gm, y, sig)}
        grid[sig] = d
        rows += [{"y": float(a), "sigma": sig, "noisy_pdf": float(b), "score": float(s), "denoised": float(x)}
                 for a, b, s, x in zip(y, d["noisy_pdf"], d["score"], d["denoised"])]
    write_csv(out / "densities.csv", rows, ["y", "sigma", "noisy_pdf", "score", "denoised"])
    xb, sb = blind_denoise_map(gm, y)
    write_csv(out / "blind.csv", [{"y": float(a), "sigma_map": float(s), "denoised": float(x), "residual": float(x - a)}
                                  for a, s, x in zip(y, sb, xb)])
    trajs = {}
    det = sample_1d(gm, np.array([-2.0, 0.3, 2.5]), alpha=0.5, beta=1.0, max_iters=200)
    for j, y0 in enumerate((-2.0, 0.3, 2.5)):
        trajs[f"y0={y0:+.1f}, beta=1"] = det.values[:, j]
    rng = np.random.default_rng(cfg["seed"])
    noisy = sample_1d(gm, rng.standard_normal(cfg["n_chains"]), alpha=0.5, beta=0.5, rng=rng, max_iters=200)
    for j in range(3):
        trajs[f"chain {j}, beta=0.5"] = noisy.values[:, j]
    traj_rows = [{"iteration": k, "chain": name, "y": float(v)} for name, vals in trajs.items() for k, v in enumerate(vals)]
    write_csv(out / "trajectories.csv", traj_rows)
    frac = float(np.mean(noisy.final > 0))
    write_csv(out / "modes.csv", [{"n_chains": cfg["n_chains"], "right_mode_fraction": frac,
                                   "converged": int(noisy.converged.sum())}])
    plot_demo1d(grid, trajs, out / "demo1d.png")
    write_manifest(out / "manifest.json", "demo1d", cfg, sections)
    print(f"demo1d written to {out}; right-mode fraction {frac:.3f}")


def cmd_analyze(which, cfg, sections):
    from . import analysis as an
    from . import plotting as pl
    from .sequences import load_dataset
    from .unet import load_model

    out = _outdir(cfg)
    _need(cfg, "model")
    if which == "curve":
        _need(cfg, "data")
        try:
            lo, hi, step = (float(v) for v in cfg["psnrs"].split(":"))
        except ValueError as exc:
            raise UsageError(f"--psnrs must be lo:hi:step, got {cfg['psnrs']!r}") from exc
        frames = load_dataset(cfg["data"]).stack("test")
        curves, rows = {}, []
        for path in cfg["model"].split(","):
            m = load_model(path)
            pts = an.performance_curve(m, frames, an.sigma_for_psnr(np.arange(lo, hi + 1e-9, step)), seed=cfg["seed"])
            label = f"tau={m.arch.tau}" + ("" if m.arch.use_observation else " (no observation)")
            curves[label] = pts
            rows += [{"model": path, **p.__dict__} for p in pts]
        an.write_csv(out / "curve.csv", rows)
        pl.plot_performance(curves, out / "curve.svg")
        for label, pts in curves.items():
            try:
                print(f"{label}: slope over [0, 30] dB = {an.fit_slope(pts):.3f}")
            except ValueError:
                pass
    elif which == "filter":
        _need(cfg, "cond")
        m = load_model(cfg["model"])
        _, c, x = _parse_cond(cfg["cond"], m.arch.tau)
        try:
            pix = tuple(int(v) for v in cfg["pixel"].split(","))
        except ValueError as exc:
            raise UsageError(f"--pixel must be row,col: {exc}") from exc
        rng = np.random.default_rng(cfg["seed"])
        y = (x + np.float32(cfg["sigma"]) * rng.standard_normal(x.shape)).astype(np.float32)
        af = an.adaptive_filter(m, y, c, pix)
        titles = (["noisy frame"] if m.arch.use_observation else []) + [f"frame t-{k}" for k in range(1, m.arch.tau + 1)]
        np.save(out / "filter.npy", af.weights)
        rows = [{"input": titles[k], "row": i, "col": j, "weight": float(af.weights[k, i, j])}
                for k in range(len(af.weights)) for i in range(af.weights.shape[1]) for j in range(af.weights.shape[2])]
        an.write_csv(out / "filter.csv", rows)
        pl.plot_filter(af, out / "filter.png", titles)
        print(f"x_hat{pix} = {af.value:.5f}; sum(weights * inputs) = {af.euler_sum():.5f}")
    elif which == "cues":
        _need(cfg, "cond")
        m = load_model(cfg["model"])
        parts = cfg["cond"].split(":")
        seq, c, x = _parse_cond(f"{parts[0]}:{parts[1]}:{len(load_dataset(parts[0]).sequences[int(parts[1])].frames) - 1}", m.arch.tau)
        xs, cs = an.static_probe(seq, m.arch.tau)
        curves = {"moving": an.cue_curves(m, x, c, seed=cfg["seed"], n_draws=cfg["draws"]),
                  "static": an.cue_curves(m, xs, cs, seed=cfg["seed"], n_draws=cfg["draws"])}
        an.write_csv(out / "cues.csv", [{"probe": k, **r.__dict__} for k, rows in curves.items() for r in rows])
        pl.plot_cues(curves, out / "cues.svg")
        for k, rows in curves.items():
            cp = an.crossing_point(rows)
            print(f"{k}: crossing at {'none' if cp is None else f'{cp:.1f} dB'}")
    elif which == "psycho":
        m = load_model(cfg["model"], expect={"tau": 2})
        try:
            drs = [float(v) for v in cfg["drs"].split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --drs: {exc}") from exc
        sc = _sampler_cfg(cfg, sections)
        fit = an.psychometric(m, drs, cfg["n_samples"], sc)
        an.write_csv(out / "psycho.csv", fit.rows())
        pl.plot_psychometric(fit, out / "psycho.svg")
        print(f"logistic mu={fit.mu:.3f} s={fit.s:.3f} loglik={fit.loglik:.2f}" + ("  [FLAGGED]" if fit.flagged else ""))
    write_manifest(out / "manifest.json", f"analyze {which}", cfg, sections)


def cmd_selftest(cfg, sections):
    from .acceptance import offline_checks, trained_checks

    checks = offline_checks()
    for c in checks:
        print(c.line(), flush=True)
    if cfg["trained_model"]:
        for c in trained_checks(cfg["trained_model"], quick=cfg["quick"]):
            print(c.line(), flush=True)
            checks.append(c)
    failed = [c.name for c in checks if not c.ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if failed:
        raise RuntimeError("failed: " + ", ".join(failed))


def _set_threads(n):
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, sections = resolve(args)
        _set_threads(args.threads)
        if args.command == "analyze":
            cmd_analyze(args.analysis, cfg, sections)
        else:
            globals()["cmd_" + args.command.replace("-", "_")](cfg, sections)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nextframe: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        if args.verbose:
            log.exception("failed")
        print(f"nextframe: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
