import numpy as np
import pytest

from nextframe.leaves import make_probe
from nextframe.sampler import (
    LEFT,
    RIGHT,
    UNDECIDED,
    SamplerConfig,
    noise_amplitude,
    occlusion_outcome,
    one_step_estimate,
    rollout,
    sample_next_frame,
)
from nextframe.unet import ModelArch, UNet


@pytest.fixture(scope="module")
def model():
    return UNet(ModelArch(tau=2, base_channels=4), seed=1)


@pytest.fixture
def cond(rng):
    return rng.random((2, 16, 16)).astype(np.float32)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(beta=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(sigma0=0)
    with pytest.raises(ValueError, match="unknown"):
        SamplerConfig.from_dict({"betta": 0.5})
    cfg = SamplerConfig()
    assert cfg.alpha(1) == pytest.approx(0.1)
    assert cfg.alpha(2) == pytest.approx(0.105)
    assert cfg.alpha(10_000) == 1.0


def test_gamma_rule_conserves_variance():
    a = np.linspace(0.01, 1, 100)
    for beta in (0.0, 0.3, 0.5, 1.0):
        g = noise_amplitude(a, beta, 0.7)
        lhs = (1 - a) ** 2 * 0.49 + g ** 2
        assert np.allclose(lhs, (1 - beta * a) ** 2 * 0.49, rtol=1e-12, atol=0)
    assert np.all(noise_amplitude(a, 1.0, 0.7) == 0)


def test_single_full_step_is_one_step_denoiser(model, cond):
    cfg = SamplerConfig(alpha_init=1.0, beta=1.0, max_iters=1, seed=3)
    res = sample_next_frame(model, cond, cfg, 4)
    assert np.array_equal(res.frames, one_step_estimate(model, cond, cfg, 4))


def test_deterministic_given_seed(model, cond):
    cfg = SamplerConfig(max_iters=30, seed=5)
    a = sample_next_frame(model, cond, cfg, 2).frames
    b = sample_next_frame(model, cond, cfg, 2).frames
    assert np.array_equal(a, b)
    c = sample_next_frame(model, cond, SamplerConfig(max_iters=30, seed=6), 2).frames
    assert not np.array_equal(a, c)


def test_chain_streams_are_independent_of_batch(model, cond):
    cfg = SamplerConfig(max_iters=30, seed=10)
    both = sample_next_frame(model, cond, cfg, 2).frames
    alone = sample_next_frame(model, cond, SamplerConfig(max_iters=30, seed=11), 1).frames
    assert np.allclose(both[1], alone[0], atol=1e-5)


def test_non_convergence_flagged(model, cond):
    res = sample_next_frame(model, cond, SamplerConfig(max_iters=2, sigma0=1e-9), 2)
    assert not res.converged.any()
    assert list(res.iterations) == [2, 2]


def test_homogeneity_of_trajectory(model, cond, rng):
    y0 = (0.5 + rng.standard_normal((16, 16))).astype(np.float32)
    cfg = SamplerConfig(beta=1.0, max_iters=12, sigma0=1e-12)
    a = sample_next_frame(model, cond, cfg, 1, y0=y0).frames[0].astype(np.float64)
    b = sample_next_frame(model, 3.0 * cond, cfg, 1, y0=3.0 * y0).frames[0]
    assert np.linalg.norm(b - 3.0 * a) <= 1e-4 * np.linalg.norm(3.0 * a)


def test_snapshots(model, cond):
    res = sample_next_frame(model, cond, SamplerConfig(max_iters=10, sigma0=1e-9, snapshot_every=5), 2)
    assert [k for k, _ in res.snapshots] == [5, 10]
    assert res.snapshots[0][1].shape == (2, 16, 16)


def test_rollout_modes(model, cond):
    seed = list(cond[::-1])
    same = rollout(model, seed, 0)
    assert np.array_equal(same.frames, np.stack(seed))
    r = rollout(model, seed, 3, SamplerConfig(max_iters=20), "one_step")
    assert r.frames.shape == (5, 16, 16)
    assert r.frames.min() >= 0 and r.frames.max() <= 1
    with pytest.raises(ValueError):
        rollout(model, seed, 1, mode="other")


class TestOcclusionOutcome:
    def test_ground_truth_frames(self):
        p = make_probe(4.0)
        assert occlusion_outcome(p.frames[2], p.meta) == RIGHT
        q = make_probe(-4.0)
        assert occlusion_outcome(q.frames[2], q.meta) == LEFT

    def test_background_is_undecided(self):
        p = make_probe(4.0)
        lo, hi = sorted((p.meta["left_luminance"], p.meta["right_luminance"]))
        frame = np.full((32, 32), (lo + hi) / 2, dtype=np.float32)
        assert occlusion_outcome(frame, p.meta) == UNDECIDED

    def test_no_overlap_is_error(self):
        with pytest.raises(ValueError, match="no overlap"):
            occlusion_outcome(np.zeros((32, 32)), {"overlap_mask": np.zeros((32, 32)).tolist()})
