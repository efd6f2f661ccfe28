import numpy as np
import pytest

from nextframe.leaves import (
    DiskScene,
    LeavesConfig,
    disk_masks,
    generate_dataset,
    make_probe,
    occlusion_fractions,
    rbf_kernel,
    render_sequence,
    sample_gp_paths,
    sample_scene,
)


def static_scene(centres, radii, lum=(0.3, 0.8), bg=0.1, n_frames=1):
    traj = np.repeat(np.asarray(centres, dtype=float)[None], n_frames, axis=0)
    return DiskScene(8.0 / np.asarray(radii, float), radii, lum, bg, traj)


class TestSceneSampling:
    def test_equal_depths_equal_radii(self, rng):
        sc = sample_scene(rng, depths=[1.7, 1.7])
        assert sc.radii[0] == sc.radii[1]

    def test_radius_law_and_speed_scaling(self):
        cfg = LeavesConfig()
        rng = np.random.default_rng(3)
        speeds = {1.0: [], 2.0: []}
        for _ in range(1000):
            sc = sample_scene(rng, cfg, depths=[1.0, 2.0])
            assert sc.radii[1] == pytest.approx(sc.radii[0] / 2)
            step = np.linalg.norm(np.diff(sc.trajectory, axis=0), axis=-1)  # [T-1, 2]
            speeds[1.0].append(step[:, 0].mean())
            speeds[2.0].append(step[:, 1].mean())
        ratio = np.mean(speeds[2.0]) / np.mean(speeds[1.0])
        assert ratio == pytest.approx(0.5, rel=0.1)

    def test_gp_covariance_matches_kernel(self):
        rng = np.random.default_rng(9)
        paths = sample_gp_paths(rng, 11, 6.0, 6.0, 10_000)
        emp = np.cov(paths, rowvar=False)
        np.testing.assert_allclose(emp, rbf_kernel(11, 6.0, 6.0), rtol=0.05)

    def test_luminance_contrast(self, rng):
        for _ in range(200):
            sc = sample_scene(rng)
            lum = [*sc.luminances, sc.background]
            assert min(abs(a - b) for i, a in enumerate(lum) for b in lum[i + 1:]) >= 0.1


class TestRendering:
    def test_disjoint_centres_exact(self):
        sc = static_scene([[8.5, 8.5], [23.5, 23.5]], [4.0, 5.0])
        f = render_sequence(sc).frames[0]
        assert f[8, 8] == np.float32(0.3)
        assert f[23, 23] == np.float32(0.8)
        assert f[0, 31] == np.float32(0.1)

    def test_larger_disk_on_top(self):
        for radii in ([3.0, 6.0], [6.0, 3.0]):
            sc = static_scene([[16.0, 16.0], [16.0, 16.0]], radii)
            f = render_sequence(sc).frames[0]
            big = int(np.argmax(radii))
            assert f[16, 16] == np.float32(sc.luminances[big])
            assert f[15, 15] == np.float32(sc.luminances[big])

    def test_antialiased_area(self):
        r = 6.3
        sc = DiskScene([1.0, 1.0], [r, 1.0], [0.9, 0.5], 0.2, [[[15.3, 16.7], [-50.0, -50.0]]])
        f = render_sequence(sc).frames[0].astype(np.float64)
        area = np.sum((f - 0.2) / (0.9 - 0.2))
        assert area == pytest.approx(np.pi * r * r, rel=0.02)

    def test_pixels_in_unit_range(self, rng):
        for _ in range(20):
            fr = render_sequence(sample_scene(rng)).frames
            assert fr.min() >= 0 and fr.max() <= 1


class TestDataset:
    def test_default_shape_and_occlusion(self):
        cfg = LeavesConfig()
        ds = generate_dataset(4, 60, cfg)
        for seq in ds.sequences:
            assert seq.frames.shape == (11, 32, 32)
            sc = DiskScene(seq.meta["depths"], seq.meta["radii"], seq.meta["luminances"],
                           seq.meta["background"], seq.meta["trajectory"])
            assert occlusion_fractions(sc, cfg).max() >= 0.5
            assert seq.meta["radii"] == pytest.approx(list(cfg.radius_ref / np.array(seq.meta["depths"])))

    def test_split_ratio(self):
        ds = generate_dataset(1, 30)
        assert len(ds.train_idx) == 27 and len(ds.test_idx) == 3
        assert not set(ds.train_idx) & set(ds.test_idx)

    def test_deterministic(self):
        a = generate_dataset(7, 100)
        b = generate_dataset(7, 100)
        assert all(np.array_equal(x.frames, y.frames) for x, y in zip(a.sequences, b.sequences))

    def test_pathological_config_aborts(self):
        cfg = LeavesConfig(gp_amplitude=0.0, depth_min=4.0, depth_max=4.0, min_occlusion=1.0)
        with pytest.raises(RuntimeError, match="accepted|rejection"):
            generate_dataset(0, 1, cfg)

    def test_rejects_bad_dataset_size(self):
        with pytest.raises(ValueError):
            generate_dataset(0, 0)


class TestProbe:
    def test_symmetric_geometry(self):
        p = make_probe(0.0, luminance=(0.5, 0.5, 0.1))
        np.testing.assert_array_equal(p.frames, p.frames[:, :, ::-1])
        assert p.meta["radii"][0] == p.meta["radii"][1]
        assert p.meta["label"] == 0

    def test_right_disk_occludes(self):
        p = make_probe(4.0)
        assert p.meta["radii"][1] > p.meta["radii"][0]
        overlap = np.array(p.meta["overlap_mask"], bool)
        assert overlap.any()
        np.testing.assert_array_equal(p.frames[2][overlap], np.float32(p.meta["right_luminance"]))
        assert p.meta["label"] == 1

    def test_two_conditioning_frames_without_overlap(self):
        p = make_probe(-4.0)
        assert len(p) == 3 and p.meta["n_conditioning"] == 2
        sc = DiskScene(p.meta["depths"], p.meta["radii"], p.meta["luminances"], p.meta["background"], p.meta["trajectory"])
        for t in range(2):
            a, b = disk_masks(sc, t, 32, 4)
            assert not (a & b).any()

    def test_infeasible(self):
        with pytest.raises(ValueError):
            make_probe(20.0)
