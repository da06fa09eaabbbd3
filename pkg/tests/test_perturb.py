import math

import numpy as np
import pytest

from xaas.core import PerturbationSpec, PortableRng, TensorImage, derive_seed
from xaas.core.datasets import ImageDataset, save_dataset, dataset_content_digest
from xaas.core.types import Column, TabularMatrix
from xaas.perturb import (
    DEFAULT_SEVERITY_TABLE,
    SeverityTable,
    apply,
    defocus_blur,
    gaussian_noise,
    perturbed_dataset_id,
    pixelate,
    tabular_noise,
)


def checkerboard(n=16):
    grid = np.indices((n, n)).sum(axis=0) % 2
    return TensorImage(np.repeat(grid[:, :, None], 3, axis=2).astype(float))


class TestSeverityTable:
    def test_defaults_are_monotone(self):
        t = DEFAULT_SEVERITY_TABLE
        assert t.noise_sigma[1] < t.noise_sigma[2] < t.noise_sigma[3]
        assert t.blur_radius[1] < t.blur_radius[2] < t.blur_radius[3]
        assert t.pixelate_fraction[1] > t.pixelate_fraction[2] > t.pixelate_fraction[3]
        assert t.tabular_scale[1] < t.tabular_scale[2] < t.tabular_scale[3]

    def test_rejects_non_monotone(self):
        with pytest.raises(ValueError, match="monotone"):
            SeverityTable(noise_sigma={1: 0.2, 2: 0.1, 3: 0.3})

    def test_rejects_missing_level(self):
        with pytest.raises(ValueError):
            SeverityTable(blur_radius={1: 3, 2: 5})


class TestGaussianNoise:
    def test_sigma_zero_is_identity(self):
        img = checkerboard()
        out = gaussian_noise(img, 1, PortableRng(0), sigma=0.0)
        np.testing.assert_array_equal(out.data, img.data)

    def test_mean_delta_grows_with_severity(self):
        img = TensorImage(np.full((8, 8, 3), 0.5))
        deltas = []
        for sev in (1, 2, 3):
            out = gaussian_noise(img, sev, PortableRng(99))
            deltas.append(np.abs(out.data - img.data).mean())
        assert deltas[0] < deltas[1] < deltas[2]

    def test_golden_output(self):
        # frozen after first generation; recomputed below from the
        # documented PRNG stream as an independent check
        out = gaussian_noise(TensorImage(np.zeros((2, 2, 3))), 2, PortableRng(7))
        golden = [0.13570379541274086, 0.2548107421416793, 0.0,
                  0.043170746706584634, 0.0, 0.006981667626822719,
                  0.0, 0.08457776510076416, 0.02030363277779252,
                  0.010070934470333444, 0.11770125716581764, 0.22051387919217194]
        np.testing.assert_array_equal(out.data.ravel(), golden)
        expected = np.clip(0.12 * PortableRng(7).normals(12), 0.0, 1.0)
        np.testing.assert_array_equal(out.data.ravel(), expected)

    def test_rejects_bad_severity(self):
        with pytest.raises(ValueError):
            gaussian_noise(checkerboard(), 4, PortableRng(0))


class TestDefocusBlur:
    def test_constant_image_unchanged(self):
        img = TensorImage(np.full((16, 16, 3), 0.37))
        out = defocus_blur(img, 2)
        np.testing.assert_allclose(out.data, img.data, atol=1e-12)

    def test_single_pixel_energy_preserved(self):
        # direct convolution oracle: a normalized kernel spreads but
        # preserves total mass for an interior pixel
        arr = np.zeros((17, 17, 3))
        arr[8, 8, :] = 1.0
        out = defocus_blur(TensorImage(arr), 1)
        assert abs(out.data[:, :, 0].sum() - 1.0) < 1e-6
        radius = DEFAULT_SEVERITY_TABLE.blur_radius[1]
        count = sum(1 for dy in range(-radius, radius + 1)
                    for dx in range(-radius, radius + 1)
                    if dy * dy + dx * dx <= radius * radius)
        np.testing.assert_allclose(out.data[8, 8, 0], 1.0 / count, atol=1e-12)

    def test_variance_decreases_with_severity(self):
        img = checkerboard(20)
        variances = [np.var(defocus_blur(img, sev).data) for sev in (1, 2, 3)]
        assert variances[0] > variances[1] > variances[2]

    def test_rejects_image_smaller_than_kernel(self):
        with pytest.raises(ValueError, match="smaller"):
            defocus_blur(TensorImage(np.zeros((4, 4, 3))), 3)


class TestPixelate:
    def test_fraction_one_is_identity(self):
        img = checkerboard(8)
        out = pixelate(img, 1, fraction=1.0)
        np.testing.assert_array_equal(out.data, img.data)

    def test_hand_computed_box_means(self):
        # 4x4 image at f=0.5: each output 2x2 block is its source mean
        arr = np.arange(48, dtype=float).reshape(4, 4, 3) / 48.0
        out = pixelate(TensorImage(arr), 2, fraction=0.5)
        for by in (0, 2):
            for bx in (0, 2):
                block = arr[by:by + 2, bx:bx + 2, :]
                expected = block.mean(axis=(0, 1))
                for y in range(by, by + 2):
                    for x in range(bx, bx + 2):
                        np.testing.assert_allclose(out.data[y, x], expected, atol=1e-12)

    def test_idempotent(self):
        # exact up to float summation error: re-averaging a bin of n
        # identical values is only bit-exact when n is a power of two
        img = TensorImage(np.random.default_rng(3).random((12, 12, 3)))
        once = pixelate(img, 3)
        twice = pixelate(once, 3)
        np.testing.assert_allclose(twice.data, once.data, rtol=0, atol=1e-12)

    def test_rejects_zero_intermediate(self):
        with pytest.raises(ValueError, match="zero size"):
            pixelate(TensorImage(np.zeros((1, 1, 3))), 1, fraction=0.1)


class TestTabularNoise:
    def _table(self, values):
        return TabularMatrix(columns=(Column("x", "numeric"),),
                             values=(np.asarray(values, dtype=float),))

    def test_scale_zero_is_identity(self):
        t = self._table([1.0, 2.0, 3.0])
        out = tabular_noise(t, 1, PortableRng(0), scale=0.0)
        np.testing.assert_array_equal(out.values[0], t.values[0])

    def test_zero_variance_column_untouched(self, caplog):
        t = self._table([0.0, 0.0, 0.0, 0.0])
        with caplog.at_level("WARNING"):
            out = tabular_noise(t, 2, PortableRng(0))
        np.testing.assert_array_equal(out.values[0], [0.0] * 4)
        assert any("zero variance" in r.message for r in caplog.records)

    def test_matches_prng_oracle(self):
        # column std 2.0, severity-2 scale 0.1 -> cellwise x + 0.2 * z_i
        t = self._table([0.0, 4.0, 0.0, 4.0])  # population std = 2.0
        out = tabular_noise(t, 2, PortableRng(3))
        z = PortableRng(3).normals(4)
        np.testing.assert_allclose(out.values[0],
                                   np.array([0.0, 4.0, 0.0, 4.0]) + 0.2 * z, atol=1e-15)

    def test_categorical_untouched(self):
        t = TabularMatrix(
            columns=(Column("x", "numeric"), Column("g", "categorical", vocab=("a", "b"))),
            values=(np.array([1.0, 5.0]), np.array(["a", "b"], dtype=object)))
        out = tabular_noise(t, 3, PortableRng(1))
        np.testing.assert_array_equal(out.values[1], ["a", "b"])
        assert not np.array_equal(out.values[0], t.values[0])

    def test_all_categorical_rejected(self):
        t = TabularMatrix(columns=(Column("g", "categorical", vocab=("a",)),),
                          values=(np.array(["a", "a"], dtype=object),))
        with pytest.raises(ValueError, match="numeric"):
            tabular_noise(t, 1, PortableRng(0))


class TestApply:
    def test_identity_preserves_content(self, tmp_path, small_images):
        out = apply(PerturbationSpec(kind="identity", severity=0), small_images)
        m_in = save_dataset(small_images, tmp_path / "in")
        m_out = save_dataset(out, tmp_path / "out")
        assert dataset_content_digest(m_in) == dataset_content_digest(m_out)
        assert out.dataset_id == perturbed_dataset_id(
            small_images.dataset_id, PerturbationSpec(kind="identity", severity=0))

    def test_deterministic_across_runs(self, tmp_path, small_images):
        spec = PerturbationSpec(kind="gaussian_noise", severity=2, seed=5)
        m1 = save_dataset(apply(spec, small_images), tmp_path / "a")
        m2 = save_dataset(apply(spec, small_images), tmp_path / "b")
        assert dataset_content_digest(m1) == dataset_content_digest(m2)

    def test_outputs_stay_in_range(self, bench_images):
        spec = PerturbationSpec(kind="gaussian_noise", severity=1, seed=11)
        out = apply(spec, bench_images)
        assert len(out) == 64
        for img in out.images:
            assert img.data.min() >= 0.0 and img.data.max() <= 1.0

    def test_per_item_seeds_match_manual_calls(self, small_images):
        spec = PerturbationSpec(kind="gaussian_noise", severity=1, seed=5)
        out = apply(spec, small_images)
        for index in (0, 3, 7):
            rng = PortableRng(derive_seed(5, index))
            manual = gaussian_noise(small_images.images[index], 1, rng)
            np.testing.assert_array_equal(out.images[index].data, manual.data)

    def test_kind_mismatch_rejected(self, small_images, small_tabular):
        with pytest.raises(ValueError, match="tabular"):
            apply(PerturbationSpec(kind="tabular_noise", severity=1, seed=0), small_images)
        with pytest.raises(ValueError, match="image"):
            apply(PerturbationSpec(kind="pixelate", severity=1), small_tabular)

    def test_labels_carried_through(self, small_images):
        spec = PerturbationSpec(kind="pixelate", severity=1)
        assert apply(spec, small_images).labels == small_images.labels


class TestSeverityMonotonicity:
    def test_mean_delta_strictly_increases(self, bench_images):
        for kind in ("gaussian_noise", "defocus_blur", "pixelate"):
            deltas = []
            for sev in (1, 2, 3):
                spec = PerturbationSpec(
                    kind=kind, severity=sev,
                    seed=11 if kind == "gaussian_noise" else None)
                out = apply(spec, bench_images)
                deltas.append(np.mean([np.abs(o.data - p.data).mean()
                                       for o, p in zip(bench_images.images, out.images)]))
            assert deltas[0] < deltas[1] < deltas[2], (kind, deltas)
