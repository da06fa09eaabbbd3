import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xaas.core import (
    Column,
    PerturbationSpec,
    PredictionRecord,
    TabularMatrix,
    TensorImage,
    canonical_json,
    digest_json,
    load_dataset,
    save_dataset,
    softmax,
)
from xaas.core.datasets import ImageDataset, TabularDataset, dataset_content_digest


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], rtol=0, atol=0)

    def test_constant_vector_is_uniform(self):
        for c in (-3.0, 0.0, 17.5):
            np.testing.assert_allclose(softmax([c, c, c]), [1 / 3] * 3, atol=1e-15)

    def test_two_logit_value(self):
        # oracle: mpmath high-precision e^1/(e^1+e^0) = 0.7310585786300049...
        probs = softmax([1.0, 0.0])
        assert abs(probs[0] - 0.7310585786300049) < 1e-4
        assert abs(probs[1] - 0.2689414213699951) < 1e-4

    def test_against_mpmath_oracle(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 50
        logits = [0.3, -1.2, 2.5, 0.0]
        denom = sum(mp.e**x for x in logits)
        expected = [float(mp.e**x / denom) for x in logits]
        np.testing.assert_allclose(softmax(logits), expected, atol=1e-15)

    def test_sums_to_one_and_keeps_argmax(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            logits = rng.normal(size=rng.integers(1, 20)) * 10
            probs = softmax(logits)
            assert abs(probs.sum() - 1.0) <= 1e-9
            assert np.argmax(probs) == np.argmax(logits)

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=12),
           st.floats(-50, 50))
    def test_shift_invariance(self, logits, shift):
        base = softmax(logits)
        shifted = softmax(np.asarray(logits) + shift)
        np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_rejects_empty_and_non_finite(self):
        with pytest.raises(ValueError):
            softmax([])
        with pytest.raises(ValueError):
            softmax([1.0, float("nan")])
        with pytest.raises(ValueError):
            softmax([1.0, float("inf")])


class TestPredictionRecord:
    def test_from_logits_invariants(self):
        rec = PredictionRecord.from_logits([0.5, 2.0, -1.0])
        assert rec.top1_index == 1
        assert rec.top1_prob == rec.probs[1]
        assert abs(rec.probs.sum() - 1.0) <= 1e-9

    def test_rejects_mismatched_probs(self):
        with pytest.raises(ValueError):
            PredictionRecord(logits=np.array([0.0, 1.0]), probs=np.array([0.5, 0.5]),
                             top1_index=0, top1_prob=0.5)

    def test_round_trip(self):
        rec = PredictionRecord.from_logits([0.1, 0.2, 0.3])
        back = PredictionRecord.from_dict(rec.to_dict())
        np.testing.assert_array_equal(back.logits, rec.logits)
        np.testing.assert_array_equal(back.probs, rec.probs)


class TestTensorImage:
    def test_clamps_to_unit_range(self):
        img = TensorImage(np.array([[[1.5, -0.5, 0.25]]]))
        assert img.data.max() <= 1.0 and img.data.min() >= 0.0

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            TensorImage(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            TensorImage(np.zeros((4, 4, 4)))

    def test_immutable(self):
        img = TensorImage(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0


class TestTabularMatrix:
    def test_rejects_ragged(self):
        with pytest.raises(ValueError):
            TabularMatrix(columns=(Column("a", "numeric"), Column("b", "numeric")),
                          values=(np.array([1.0, 2.0]), np.array([1.0])))

    def test_rejects_out_of_vocab(self):
        with pytest.raises(ValueError):
            TabularMatrix(columns=(Column("g", "categorical", vocab=("x",)),),
                          values=(np.array(["y"], dtype=object),))

    def test_column_lookup(self):
        table = TabularMatrix(columns=(Column("a", "numeric"),),
                              values=(np.array([1.0, 2.0]),))
        np.testing.assert_array_equal(table.column("a"), [1.0, 2.0])


class TestPerturbationSpec:
    def test_identity_needs_severity_zero(self):
        PerturbationSpec(kind="identity", severity=0)
        with pytest.raises(ValueError):
            PerturbationSpec(kind="identity", severity=2)

    def test_stochastic_needs_seed(self):
        with pytest.raises(ValueError):
            PerturbationSpec(kind="gaussian_noise", severity=1)
        PerturbationSpec(kind="defocus_blur", severity=1)  # deterministic: no seed needed

    def test_severity_range(self):
        with pytest.raises(ValueError):
            PerturbationSpec(kind="pixelate", severity=9)


class TestSerialization:
    def test_empty_dataset(self, tmp_path):
        manifest = save_dataset(ImageDataset("empty", ()), tmp_path / "d")
        assert manifest["count"] == 0
        assert manifest["items"] == []
        assert manifest["shape"] is None

    def test_single_image_round_trip(self, tmp_path):
        img = TensorImage(np.array([[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]],
                                    [[0.7, 0.8, 0.9], [1.0, 0.0, 0.5]]]))
        save_dataset(ImageDataset("one", (img,)), tmp_path / "d")
        loaded = load_dataset(tmp_path / "d")
        # storage is float32: the round trip must be exact at that precision
        np.testing.assert_array_equal(loaded.images[0].data,
                                      img.data.astype("<f4").astype(np.float64))

    def test_digest_stable_across_serializations(self, tmp_path, small_images):
        m1 = save_dataset(small_images, tmp_path / "a")
        m2 = save_dataset(small_images, tmp_path / "b")
        assert [i["sha256"] for i in m1["items"]] == [i["sha256"] for i in m2["items"]]
        assert dataset_content_digest(m1) == dataset_content_digest(m2)

    def test_reload_and_resave_is_bit_identical(self, tmp_path, small_images):
        m1 = save_dataset(small_images, tmp_path / "a")
        loaded = load_dataset(tmp_path / "a")
        m2 = save_dataset(loaded, tmp_path / "b")
        assert dataset_content_digest(m1) == dataset_content_digest(m2)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, h, w, seed):
        rng = np.random.default_rng(seed)
        img = TensorImage(rng.random((h, w, 3)))
        import tempfile

        with tempfile.TemporaryDirectory() as d:
            save_dataset(ImageDataset("p", (img,)), d)
            loaded = load_dataset(d)
        np.testing.assert_array_equal(loaded.images[0].data,
                                      img.data.astype("<f4").astype(np.float64))

    def test_tabular_round_trip(self, tmp_path, small_tabular):
        save_dataset(small_tabular, tmp_path / "t")
        loaded = load_dataset(tmp_path / "t")
        assert isinstance(loaded, TabularDataset)
        assert loaded.labels == small_tabular.labels
        for orig, back in zip(small_tabular.table.values, loaded.table.values):
            np.testing.assert_array_equal(orig, back)

    def test_corrupt_item_detected(self, tmp_path, small_images):
        save_dataset(small_images, tmp_path / "d")
        victim = next((tmp_path / "d").glob("item_*.f32"))
        blob = bytearray(victim.read_bytes())
        blob[0] ^= 0xFF
        victim.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="digest mismatch"):
            load_dataset(tmp_path / "d")


class TestCanonicalJson:
    def test_key_order_independent(self):
        assert digest_json({"b": 1, "a": [1.5, 2]}) == digest_json({"a": [1.5, 2], "b": 1})

    def test_float_repr_round_trip(self):
        value = 0.1 + 0.2
        text = canonical_json({"v": value})
        import json

        assert json.loads(text)["v"] == value

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            canonical_json({"v": float("nan")})
