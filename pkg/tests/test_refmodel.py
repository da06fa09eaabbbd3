import numpy as np
import pytest

from xaas.core import PortableRng, SaliencyMask, TensorImage, derive_seed
from xaas.metrics import apply_mask
from xaas.refmodel import (
    TABULAR_MODEL,
    VISION_MODEL,
    LinearSoftmaxModel,
    build_model,
    builtin_model,
    load_golden,
)


def random_image(seed, size=8):
    rng = PortableRng(seed)
    return TensorImage(rng.uniforms(size * size * 3).reshape(size, size, 3))


class TestPredict:
    def test_zero_image_zero_bias_uniform(self):
        model = builtin_model(VISION_MODEL)
        flat = LinearSoftmaxModel(name="flat", weights=model.weights,
                                  bias=np.zeros(model.n_classes),
                                  feature_extractor="channel_means")
        # a zero image has zero features, so logits are all zero
        rec = flat.predict(TensorImage(np.zeros((8, 8, 3))))
        np.testing.assert_allclose(rec.probs, np.full(flat.n_classes, 1 / flat.n_classes),
                                   atol=1e-15)

    def test_matches_matrix_multiply_oracle(self):
        model = builtin_model(VISION_MODEL)
        for seed in range(10):
            img = random_image(seed)
            rec = model.predict(img)
            # independent oracle: block means by explicit loops
            g = model.grid
            feats = []
            for by in range(g):
                for bx in range(g):
                    ys = [y for y in range(8) if (y * g) // 8 == by]
                    xs = [x for x in range(8) if (x * g) // 8 == bx]
                    block = img.data[np.ix_(ys, xs)]
                    for ch in range(3):
                        feats.append(block[:, :, ch].mean())
            logits = model.weights @ np.array(feats) + model.bias
            np.testing.assert_allclose(rec.logits, logits, atol=1e-12)
            probs = np.exp(logits - logits.max())
            probs /= probs.sum()
            np.testing.assert_allclose(rec.probs, probs, atol=1e-12)

    def test_batch_equals_single_calls(self, small_images, vision_model):
        batch = vision_model.predict_dataset(small_images)
        for img, rec in zip(small_images.images, batch):
            single = vision_model.predict(img)
            np.testing.assert_array_equal(rec.logits, single.logits)
            np.testing.assert_array_equal(rec.probs, single.probs)

    def test_pure_and_bit_identical(self, vision_model):
        img = random_image(3)
        a, b = vision_model.predict(img), vision_model.predict(img)
        np.testing.assert_array_equal(a.logits, b.logits)
        assert a.top1_index == b.top1_index

    def test_feature_length_mismatch(self):
        model = builtin_model(TABULAR_MODEL)
        with pytest.raises(ValueError, match="features"):
            model.predict(np.zeros(4))


class TestExplain:
    def test_gradient_matches_central_finite_differences(self, vision_model):
        eps = 1e-5
        for seed in range(20):
            img = random_image(seed)
            class_id = vision_model.predict(img).top1_index
            mask = vision_model.explain(img, class_id)
            data = img.data
            for y, x in ((0, 0), (3, 5), (7, 7)):
                numeric = 0.0
                for ch in range(3):
                    up, down = data.copy(), data.copy()
                    up[y, x, ch] += eps
                    down[y, x, ch] -= eps
                    # bypass clamping: evaluate the linear-softmax map directly
                    p_up = _prob(vision_model, up, class_id)
                    p_down = _prob(vision_model, down, class_id)
                    numeric += (p_up - p_down) / (2 * eps)
                denom = max(abs(numeric), abs(mask.values[y, x]), 1e-12)
                assert abs(mask.values[y, x] - numeric) / denom < 1e-6

    def test_zero_weight_row_gives_zero_mask(self):
        weights = np.zeros((3, 48))
        weights[0] = 1.0
        model = LinearSoftmaxModel(name="z", weights=weights, bias=np.zeros(3),
                                   feature_extractor="channel_means")
        mask = model.explain(random_image(1), 2)
        # class 2 has a zero weight row, but the softmax coupling still
        # produces gradient through the shared normalizer
        assert isinstance(mask, SaliencyMask)
        zero_model = LinearSoftmaxModel(name="z0", weights=np.zeros((3, 48)),
                                        bias=np.zeros(3), feature_extractor="channel_means")
        np.testing.assert_array_equal(zero_model.explain(random_image(1), 1).values,
                                      np.zeros((8, 8)))

    def test_tabular_importance_length(self, small_tabular):
        model = builtin_model(TABULAR_MODEL)
        feats = model.encode_row(small_tabular.table, 0)
        summary = model.explain(feats, 0)
        assert len(summary) == small_tabular.table.n_columns

    def test_invalid_class_rejected(self, vision_model):
        with pytest.raises(ValueError, match="class_id"):
            vision_model.explain(random_image(0), 99)

    def test_masking_top_gradient_pixels_beats_random(self, bench_images, vision_model):
        """Zeroing the explainer's most-important pixels should disturb
        the prediction more than zeroing random pixels of equal count."""
        drop_fraction = 0.25
        own_change, random_change = [], []
        rng = PortableRng(99)
        for img in bench_images.images:
            rec = vision_model.predict(img)
            mask = vision_model.explain(img, rec.top1_index)
            k = int(drop_fraction * mask.values.size)
            threshold = np.sort(np.abs(mask.values).ravel())[-k]
            drop_top = (np.abs(mask.values) < threshold).astype(float)
            random_vals = rng.uniforms(mask.values.size).reshape(mask.values.shape)
            drop_random = (random_vals < np.sort(random_vals.ravel())[-k]).astype(float)
            for keep_mask, bucket in ((drop_top, own_change), (drop_random, random_change)):
                masked = TensorImage(img.data * keep_mask[:, :, None])
                p = vision_model.predict(masked).probs[rec.top1_index]
                bucket.append(abs(rec.top1_prob - p))
        assert np.mean(own_change) > np.mean(random_change)


def _prob(model, data, class_id):
    """Unclamped linear-softmax map: the object the gradient is taken of."""
    g = model.grid
    size = data.shape[0]
    feats = []
    for by in range(g):
        for bx in range(g):
            ys = [y for y in range(size) if (y * g) // size == by]
            xs = [x for x in range(size) if (x * g) // size == bx]
            block = data[np.ix_(ys, xs)]
            for ch in range(3):
                feats.append(block[:, :, ch].mean())
    logits = model.weights @ np.array(feats) + model.bias
    probs = np.exp(logits - logits.max())
    probs /= probs.sum()
    return probs[class_id]


class TestGolden:
    def test_shipped_weights_match_generator(self, tmp_path):
        for kind, name in (("vision", VISION_MODEL), ("tabular", TABULAR_MODEL)):
            rebuilt = build_model(kind)
            shipped = load_golden(name)
            np.testing.assert_array_equal(rebuilt.weights, shipped.weights)
            np.testing.assert_array_equal(rebuilt.bias, shipped.bias)

    def test_corrupt_blob_detected(self, tmp_path):
        from xaas.refmodel import save_golden

        model = build_model("tabular")
        save_golden(model, tmp_path)
        blob = tmp_path / f"{model.name}.f64"
        data = bytearray(blob.read_bytes())
        data[0] ^= 0xFF
        blob.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="corrupt"):
            load_golden(model.name, tmp_path)

    def test_unknown_builtin(self):
        with pytest.raises(KeyError):
            builtin_model("nope")
