"""Augmentation ops against hand-computed cases and scripted rngs, plus
the train/eval pipeline contracts."""

import numpy as np
import pytest

from swinqa.augment import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    RANDAUGMENT_OPS,
    AugConfig,
    LabeledBatch,
    adjust_contrast,
    adjust_saturation,
    adjust_sharpness,
    autocontrast,
    bilinear_resize,
    color_jitter,
    cutmix,
    mixup,
    posterize,
    prepare_batch,
    rand_augment,
    random_erasing,
    resize_normalize,
    rotate,
    to_rgb01,
    translate,
)


class ScriptedRng:
    """Stand-in generator returning scripted draws for the methods the
    augmentation code calls."""

    def __init__(self, *, beta_value=0.5, perm=None, ints=(), randoms=(),
                 uniform3=None):
        self.beta_value = beta_value
        self.perm = perm
        self.ints = list(ints)
        self.randoms = list(randoms)
        self.uniform3 = uniform3

    def beta(self, a, b):
        return self.beta_value

    def permutation(self, n):
        assert len(self.perm) == n
        return np.array(self.perm)

    def integers(self, lo, hi):
        return self.ints.pop(0)

    def random(self):
        return self.randoms.pop(0) if self.randoms else 0.3

    def uniform(self, lo, hi, size=None):
        assert size == 3
        return np.asarray(self.uniform3, dtype=np.float64)


def gray(v, h=4, w=4):
    return np.full((h, w, 3), float(v))


# ------------------------------------------------------------------ resize


def test_to_rgb01_shapes():
    g = np.random.default_rng(0).random((5, 6))
    rgb = to_rgb01(g)
    assert rgb.shape == (5, 6, 3)
    assert np.array_equal(rgb[:, :, 0], g) and np.array_equal(rgb[:, :, 2], g)
    assert to_rgb01(g[:, :, None]).shape == (5, 6, 3)
    with pytest.raises(ValueError):
        to_rgb01(np.zeros((4, 4, 2)))


def test_bilinear_resize_identity_is_copy():
    img = np.random.default_rng(1).random((7, 7, 3))
    out = bilinear_resize(img, 7, 7)
    assert np.array_equal(out, img) and out is not img


def test_bilinear_resize_2x2_to_4x4_hand_case():
    # half-pixel centers: dst row/col k samples src at (k+0.5)/2 - 0.5,
    # i.e. offsets -0.25, 0.25, 0.75, 1.25 with edge clipping
    img = np.array([[0.0, 1.0], [2.0, 3.0]])[:, :, None] * np.ones(3)
    want = np.array([
        [0.0, 0.25, 0.75, 1.0],
        [0.5, 0.75, 1.25, 1.5],
        [1.5, 1.75, 2.25, 2.5],
        [2.0, 2.25, 2.75, 3.0],
    ])
    out = bilinear_resize(img, 4, 4)
    assert np.abs(out - want[:, :, None]).max() < 1e-12


def test_bilinear_resize_preserves_constants_downscale():
    img = gray(0.37, 16, 16)
    out = bilinear_resize(img, 5, 9)
    assert out.shape == (5, 9, 3)
    assert np.abs(out - 0.37).max() < 1e-12


def test_resize_normalize_constant_matches_formula():
    out = resize_normalize(np.full((8, 8), 0.5), 4, 4, AugConfig())
    for c in range(3):
        want = (0.5 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
        assert np.abs(out[:, :, c] - want).max() < 1e-12


# ------------------------------------------------------------------ mixing


def batch_01():
    images = np.stack([gray(0.0), gray(1.0)])
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    return LabeledBatch(images, labels)


def test_mixup_lambda_one_is_identity():
    rng = ScriptedRng(beta_value=1.0, perm=[1, 0])
    out = mixup(batch_01(), 0.8, rng)
    assert np.array_equal(out.images, batch_01().images)
    assert np.array_equal(out.labels, batch_01().labels)


def test_mixup_half_blends_images_and_labels():
    rng = ScriptedRng(beta_value=0.5, perm=[1, 0])
    out = mixup(batch_01(), 0.8, rng)
    assert np.abs(out.images - 0.5).max() < 1e-12
    assert np.allclose(out.labels, [[0.5, 0.5], [0.5, 0.5]])


def test_mixup_needs_two():
    with pytest.raises(ValueError):
        mixup(LabeledBatch(np.zeros((1, 4, 4, 3)), np.array([[1.0, 0.0]])), 0.8,
              ScriptedRng())


def test_cutmix_realized_box_sets_label_weight():
    # lam 0.75 -> cut 0.5 of an 8x8 -> 4x4 box at center (4, 4): rows/cols 2..6
    images = np.stack([np.zeros((8, 8, 3)), np.ones((8, 8, 3))])
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    rng = ScriptedRng(beta_value=0.75, perm=[1, 0], ints=[4, 4])
    out = cutmix(LabeledBatch(images, labels), 1.0, rng)
    pasted = out.images[0, :, :, 0] != 0.0
    want = np.zeros((8, 8), dtype=bool)
    want[2:6, 2:6] = True
    assert np.array_equal(pasted, want)
    lam_real = 1.0 - pasted.sum() / 64.0
    assert lam_real == 0.75
    assert np.allclose(out.labels[0], [lam_real, 1.0 - lam_real])


def test_cutmix_degenerate_boxes():
    images = np.stack([np.zeros((8, 8, 3)), np.ones((8, 8, 3))])
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    # lam 1 -> zero-area box -> exact identity
    out = cutmix(LabeledBatch(images, labels),
                 1.0, ScriptedRng(beta_value=1.0, perm=[1, 0], ints=[4, 4]))
    assert np.array_equal(out.images, images)
    assert np.array_equal(out.labels, labels)
    # lam 0 -> whole-image box -> full swap
    out = cutmix(LabeledBatch(images, labels),
                 1.0, ScriptedRng(beta_value=0.0, perm=[1, 0], ints=[4, 4]))
    assert np.array_equal(out.images, images[[1, 0]])
    assert np.array_equal(out.labels, labels[[1, 0]])


def test_cutmix_label_weight_recoverable_from_pixels():
    """With continuous random pixels, the pasted region is exactly the set
    of changed pixels, so the realized box area must reproduce the label
    mixing weight."""
    gen = np.random.default_rng(7)
    images = gen.random((4, 16, 16, 3))
    labels = np.eye(2)[[0, 1, 0, 1]].astype(float)
    out = cutmix(LabeledBatch(images, labels.copy()), 1.0, np.random.default_rng(3))
    changed = (out.images != images).any(axis=-1)  # [B, H, W]
    rect = changed.any(axis=0)
    assert rect.any(), "seed must produce a non-empty box"
    # every sample is either a permutation fixed point or shows the box
    assert all(np.array_equal(changed[k], rect) or not changed[k].any()
               for k in range(4))
    lam_real = 1.0 - rect.sum() / (16 * 16)
    resid = out.labels - lam_real * labels
    assert np.allclose(resid.sum(axis=-1), 1.0 - lam_real, atol=1e-12)
    for k in range(4):  # residual mass is one partner's scaled one-hot row
        hits = [j for j in range(4)
                if np.allclose(resid[k], (1.0 - lam_real) * labels[j], atol=1e-12)]
        assert hits


# ----------------------------------------------------------------- erasing


def test_random_erasing_prob_zero_is_identity():
    img = np.random.default_rng(2).random((16, 16, 3))
    cfg = AugConfig(erase_prob=0.0)
    out = random_erasing(img, cfg, np.random.default_rng(0))
    assert np.array_equal(out, img)


def test_random_erasing_always_one_rectangle():
    cfg = AugConfig(erase_prob=1.0)
    img = gray(0.5, 32, 32)
    for seed in range(6):
        out = random_erasing(img, cfg, np.random.default_rng(seed))
        diff = (out != img).any(axis=-1)
        rows = np.flatnonzero(diff.any(axis=1))
        cols = np.flatnonzero(diff.any(axis=0))
        assert rows.size and cols.size
        rect = np.zeros_like(diff)
        rect[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1] = True
        # noise fill makes repeats of the background value measure-zero
        assert np.array_equal(diff, rect)
        area = diff.sum()
        assert 1 <= area <= 0.35 * 32 * 32
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_random_erasing_deterministic():
    cfg = AugConfig(erase_prob=1.0)
    img = np.random.default_rng(3).random((24, 24, 3))
    a = random_erasing(img, cfg, np.random.default_rng(9))
    b = random_erasing(img, cfg, np.random.default_rng(9))
    assert np.array_equal(a, b)


# ------------------------------------------------------------- randaugment


def test_rotate_quarter_turn_moves_delta_exactly():
    img = np.zeros((5, 5, 3))
    img[1, 2] = 1.0  # center offset (-1, 0)
    out = rotate(img, 90.0)
    want = np.zeros((5, 5, 3))
    want[2, 1] = 1.0  # offset (0, -1) after a quarter turn
    assert np.abs(out - want).max() < 1e-9


def test_translate_integer_shift_is_exact():
    img = np.zeros((4, 5, 3))
    img[1, 1] = 1.0
    out = translate(img, 1.0, 2.0)
    assert out[2, 3, 0] == 1.0
    assert np.all(out[0] == 0.5)          # rows shifted in from outside
    assert np.all(out[:, :2] == 0.5)      # columns shifted in from outside
    inner = out[1:, 2:].copy()
    inner[1, 1] = 0.0
    assert np.abs(inner).max() == 0.0


def test_posterize_masks_low_bits():
    img = gray(0.5)
    out4 = posterize(img, 4)
    assert np.all(out4 == (127 & 0xF0) / 255.0)
    assert np.all(posterize(gray(1.0), 4) == 240 / 255.0)
    assert np.all(posterize(gray(0.0), 4) == 0.0)


def test_autocontrast_rescales_channel_range():
    img = gray(0.0, 2, 2)
    img[:, :, 0] = [[0.2, 0.45], [0.7, 0.2]]
    img[:, :, 1] = 0.3  # constant channel left alone
    img[:, :, 2] = [[0.0, 1.0], [0.5, 0.25]]
    out = autocontrast(img)
    assert np.allclose(out[:, :, 0], (img[:, :, 0] - 0.2) / 0.5)
    assert np.allclose(out[:, :, 1], 0.3)
    assert np.allclose(out[:, :, 2], img[:, :, 2])


def test_adjust_contrast_zero_collapses_to_mean():
    img = np.random.default_rng(4).random((6, 6, 3))
    out = adjust_contrast(img, 0.0)
    luma = img @ np.array([0.299, 0.587, 0.114])
    assert np.abs(out - np.clip(luma.mean(), 0, 1)).max() < 1e-12


def test_adjust_saturation_fixed_points():
    g = gray(0.6)
    assert np.abs(adjust_saturation(g, 3.0) - g).max() < 1e-12
    red = np.zeros((2, 2, 3))
    red[:, :, 0] = 1.0
    out = adjust_saturation(red, 0.0)
    assert np.allclose(out, 0.299)


def test_adjust_sharpness_factor_one_is_identity():
    img = np.random.default_rng(5).random((8, 8, 3))
    assert np.abs(adjust_sharpness(img, 1.0) - img).max() < 1e-12


def test_rand_augment_zero_ops_is_identity():
    img = np.random.default_rng(6).random((10, 10, 3))
    out = rand_augment(img, 0, 9.0, np.random.default_rng(0))
    assert np.array_equal(out, img)


def test_rand_augment_identity_draws_leave_image():
    img = np.random.default_rng(7).random((8, 8, 3))
    rng = ScriptedRng(ints=[0, 0, 0])  # op index 0 == "identity"
    assert RANDAUGMENT_OPS[0] == "identity"
    out = rand_augment(img, 3, 9.0, rng)
    assert np.array_equal(out, img)


def test_rand_augment_bounded_and_deterministic():
    img = np.random.default_rng(8).random((12, 12, 3))
    for seed in range(5):
        a = rand_augment(img, 2, 9.0, np.random.default_rng(seed))
        b = rand_augment(img, 2, 9.0, np.random.default_rng(seed))
        assert np.array_equal(a, b)
        assert a.shape == img.shape
        assert a.min() >= 0.0 and a.max() <= 1.0


def test_color_jitter_strength_zero_and_constant_image():
    img = np.random.default_rng(9).random((6, 6, 3))
    assert np.array_equal(color_jitter(img, 0.0, None), img)
    # constant gray: contrast/saturation are no-ops, brightness scales
    rng = ScriptedRng(perm=[0, 1, 2], uniform3=[1.3, 0.7, 1.1])
    out = color_jitter(gray(0.5), 0.4, rng)
    assert np.abs(out - 0.65).max() < 1e-12


# ---------------------------------------------------------------- pipeline


def test_prepare_batch_eval_matches_resize_normalize():
    rng = np.random.default_rng(10)
    images = [rng.random((20, 20)) for _ in range(3)]
    labels = np.array([0, 1, 1])
    cfg = AugConfig()
    out, soft = prepare_batch(images, labels, cfg, "eval", 16)
    want = np.stack([resize_normalize(im, 16, 16, cfg) for im in images])
    assert np.array_equal(out, want)
    assert np.array_equal(soft, np.eye(2)[[0, 1, 1]])


def test_prepare_batch_eval_rejects_rng_train_requires_it():
    images = [np.zeros((8, 8))]
    with pytest.raises(ValueError, match="deterministic"):
        prepare_batch(images, [0], AugConfig(), "eval", 8, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="rng"):
        prepare_batch(images, [0], AugConfig(), "train", 8)
    with pytest.raises(ValueError, match="mode"):
        prepare_batch(images, [0], AugConfig(), "test", 8)


def test_prepare_batch_train_shapes_labels_determinism():
    gen = np.random.default_rng(11)
    images = [gen.random((20, 24)) for _ in range(4)]
    labels = [0, 1, 0, 1]
    cfg = AugConfig()
    a, la = prepare_batch(images, labels, cfg, "train", 16,
                          rng=np.random.default_rng(5))
    b, lb = prepare_batch(images, labels, cfg, "train", 16,
                          rng=np.random.default_rng(5))
    c, lc = prepare_batch(images, labels, cfg, "train", 16,
                          rng=np.random.default_rng(6))
    assert a.shape == (4, 16, 16, 3) and la.shape == (4, 2)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert not np.array_equal(a, c)
    assert np.abs(la.sum(axis=-1) - 1.0).max() < 1e-9
    assert np.isfinite(a).all()


def test_prepare_batch_accepts_soft_labels():
    images = [np.zeros((8, 8)), np.ones((8, 8))]
    soft = np.array([[0.7, 0.3], [0.2, 0.8]])
    _, out = prepare_batch(images, soft, AugConfig(), "eval", 8)
    assert np.array_equal(out, soft)


def test_labeled_batch_validation():
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((2, 4, 4, 3)), np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((1, 4, 4, 3)), np.array([[0.6, 0.6]]))
    with pytest.raises(ValueError):
        AugConfig(mix_switch_prob=1.5)
    with pytest.raises(ValueError):
        AugConfig(erase_scale=(0.4, 0.1))
    with pytest.raises(ValueError):
        AugConfig(randaug_magnitude=11)
