"""Smoke tests for the compiled bindings.

These are deliberately thin: the heavy property tests live in the C++
suites. Here we only check that the bindings round-trip numpy arrays
correctly and agree with well-known Python references.
"""

import math

import numpy as np
import pytest

import ssit


def test_softmax_matches_scipy():
    from scipy.special import softmax as ref

    x = np.random.default_rng(0).normal(size=(4, 7)).astype(np.float32)
    got = ssit.softmax(x)
    np.testing.assert_allclose(got, ref(x, axis=-1), rtol=0, atol=1e-5)
    np.testing.assert_allclose(got.sum(axis=-1), 1.0, atol=1e-5)


def test_gelu_matches_erf_formula():
    x = np.linspace(-4, 4, 32, dtype=np.float32).reshape(4, 8)
    ref = 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))
    np.testing.assert_allclose(ssit.gelu(x), ref, atol=1e-3)


def test_kappa_matches_sklearn():
    from sklearn.metrics import cohen_kappa_score

    rng = np.random.default_rng(1)
    truth = rng.integers(0, 5, size=200).tolist()
    pred = rng.integers(0, 5, size=200).tolist()
    got = ssit.quadratic_weighted_kappa(truth, pred, 5)
    ref = cohen_kappa_score(truth, pred, weights="quadratic")
    assert got == pytest.approx(ref, abs=1e-9)


def test_saliency_flat_image_is_zero():
    flat = np.full((32, 32), 0.5, dtype=np.float32)
    for fn in (ssit.fine_grained_saliency, ssit.spectral_residual_saliency):
        m = fn(flat)
        assert m.shape == (32, 32)
        assert np.all(m == 0.0)


def test_fine_saliency_highlights_a_spot():
    img = np.full((64, 64), 0.1, dtype=np.float32)
    img[28:36, 28:36] = 0.95
    m = ssit.fine_grained_saliency(img)
    assert m.max() == pytest.approx(1.0)
    assert m[28:36, 28:36].mean() > m[4:12, 4:12].mean()


def test_patch_scores_and_selection():
    m = np.zeros((4, 4), dtype=np.float32)
    m[0, 1] = 0.8
    m[3, 3] = 0.6
    s = ssit.patch_scores(m, 2)
    np.testing.assert_allclose(s, [[0.8, 0.0], [0.0, 0.6]])
    # ties removed highest-index first: all-equal keeps the first half
    kept = ssit.select_salient([0.3] * 8, 50.0)
    assert list(kept) == [0, 1, 2, 3]


def test_contrastive_uniform_similarities_give_ln_b():
    b, d = 5, 8
    q = np.tile(np.eye(1, d, 0, dtype=np.float32), (b, 1))
    k = q.copy()
    # identical rows -> every similarity equal -> loss is ln B
    assert ssit.contrastive_loss(q, k, 0.2) == pytest.approx(math.log(b), abs=1e-6)


def test_schedules_endpoints():
    lr0, a0 = ssit.schedules(0, base_lr=1e-3, warmup_epochs=5, total_epochs=30,
                             steps_per_epoch=10)
    assert lr0 == 0.0
    assert a0 == pytest.approx(0.99)
    lrw, _ = ssit.schedules(50, base_lr=1e-3, warmup_epochs=5, total_epochs=30,
                            steps_per_epoch=10)
    assert lrw == pytest.approx(1e-3)
    lrT, aT = ssit.schedules(300, base_lr=1e-3, warmup_epochs=5,
                             total_epochs=30, steps_per_epoch=10)
    assert lrT == 0.0
    assert aT == pytest.approx(1.0)


def test_knn_classifies_clusters():
    train = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]
    labels = [0, 0, 1, 1]
    pred = ssit.knn_classify(train, labels, [[2.0, 0.0], [0.0, 3.0]], 2, 2)
    assert list(pred) == [0, 1]
