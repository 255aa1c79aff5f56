# Copyright (c) 2026 the echodiff authors
# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the python module: schedule math against numpy, metric
sanity, and one tiny phantom -> train -> translate -> evaluate round trip."""

import math

import numpy as np
import pytest

import echodiff as ed


def test_schedule_matches_numpy_cumprod():
    s = ed.make_schedule(100, 25, 1e-4, 0.02)
    beta = np.linspace(1e-4, 0.02, 100)
    ab = np.cumprod(1.0 - beta)
    assert s.reverse_steps() == 4
    np.testing.assert_allclose(np.asarray(s.beta), beta, rtol=0, atol=1e-15)
    np.testing.assert_allclose(np.asarray(s.alpha_bar), ab, rtol=1e-13)


def test_forward_marginal_and_span_compose():
    s = ed.make_schedule(8, 2, 0.05, 0.3)
    x0 = np.full((3, 3), 0.5)
    zeros = np.zeros((3, 3))
    out = ed.forward_marginal(x0, 4, zeros, s)
    np.testing.assert_allclose(out, math.sqrt(s.alpha_bar[3]) * x0, rtol=1e-12)

    c = ed.span_coefficients(s, 4)
    assert c["beta_span"] == pytest.approx(1.0 - c["alpha_span"], abs=0)
    spanned = ed.forward_span(out, 6, zeros, s)
    np.testing.assert_allclose(
        spanned, math.sqrt(s.alpha_bar[5]) * x0, rtol=1e-12
    )


def test_posterior_fixed_point():
    s = ed.make_schedule(8, 2, 0.05, 0.3)
    x0 = np.full((2, 2), -0.25)
    x_t = math.sqrt(s.alpha_bar[5]) * x0
    mean, var = ed.posterior(x0, x_t, 6, s)
    np.testing.assert_allclose(mean, math.sqrt(s.alpha_bar[3]) * x0, rtol=1e-12)
    assert var > 0


def test_metric_identities():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 255, size=(32, 32))
    assert ed.mse(a, a) == 0.0
    assert ed.psnr(a, a) is None
    assert ed.ssim(a, a) == 1.0
    b = rng.uniform(0, 255, size=(32, 32))
    assert ed.mse(a, b) == pytest.approx(np.mean((a - b) ** 2), rel=1e-12)
    assert ed.ssim(a, b) == pytest.approx(ed.ssim(b, a), abs=1e-12)

    feats = ed.extract_features(a)
    assert feats.shape == (83,)
    fa = rng.normal(size=(50, 4))
    assert ed.frechet_from_features(fa, fa) == pytest.approx(0.0, abs=1e-10)


def test_mask_codec_roundtrip():
    rng = np.random.default_rng(7)
    mask = rng.integers(0, 4, size=(16, 16)).astype(np.uint8)
    guide = ed.encode_mask_gray(mask)
    assert guide.shape == (16, 16)
    back = ed.decode_mask_gray(guide)
    np.testing.assert_array_equal(back, mask)
    with pytest.raises(RuntimeError):
        ed.encode_mask_gray(np.full((4, 4), 9, dtype=np.uint8))


def test_pipeline_roundtrip(tmp_path):
    data = tmp_path / "data"
    manifest = ed.generate_phantoms(data, n=6, style="a", seed=3, side=32)
    assert (data / "manifest.tsv").exists()
    assert manifest.endswith("manifest.tsv")

    out = tmp_path / "run"
    cfg = {"train.epochs": 1, "image.side": 32, "train.batch_size": 4, "seed": 11}
    ckpt = ed.train(data, out, config=cfg)
    assert (out / "checkpoint.bin").exists()
    assert (out / "steps.log").read_text().startswith("step 1 ")

    translated = tmp_path / "translated"
    info = ed.translate(ckpt, data, translated, seed=5)
    assert info["samples"] == 6
    assert info["generator_calls"] == 6 * 4  # four reverse steps each

    report = ed.evaluate(
        translated, data, ground_truth=data, out=tmp_path / "report"
    )
    assert report["fid"] >= 0.0
    assert len(report["rows"]) == 6
    assert (tmp_path / "report" / "report.csv").exists()

    model = ed.Model(ckpt)
    assert model.side == 32
    assert model.reverse_steps() == 4
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[8:18, 10:20] = 1
    img1 = model.translate_mask(mask, seed=9)
    img2 = model.translate_mask(mask, seed=9)
    np.testing.assert_array_equal(img1, img2)
    assert img1.shape == (32, 32)
    assert float(np.abs(img1).max()) <= 1.0


def test_config_fingerprint_stability():
    fp1 = ed.config_fingerprint({"train.epochs": 3})
    fp2 = ed.config_fingerprint({"train.epochs": 3})
    fp3 = ed.config_fingerprint({"train.epochs": 4})
    assert fp1 == fp2
    assert fp1 != fp3
    assert len(fp1) == 16
