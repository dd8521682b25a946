import cv2
import numpy as np
import pytest

from otlabel.ot_assign.errors import EvaluationError, ShapeError
from otlabel.ot_assign.formats import write_image
from otlabel.ot_assign.quality import (
    CODEC_VERSION,
    METRIC_VERSION,
    compression_ratio,
    format_summary,
    glcm_score,
    list_images,
    score_corpus,
    texture_pair,
    to_gray,
    write_metric_csv,
)


def test_constant_image():
    img = np.full((32, 32), 128, dtype=np.uint8)
    assert glcm_score(img) == 0.0
    assert compression_ratio(img) > 10


def test_checkerboard_reaches_maximum_contrast():
    img = (np.indices((16, 16)).sum(axis=0) % 2 * 255).astype(np.uint8)
    assert glcm_score(img, levels=2) == pytest.approx(1.0)
    assert glcm_score(img) == pytest.approx(31.0)


def test_noise_is_incompressible():
    img = np.random.default_rng(0).integers(0, 256, (64, 64), dtype=np.uint8)
    assert 0.9 < compression_ratio(img) < 1.1


def test_noise_scores_above_its_box_blur():
    for seed in range(100):
        img = np.random.default_rng(seed).integers(0, 256, (32, 32), dtype=np.uint8)
        assert glcm_score(img) > glcm_score(cv2.blur(img, (5, 5)))


def test_sharp_textures_rank_above_blurred():
    for seed in range(100):
        sharp, blurred = texture_pair(seed)
        assert glcm_score(sharp) > glcm_score(blurred)
        assert compression_ratio(sharp) < compression_ratio(blurred)


def test_metrics_are_deterministic():
    sharp, _ = texture_pair(7)
    assert glcm_score(sharp) == glcm_score(sharp.copy())
    assert compression_ratio(sharp) == compression_ratio(sharp.copy())


def test_rgb_uses_luma():
    rgb = np.zeros((8, 8, 3), dtype=np.uint8)
    rgb[..., 1] = 255
    gray = to_gray(rgb)
    assert gray.dtype == np.uint8
    assert int(gray[0, 0]) == round(0.587 * 255)


def test_small_images_rejected():
    with pytest.raises(ShapeError):
        glcm_score(np.zeros((7, 16), dtype=np.uint8))
    with pytest.raises(ShapeError):
        compression_ratio(np.zeros((16, 4, 3), dtype=np.uint8))


def test_corpus_report_and_csv(tmp_path):
    images = tmp_path / "images"
    images.mkdir()
    for seed in range(3):
        sharp, blurred = texture_pair(seed)
        write_image(images / f"sharp_{seed}.png", sharp)
        write_image(images / f"blurred_{seed}.ppm", np.stack([blurred] * 3, axis=-1))
    (images / "notes.txt").write_text("skip me")
    (images / "broken.png").write_bytes(b"junk")

    paths = list_images(images)
    assert len(paths) == 7
    report = score_corpus(paths)
    assert len(report.images) == 6
    assert [m.path for m in report.images] == sorted(m.path for m in report.images)
    assert report.glcm_mean == pytest.approx(np.mean([m.glcm_score for m in report.images]), abs=1e-9)
    assert report.ratio_mean == pytest.approx(np.mean([m.compression_ratio for m in report.images]), abs=1e-9)

    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metric_csv(report, first)
    write_metric_csv(score_corpus(paths), second)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().splitlines()[0] == "path,glcm_score,compression_ratio"

    summary = format_summary(report)
    assert METRIC_VERSION in summary
    assert CODEC_VERSION in summary


def test_empty_corpus(tmp_path):
    with pytest.raises(EvaluationError):
        score_corpus([])


def test_incompressible_image_is_reported_below_one(tmp_path):
    noise = np.random.default_rng(3).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    write_image(tmp_path / "noise.png", noise)
    report = score_corpus(list_images(tmp_path))
    assert len(report.images) == 1
    assert 0 < report.images[0].compression_ratio < 1
