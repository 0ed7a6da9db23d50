import numpy as np
import pytest

from heatdet.harness.heatbar import (
    HeatbarWriteError, colormap, decode_p6, encode_p6, heatbar_pixels, render_heatbar,
)


def test_colormap_endpoints_and_midpoint():
    assert colormap(0.0).tolist() == [0, 0, 255]
    assert colormap(1.0).tolist() == [255, 0, 0]
    assert colormap(0.5).tolist() == [128, 0, 128]


def test_file_reparses_with_expected_size(tmp_path):
    rng = np.random.default_rng(0)
    heat = rng.uniform(size=(16, 16))
    img = rng.uniform(size=(3, 64, 64))
    path = render_heatbar(heat, heat > 0.5, img, tmp_path / "h.ppm")
    pix = decode_p6(path.read_bytes())
    assert pix.shape == (64, 64, 3)


def test_byte_identical_reruns(tmp_path):
    heat = np.linspace(0, 1, 64).reshape(8, 8)
    img = np.full((3, 32, 32), 0.25)
    a = render_heatbar(heat, heat > 0.5, img, tmp_path / "a.ppm").read_bytes()
    b = render_heatbar(heat, heat > 0.5, img, tmp_path / "b.ppm").read_bytes()
    assert a == b


def test_pure_colormap_without_image():
    pix = heatbar_pixels(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert pix[0, 0].tolist() == [0, 0, 255] and pix[0, 1].tolist() == [255, 0, 0]
    assert decode_p6(encode_p6(pix)).tolist() == pix.tolist()


def test_rejects_unnormalized_and_reports_path(tmp_path):
    with pytest.raises(ValueError):
        heatbar_pixels(np.array([[0.0, 2.0]]))
    bad = tmp_path / "missing" / "x.ppm"
    with pytest.raises(HeatbarWriteError, match="missing"):
        render_heatbar(np.zeros((2, 2)), None, None, bad)
