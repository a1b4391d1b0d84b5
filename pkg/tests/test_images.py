import numpy as np

from frontalize.images import from_uint8, image_grid, read_image, read_masks, to_uint8, write_image, write_masks


def test_png_round_trip_is_quantization_exact(tmp_path, rng):
    img = from_uint8(rng.integers(0, 256, (6, 7, 3)))
    back = read_image(write_image(tmp_path / "a.png", img))
    assert np.array_equal(back, img)


def test_quantization_error_bounded(tmp_path, rng):
    img = rng.uniform(-1, 1, (5, 5, 3))
    back = read_image(write_image(tmp_path / "a.png", img))
    assert np.abs(back - img).max() <= 1 / 127.5 / 2 + 1e-12


def test_grey_round_trip(tmp_path):
    img = np.linspace(-1, 1, 16).reshape(4, 4, 1)
    assert read_image(write_image(tmp_path / "g.png", img)).shape == (4, 4, 1)


def test_clipping():
    assert to_uint8(np.array([-3.0, 3.0])).tolist() == [0, 255]


def test_masks_round_trip(tmp_path):
    planes = np.stack([np.eye(4), np.ones((4, 4)), np.zeros((4, 4))])
    assert np.array_equal(read_masks(write_masks(tmp_path / "m.png", planes)), planes)


def test_grid_layout():
    a, b = np.zeros((2, 3, 1)), np.ones((2, 3, 1))
    grid = image_grid([[a, b], [b]], pad=1)
    assert grid.shape == (5, 7, 1)
    assert grid[0, 4, 0] == 1 and grid[3, 0, 0] == 1 and grid[3, 4, 0] == -1
