import numpy as np

from dogclr.skeleton import SkeletonGraph
from dogclr.visualize import render_augmentation, render_overlay, screen_coordinates, write_coordinates

GOLDEN = __import__("pathlib").Path(__file__).parent / "golden" / "hand_fixture_coords.csv"


def hand_fixture():
    # one frame, joints at (0, 0), (1, 0), (0, 2); z is ignored by the render
    values = np.zeros((3, 1, 3))
    values[0, 0] = [0.0, 1.0, 0.0]
    values[1, 0] = [0.0, 0.0, 2.0]
    values[2, 0] = [5.0, -5.0, 1.0]
    graph = SkeletonGraph(3, [(0, 1), (0, 2)])
    mask = np.array([[1, 0, 1]], dtype=np.uint8)
    return values, graph, mask


def test_hand_fixture_matches_golden(tmp_path):
    values, graph, mask = hand_fixture()
    px = render_overlay(values, mask, graph, 0, tmp_path / "overlay.png")
    out = write_coordinates(tmp_path / "coords.csv", [(0, v, px[v, 0], px[v, 1], mask[0, v]) for v in range(3)])
    assert out.read_text() == GOLDEN.read_text()
    assert (tmp_path / "overlay.png").stat().st_size > 0


def test_screen_coordinates_fit_canvas():
    rng = np.random.default_rng(0)
    px = screen_coordinates(rng.standard_normal((3, 4, 9)), 2)
    assert px.shape == (9, 2)
    assert px.min() >= 16 - 1e-9 and px.max() <= 240 + 1e-9


def test_screen_coordinates_degenerate_frame():
    px = screen_coordinates(np.zeros((3, 1, 4)), 0)
    assert np.allclose(px, [[128.0, 128.0]] * 4)


def test_render_augmentation_writes(tmp_path):
    values, graph, mask = hand_fixture()
    render_augmentation(values, values * 2, mask, graph, 0, tmp_path / "aug.png")
    assert (tmp_path / "aug.png").stat().st_size > 0
