import numpy as np
import pytest
import torch

from dogclr.encoder import EncoderConfig, EncoderPair
from dogclr.skeleton import SkeletonGraph, ToySpec, generate_toy_dataset, toy_graph

torch.set_num_threads(1)


def ntu_text(frames, body_ids=("72057594037931101",), joints=25):
    """Raw NTU skeleton text. ``frames`` is a list over frames of lists over bodies
    of (joints, 3) coordinate arrays."""
    out = [str(len(frames))]
    for bodies in frames:
        out.append(str(len(bodies)))
        for bid, xyz in zip(body_ids, bodies):
            out.append(f"{bid} 0 1 1 1 1 0 0.02 0.1 2")
            out.append(str(joints))
            for x, y, z in xyz:
                out.append(f"{x} {y} {z} 280.1 190.2 1000.3 500.4 0 0 0 0 2")
    return "\n".join(out) + "\n"


@pytest.fixture
def path3():
    return SkeletonGraph(3, [(0, 1), (1, 2)], parents={1: 0, 2: 1}, root=0, name="path3")


@pytest.fixture
def star5():
    return SkeletonGraph(5, [(0, i) for i in range(1, 5)], parents={i: 0 for i in range(1, 5)}, root=0)


@pytest.fixture
def triangle():
    return SkeletonGraph(3, [(0, 1), (1, 2), (0, 2)], name="k3")


@pytest.fixture(scope="session")
def toy_small():
    return generate_toy_dataset(ToySpec(("wave", "kick", "jump", "still"), 12, T=16, V=9, test_per_class=6), 3)


@pytest.fixture
def tiny_pair64():
    g = toy_graph(9)
    pair = EncoderPair.build(EncoderConfig.tiny(channels=(8, 8), embedding_dim=16), g, seed=0,
                             dtype=torch.float64)
    return pair, g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    CRITERIA[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
