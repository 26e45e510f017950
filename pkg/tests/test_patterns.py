import numpy as np
import pytest

from flashcards.errors import ConfigError
from flashcards.patterns import CELL_SIZES, PatternSpec, generate_patterns

from maze_oracle import extract_cell_graph, is_spanning_tree


def test_maze_grayscale_is_binary():
    batch = generate_patterns(
        PatternSpec(kind="maze", count=5, cell_size=4, colorize=False, seed=3)
    )
    assert set(np.unique(batch)) <= {0.0, 1.0}


def test_determinism_bit_identical():
    spec = PatternSpec(kind="maze", count=6, colorize=True, seed=12)
    assert np.array_equal(generate_patterns(spec), generate_patterns(spec))


def test_gaussian_statistics():
    batch = generate_patterns(PatternSpec(kind="gaussian", count=40, seed=1))
    # independent oracle for the clipped-normal moments
    ref = np.clip(np.random.default_rng(999).normal(0.5, 0.25, 200000), 0, 1)
    assert abs(batch.mean() - ref.mean()) < 0.01
    assert abs(batch.std() - ref.std()) < 0.01


def test_geometric_batch_valid():
    batch = generate_patterns(PatternSpec(kind="geometric", count=8, seed=2))
    assert batch.shape == (8, 32, 32, 3)
    assert batch.min() >= 0.0 and batch.max() <= 1.0


@pytest.mark.parametrize("cell_size", CELL_SIZES)
@pytest.mark.parametrize("colorize", [False, True])
def test_maze_is_spanning_tree(cell_size, colorize):
    batch = generate_patterns(
        PatternSpec(kind="maze", count=10, cell_size=cell_size,
                    colorize=colorize, seed=100 + cell_size)
    )
    for img in batch:
        cells, edges = extract_cell_graph(img, cell_size)
        assert is_spanning_tree(cells, edges)


def test_maze_spanning_tree_many_seeds():
    # mixed per-sample cell sizes across 100 seeds; the oracle needs the
    # cell size, so fix it per spec here and vary the seed instead
    for seed in range(100):
        cell = CELL_SIZES[seed % len(CELL_SIZES)]
        img = generate_patterns(
            PatternSpec(kind="maze", count=1, cell_size=cell, seed=seed)
        )[0]
        cells, edges = extract_cell_graph(img, cell)
        assert is_spanning_tree(cells, edges), f"seed {seed} cell {cell}"


def test_batch_distinctness():
    batch = generate_patterns(PatternSpec(kind="maze", count=64, seed=0))
    blobs = {batch[i].tobytes() for i in range(len(batch))}
    assert len(blobs) == len(batch)


def test_grayscale_distinctness_large_grids():
    batch = generate_patterns(
        PatternSpec(kind="maze", count=32, cell_size=2, colorize=False, seed=5)
    )
    assert len({im.tobytes() for im in batch}) == len(batch)


def test_spec_validation():
    with pytest.raises(ConfigError):
        PatternSpec(kind="plasma")
    with pytest.raises(ConfigError):
        PatternSpec(count=0)
    with pytest.raises(ConfigError):
        PatternSpec(cell_size=3)
