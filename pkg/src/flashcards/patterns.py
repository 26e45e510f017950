"""Procedural input patterns: mazes (default), Gaussian noise, geometry.

Maze layout
-----------
A maze with ``cell_size`` c uses structural units of ``u = c // 2`` pixels
and a cell grid of ``g = (32 // u - 1) // 2`` cells per side, so corridors
and walls alternate with a pitch of c pixels.  The structural lattice is
(2g+1) x (2g+1) units: odd/odd units are corridor cells, odd/even units are
the passages between neighbouring cells, the rest are wall.  The rendered
lattice is centred on the 32 x 32 canvas with wall-coloured padding:

    offset = (32 - (2g + 1) * u) // 2

Cell (i, j) therefore covers pixel block
``[offset + (2i+1)*u, offset + (2i+2)*u)`` in each axis.  The corridor
topology is a uniform spanning tree produced by a randomized depth-first
walk, so every rendered maze is perfect: connected, no loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import validate_batch
from .errors import ConfigError

PATTERN_KINDS = ("maze", "gaussian", "geometric")
CELL_SIZES = (2, 4, 8)

_PATTERN_STREAM = 7001  # top-level RNG stream tag for pattern generation


@dataclass
class PatternSpec:
    """Recipe for a batch of initial input patterns."""

    kind: str = "maze"
    count: int = 1
    cell_size: Optional[int] = None  # None: per-sample random from CELL_SIZES
    colorize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ConfigError(
                f"unknown pattern kind {self.kind!r}; one of {PATTERN_KINDS}"
            )
        if self.count < 1:
            raise ConfigError(f"pattern count must be >= 1, got {self.count}")
        if self.cell_size is not None and self.cell_size not in CELL_SIZES:
            raise ConfigError(
                f"cell_size must be one of {CELL_SIZES}, got {self.cell_size}"
            )


def maze_grid_size(cell_size: int) -> int:
    unit = cell_size // 2
    return (32 // unit - 1) // 2


def maze_offset(cell_size: int) -> int:
    unit = cell_size // 2
    return (32 - (2 * maze_grid_size(cell_size) + 1) * unit) // 2


def _spanning_tree(g: int, rng: np.random.Generator) -> set[tuple]:
    """Randomized depth-first walk over the g x g cell grid."""
    visited = np.zeros((g, g), dtype=bool)
    start = (int(rng.integers(g)), int(rng.integers(g)))
    visited[start] = True
    stack = [start]
    edges: set[tuple] = set()
    while stack:
        i, j = stack[-1]
        options = [
            (i + di, j + dj)
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1))
            if 0 <= i + di < g and 0 <= j + dj < g and not visited[i + di, j + dj]
        ]
        if not options:
            stack.pop()
            continue
        nxt = options[int(rng.integers(len(options)))]
        visited[nxt] = True
        edges.add(((i, j), nxt))
        stack.append(nxt)
    return edges


def _render_maze(rng: np.random.Generator, cell_size: int,
                 colorize: bool) -> np.ndarray:
    g = maze_grid_size(cell_size)
    unit = cell_size // 2
    edges = _spanning_tree(g, rng)

    lattice = np.zeros((2 * g + 1, 2 * g + 1), dtype=np.float32)
    for i in range(g):
        for j in range(g):
            lattice[2 * i + 1, 2 * j + 1] = 1.0
    for (i, j), (k, l) in edges:
        lattice[i + k + 1, j + l + 1] = 1.0

    mask = np.kron(lattice, np.ones((unit, unit), dtype=np.float32))
    canvas = np.zeros((32, 32), dtype=np.float32)
    off = maze_offset(cell_size)
    canvas[off:off + mask.shape[0], off:off + mask.shape[1]] = mask

    if colorize:
        wall = rng.uniform(0.0, 1.0, 3).astype(np.float32)
        corridor = rng.uniform(0.0, 1.0, 3).astype(np.float32)
        return wall + canvas[..., None] * (corridor - wall)
    return np.repeat(canvas[..., None], 3, axis=-1)


def _render_gaussian(rng: np.random.Generator) -> np.ndarray:
    return np.clip(
        rng.normal(0.5, 0.25, (32, 32, 3)), 0.0, 1.0
    ).astype(np.float32)


def _render_geometric(rng: np.random.Generator, colorize: bool) -> np.ndarray:
    def color():
        if colorize:
            return rng.uniform(0.0, 1.0, 3).astype(np.float32)
        return np.full(3, float(rng.integers(2)), dtype=np.float32)

    img = np.ones((32, 32, 3), dtype=np.float32) * color()
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    for _ in range(int(rng.integers(3, 9))):
        shape = rng.integers(3)
        c = color()
        if shape == 0:  # rectangle
            y0, y1 = np.sort(rng.integers(0, 32, 2))
            x0, x1 = np.sort(rng.integers(0, 32, 2))
            img[y0:y1 + 1, x0:x1 + 1] = c
        elif shape == 1:  # disc
            cy, cx = rng.integers(0, 32, 2)
            rad = rng.integers(3, 13)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad**2
            img[mask] = c
        else:  # line segment
            y0, x0, y1, x1 = rng.integers(0, 32, 4)
            steps = np.linspace(0.0, 1.0, 2 * 32)
            ys = np.clip(np.round(y0 + steps * (y1 - y0)), 0, 31).astype(int)
            xs = np.clip(np.round(x0 + steps * (x1 - x0)), 0, 31).astype(int)
            img[ys, xs] = c
    return img


def generate_patterns(spec: PatternSpec) -> np.ndarray:
    """Generate a canonical pattern batch, bit-deterministic given the spec."""
    out = np.empty((spec.count, 32, 32, 3), dtype=np.float32)
    for i in range(spec.count):
        rng = np.random.default_rng([_PATTERN_STREAM, spec.seed, i])
        if spec.kind == "maze":
            cell = spec.cell_size or CELL_SIZES[int(rng.integers(len(CELL_SIZES)))]
            out[i] = _render_maze(rng, cell, spec.colorize)
        elif spec.kind == "gaussian":
            out[i] = _render_gaussian(rng)
        else:
            out[i] = _render_geometric(rng, spec.colorize)
    return validate_batch(np.clip(out, 0.0, 1.0))
