"""Counter-based noise streams for the Monte Carlo estimators.

Every simulation draws its normals in fixed blocks of BLOCK paths.  The
normals for block i of a run seeded with s come from an independent Philox
stream keyed (s, i), so path j always sees the same noise regardless of how
many paths the run asked for in total, how blocks are scheduled across
threads, or which kernel backend consumes them.  That makes outputs
bit-reproducible for a fixed seed and lets estimators grow n without
re-randomizing the paths already drawn.
"""

from __future__ import annotations

import numpy as np

BLOCK = 4096


def block_normals(seed, block_index, n_steps):
    """Standard normals of shape (n_steps, BLOCK) for one path block."""
    key = np.array([seed % 2 ** 64, block_index], dtype=np.uint64)
    bg = np.random.Philox(key=key)
    return np.random.Generator(bg).standard_normal((n_steps, BLOCK))


def iter_blocks(seed, n_paths, n_steps):
    """Yield (slice_width, normals) covering n_paths in BLOCK-sized chunks.

    The final chunk's normals are still generated at full BLOCK width and
    sliced, so the noise seen by path j never depends on n_paths.
    """
    n_blocks = (n_paths + BLOCK - 1) // BLOCK
    for i in range(n_blocks):
        width = min(BLOCK, n_paths - i * BLOCK)
        yield width, block_normals(seed, i, n_steps)[:, :width]
