"""Counter-based Gaussian streams keyed by ``(seed, path index, step index)``.

Each path owns a Philox-4x64 stream whose 128-bit key is ``(seed, tag | path)``
and whose counter walks through the steps, so draw ``j`` of step ``k`` always
sits at position ``k * width + j`` regardless of how paths are scheduled.
Normals come from the inverse CDF of the uniforms.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_PATH_BITS = 48

BROWNIAN = 0
AUXILIARY = 1


def _key(seed: int, path: int, stream: int) -> np.ndarray:
    if path < 0 or path >= (1 << _PATH_BITS):
        raise ValueError("path index out of range")
    return np.array([seed & _MASK64, (stream << _PATH_BITS) | path], dtype=np.uint64)


def path_uniforms(seed: int, path: int, n: int, stream: int = BROWNIAN) -> np.ndarray:
    """``n`` uniforms in the open interval (0, 1) for one path."""
    gen = np.random.Generator(np.random.Philox(key=_key(seed, path, stream)))
    u = gen.random(n)
    # random() lives on the grid k 2^-53, shift off zero
    return u + 2.0**-54


def path_normals(seed: int, path: int, n: int, stream: int = BROWNIAN) -> np.ndarray:
    return ndtri(path_uniforms(seed, path, n, stream))


def block_normals(seed: int, paths: np.ndarray, n_steps: int, width: int, stream: int = BROWNIAN) -> np.ndarray:
    """Standard normals of shape ``(len(paths), n_steps, width)``."""
    out = np.empty((len(paths), n_steps * width))
    for row, p in enumerate(paths):
        out[row] = path_uniforms(seed, int(p), n_steps * width, stream)
    ndtri(out, out=out)
    return out.reshape(len(paths), n_steps, width)


class NormalStream:
    """Standard normals for a block of paths, drawn ``chunk`` steps at a time.

    Philox draws are sequential per stream, so the concatenated chunks equal
    :func:`block_normals` for the same paths while only one chunk is held in
    memory.
    """

    def __init__(self, seed: int, paths: np.ndarray, width: int, stream: int = BROWNIAN):
        self.width = width
        self.gens = [np.random.Generator(np.random.Philox(key=_key(seed, int(p), stream))) for p in paths]

    def draw(self, n_steps: int) -> np.ndarray:
        """Next ``(len(paths), n_steps, width)`` normals."""
        out = np.empty((len(self.gens), n_steps * self.width))
        for row, gen in enumerate(self.gens):
            out[row] = gen.random(n_steps * self.width)
        out += 2.0**-54
        ndtri(out, out=out)
        return out.reshape(len(self.gens), n_steps, self.width)


def block_uniforms(seed: int, paths: np.ndarray, n: int, stream: int = AUXILIARY) -> np.ndarray:
    out = np.empty((len(paths), n))
    for row, p in enumerate(paths):
        out[row] = path_uniforms(seed, int(p), n, stream)
    return out
