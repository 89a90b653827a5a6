"""Whole-slice super-resolution with G by overlapping tiles."""
from __future__ import annotations

import numpy as np
import torch

from .data import geometry_for_mode
from .models import ShapeError
from .resample import upsample2

TILE_OVERLAP = 8


def tile_starts(n: int, tile: int, overlap: int = TILE_OVERLAP) -> list:
    """Tile origins covering [0, n); the last tile is flush with the end."""
    if n <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, n - tile + 1, step))
    if starts[-1] != n - tile:
        starts.append(n - tile)
    return starts


def _run(G, tile: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        x = torch.from_numpy(tile.astype(np.float32))[None, None]
        return G(x)[0, 0].double().numpy()


def super_resolve(G, lr: np.ndarray, mode: str, tile: int = 32, overlap: int = TILE_OVERLAP,
                  upsample_method: str = "nearest") -> np.ndarray:
    """Apply G (dropout off) to a whole LR slice; seams are averaged uniformly.

    In the same-size geometry the LR slice is first upsampled to the HR grid,
    matching how training inputs were prepared.
    """
    was_training = G.training
    G.eval()
    try:
        x = np.asarray(lr, dtype=np.float64)
        if geometry_for_mode(mode) == "same-size":
            x = upsample2(x, upsample_method)
        h, w = x.shape
        d = G.downsampling
        for name, n in (("height", h), ("width", w)):
            if n % d or (n < tile and n < d):
                raise ShapeError(f"slice {name} {n} is incompatible with the trained geometry "
                                 f"(multiple of {d} required)")
        th, tw = min(tile, h), min(tile, w)
        oh, ow = G.output_size(th, tw)
        sy, sx = oh // th, ow // tw
        out = np.zeros((h * sy, w * sx))
        count = np.zeros_like(out)
        for r in tile_starts(h, th, overlap):
            for c in tile_starts(w, tw, overlap):
                y = _run(G, x[r:r + th, c:c + tw])
                out[r * sy:(r + th) * sy, c * sx:(c + tw) * sx] += y
                count[r * sy:(r + th) * sy, c * sx:(c + tw) * sx] += 1
        return out / count
    finally:
        G.train(was_training)
