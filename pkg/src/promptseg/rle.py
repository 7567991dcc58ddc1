"""Run-length encoding for mask transport.

Row-major scan, alternating run lengths starting with background (0), so a
mask that begins with foreground encodes a leading zero-length background
run. ``decode(encode(m), *m.shape) == m`` exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def encode(mask) -> list[int]:
    arr = np.asarray(mask).astype(np.int64).reshape(-1)
    if not np.isin(arr, (0, 1)).all():
        raise InputError("RLE input must be binary")
    runs: list[int] = []
    value = 0
    pos = 0
    while pos < arr.size:
        end = pos
        while end < arr.size and arr[end] == value:
            end += 1
        runs.append(end - pos)
        pos = end
        value = 1 - value
    if not runs:
        runs = [0]
    return runs


def decode(runs: list[int], height: int, width: int) -> np.ndarray:
    total = sum(runs)
    if total != height * width:
        raise InputError(f"RLE covers {total} pixels, expected {height * width}")
    out = np.zeros(height * width, dtype=np.uint8)
    value = 0
    pos = 0
    for run in runs:
        if run < 0:
            raise InputError("negative run length")
        if value:
            out[pos : pos + run] = 1
        pos += run
        value = 1 - value
    return out.reshape(height, width)
