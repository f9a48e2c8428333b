"""Shared test helpers: independent reference implementations used as
oracles. These deliberately avoid the package's internal kernels."""
from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from softslic.grid import NeighborTable


def dense_q(assoc) -> np.ndarray:
    """Expand the (n, 9) slot weights into a dense (n, m) matrix."""
    n = assoc.q.shape[0]
    out = np.zeros((n, assoc.nbr.m))
    for p in range(n):
        for j in range(9):
            if assoc.nbr.valid[p, j]:
                out[p, assoc.nbr.idx[p, j]] += assoc.q[p, j]
    return out


def tiny_table(idx_rows, valid_rows, m, n_w, n_h) -> NeighborTable:
    """Hand-built candidate table for small fixtures."""
    return NeighborTable(
        idx=np.asarray(idx_rows, dtype=np.int64),
        valid=np.asarray(valid_rows, dtype=bool),
        m=m, n_w=n_w, n_h=n_h,
    )


def row_with(owner: int, others: dict[int, int] | None = None):
    """One 9-slot row: owner id at slot 4, optional {slot: id} extras."""
    idx = [-1] * 9
    valid = [False] * 9
    idx[4] = owner
    valid[4] = True
    for slot, sid in (others or {}).items():
        idx[slot] = sid
        valid[slot] = True
    return idx, valid


def bfs_components_4(lab2d: np.ndarray) -> np.ndarray:
    """Flood-fill 4-connected components; returns a component-id image."""
    h, w = lab2d.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    next_id = 0
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] != -1:
                continue
            queue = deque([(sy, sx)])
            comp[sy, sx] = next_id
            while queue:
                y, x = queue.popleft()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if (0 <= ny < h and 0 <= nx < w and comp[ny, nx] == -1
                            and lab2d[ny, nx] == lab2d[y, x]):
                        comp[ny, nx] = next_id
                        queue.append((ny, nx))
            next_id += 1
    return comp


def brute_force_asa(h_labels: np.ndarray, g_labels: np.ndarray) -> float:
    """Double loop over all (superpixel, ground-truth) segment pairs."""
    total = 0
    for hid in np.unique(h_labels):
        mask = h_labels == hid
        best = 0
        for gid in np.unique(g_labels):
            best = max(best, int(np.sum(mask & (g_labels == gid))))
        total += best
    return total / h_labels.size


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
