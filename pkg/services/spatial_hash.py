# File: services/spatial_hash.py
import numpy as np

# ITEMS SPANNING MORE GRID CELLS THAN THIS ARE TESTED AGAINST EVERY QUERY INSTEAD
MAX_CELLS_PER_ITEM = 512


class SpatialHash:
    """Uniform grid over axis-aligned boxes, answering "which boxes may contain this point".

    Every box is registered in all grid cells it overlaps. Keys are kept sorted so a
    batch of point queries expands into (point, item) candidate pairs with searchsorted,
    in the same repeat/offset way tile-to-splat interactions are expanded in a rasterizer.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray, cell_size: float = None):
        lo = np.asarray(lo, dtype=np.float64).reshape(-1, 3)
        hi = np.asarray(hi, dtype=np.float64).reshape(-1, 3)
        self.item_count = lo.shape[0]
        if self.item_count == 0:
            self.cell_size = 1.0
            self.origin = np.zeros(3)
            self.dims = np.ones(3, dtype=np.int64)
            self.keys = np.zeros(0, dtype=np.int64)
            self.items = np.zeros(0, dtype=np.int64)
            self.overflow = np.zeros(0, dtype=np.int64)
            return

        extent = hi - lo
        if cell_size is None:
            cell_size = float(np.median(extent.max(axis=1)))
        span = float((hi.max(axis=0) - lo.min(axis=0)).max())
        cell_size = max(cell_size, span / 256.0, 1e-12)
        self.cell_size = cell_size
        self.origin = lo.min(axis=0)

        cell_lo = np.floor((lo - self.origin) / cell_size).astype(np.int64)
        cell_hi = np.floor((hi - self.origin) / cell_size).astype(np.int64)
        self.dims = cell_hi.max(axis=0) + 1

        per_axis = cell_hi - cell_lo + 1
        counts = per_axis.prod(axis=1)
        big = counts > MAX_CELLS_PER_ITEM
        self.overflow = np.flatnonzero(big)

        small = np.flatnonzero(~big)
        counts_small = counts[small]
        total = int(counts_small.sum())
        item_ids = np.repeat(small, counts_small)
        starts = np.repeat(np.cumsum(counts_small) - counts_small, counts_small)
        local = np.arange(total, dtype=np.int64) - starts
        span_axes = per_axis[item_ids]
        ix = local % span_axes[:, 0]
        iy = (local // span_axes[:, 0]) % span_axes[:, 1]
        iz = local // (span_axes[:, 0] * span_axes[:, 1])
        coords = cell_lo[item_ids] + np.stack([ix, iy, iz], axis=1)
        keys = self._encode(coords)

        order = np.lexsort((item_ids, keys))
        self.keys = keys[order]
        self.items = item_ids[order]

    def _encode(self, coords: np.ndarray) -> np.ndarray:
        return (coords[:, 2] * self.dims[1] + coords[:, 1]) * self.dims[0] + coords[:, 0]

    def candidate_pairs(self, points: np.ndarray):
        """Return (point_idx, item_idx) pairs sorted by point then item, overflow items included."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = points.shape[0]
        if n == 0 or self.item_count == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty

        coords = np.floor((points - self.origin) / self.cell_size)
        inside = np.all((coords >= 0) & (coords < self.dims), axis=1)
        coords = np.where(inside[:, None], coords, 0).astype(np.int64)
        keys = self._encode(coords)
        begin = np.searchsorted(self.keys, keys, side="left")
        end = np.searchsorted(self.keys, keys, side="right")
        counts = np.where(inside, end - begin, 0)

        total = int(counts.sum())
        point_ids = np.repeat(np.arange(n, dtype=np.int64), counts)
        offsets = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        item_ids = self.items[np.repeat(begin, counts) + offsets]

        if len(self.overflow):
            point_ids = np.concatenate([point_ids, np.repeat(np.arange(n), len(self.overflow))])
            item_ids = np.concatenate([item_ids, np.tile(self.overflow, n)])
            order = np.lexsort((item_ids, point_ids))
            point_ids, item_ids = point_ids[order], item_ids[order]
        return point_ids, item_ids
