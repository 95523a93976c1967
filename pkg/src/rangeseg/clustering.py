"""
Instance clustering of foreground points with DBSCAN under a
resolution-weighted distance.

The distance stretches horizontal offsets and shrinks vertical ones,

    d(a, b) = sqrt(2 dx^2 + 2 dy^2 + dz^2 / 2),

because a spinning LiDAR samples the vertical direction about half as
densely as the horizontal one.  It equals the Euclidean distance after
scaling coordinates by ``(sqrt 2, sqrt 2, 1/sqrt 2)``, which is how the
neighbor grid works internally.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from rangeseg._atomic import atomic_write_text
from rangeseg.errors import ConfigError, ProvenanceMissingError, ShapeMismatchError

METRIC_SCALE = np.array([np.sqrt(2.0), np.sqrt(2.0), 1.0 / np.sqrt(2.0)])


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.7
    min_pts: int = 7

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.min_pts < 1:
            raise ConfigError("min_pts must be at least 1")


@dataclass
class InstanceLabeling:
    """Per-point instance ids (0 = noise) plus per-instance class and size.

    ``point_ids[i]`` is the index in the source cloud of the ``i``-th
    clustered point; instance ``k`` (1-based) has class ``classes[k-1]``.
    """

    point_ids: np.ndarray
    instance: np.ndarray
    classes: np.ndarray
    counts: np.ndarray

    @property
    def num_instances(self) -> int:
        return int(self.classes.size)

    @property
    def noise(self) -> np.ndarray:
        return self.instance == 0

    def lookup(self, point_ids) -> np.ndarray:
        """Instance id of each requested cloud point id."""
        point_ids = np.asarray(point_ids, dtype=np.int64)
        order = np.argsort(self.point_ids, kind="stable")
        sorted_ids = self.point_ids[order]
        pos = np.searchsorted(sorted_ids, point_ids)
        pos_c = np.minimum(pos, max(sorted_ids.size - 1, 0))
        found = (pos < sorted_ids.size) & (sorted_ids[pos_c] == point_ids) if sorted_ids.size else \
            np.zeros(point_ids.shape, dtype=bool)
        if not found.all():
            missing = point_ids[~found][:5].tolist()
            raise ProvenanceMissingError(f"points {missing} have no clustering result")
        return self.instance[order[pos_c]]

    def to_jsonl(self) -> str:
        lines = [json.dumps({"id": k + 1, "class": int(c), "point_count": int(n)})
                 for k, (c, n) in enumerate(zip(self.classes, self.counts))]
        return "".join(line + "\n" for line in lines)


def weighted_distance(a, b) -> float:
    """Resolution-weighted distance between two points (only x, y, z are used)."""
    dx, dy, dz = (float(a[i]) - float(b[i]) for i in range(3))
    return float(np.sqrt(2 * dx * dx + 2 * dy * dy + dz * dz / 2))


def weighted_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise weighted distances between ``(n, 3)`` and ``(m, 3)`` arrays."""
    sa = np.asarray(a, dtype=np.float64)[:, :3] * METRIC_SCALE
    sb = np.asarray(b, dtype=np.float64)[:, :3] * METRIC_SCALE
    diff = sa[:, None, :] - sb[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


_OFFSETS = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])


def neighbor_lists(xyz: np.ndarray, eps: float) -> list:
    """Indices (ascending) of all points within ``eps`` of each point, itself included.

    Points are bucketed into a hash grid with cell edge ``eps`` in the scaled
    metric space, so every neighbor lies in one of the 27 surrounding cells.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = xyz.shape[0]
    if n == 0:
        return []
    scaled = xyz * METRIC_SCALE
    cells = np.floor(scaled / eps).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    members = [order[starts[c]:starts[c + 1]] for c in range(len(uniq))]
    index = {tuple(key): c for c, key in enumerate(uniq.tolist())}
    eps2 = eps * eps
    result = [None] * n
    for c, key in enumerate(uniq):
        cand = [members[index[t]] for t in map(tuple, (key + _OFFSETS).tolist()) if t in index]
        cand = np.sort(np.concatenate(cand))
        own = members[c]
        diff = scaled[own][:, None, :] - scaled[cand][None, :, :]
        close = np.einsum("ijk,ijk->ij", diff, diff) <= eps2
        for row, p in enumerate(own):
            result[p] = cand[close[row]]
    return result


def dbscan(xyz: np.ndarray, classes, params: DbscanParams = DbscanParams(),
           point_ids=None) -> InstanceLabeling:
    """Cluster all foreground points jointly.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Clusters are grown breadth-first from the lowest-index
    unassigned core point, so a border point reachable from several clusters
    joins the one created first.  Each instance takes the majority class of
    its members, ties going to the lowest class id.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = xyz.shape[0]
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    if classes.shape != (n,):
        raise ShapeMismatchError(f"{classes.size} classes for {n} points")
    ids = np.arange(n, dtype=np.int64) if point_ids is None else np.asarray(point_ids, dtype=np.int64)
    if ids.shape != (n,):
        raise ShapeMismatchError(f"{ids.size} point ids for {n} points")

    nbrs = neighbor_lists(xyz, params.eps)
    core = np.array([len(nb) >= params.min_pts for nb in nbrs], dtype=bool)
    labels = np.zeros(n, dtype=np.int32)
    cluster = 0
    for i in range(n):
        if labels[i] or not core[i]:
            continue
        cluster += 1
        labels[i] = cluster
        queue = deque([i])
        while queue:
            nb = nbrs[queue.popleft()]
            fresh = nb[labels[nb] == 0]
            labels[fresh] = cluster
            queue.extend(fresh[core[fresh]].tolist())

    inst_classes = np.zeros(cluster, dtype=np.int64)
    counts = np.zeros(cluster, dtype=np.int64)
    for k in range(1, cluster + 1):
        member_classes = classes[labels == k]
        counts[k - 1] = member_classes.size
        inst_classes[k - 1] = int(np.argmax(np.bincount(member_classes)))
    return InstanceLabeling(ids, labels, inst_classes, counts)


def cluster_frame(img, semantic, cloud, params: DbscanParams = DbscanParams()) -> InstanceLabeling:
    """Run :func:`dbscan` on the points behind every foreground cell of ``semantic``."""
    semantic = np.asarray(semantic)
    if semantic.shape != img.shape:
        raise ShapeMismatchError(f"semantic raster {semantic.shape} vs image {img.shape}")
    fg = semantic > 0
    ids = img.cell_point[fg]
    if (ids < 0).any():
        raise ProvenanceMissingError(f"{int((ids < 0).sum())} foreground cells have no source point")
    return dbscan(cloud.xyz[ids], semantic[fg], params, ids)


def apply_instances(raster, img, labeling: InstanceLabeling):
    """Instance raster and cleaned semantic raster (noise cells set to background)."""
    raster = np.asarray(raster)
    if raster.shape != img.shape:
        raise ShapeMismatchError(f"raster {raster.shape} vs image {img.shape}")
    fg = raster > 0
    ids = img.cell_point[fg]
    if (ids < 0).any():
        raise ProvenanceMissingError(f"{int((ids < 0).sum())} foreground cells have no source point")
    inst = labeling.lookup(ids)
    instance_raster = np.zeros(raster.shape, dtype=np.uint16)
    instance_raster[fg] = inst
    cleaned = raster.astype(np.uint8).copy()
    cleaned[fg] = np.where(inst == 0, 0, raster[fg])
    return instance_raster, cleaned


def save_instances_jsonl(path, labeling: InstanceLabeling) -> None:
    atomic_write_text(path, labeling.to_jsonl())
