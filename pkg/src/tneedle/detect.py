"""Action detection: informative query descriptors vote for where the
query's temporal center sits inside a reference video."""

from dataclasses import dataclass, field

import numpy as np

from .needle import DescriptorField

DEFAULT_NEIGHBORS = 15
SMOOTHING_RADIUS = 2
DETECTION_WINDOW = 5
THRESHOLD_FACTOR = 2.0


@dataclass
class ScoreCurve:
    """Per-reference-frame evidence for the query center, raw and smoothed."""

    votes: np.ndarray
    smoothed: np.ndarray
    smoothing_radius: int = SMOOTHING_RADIUS
    detections: list = field(default_factory=list)


def _knn_flat(queries: np.ndarray, ref_flat: np.ndarray, k: int,
              chunk: int = 16384, q_chunk: int = 1024) -> np.ndarray:
    """Indices of the k nearest reference rows per query row, exact.

    Ties resolve to the smaller flat index, independent of chunking.
    Both axes are tiled so memory stays bounded at q_chunk x chunk.
    """
    out = np.empty((len(queries), k), dtype=np.int64)
    for q_lo in range(0, len(queries), q_chunk):
        q_blk = queries[q_lo:q_lo + q_chunk]
        n = len(q_blk)
        q_sq = (q_blk ** 2).sum(axis=1)[:, None]
        best_d = np.full((n, k), np.inf)
        best_i = np.full((n, k), -1, dtype=np.int64)
        rows = np.arange(n)[:, None]
        for lo in range(0, len(ref_flat), chunk):
            blk = ref_flat[lo:lo + chunk]
            d = q_sq + (blk ** 2).sum(axis=1)[None, :] - 2.0 * (q_blk @ blk.T)
            np.clip(d, 0.0, None, out=d)
            kk = min(k, blk.shape[0])
            part = np.argpartition(d, kk - 1, axis=1)[:, :kk]
            cand_d = np.concatenate([best_d, d[rows, part]], axis=1)
            cand_i = np.concatenate([best_i, part + lo], axis=1)
            order = np.lexsort((cand_i, cand_d), axis=1)[:, :k]
            best_d = cand_d[rows, order]
            best_i = cand_i[rows, order]
        out[q_lo:q_lo + q_chunk] = best_i
    return out


def vote_centers(q_field: DescriptorField, q_center: int,
                 r_field: DescriptorField, q_locs: np.ndarray,
                 neighbor_count: int = DEFAULT_NEIGHBORS) -> ScoreCurve:
    """Each informative query descriptor finds its k nearest reference
    descriptors anywhere in the reference; a neighbor at frame t_r casts
    one vote for frame t_r - (t_q - q_center). Votes outside the
    reference are discarded; the curve is smoothed with a triangular
    kernel of radius 2.
    """
    if len(q_locs) == 0:
        raise ValueError("informative set must be nonempty")
    if neighbor_count < 1:
        raise ValueError("neighbor_count must be positive")
    flat = q_field.flat()
    queries = flat[q_field.flat_index(q_locs[:, 0], q_locs[:, 1], q_locs[:, 2])]
    nn = _knn_flat(queries, r_field.flat(), neighbor_count)

    _, ny, nx = r_field.grid_shape
    t_r = nn // (ny * nx) + r_field.t_start                   # (n, k)
    delta = (q_locs[:, 2] - q_center)[:, None]
    targets = (t_r - delta).ravel()
    frames = r_field.frame_count
    keep = (targets >= 0) & (targets < frames)
    votes = np.bincount(targets[keep], minlength=frames).astype(np.float64)

    radius = SMOOTHING_RADIUS
    kernel = np.array([1.0, 2.0, 3.0, 2.0, 1.0])
    kernel /= kernel.sum()
    smoothed = np.convolve(votes, kernel, mode="same")
    return ScoreCurve(votes=votes, smoothed=smoothed, smoothing_radius=radius)


def find_detections(curve: ScoreCurve, window: int = DETECTION_WINDOW,
                    threshold_factor: float = THRESHOLD_FACTOR) -> list:
    """Strict local maxima of the smoothed curve within +-window frames
    that exceed threshold_factor times the curve's mean over all frames.
    Returns (frame, score) pairs, highest score first; also stored on the
    curve."""
    s = curve.smoothed
    n = len(s)
    mean = s.mean()
    is_max = s > threshold_factor * mean
    padded = np.concatenate([np.full(window, -np.inf), s, np.full(window, -np.inf)])
    for off in range(-window, window + 1):
        if off == 0:
            continue
        is_max &= s > padded[window + off:window + off + n]
    hits = [(int(f), float(s[f])) for f in np.nonzero(is_max)[0]]
    hits.sort(key=lambda fs: (-fs[1], fs[0]))
    curve.detections = hits
    return hits
