"""Codebook of frequent descriptors and informativeness scoring.

A descriptor is informative when it sits far from the codebook (hard to
explain by common patterns). A match into a reference is worth keeping
when the reference explains the descriptor better than the codebook
does; that margin, in squared distances, is its saving in bits.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .needle import DescriptorField

CODEBOOK_MAGIC = b"NDLC1\n"

DEFAULT_WORDS = 300
DEFAULT_FRACTION = 0.02
DEFAULT_QUOTA = 2000

_CHUNK = 8192  # rows per block in distance scans


def _min_dist_sq(points: np.ndarray, words: np.ndarray, chunk: int = _CHUNK):
    """Per-point squared distance to the nearest word, plus the word index."""
    w_sq = (words ** 2).sum(axis=1)
    best_d = np.empty(len(points))
    best_i = np.empty(len(points), dtype=np.int64)
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        d = (p ** 2).sum(axis=1)[:, None] + w_sq[None, :] - 2.0 * (p @ words.T)
        np.clip(d, 0.0, None, out=d)
        best_i[lo:lo + len(p)] = np.argmin(d, axis=1)
        best_d[lo:lo + len(p)] = d[np.arange(len(p)), best_i[lo:lo + len(p)]]
    return best_d, best_i


def kmeans_words(samples: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """Plain Lloyd k-means with a k-means++ style seeded start.

    Empty clusters are re-seeded at the sample farthest from its current
    word, so exactly k words always come back. Duplicate samples are fine;
    degenerate clusters are allowed.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n < k:
        raise ValueError(f"need at least {k} samples to fit {k} words, got {n}")
    rng = np.random.default_rng(seed)

    # k-means++ init: next seed drawn proportional to squared distance
    words = np.empty((k, samples.shape[1]))
    words[0] = samples[rng.integers(n)]
    d2 = ((samples - words[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            words[i] = samples[rng.integers(n)]  # all points coincide with seeds
            continue
        words[i] = samples[np.searchsorted(np.cumsum(d2), rng.random() * total)]
        d2 = np.minimum(d2, ((samples - words[i]) ** 2).sum(axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2, new_assign = _min_dist_sq(samples, words)
        for j in range(k):
            mask = new_assign == j
            if mask.any():
                words[j] = samples[mask].mean(axis=0)
            else:
                far = int(np.argmax(d2))
                words[j] = samples[far]
                new_assign[far] = j
                d2[far] = 0.0
        if (new_assign == assign).all():
            break
        assign = new_assign
    return words


@dataclass
class Codebook:
    """Words of common descriptors plus the self-tuned kernel width."""

    words: np.ndarray
    sigma: float
    sample_fraction: float = DEFAULT_FRACTION

    @property
    def word_count(self) -> int:
        return len(self.words)


def build_codebook(fields, k: int = DEFAULT_WORDS, fraction: float = DEFAULT_FRACTION,
                   seed: int = 0, max_iter: int = 100) -> Codebook:
    """Fit a codebook over one or more descriptor fields.

    Samples max(fraction of all descriptors, 10k) locations uniformly,
    capped at the total. sigma is the median distance from the sampled
    descriptors to their nearest word (floored at 1e-12 for degenerate
    all-equal input).
    """
    if isinstance(fields, DescriptorField):
        fields = [fields]
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    stacked = np.concatenate([f.flat() for f in fields], axis=0)
    n = len(stacked)
    if n < k:
        raise ValueError(f"only {n} descriptors available for {k} words")
    n_sample = min(n, max(int(np.ceil(fraction * n)), 10 * k))
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=n_sample, replace=False)
    samples = stacked[idx]
    words = kmeans_words(samples, k, seed=seed, max_iter=max_iter)
    d2, _ = _min_dist_sq(samples, words)
    sigma = max(float(np.median(np.sqrt(d2))), 1e-12)
    return Codebook(words=words, sigma=sigma, sample_fraction=fraction)


def codebook_distance(descriptors: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Euclidean distance to the nearest word; scalar in, scalar out."""
    desc = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    d2, _ = _min_dist_sq(desc, codebook.words)
    d = np.sqrt(d2)
    return float(d[0]) if np.ndim(descriptors) == 1 else d


def reference_distance(descriptor: np.ndarray, field: DescriptorField,
                       frame_range=None):
    """Exact nearest neighbor of one descriptor in a field.

    frame_range optionally restricts to video frames [lo, hi). Returns
    (distance, (x, y, t)); ties resolve to the smallest (t, y, x).
    """
    data = field.data
    t0 = field.t_start
    if frame_range is not None:
        lo = max(int(frame_range[0]), t0) - t0
        hi = min(int(frame_range[1]), field.t_stop) - t0
        if lo >= hi:
            raise ValueError("frame_range does not intersect the valid region")
        data = data[lo:hi]
        t0 += lo
    nt, ny, nx, dlen = data.shape
    flat = data.reshape(-1, dlen)
    d2 = ((flat - np.asarray(descriptor)[None, :]) ** 2).sum(axis=1)
    i = int(np.argmin(d2))  # argmin takes the first, i.e. smallest (t, y, x)
    it, rem = divmod(i, ny * nx)
    iy, ix = divmod(rem, nx)
    loc = (ix + field.x_start, iy + field.y_start, it + t0)
    return float(np.sqrt(max(d2[i], 0.0))), loc


def saving_in_bits(code_dist, ref_dist):
    """Bits saved by explaining a descriptor with the reference instead of
    the codebook: squared codebook distance minus squared match distance.
    Monotone in the likelihood ratio for every kernel width."""
    return np.asarray(code_dist, dtype=np.float64) ** 2 - np.asarray(ref_dist, dtype=np.float64) ** 2


def match_likelihood(dist, sigma: float):
    """Gaussian kernel likelihood of a match at the given distance."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.exp(-np.asarray(dist, dtype=np.float64) ** 2 / (2.0 * sigma * sigma))


@dataclass
class ScoredMatch:
    """One query descriptor explained by one reference location."""

    query: tuple        # (x, y, t) in the query video
    match: tuple        # (x, y, t) in the reference video
    code_dist: float    # distance to the nearest codebook word
    match_dist: float   # distance to the matched reference descriptor
    saving_bits: float = field(init=False)

    def __post_init__(self):
        self.saving_bits = self.code_dist ** 2 - self.match_dist ** 2


def informativeness(field: DescriptorField, codebook: Codebook) -> np.ndarray:
    """Codebook distance for every descriptor, aligned with field.flat()."""
    d2, _ = _min_dist_sq(field.flat(), codebook.words)
    return np.sqrt(d2)


def select_informative(field: DescriptorField, codebook: Codebook,
                       quota: int = DEFAULT_QUOTA) -> np.ndarray:
    """Locations of the quota most informative descriptors, as (x, y, t) rows.

    All-zero (static) descriptors never qualify. Ranking is by codebook
    distance, descending; exact ties order by (t, y, x) ascending.
    """
    if quota < 1:
        raise ValueError("quota must be positive")
    dist = informativeness(field, codebook)
    locs = field.locations()
    alive = field.flat().max(axis=1) > 0.0
    dist, locs = dist[alive], locs[alive]
    order = np.lexsort((locs[:, 0], locs[:, 1], locs[:, 2], -dist))
    return locs[order[:quota]]


def save_codebook(cb: Codebook, path) -> None:
    """Same envelope as descriptor-field dumps: magic, ASCII counts,
    float64 sigma, float32 words."""
    k, d = cb.words.shape
    header = f"{k} {d} {cb.sample_fraction!r}\n"
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(struct.pack("<d", cb.sigma))
        fh.write(cb.words.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    blob = Path(path).read_bytes()
    if not blob.startswith(CODEBOOK_MAGIC):
        raise ValueError(f"{path}: not a codebook file")
    nl = blob.find(b"\n", len(CODEBOOK_MAGIC))
    parts = blob[len(CODEBOOK_MAGIC):nl].split()
    if len(parts) != 3:
        raise ValueError(f"{path}: malformed codebook header")
    k, d, fraction = int(parts[0]), int(parts[1]), float(parts[2])
    off = nl + 1
    if len(blob) < off + 8:
        raise ValueError(f"{path}: truncated codebook payload")
    (sigma,) = struct.unpack_from("<d", blob, off)
    words = np.frombuffer(blob, dtype="<f4", count=k * d, offset=off + 8)
    if words.size != k * d:
        raise ValueError(f"{path}: truncated codebook payload")
    return Codebook(words=words.astype(np.float64).reshape(k, d),
                    sigma=sigma, sample_fraction=fraction)
