"""Shared-region growing between videos and affinity-based clustering."""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .needle import DescriptorField, NeedleParams, field_from_video
from .significance import DEFAULT_FRACTION, DEFAULT_WORDS, Codebook, informativeness, kmeans_words
from .util import content_hash, hash_seed, parallel_map

DEFAULT_CONFIDENCE = 0.02
SWEEP_ORDER = ("sample", "spatial-topdown", "spatial-bottomup",
               "temporal-forward", "temporal-backward")


def sample_count(per_frame: int, frames: int, region_size: int, confidence: float) -> int:
    """Samples per descriptor so a region of region_size descriptors is hit
    with probability at least 1 - confidence: ceil((N*F/|R|) ln(1/confidence)).
    confidence = 1 asks for nothing and returns 0."""
    if per_frame < 1 or frames < 1:
        raise ValueError("descriptor counts must be positive")
    total = per_frame * frames
    if not 0 < region_size <= total:
        raise ValueError("region_size must lie in [1, N*F]")
    if not 0.0 < confidence <= 1.0:
        raise ValueError("confidence must lie in (0, 1]")
    return int(math.ceil(total / region_size * math.log(1.0 / confidence)))


# samples per descriptor per target for the canonical 1% region at 98%
# confidence; multiplied by the cluster count during collection clustering
SAMPLES_BASE = sample_count(100, 1, 1, DEFAULT_CONFIDENCE)


@njit(cache=True, nogil=True)
def _eval_candidates(src_flat, dst_flat, cand, best_d2, best_flat):
    n, s = cand.shape
    d = src_flat.shape[1]
    for i in range(n):
        bd = best_d2[i]
        bi = best_flat[i]
        for j in range(s):
            c = cand[i, j]
            acc = 0.0
            for e in range(d):
                diff = src_flat[i, e] - dst_flat[c, e]
                acc += diff * diff
            if acc < bd:
                bd = acc
                bi = c
        best_d2[i] = bd
        best_flat[i] = bi


@njit(cache=True, nogil=True)
def _dist2(src_flat, i, dst_flat, j):
    acc = 0.0
    for e in range(src_flat.shape[1]):
        diff = src_flat[i, e] - dst_flat[j, e]
        acc += diff * diff
    return acc


@njit(cache=True, nogil=True)
def _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2, best_flat,
           i, neighbor, dt, dy, dx):
    """Propose neighbor's match shifted by the grid offset from neighbor to i."""
    nb = best_flat[neighbor]
    if nb < 0:
        return
    jt = nb // (nyd * nxd)
    rem = nb % (nyd * nxd)
    jy = rem // nxd
    jx = rem % nxd
    jt += dt
    jy += dy
    jx += dx
    if jt < 0 or jt >= ntd or jy < 0 or jy >= nyd or jx < 0 or jx >= nxd:
        return
    j = (jt * nyd + jy) * nxd + jx
    d2 = _dist2(src_flat, i, dst_flat, j)
    if d2 < best_d2[i]:
        best_d2[i] = d2
        best_flat[i] = j


@njit(cache=True, nogil=True)
def _sweep_spatial(src_flat, dst_flat, nt, ny, nx, ntd, nyd, nxd,
                   best_d2, best_flat, reverse):
    for t in range(nt):
        base = t * ny * nx
        if not reverse:
            for y in range(ny):
                for x in range(nx):
                    i = base + y * nx + x
                    if y > 0:
                        _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2,
                               best_flat, i, i - nx, 0, 1, 0)
                    if x > 0:
                        _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2,
                               best_flat, i, i - 1, 0, 0, 1)
        else:
            for y in range(ny - 1, -1, -1):
                for x in range(nx - 1, -1, -1):
                    i = base + y * nx + x
                    if y < ny - 1:
                        _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2,
                               best_flat, i, i + nx, 0, -1, 0)
                    if x < nx - 1:
                        _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2,
                               best_flat, i, i + 1, 0, 0, -1)


@njit(cache=True, nogil=True)
def _sweep_temporal(src_flat, dst_flat, nt, ny, nx, ntd, nyd, nxd,
                    best_d2, best_flat, reverse):
    step = ny * nx
    if not reverse:
        for t in range(1, nt):
            for p in range(step):
                i = t * step + p
                _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2,
                       best_flat, i, i - step, 1, 0, 0)
    else:
        for t in range(nt - 2, -1, -1):
            for p in range(step):
                i = t * step + p
                _offer(src_flat, dst_flat, nyd, nxd, ntd, best_d2,
                       best_flat, i, i + step, -1, 0, 0)


@dataclass
class RegionGrowState:
    """Best match of every source descriptor inside one target video.

    best_flat indexes the target's flat() rows, -1 while unmatched;
    best_d2 is the squared descriptor distance, inf while unmatched.
    """

    src_shape: tuple
    dst_shape: tuple
    best_flat: np.ndarray
    best_d2: np.ndarray
    sample_budget: int = 0
    sweep_log: list = field(default_factory=list)

    @property
    def matched(self) -> np.ndarray:
        return self.best_flat >= 0

    def match_distances(self) -> np.ndarray:
        return np.sqrt(self.best_d2)


def region_grow(src: DescriptorField, dst: DescriptorField, samples: int,
                seed: int = 0, state: RegionGrowState | None = None) -> RegionGrowState:
    """One sampling round plus four propagation sweeps.

    Every source descriptor draws `samples` uniform target locations and
    keeps its best so far; then matches propagate to neighbors (two
    spatial raster sweeps per frame, top-down and bottom-up, then one
    temporal sweep forward and one backward), each neighbor proposing its
    own match shifted by their offset. Distances never increase. Passing
    the previous state continues growing instead of starting over.
    """
    if samples < 0:
        raise ValueError("samples must be nonnegative")
    src_flat = np.ascontiguousarray(src.flat())
    dst_flat = np.ascontiguousarray(dst.flat())
    if src_flat.shape[1] != dst_flat.shape[1]:
        raise ValueError("descriptor lengths differ between fields")
    nt, ny, nx = src.grid_shape
    ntd, nyd, nxd = dst.grid_shape
    if state is None:
        state = RegionGrowState(
            src_shape=src.grid_shape, dst_shape=dst.grid_shape,
            best_flat=np.full(len(src_flat), -1, dtype=np.int64),
            best_d2=np.full(len(src_flat), np.inf))
    elif state.src_shape != src.grid_shape or state.dst_shape != dst.grid_shape:
        raise ValueError("state does not belong to this field pair")

    if samples > 0:
        rng = np.random.default_rng(seed)
        cand = rng.integers(0, len(dst_flat), size=(len(src_flat), samples))
        _eval_candidates(src_flat, dst_flat, cand, state.best_d2, state.best_flat)
    elif not (state.best_flat >= 0).any():
        raise ValueError("nothing to propagate: no samples and no prior matches")
    _sweep_spatial(src_flat, dst_flat, nt, ny, nx, ntd, nyd, nxd,
                   state.best_d2, state.best_flat, False)
    _sweep_spatial(src_flat, dst_flat, nt, ny, nx, ntd, nyd, nxd,
                   state.best_d2, state.best_flat, True)
    _sweep_temporal(src_flat, dst_flat, nt, ny, nx, ntd, nyd, nxd,
                    state.best_d2, state.best_flat, False)
    _sweep_temporal(src_flat, dst_flat, nt, ny, nx, ntd, nyd, nxd,
                    state.best_d2, state.best_flat, True)
    state.sample_budget += samples
    state.sweep_log.extend(SWEEP_ORDER)
    return state


def affinity(state: RegionGrowState, src: DescriptorField, dst: DescriptorField,
             codebook: Codebook | None = None, code_dists: np.ndarray | None = None) -> float:
    """Total positive saving in bits over the grown matches: how much
    better dst explains src's descriptors than the codebook does."""
    if code_dists is None:
        if codebook is None:
            raise ValueError("pass a codebook or precomputed code_dists")
        code_dists = informativeness(src, codebook)
    m = state.matched
    saving = code_dists[m] ** 2 - state.best_d2[m]
    return float(np.clip(saving, 0.0, None).sum())


def _bipartition(sub: np.ndarray):
    """Split one affinity submatrix by the sign of the second-smallest
    eigenvector of the symmetric normalized Laplacian. Returns (mask, ncut)."""
    n = len(sub)
    deg = sub.sum(axis=1)
    safe = np.where(deg > 0, deg, 1e-12)
    inv_sqrt = 1.0 / np.sqrt(safe)
    lap = np.eye(n) - inv_sqrt[:, None] * sub * inv_sqrt[None, :]
    vals, vecs = np.linalg.eigh(lap)
    vec = vecs[:, 1]
    s = vec.sum()
    if s < 0 or (s == 0 and vec[int(np.argmax(np.abs(vec)))] < 0):
        vec = -vec
    mask = vec >= 0
    if mask.all() or not mask.any():
        order = np.argsort(vec, kind="stable")  # degenerate: balanced fallback
        mask = np.zeros(n, dtype=bool)
        mask[order[:n // 2]] = True
    cut = float(sub[mask][:, ~mask].sum())
    vol_a = float(deg[mask].sum())
    vol_b = float(deg[~mask].sum())
    ncut = cut / max(vol_a, 1e-12) + cut / max(vol_b, 1e-12)
    return mask, ncut


def normalized_cut_labels(aff: np.ndarray, cluster_count: int, tie_keys=None) -> np.ndarray:
    """Recursive two-way normalized cut until cluster_count parts.

    At each step every splittable part is bipartitioned and the split
    with the lowest normalized-cut value is applied. Labels number the
    parts by their smallest tie_key (defaults to member index), keeping
    numbering stable under input permutation when tie_keys travel with
    the rows."""
    aff = np.asarray(aff, dtype=np.float64)
    m = len(aff)
    if aff.shape != (m, m):
        raise ValueError("affinity must be square")
    if not 1 <= cluster_count <= m:
        raise ValueError("cluster_count must lie in [1, video count]")
    if cluster_count > 1 and aff.sum() <= 0:
        raise ValueError("degenerate affinity matrix, nothing to cut")
    if tie_keys is None:
        tie_keys = list(range(m))

    parts = [list(range(m))]
    while len(parts) < cluster_count:
        best = None
        for pi, members in enumerate(parts):
            if len(members) < 2:
                continue
            sub = aff[np.ix_(members, members)]
            mask, ncut = _bipartition(sub)
            key = (ncut, min(tie_keys[i] for i in members))
            if best is None or key < best[0]:
                best = (key, pi, mask)
        if best is None:
            raise ValueError("not enough splittable parts")
        _, pi, mask = best
        members = parts.pop(pi)
        left = [members[i] for i in range(len(members)) if mask[i]]
        right = [members[i] for i in range(len(members)) if not mask[i]]
        parts.extend([left, right])

    parts.sort(key=lambda ms: min(tie_keys[i] for i in ms))
    labels = np.empty(m, dtype=np.int64)
    for li, members in enumerate(parts):
        for i in members:
            labels[i] = li
    return labels


def _allocate(total: int, weights: np.ndarray, tie_keys) -> np.ndarray:
    """Integer allocation proportional to weights, largest remainder,
    remainder ties broken by tie_keys so order never matters."""
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        w = np.ones_like(w)
    raw = total * w / w.sum()
    base = np.floor(raw).astype(np.int64)
    rem = raw - base
    deficit = int(total - base.sum())
    order = sorted(range(len(w)), key=lambda i: (-rem[i], tie_keys[i]))
    for i in order[:deficit]:
        base[i] += 1
    return base


@dataclass
class ClusterResult:
    labels: np.ndarray
    affinity: np.ndarray
    rounds: int
    codebook: Codebook


def cluster_collection(videos, cluster_count: int, seed: int = 0,
                       params: NeedleParams = NeedleParams(),
                       iterations: int | None = None,
                       codebook_k: int = DEFAULT_WORDS,
                       fraction: float = DEFAULT_FRACTION,
                       threads: int = 1) -> ClusterResult:
    """Cluster a collection by how well videos compose each other.

    Runs ceil(10 log10(M)) guided region-growing rounds (unless
    overridden): each video's descriptors spread SAMPLES_BASE *
    cluster_count samples over the other videos proportionally to the
    current affinity (uniformly in round one), grown matches accumulate
    across rounds, and affinities are the symmetrized positive savings.
    Final labels come from recursive normalized cuts.

    All randomness is keyed by video content hashes, so permuting the
    input permutes labels identically.
    """
    m = len(videos)
    if m < 2:
        raise ValueError("need at least 2 videos")
    if not 1 <= cluster_count <= m:
        raise ValueError("cluster_count must lie in [1, video count]")
    rounds = iterations if iterations is not None else int(math.ceil(10 * math.log10(m)))
    rounds = max(rounds, 1)

    hashes = [content_hash(v.data) for v in videos]
    if len(set(hashes)) != m:
        raise ValueError("duplicate videos in the collection")
    fields = parallel_map(lambda v: field_from_video(v, params), videos, threads)

    # order-invariant codebook: per-video samples with content-keyed
    # streams, aggregated in hash order
    sizes = np.array([len(f.flat()) for f in fields])
    total = int(sizes.sum())
    target = min(total, max(int(np.ceil(fraction * total)), 10 * codebook_k))
    by_hash = sorted(range(m), key=lambda i: hashes[i])
    chunks = []
    for i in by_hash:
        take = min(int(np.ceil(target * sizes[i] / total)), int(sizes[i]))
        rng = np.random.default_rng(hash_seed(seed, hashes[i], "codebook"))
        idx = np.sort(rng.choice(int(sizes[i]), size=take, replace=False))
        chunks.append(fields[i].flat()[idx])
    samples = np.concatenate(chunks, axis=0)
    words = kmeans_words(samples, codebook_k,
                         seed=hash_seed(seed, "kmeans", *sorted(hashes)))
    from .significance import _min_dist_sq
    d2, _ = _min_dist_sq(samples, words)
    codebook = Codebook(words=words, sigma=max(float(np.median(np.sqrt(d2))), 1e-12),
                        sample_fraction=fraction)
    code_dists = [informativeness(f, codebook) for f in fields]

    per_round = SAMPLES_BASE * cluster_count
    states: dict = {}
    aff = np.zeros((m, m))
    for rnd in range(rounds):
        def grow_row(i):
            others = [j for j in range(m) if j != i]
            alloc = _allocate(per_round, aff[i, others],
                              [hashes[j] for j in others])
            for j, s_ij in zip(others, alloc):
                if s_ij == 0 and (i, j) not in states:
                    continue
                states[(i, j)] = region_grow(
                    fields[i], fields[j], int(s_ij),
                    seed=hash_seed(seed, "grow", hashes[i], hashes[j], rnd),
                    state=states.get((i, j)))
            return i

        parallel_map(grow_row, range(m), threads)
        direct = np.zeros((m, m))
        for (i, j), st in states.items():
            direct[i, j] = affinity(st, fields[i], fields[j], code_dists=code_dists[i])
        aff = (direct + direct.T) / 2.0
        np.fill_diagonal(aff, 0.0)

    labels = normalized_cut_labels(aff, cluster_count, tie_keys=hashes)
    return ClusterResult(labels=labels, affinity=aff, rounds=rounds, codebook=codebook)
