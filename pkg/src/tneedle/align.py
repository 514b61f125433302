"""Temporal and spatial alignment between a query and a reference video."""

import math
from dataclasses import dataclass, field

import numpy as np

from .needle import DescriptorField, NeedleParams, compute_field
from .pyramid import build_pyramid
from .significance import Codebook, ScoredMatch, informativeness, select_informative
from .util import parallel_map
from .video_io import Video

DEFAULT_RANSAC_ITERS = 2000
SUBFRAME_STEP = 0.1

# two normalized descriptors can be at most sqrt(2) apart (each sums to <= 1)
OUT_OF_REGION_PENALTY = math.sqrt(2.0)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class TemporalModel:
    """t_ref = rate_ratio * t_query + shift."""

    rate_ratio: float = 1.0
    shift: float = 0.0
    error_curve: dict = field(default_factory=dict)

    def map_time(self, t):
        return self.rate_ratio * t + self.shift


@dataclass(frozen=True)
class AffineTransform:
    """Spatial map p2 = A p1 between frame coordinate systems, row-major 2x3."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.shape == (3, 3):
            mat = mat[:2]
        if mat.shape != (2, 3):
            raise ValueError("affine matrix must be 2x3")
        if abs(np.linalg.det(mat[:, :2])) < 1e-12:
            raise ValueError("affine matrix is singular")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def from_params(cls, rotation: float = 0.0, scale: float = 1.0,
                    translation=(0.0, 0.0), center=(0.0, 0.0)):
        """Rotate by `rotation` radians and scale about `center`, then translate."""
        c, s = math.cos(rotation), math.sin(rotation)
        lin = scale * np.array([[c, -s], [s, c]])
        cvec = np.asarray(center, dtype=np.float64)
        off = cvec - lin @ cvec + np.asarray(translation, dtype=np.float64)
        return cls(np.column_stack([lin, off]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = pts @ self.matrix[:, :2].T + self.matrix[:, 2]
        return out[0] if np.ndim(points) == 1 else out

    def inverse(self) -> "AffineTransform":
        inv = np.linalg.inv(self.matrix[:, :2])
        return AffineTransform(np.column_stack([inv, -inv @ self.matrix[:, 2]]))

    @property
    def scale(self) -> float:
        """Isotropic scale component: sqrt(|det| of the linear part)."""
        return math.sqrt(abs(np.linalg.det(self.matrix[:, :2])))


@dataclass(frozen=True)
class FundamentalMatrix:
    """Epipolar constraint p2' F p1 = 0; rank 2, unit Frobenius norm."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.shape != (3, 3):
            raise ValueError("fundamental matrix must be 3x3")
        norm = np.linalg.norm(mat)
        if norm < 1e-12:
            raise ValueError("fundamental matrix is zero")
        mat = mat / norm
        s = np.linalg.svd(mat, compute_uv=False)
        if s[2] > 1e-6:
            raise ValueError("fundamental matrix must have rank 2")
        object.__setattr__(self, "matrix", mat)

    def epipoles(self):
        """(e1, e2) as inhomogeneous image points; e1 satisfies F e1 = 0."""
        _, _, vt = np.linalg.svd(self.matrix)
        e1 = vt[-1]
        _, _, vt = np.linalg.svd(self.matrix.T)
        e2 = vt[-1]
        out = []
        for e in (e1, e2):
            if abs(e[2]) < 1e-12:
                raise ValueError("epipole at infinity")
            out.append(e[:2] / e[2])
        return out[0], out[1]


def _group_by_frame(field_: DescriptorField, locs: np.ndarray):
    """{video frame t: (m, D) descriptor matrix} for (x, y, t) location rows."""
    groups = {}
    for t in np.unique(locs[:, 2]):
        rows = locs[locs[:, 2] == t]
        idx = field_.flat_index(rows[:, 0], rows[:, 1], rows[:, 2])
        groups[int(t)] = field_.flat()[idx]
    return groups


class _FrameNN:
    """Nearest-neighbor sums against single reference frames, slabs cached."""

    def __init__(self, field_: DescriptorField):
        self.field = field_
        self._slabs = {}

    def slab(self, t: int):
        if t not in self._slabs:
            s = self.field.frame_slab(t)
            self._slabs[t] = (s, (s ** 2).sum(axis=1))
        return self._slabs[t]

    def nn_sum(self, queries: np.ndarray, t: int) -> float:
        """Sum over queries of the squared distance to the closest
        descriptor in reference frame t."""
        slab, slab_sq = self.slab(t)
        d = (queries ** 2).sum(axis=1)[:, None] + slab_sq[None, :] - 2.0 * (queries @ slab.T)
        return float(np.clip(d.min(axis=1), 0.0, None).sum())


def _alignment_error(q_field, r_field, q_groups, r_groups, q_nn, r_nn,
                     shift: int, rate_ratio: float):
    """Mean per-descriptor squared NN distance under t2 = rate*t1 + shift,
    both directions. None when no informative descriptor lands in overlap."""
    total, count = 0.0, 0
    for t1, queries in q_groups.items():
        t2 = _round_half_up(rate_ratio * t1 + shift)
        if r_field.t_start <= t2 < r_field.t_stop:
            total += r_nn.nn_sum(queries, t2)
            count += len(queries)
    for t2, queries in r_groups.items():
        t1 = _round_half_up((t2 - shift) / rate_ratio)
        if q_field.t_start <= t1 < q_field.t_stop:
            total += q_nn.nn_sum(queries, t1)
            count += len(queries)
    if count == 0:
        return None
    return total / count


def _frames_overlap(q_field, r_field, shift: int, rate_ratio: float) -> int:
    t1s = np.arange(q_field.t_start, q_field.t_stop)
    t2s = np.floor(rate_ratio * t1s + shift + 0.5).astype(int)
    return int(((t2s >= r_field.t_start) & (t2s < r_field.t_stop)).sum())


def default_shift_range(q_field: DescriptorField, r_field: DescriptorField,
                        rate_ratio: float = 1.0):
    """[-frames/2, +frames/2], clamped so every candidate keeps at least
    a descriptor-length of overlapping frames."""
    half = q_field.frame_count // 2
    need = max(q_field.params.descriptor_length, 1)
    lo = -half
    while lo < 0 and _frames_overlap(q_field, r_field, lo, rate_ratio) < need:
        lo += 1
    hi = half
    while hi > 0 and _frames_overlap(q_field, r_field, hi, rate_ratio) < need:
        hi -= 1
    return lo, hi


def integer_shift(q_field: DescriptorField, r_field: DescriptorField,
                  q_locs: np.ndarray, r_locs: np.ndarray,
                  shift_range=None, rate_ratio: float = 1.0,
                  threads: int = 1) -> TemporalModel:
    """Best integer shift under t2 = rate_ratio * t1 + shift.

    Scores every candidate by the bidirectional mean squared
    nearest-neighbor distance between informative descriptors and their
    single corresponding frame. Ties prefer the smaller |shift|.
    """
    if len(q_locs) == 0 or len(r_locs) == 0:
        raise ValueError("informative sets must be nonempty")
    if shift_range is None:
        shift_range = default_shift_range(q_field, r_field, rate_ratio)
    lo, hi = int(shift_range[0]), int(shift_range[1])
    if lo > hi:
        raise ValueError("empty shift range")
    need = max(q_field.params.descriptor_length, 1)
    for s in (lo, hi):
        if _frames_overlap(q_field, r_field, s, rate_ratio) < need:
            raise ValueError(
                f"shift {s} leaves fewer than {need} overlapping frames")

    q_groups = _group_by_frame(q_field, q_locs)
    r_groups = _group_by_frame(r_field, r_locs)
    q_nn, r_nn = _FrameNN(q_field), _FrameNN(r_field)
    shifts = list(range(lo, hi + 1))
    errs = parallel_map(
        lambda s: _alignment_error(q_field, r_field, q_groups, r_groups,
                                   q_nn, r_nn, s, rate_ratio),
        shifts, threads)
    curve = {s: (math.inf if e is None else e) for s, e in zip(shifts, errs)}
    best = min(shifts, key=lambda s: (curve[s], abs(s), s))
    if math.isinf(curve[best]):
        raise ValueError("no informative descriptors land in the overlap")
    return TemporalModel(rate_ratio=rate_ratio, shift=float(best), error_curve=curve)


def _resample(video: Video, alpha: float):
    """Video whose frame j shows query time j + k0 - alpha, k0 = max(0, ceil(alpha)).

    Returns (resampled, k0). Evaluating it at integer shift s + k0 tests
    the total query-to-reference shift s + alpha.
    """
    k0 = max(0, math.ceil(alpha))
    offset = k0 - alpha            # in [0, 1]
    base = math.floor(offset)
    f = offset - base
    data = video.data
    last = video.frame_count - 1   # max j with j + offset <= last
    j_hi = int(math.floor(last - offset))
    if f == 0.0:
        out = data[base:base + j_hi + 1].copy()
    else:
        a = data[base:base + j_hi + 1]
        b = data[base + 1:base + j_hi + 2]
        out = (1.0 - f) * a + f * b
    return Video(out, fps=video.fps), k0


def subframe_shift(query: Video, r_field: DescriptorField, codebook: Codebook,
                   base: TemporalModel, params: NeedleParams | None = None,
                   quota: int = 2000, step: float = SUBFRAME_STEP,
                   threads: int = 1) -> TemporalModel:
    """Refine an integer shift on a grid of sub-frame offsets.

    For each alpha in [-1, 1] (step 0.1) the query is linearly
    interpolated at times t + alpha, its informative descriptors are
    recomputed against the original codebook, and the integer-stage error
    is re-evaluated at the equivalent shift. Returns shift + best alpha;
    ties prefer alpha closest to 0.
    """
    if params is None:
        params = r_field.params
    n = int(round(1.0 / step))
    alphas = [round(m * step, 10) for m in range(-n, n + 1)]
    base_shift = int(round(base.shift))
    r_locs = select_informative(r_field, codebook, quota)
    r_groups = _group_by_frame(r_field, r_locs)
    r_nn = _FrameNN(r_field)

    def eval_alpha(alpha):
        resampled, k0 = _resample(query, alpha)
        f = compute_field(build_pyramid(resampled, params.scale_count), params)
        locs = select_informative(f, codebook, quota)
        q_groups = _group_by_frame(f, locs)
        err = _alignment_error(f, r_field, q_groups, r_groups,
                               _FrameNN(f), r_nn,
                               base_shift + k0, base.rate_ratio)
        return math.inf if err is None else err

    errs = parallel_map(eval_alpha, alphas, threads)
    curve = dict(zip(alphas, errs))
    best = min(alphas, key=lambda a: (curve[a], abs(a), a))
    if math.isinf(curve[best]):
        raise ValueError("no informative descriptors land in the overlap")
    return TemporalModel(rate_ratio=base.rate_ratio,
                         shift=base_shift + best, error_curve=curve)


def collect_matches(q_field: DescriptorField, r_field: DescriptorField,
                    q_locs: np.ndarray, temporal: TemporalModel,
                    codebook: Codebook) -> list:
    """Nearest-neighbor matches in the temporally corresponding frame.

    Keeps only matches that beat the codebook (positive saving in bits).
    """
    matches = []
    flat = q_field.flat()
    for t1 in np.unique(q_locs[:, 2]):
        t2 = _round_half_up(temporal.map_time(int(t1)))
        if not (r_field.t_start <= t2 < r_field.t_stop):
            continue
        rows = q_locs[q_locs[:, 2] == t1]
        queries = flat[q_field.flat_index(rows[:, 0], rows[:, 1], rows[:, 2])]
        code_d = informativeness_rows(queries, codebook)
        slab = r_field.frame_slab(t2)
        slab_sq = (slab ** 2).sum(axis=1)
        d = (queries ** 2).sum(axis=1)[:, None] + slab_sq[None, :] - 2.0 * (queries @ slab.T)
        np.clip(d, 0.0, None, out=d)
        nn = np.argmin(d, axis=1)
        nn_d = np.sqrt(d[np.arange(len(rows)), nn])
        _, ny, nx = r_field.grid_shape
        for i, (x, y, t) in enumerate(rows):
            if code_d[i] ** 2 - nn_d[i] ** 2 <= 0.0:
                continue
            iy, ix = divmod(int(nn[i]), nx)
            matches.append(ScoredMatch(
                query=(int(x), int(y), int(t)),
                match=(ix + r_field.x_start, iy + r_field.y_start, t2),
                code_dist=float(code_d[i]), match_dist=float(nn_d[i])))
    return matches


def informativeness_rows(rows: np.ndarray, codebook: Codebook) -> np.ndarray:
    from .significance import _min_dist_sq
    d2, _ = _min_dist_sq(rows, codebook.words)
    return np.sqrt(d2)


def ransac_affine(matches, q_field: DescriptorField, r_field: DescriptorField,
                  iterations: int = DEFAULT_RANSAC_ITERS, seed: int = 0,
                  threads: int = 1):
    """Fit p2 = A p1 by consensus over descriptor agreement.

    Each iteration solves A exactly from 3 non-collinear match pairs; a
    candidate is scored by the mean descriptor distance between every
    scored query point and the reference descriptor nearest to A p1 in
    the corresponding frame (sqrt(2) when A p1 leaves the valid region).
    Returns (AffineTransform, score) with the lowest score.
    """
    if len(matches) < 3:
        raise ValueError("need at least 3 matches")
    p1 = np.array([m.query[:2] for m in matches], dtype=np.float64)
    p2 = np.array([m.match[:2] for m in matches], dtype=np.float64)
    t2s = np.array([m.match[2] for m in matches])
    q_idx = q_field.flat_index(*(np.array([m.query[i] for m in matches]) for i in range(3)))
    q_desc = q_field.flat()[q_idx]

    # only points with a live corresponding frame are scored; the set is
    # fixed across candidates so scores are comparable
    scored = (t2s >= r_field.t_start) & (t2s < r_field.t_stop)
    if not scored.any():
        raise ValueError("no match has a corresponding reference frame")
    sp1 = np.column_stack([p1[scored], np.ones(int(scored.sum()))])
    sdesc = q_desc[scored]
    st2 = t2s[scored] - r_field.t_start
    nt, ny, nx = r_field.grid_shape
    r_flat = r_field.flat()

    rng = np.random.default_rng(seed)
    picks = np.array([rng.choice(len(matches), 3, replace=False) for _ in range(iterations)])
    mats = np.concatenate([p1[picks], np.ones((iterations, 3, 1))], axis=2)
    dets = np.linalg.det(mats)
    ok = np.abs(dets) > 1e-9   # collinear or duplicate samples drop out
    if not ok.any():
        raise ValueError("all samples collinear")
    sols = np.linalg.solve(mats[ok], p2[picks[ok]])      # (m, 3, 2)
    cands = np.transpose(sols, (0, 2, 1))                # rows (a11 a12 a13; a21 a22 a23)
    # a solution that collapses the plane (coincident target points) is not
    # a view change; drop it rather than let it compete on score
    live = np.abs(np.linalg.det(cands[:, :, :2])) > 1e-9
    if not live.any():
        raise ValueError("all samples collinear")
    cands = cands[live]

    def score_chunk(chunk):
        lo, hi = chunk
        a = cands[lo:hi]
        proj = np.einsum("kab,nb->kna", a, sp1)          # (k, n, 2)
        xg = np.floor(proj[..., 0] + 0.5).astype(np.int64) - r_field.x_start
        yg = np.floor(proj[..., 1] + 0.5).astype(np.int64) - r_field.y_start
        inside = (xg >= 0) & (xg < nx) & (yg >= 0) & (yg < ny)
        flat_idx = (st2[None, :] * ny + np.clip(yg, 0, ny - 1)) * nx + np.clip(xg, 0, nx - 1)
        ref = r_flat[flat_idx]                           # (k, n, D)
        dist = np.sqrt(((ref - sdesc[None, :, :]) ** 2).sum(axis=2))
        dist = np.where(inside, dist, OUT_OF_REGION_PENALTY)
        return dist.mean(axis=1)

    chunks = [(lo, min(lo + 64, len(cands))) for lo in range(0, len(cands), 64)]
    scores = np.concatenate(parallel_map(score_chunk, chunks, threads))
    best = int(np.argmin(scores))  # first minimum: lowest iteration index on ties
    return AffineTransform(cands[best]), float(scores[best])


def _hartley(points: np.ndarray):
    """Translate centroid to the origin and scale mean length to sqrt(2)."""
    centroid = points.mean(axis=0)
    d = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / max(d, 1e-12)
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return (points - centroid) * s, t


def _eight_point(p1: np.ndarray, p2: np.ndarray):
    n1, t1 = _hartley(p1)
    n2, t2 = _hartley(p2)
    a = np.column_stack([
        n2[:, 0] * n1[:, 0], n2[:, 0] * n1[:, 1], n2[:, 0],
        n2[:, 1] * n1[:, 0], n2[:, 1] * n1[:, 1], n2[:, 1],
        n1[:, 0], n1[:, 1], np.ones(len(n1)),
    ])
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ vt   # enforce rank 2
    f = t2.T @ f @ t1
    return f / np.linalg.norm(f)


def sampson_distance(f: np.ndarray, p1, p2):
    """First-order geometric error of the epipolar constraint; symmetric
    under swapping views with F transposed. Vectorized over point rows."""
    f = np.asarray(getattr(f, "matrix", f), dtype=np.float64)
    single = np.ndim(p1) == 1
    p1 = np.atleast_2d(np.asarray(p1, dtype=np.float64))
    p2 = np.atleast_2d(np.asarray(p2, dtype=np.float64))
    h1 = np.column_stack([p1, np.ones(len(p1))])
    h2 = np.column_stack([p2, np.ones(len(p2))])
    fp1 = h1 @ f.T          # rows F p1
    ftp2 = h2 @ f            # rows F' p2
    top = (h2 * fp1).sum(axis=1) ** 2
    bottom = fp1[:, 0] ** 2 + fp1[:, 1] ** 2 + ftp2[:, 0] ** 2 + ftp2[:, 1] ** 2
    if np.any(bottom < 1e-18):
        raise ValueError("epipolar line gradients vanish for some pair")
    d = top / bottom
    return float(d[0]) if single else d


def ransac_fundamental(q_points: np.ndarray, r_points: np.ndarray,
                       iterations: int = DEFAULT_RANSAC_ITERS, seed: int = 0,
                       threads: int = 1):
    """Normalized 8-point RANSAC; score is the mean Sampson distance over
    all matches. Returns (FundamentalMatrix, score)."""
    p1 = np.asarray(q_points, dtype=np.float64)
    p2 = np.asarray(r_points, dtype=np.float64)
    if len(p1) != len(p2):
        raise ValueError("point lists must pair up")
    if len(p1) < 8:
        raise ValueError("need at least 8 matches")
    rng = np.random.default_rng(seed)
    picks = [rng.choice(len(p1), 8, replace=False) for _ in range(iterations)]

    def eval_one(idx):
        try:
            f = _eight_point(p1[idx], p2[idx])
            return f, float(np.mean(sampson_distance(f, p1, p2)))
        except (np.linalg.LinAlgError, ValueError):
            # singular sample or a candidate whose epipolar gradients vanish
            return None, math.inf

    results = parallel_map(eval_one, picks, threads)
    best_f, best_s = None, math.inf
    for f, s in results:
        if f is not None and s < best_s:
            best_f, best_s = f, s
    if best_f is None:
        raise ValueError("all samples degenerate")
    return FundamentalMatrix(best_f), best_s
