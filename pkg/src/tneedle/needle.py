"""Temporal-needle descriptors: multi-scale temporal self-similarity per pixel."""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pyramid import TemporalPyramid, build_pyramid
from .video_io import Video

FIELD_MAGIC = b"NDLF1\n"

# keeps the noise floor positive on noise-free synthetic input, where the
# 30th percentile of raw entries is exactly 0
NOISE_FLOOR_MIN = 1e-12


@dataclass(frozen=True)
class NeedleParams:
    patch_radius: int = 1        # patch is (2r+1) x (2r+1)
    gamma: int = 3               # temporal radius per scale, frames
    scale_count: int = 3
    noise_percentile: float = 0.30

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be nonnegative")
        if self.gamma < 1:
            raise ValueError("gamma must be at least 1")
        if self.scale_count < 1:
            raise ValueError("scale_count must be at least 1")
        if not 0.0 <= self.noise_percentile <= 1.0:
            raise ValueError("noise_percentile must lie in [0, 1]")

    @property
    def entries_per_scale(self) -> int:
        return 2 * self.gamma

    @property
    def descriptor_length(self) -> int:
        return 2 * self.gamma * self.scale_count

    def offsets(self):
        """Temporal offsets in descriptor order: -gamma..-1, then +1..+gamma."""
        g = self.gamma
        return list(range(-g, 0)) + list(range(1, g + 1))


def patch_ssd(video: Video, x: int, y: int, t: int, offset: int,
              patch_radius: int = 1) -> float:
    """Sum of squared differences between the patch at (x, y, t) and the
    same spatial window at frame t + offset."""
    r = patch_radius
    if not (r <= x < video.width - r and r <= y < video.height - r):
        raise ValueError("patch out of spatial bounds")
    for tt in (t, t + offset):
        if not 0 <= tt < video.frame_count:
            raise ValueError("patch out of temporal bounds")
    a = video.data[t, y - r:y + r + 1, x - r:x + r + 1]
    b = video.data[t + offset, y - r:y + r + 1, x - r:x + r + 1]
    return float(((a - b) ** 2).sum())


def needle_at_scale(level: Video, x: int, y: int, tau: int, gamma: int,
                    patch_radius: int = 1) -> np.ndarray:
    """Raw single-scale needle: patch SSDs against the 2*gamma neighbors."""
    offs = list(range(-gamma, 0)) + list(range(1, gamma + 1))
    return np.array([patch_ssd(level, x, y, tau, r, patch_radius) for r in offs])


@dataclass
class MisalignmentBound:
    average: float
    peak: float


def misalignment_bound(window_length: int, speedup_alpha: float) -> MisalignmentBound:
    """Expected and worst-case temporal misalignment of self-similarity
    entries for a uniform speedup of (1 + alpha), over a window of
    window_length frames (odd; discrete radius (window_length - 1) / 2).
    """
    if window_length < 1:
        raise ValueError("window_length must be positive")
    if speedup_alpha < 0:
        raise ValueError("speedup_alpha must be nonnegative")
    lam = float(window_length)
    return MisalignmentBound(
        average=lam * speedup_alpha / 4.0,
        peak=speedup_alpha * (lam - 1.0) / 2.0,
    )


@dataclass
class DescriptorField:
    """Normalized needle descriptors over a video's valid region.

    data[it, iy, ix, :] is the descriptor at video location
    (x_start + ix, y_start + iy, t_start + it). Entries are raw patch
    SSDs concatenated finest scale first, divided by
    max(sum, noise_floor), so each descriptor sums to at most 1 and
    static locations are exactly zero.
    """

    data: np.ndarray
    x_start: int
    y_start: int
    t_start: int
    width: int
    height: int
    frame_count: int
    params: NeedleParams
    noise_floor: float
    fps: float = 25.0

    @property
    def grid_shape(self):
        return self.data.shape[:3]

    @property
    def descriptor_length(self) -> int:
        return self.data.shape[3]

    @property
    def t_stop(self) -> int:
        return self.t_start + self.data.shape[0]

    def descriptor_at(self, x: int, y: int, t: int) -> np.ndarray:
        it, iy, ix = t - self.t_start, y - self.y_start, x - self.x_start
        nt, ny, nx = self.grid_shape
        if not (0 <= it < nt and 0 <= iy < ny and 0 <= ix < nx):
            raise ValueError(f"({x}, {y}, {t}) outside the valid region")
        return self.data[it, iy, ix]

    def flat(self) -> np.ndarray:
        """(N, D) view in (t, y, x) row-major order."""
        return self.data.reshape(-1, self.descriptor_length)

    def frame_slab(self, t: int) -> np.ndarray:
        """(ny*nx, D) descriptors of one video frame."""
        return self.data[t - self.t_start].reshape(-1, self.descriptor_length)

    def locations(self) -> np.ndarray:
        """(N, 3) array of (x, y, t) aligned with flat()."""
        nt, ny, nx = self.grid_shape
        ts, ys, xs = np.meshgrid(
            np.arange(nt) + self.t_start,
            np.arange(ny) + self.y_start,
            np.arange(nx) + self.x_start,
            indexing="ij",
        )
        return np.stack([xs.ravel(), ys.ravel(), ts.ravel()], axis=1)

    def flat_index(self, x, y, t):
        """Row in flat() for video locations (arrays ok)."""
        nt, ny, nx = self.grid_shape
        return ((np.asarray(t) - self.t_start) * ny + (np.asarray(y) - self.y_start)) * nx \
            + (np.asarray(x) - self.x_start)


def _box_sum(diff2: np.ndarray, r: int) -> np.ndarray:
    """Sum (2r+1)^2 spatial windows; output covers interior centers only."""
    if r == 0:
        return diff2
    h, w = diff2.shape[-2:]
    out = np.zeros(diff2.shape[:-2] + (h - 2 * r, w - 2 * r))
    for dy in range(2 * r + 1):
        for dx in range(2 * r + 1):
            out += diff2[..., dy:dy + h - 2 * r, dx:dx + w - 2 * r]
    return out


def compute_field(pyr: TemporalPyramid, params: NeedleParams = NeedleParams()) -> DescriptorField:
    """Needle descriptors for every location whose support is fully in range.

    A location is valid only if, at every scale, all 2*gamma temporal
    neighbors exist; spatially the patch must fit, so the grid starts at
    patch_radius from each border.
    """
    if pyr.scale_count < params.scale_count:
        raise ValueError("pyramid has fewer levels than params.scale_count")
    base = pyr.levels[0]
    g, r, L = params.gamma, params.patch_radius, params.scale_count
    h, w = base.height, base.width
    if w <= 2 * r or h <= 2 * r:
        raise ValueError("video too small for the patch radius")

    # valid full-resolution time range: floor(t / 2^l) must stay gamma away
    # from both ends of every level
    t_lo, t_hi = 0, base.frame_count - 1
    for l in range(L):
        tl = pyr.levels[l].frame_count
        t_lo = max(t_lo, g << l)
        t_hi = min(t_hi, ((tl - g) << l) - 1)
    if t_lo > t_hi:
        raise ValueError("video too short for gamma and scale_count")

    nt = t_hi - t_lo + 1
    nv, hv, wv = nt, h - 2 * r, w - 2 * r
    desc = np.empty((nv, hv, wv, params.descriptor_length))
    offsets = params.offsets()
    for l in range(L):
        level = pyr.levels[l].data
        taus = np.arange(t_lo, t_hi + 1) >> l
        tau_lo, tau_hi = int(taus[0]), int(taus[-1])
        block = np.empty((tau_hi - tau_lo + 1, 2 * g, hv, wv))
        for j, off in enumerate(offsets):
            a = level[tau_lo:tau_hi + 1]
            b = level[tau_lo + off:tau_hi + 1 + off]
            block[:, j] = _box_sum((a - b) ** 2, r)
        gathered = block[taus - tau_lo]              # (nt, 2g, hv, wv)
        desc[..., l * 2 * g:(l + 1) * 2 * g] = np.moveaxis(gathered, 1, -1)

    pct = float(np.percentile(desc, params.noise_percentile * 100.0))
    noise_floor = max(params.descriptor_length * pct, NOISE_FLOOR_MIN)
    sums = desc.sum(axis=-1)
    desc /= np.maximum(sums, noise_floor)[..., None]
    return DescriptorField(
        data=desc, x_start=r, y_start=r, t_start=t_lo,
        width=w, height=h, frame_count=base.frame_count,
        params=params, noise_floor=noise_floor, fps=base.fps,
    )


def field_from_video(video: Video, params: NeedleParams = NeedleParams()) -> DescriptorField:
    """Convenience: pyramid plus compute_field in one call."""
    return compute_field(build_pyramid(video, params.scale_count), params)


def save_field(f: DescriptorField, path) -> None:
    """Binary dump: magic, ASCII geometry/params header, little-endian
    float64 noise floor, then float32 descriptors in (t, y, x, entry) order."""
    nt, ny, nx = f.grid_shape
    p = f.params
    header = (
        f"{f.width} {f.height} {f.frame_count} {f.fps!r} "
        f"{f.x_start} {f.y_start} {f.t_start} {nt} {ny} {nx} "
        f"{p.patch_radius} {p.gamma} {p.scale_count} {p.noise_percentile!r}\n"
    )
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(header.encode("ascii"))
        fh.write(struct.pack("<d", f.noise_floor))
        fh.write(f.data.astype("<f4").tobytes())


def load_field(path) -> DescriptorField:
    blob = Path(path).read_bytes()
    if not blob.startswith(FIELD_MAGIC):
        raise ValueError(f"{path}: not a descriptor-field file")
    nl = blob.find(b"\n", len(FIELD_MAGIC))
    parts = blob[len(FIELD_MAGIC):nl].split()
    if len(parts) != 14:
        raise ValueError(f"{path}: malformed field header")
    width, height, frame_count = (int(v) for v in parts[:3])
    fps = float(parts[3])
    x_start, y_start, t_start, nt, ny, nx, pr, gamma, scales = (int(v) for v in parts[4:13])
    noise_pct = float(parts[13])
    params = NeedleParams(patch_radius=pr, gamma=gamma, scale_count=scales,
                          noise_percentile=noise_pct)
    off = nl + 1
    if len(blob) < off + 8:
        raise ValueError(f"{path}: truncated field payload")
    (noise_floor,) = struct.unpack_from("<d", blob, off)
    off += 8
    n = nt * ny * nx * params.descriptor_length
    if len(blob) < off + 4 * n:
        raise ValueError(f"{path}: truncated descriptor payload")
    data = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
    return DescriptorField(
        data=data.astype(np.float64).reshape(nt, ny, nx, params.descriptor_length),
        x_start=x_start, y_start=y_start, t_start=t_start,
        width=width, height=height, frame_count=frame_count,
        params=params, noise_floor=noise_floor, fps=fps,
    )
