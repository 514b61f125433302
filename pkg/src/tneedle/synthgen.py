"""Deterministic synthetic videos with planted space-time structure."""

import math
from dataclasses import dataclass

import numpy as np

from .video_io import Video

PATTERNS = ("oscillating-dot", "translating-bar", "two-phase-gesture")
BACKGROUNDS = ("flat", "gradient", "textured")

_DOT_SIDE = 3.0      # px, oscillating-dot square
_BAR_WIDTH = 3.0     # px, translating-bar thickness
_GESTURE_SIDE = 5.0  # px, two-phase-gesture square


@dataclass(frozen=True)
class MotionScript:
    """Recipe for a synthetic clip: what moves, how fast, on what background."""

    pattern: str
    period: int = 16
    amplitude: float = 8.0
    speed_ratio: float = 1.0
    background: str = "flat"
    foreground_intensity: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}, expected one of {PATTERNS}")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"unknown background {self.background!r}, expected one of {BACKGROUNDS}")
        if self.period < 2:
            raise ValueError("period must be at least 2 frames")
        if self.amplitude < 1:
            raise ValueError("amplitude must be at least 1 px")
        if self.speed_ratio <= 0:
            raise ValueError("speed_ratio must be positive")
        if not 0.0 <= self.foreground_intensity <= 1.0:
            raise ValueError("foreground_intensity must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Per-cell overlap of the interval [lo, hi) with unit cells [i, i+1)."""
    cells = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(cells + 1.0, hi) - np.maximum(cells, lo), 0.0, 1.0)


def _paste(frame: np.ndarray, cx: float, cy: float, w: float, h: float,
           intensity: float, wrap_x: bool = False) -> None:
    """Blend an axis-aligned rectangle centered at (cx, cy) into frame in place.

    Coverage weights are continuous in the center position, so equal
    positions yield bitwise-equal frames and nearby positions differ
    smoothly (no pop from rounding).
    """
    height, width = frame.shape
    wy = _coverage(cy - h / 2.0, cy + h / 2.0, height)
    if wrap_x:
        wx = np.zeros(width)
        for shift in (-width, 0.0, width):
            wx += _coverage(cx - w / 2.0 + shift, cx + w / 2.0 + shift, width)
        wx = np.clip(wx, 0.0, 1.0)
    else:
        wx = _coverage(cx - w / 2.0, cx + w / 2.0, width)
    weight = np.outer(wy, wx)
    frame += weight * (intensity - frame)


def _triangle(f: np.ndarray) -> np.ndarray:
    """Triangle wave over phase fraction f in [0, 1): 0 -> +1, 0.5 -> -1, 1 -> +1."""
    return 4.0 * np.abs(f - 0.5) - 1.0


def _background(script: MotionScript, width: int, height: int, rng) -> np.ndarray:
    if script.background == "flat":
        return np.full((height, width), 0.3)
    if script.background == "gradient":
        gx = np.linspace(0.0, 1.0, width)[None, :]
        gy = np.linspace(0.0, 1.0, height)[:, None]
        return 0.15 + 0.25 * (gx + gy)
    return 0.15 + 0.4 * rng.random((height, width))


def generate(script: MotionScript, width: int, height: int, frame_count: int,
             seed: int = 0, fps: float = 25.0) -> Video:
    """Render a script. Same arguments always produce the same video.

    The foreground revisits identical positions every period/speed_ratio
    frames; speed_ratio > 1 plays the same trajectory faster, so frame t
    of a fast clip shows what frame speed_ratio*t of the nominal clip shows.
    """
    if min(width, height) < 4 or frame_count < 1:
        raise ValueError("video dimensions too small")
    rng = np.random.default_rng(seed)
    bg = _background(script, width, height, rng)
    cx, cy = width / 2.0, height / 2.0
    amp, inten = script.amplitude, script.foreground_intensity

    # reach of each pattern from the frame center, used for the bounds check
    if script.pattern == "oscillating-dot":
        reach_x, reach_y = amp + _DOT_SIDE / 2.0, _DOT_SIDE / 2.0
    elif script.pattern == "two-phase-gesture":
        reach_x = reach_y = amp + _GESTURE_SIDE / 2.0
    else:
        reach_x = reach_y = 0.0  # bar wraps, amplitude does not bind
    if cx - reach_x < 0 or cx + reach_x > width or cy - reach_y < 0 or cy + reach_y > height:
        raise ValueError("amplitude exceeds frame bounds")

    frames = np.empty((frame_count, height, width))
    for t in range(frame_count):
        frame = bg.copy()
        f = (t * script.speed_ratio) % script.period / script.period
        if script.pattern == "oscillating-dot":
            x = cx + amp * float(_triangle(np.float64(f)))
            _paste(frame, x, cy, _DOT_SIDE, _DOT_SIDE, inten)
        elif script.pattern == "translating-bar":
            x = (f * width) % width
            _paste(frame, x, cy, _BAR_WIDTH, height, inten, wrap_x=True)
        else:  # two-phase-gesture: sweep right along the bottom, then up the right side
            if f < 0.5:
                x = cx - amp + 4.0 * amp * f
                y = cy + amp
            else:
                x = cx + amp
                y = cy + amp - 4.0 * amp * (f - 0.5)
            _paste(frame, x, y, _GESTURE_SIDE, _GESTURE_SIDE, inten)
        frames[t] = frame
    if script.noise_sigma > 0:
        frames += rng.normal(0.0, script.noise_sigma, frames.shape)
    return Video(np.clip(frames, 0.0, 1.0), fps=fps)


def _as_matrix(transform) -> np.ndarray:
    """Accept an AffineTransform-like (has .matrix) or a bare 2x3 / 3x3 array."""
    mat = np.asarray(getattr(transform, "matrix", transform), dtype=np.float64)
    if mat.shape == (3, 3):
        mat = mat[:2]
    if mat.shape != (2, 3):
        raise ValueError("affine transform must be 2x3 (or 3x3 with [0,0,1] last row)")
    return mat


def warp_affine(video: Video, transform) -> Video:
    """Apply a spatial affine map to every frame.

    The transform sends input pixel coordinates (x, y) to output
    coordinates; output pixels are sampled bilinearly from the inverse
    map, and pixels pulling from outside the input are 0. Identity is a
    bitwise no-op and integer translations copy samples exactly.
    """
    mat = _as_matrix(transform)
    a, b = mat[:, :2], mat[:, 2]
    if abs(np.linalg.det(a)) < 1e-12:
        raise ValueError("affine transform is singular")
    inv = np.linalg.inv(a)
    h, w = video.height, video.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = np.tensordot(np.stack([xs - b[0], ys - b[1]], axis=-1), inv.T, axes=([2], [0]))
    sx, sy = src[..., 0], src[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x0 = np.clip(np.floor(sx), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(sy), 0, h - 2).astype(np.intp)
    fx, fy = sx - x0, sy - y0
    out = np.empty_like(video.data)
    for t in range(video.frame_count):
        fr = video.data[t]
        top = (1.0 - fx) * fr[y0, x0] + fx * fr[y0, x0 + 1]
        bot = (1.0 - fx) * fr[y0 + 1, x0] + fx * fr[y0 + 1, x0 + 1]
        out[t] = np.where(valid, (1.0 - fy) * top + fy * bot, 0.0)
    return Video(out, fps=video.fps)


def invert_appearance(video: Video) -> Video:
    """Flip intensities: v -> 1 - v. Self-inverse."""
    return Video(1.0 - video.data, fps=video.fps)


def shift_time(video: Video, dt: float) -> Video:
    """Delay the clip by dt frames: output frame k shows input time k + dt.

    dt must be nonnegative and leave at least one frame; a pair with a
    planted negative shift is built by shifting the other operand instead
    (a negative dt here would only trim frames, not shift content).
    Fractional parts interpolate linearly between consecutive frames.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative; swap operand roles to plant a negative shift")
    if dt >= video.frame_count:
        raise ValueError("dt must be smaller than the frame count")
    n = int(math.floor(dt))
    frac = dt - n
    if frac == 0.0:
        out = video.data[n:].copy()
    else:
        out = (1.0 - frac) * video.data[n:-1] + frac * video.data[n + 1:]
    if out.shape[0] < 1:
        raise ValueError("shift leaves no frames")
    return Video(out, fps=video.fps)
