"""Temporal pyramid: binomial low-pass along time, then keep even frames."""

from dataclasses import dataclass

import numpy as np

from .video_io import Video

KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _lowpass_time(data: np.ndarray) -> np.ndarray:
    """Filter each pixel's time series with the binomial kernel.

    Border frames renormalize over the in-range taps, so a constant
    video stays constant everywhere, not just in the interior.
    """
    t = data.shape[0]
    acc = np.zeros_like(data)
    norm = np.zeros(t)
    for k in range(-2, 3):
        w = KERNEL[k + 2]
        lo, hi = max(0, -k), min(t, t - k)
        acc[lo:hi] += w * data[lo + k:hi + k]
        norm[lo:hi] += w
    return acc / norm[:, None, None]


def temporal_downsample(video: Video) -> Video:
    """Low-pass in time and keep the even-indexed frames."""
    if video.frame_count < 2:
        raise ValueError("need at least 2 frames to downsample")
    return Video(_lowpass_time(video.data)[0::2], fps=video.fps / 2.0)


@dataclass
class TemporalPyramid:
    """levels[0] is the source; level l frame tau covers source time tau * 2^l."""

    levels: list

    @property
    def scale_count(self) -> int:
        return len(self.levels)

    def level_time(self, t: int, level: int) -> int:
        """Source frame t seen from a level: floor(t / 2^level)."""
        return t >> level


def build_pyramid(video: Video, scale_count: int) -> TemporalPyramid:
    if scale_count < 1:
        raise ValueError("scale_count must be at least 1")
    levels = [video]
    for _ in range(scale_count - 1):
        if levels[-1].frame_count < 2:
            raise ValueError(f"video too short for {scale_count} pyramid levels")
        levels.append(temporal_downsample(levels[-1]))
    return TemporalPyramid(levels)
