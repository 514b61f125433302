"""Video container and 8-bit I/O: raw-y8 files and image sequences."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NDLY8\n"

# image-file suffixes accepted when loading a directory of frames
_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass
class Video:
    """A grayscale clip. data[t, y, x] is a float64 sample in [0, 1]."""

    data: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("video data must have shape (frames, height, width)")
        if min(self.data.shape) < 1:
            raise ValueError("video must have at least one frame and one pixel")
        if float(self.fps) <= 0:
            raise ValueError("fps must be positive")
        self.fps = float(self.fps)
        lo, hi = self.data.min(), self.data.max()
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ValueError(f"samples outside [0, 1]: min {lo}, max {hi}")
        if lo < 0.0 or hi > 1.0:  # clip interpolation dust only
            self.data = np.clip(self.data, 0.0, 1.0)

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def quantize(data: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8, rounding halves up (0.5 -> 128)."""
    return np.floor(np.asarray(data) * 255.0 + 0.5).clip(0, 255).astype(np.uint8)


def _luminance(rgb: np.ndarray) -> np.ndarray:
    # integer-weight BT.601 so r=g=b stays exact: (299r + 587g + 114b)/1000
    r, g, b = (rgb[..., i].astype(np.float64) for i in range(3))
    return (299.0 * r + 587.0 * g + 114.0 * b) / 1000.0


def save_video(video: Video, path) -> None:
    """Write a raw-y8 file: magic, ASCII dims header, then one byte per sample."""
    path = Path(path)
    header = f"{video.width} {video.height} {video.frame_count} {video.fps!r}\n"
    payload = quantize(video.data).tobytes()
    path.write_bytes(MAGIC + header.encode("ascii") + payload)


def _load_raw_y8(path: Path) -> Video:
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a raw-y8 file (bad magic)")
    nl = blob.find(b"\n", len(MAGIC))
    if nl < 0:
        raise ValueError(f"{path}: malformed header")
    parts = blob[len(MAGIC):nl].split()
    if len(parts) != 4:
        raise ValueError(f"{path}: malformed header, expected 'width height frames fps'")
    try:
        width, height, frames = int(parts[0]), int(parts[1]), int(parts[2])
        fps = float(parts[3])
    except ValueError as e:
        raise ValueError(f"{path}: malformed header: {e}") from None
    if min(width, height, frames) < 1 or fps <= 0:
        raise ValueError(f"{path}: nonpositive dimension in header")
    payload = blob[nl + 1:]
    expected = width * height * frames
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(frames, height, width)
    return Video(data.astype(np.float64) / 255.0, fps=fps)


def _load_image_dir(path: Path, fps: float) -> Video:
    from PIL import Image

    files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"{path}: no image files found")
    frames = []
    dims = None
    for f in files:
        img = Image.open(f)
        if img.mode == "L":
            gray = np.asarray(img, dtype=np.float64)
        else:
            if img.mode not in ("RGB", "RGBA"):
                img = img.convert("RGB")
            gray = _luminance(np.asarray(img)[..., :3])
        if dims is None:
            dims = gray.shape
        elif gray.shape != dims:
            raise ValueError(f"{f}: frame size {gray.shape} differs from {dims}")
        frames.append(gray / 255.0)
    return Video(np.stack(frames), fps=fps)


def load_video(path, fps: float = 25.0) -> Video:
    """Load a raw-y8 file, or a directory of index-named 8-bit images.

    fps applies to image sequences only; raw-y8 carries its own rate.
    """
    path = Path(path)
    if path.is_dir():
        return _load_image_dir(path, fps)
    if not path.exists():
        raise ValueError(f"{path}: no such file")
    return _load_raw_y8(path)
