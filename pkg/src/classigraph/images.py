"""Image container and binary PPM/PGM I/O.

Pixel values are float64 in [0, 1]. Color images keep an RGB plane next to
the derived luma plane; descriptor code works on whichever plane it needs.
The container also owns the lazily-built summed-area tables used by the
feature extractors, so repeated extraction over one image is cheap.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Image", "load_image", "save_pgm", "save_ppm"]

# ITU-R 601 luma weights, the usual choice for 8-bit material.
_LUMA = np.array([0.299, 0.587, 0.114])


class Image:
    """An immutable image with cached integral tables.

    The caches are filled on first use and are safe to share between
    readers: rebuilding a cache concurrently produces identical arrays.
    """

    __slots__ = ("gray", "rgb", "_integral", "_grad_stacks", "_hue_stacks")

    def __init__(self, gray: np.ndarray, rgb: np.ndarray | None = None):
        gray = np.ascontiguousarray(gray, dtype=np.float64)
        if gray.ndim != 2 or gray.shape[0] < 1 or gray.shape[1] < 1:
            raise ValueError(f"gray plane must be 2-D and nonempty, got shape {gray.shape}")
        if not np.all(np.isfinite(gray)) or gray.min() < 0.0 or gray.max() > 1.0:
            raise ValueError("pixel values must be finite and within [0, 1]")
        if rgb is not None:
            rgb = np.ascontiguousarray(rgb, dtype=np.float64)
            if rgb.shape != gray.shape + (3,):
                raise ValueError(f"rgb plane shape {rgb.shape} does not match gray {gray.shape}")
            if not np.all(np.isfinite(rgb)) or rgb.min() < 0.0 or rgb.max() > 1.0:
                raise ValueError("pixel values must be finite and within [0, 1]")
        self.gray = gray
        self.rgb = rgb
        self.gray.setflags(write=False)
        if rgb is not None:
            self.rgb.setflags(write=False)
        self._integral: np.ndarray | None = None
        self._grad_stacks: dict[int, np.ndarray] = {}
        self._hue_stacks: dict[int, np.ndarray] = {}

    @classmethod
    def from_rgb(cls, rgb: np.ndarray) -> "Image":
        rgb = np.asarray(rgb, dtype=np.float64)
        return cls(rgb @ _LUMA, rgb)

    @property
    def height(self) -> int:
        return self.gray.shape[0]

    @property
    def width(self) -> int:
        return self.gray.shape[1]

    @property
    def full_box(self) -> tuple[int, int, int, int]:
        return (0, 0, self.width, self.height)

    def crop(self, box: tuple[int, int, int, int]) -> "Image":
        x0, y0, x1, y1 = box
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise ValueError(f"crop box {box} outside {self.width}x{self.height} image")
        rgb = self.rgb[y0:y1, x0:x1] if self.rgb is not None else None
        return Image(self.gray[y0:y1, x0:x1], rgb)


def _read_header(data: bytes, offset: int, count: int) -> tuple[list[int], int]:
    """Parse whitespace/comment separated integer header tokens."""
    tokens: list[int] = []
    n = len(data)
    while len(tokens) < count:
        while offset < n and data[offset : offset + 1].isspace():
            offset += 1
        if offset < n and data[offset : offset + 1] == b"#":
            while offset < n and data[offset : offset + 1] not in (b"\n", b"\r"):
                offset += 1
            continue
        start = offset
        while offset < n and not data[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise ValueError("truncated image header")
        tokens.append(int(data[start:offset]))
    return tokens, offset + 1  # single whitespace after maxval


def load_image(path) -> Image:
    """Read an 8-bit binary PGM (P5) or PPM (P6) file, rescaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported image magic {magic!r} (want P5 or P6)")
    (width, height, maxval), offset = _read_header(data, 2, 3)
    if maxval <= 0 or maxval > 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raw = np.frombuffer(data, dtype=np.uint8, count=need, offset=offset)
    if raw.size != need:
        raise ValueError(f"{path}: truncated pixel data")
    values = raw.astype(np.float64) / float(maxval)
    if channels == 3:
        return Image.from_rgb(values.reshape(height, width, 3))
    return Image(values.reshape(height, width))


def save_pgm(path, values: np.ndarray) -> None:
    """Write a 2-D array of [0, 1] values as an 8-bit binary PGM."""
    values = np.asarray(values, dtype=np.float64)
    raw = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{raw.shape[1]} {raw.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw.tobytes())


def save_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) array of [0, 1] values as an 8-bit binary PPM."""
    rgb = np.asarray(rgb, dtype=np.float64)
    raw = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{raw.shape[1]} {raw.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raw.tobytes())
