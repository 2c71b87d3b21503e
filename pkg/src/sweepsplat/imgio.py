"""Binary PPM images, PFM depth maps, and raw float dumps."""

from __future__ import annotations

import numpy as np

from .errors import FormatError, ShapeError


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary P6, maxval 255.

    Quantization is round(255 * v) after clipping.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"write_ppm: image shape {image.shape} != (3, H, W)")
    h, w = image.shape[1:]
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.moveaxis(data, 0, 2).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 image to (3, H, W) float32 in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM (P6)")
    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PPM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    need = w * h * 3
    raw = data[pos : pos + need]
    if len(raw) < need:
        raise FormatError(f"{path}: truncated PPM payload")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return (np.moveaxis(img, 2, 0).astype(np.float32)) / 255.0


def write_pfm(path, values: np.ndarray) -> None:
    """Write an (H, W) float32 map as single-channel PFM.

    Little-endian (scale -1.0), rows stored bottom-up.
    """
    if values.ndim != 2:
        raise ShapeError(f"write_pfm: values shape {values.shape} != (H, W)")
    h, w = values.shape
    payload = np.flipud(np.asarray(values, dtype="<f4"))
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(payload).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM to (H, W) float32, top-down rows."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag != b"Pf":
            raise FormatError(f"{path}: not a single-channel PFM (tag {tag!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: bad PFM size line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        raw = f.read(4 * w * h)
    if len(raw) < 4 * w * h:
        raise FormatError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(raw, dtype=dtype).reshape(h, w).astype(np.float32)
    return np.flipud(values).copy()


def write_raw_f32(path, array: np.ndarray) -> None:
    """Lossless little-endian float32 dump (no header)."""
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
