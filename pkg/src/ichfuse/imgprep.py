"""Slice preprocessing: Otsu brain mask, masking, foreground crop, resize.

Images are 2-D numpy arrays indexed ``[row, col]`` (height x width).  8-bit
images use an unsigned integer dtype with values in ``0..255``.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


class DegenerateHistogramError(ValueError):
    pass


class NoForegroundError(ValueError):
    pass


def _as_8bit(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    if not np.issubdtype(a.dtype, np.integer):
        if not np.all(a == np.round(a)):
            raise ValueError("Otsu thresholding expects integer 8-bit intensities")
        a = a.astype(np.int64)
    if a.min() < 0 or a.max() > 255:
        raise ValueError("8-bit intensities must lie in 0..255")
    return a


def between_class_variance(hist: np.ndarray) -> np.ndarray:
    """Between-class variance for every threshold ``t`` in ``0..255``.

    Class 0 holds intensities ``< t`` and class 1 those ``>= t``; entries
    where one class is empty are 0.
    """
    hist = np.asarray(hist, dtype=np.float64)
    levels = np.arange(hist.size, dtype=np.float64)
    total = hist.sum()
    w0 = np.concatenate([[0.0], np.cumsum(hist)[:-1]]) / total
    s0 = np.concatenate([[0.0], np.cumsum(hist * levels)[:-1]]) / total
    mu_t = (hist * levels).sum() / total
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = (mu_t * w0 - s0) ** 2 / (w0 * w1)
    var[(w0 <= 0) | (w1 <= 0)] = 0.0
    return var


def otsu_threshold(img) -> int:
    """Otsu threshold; pixels ``>= T`` form the foreground.

    Ties between thresholds resolve to the lowest one.
    """
    a = _as_8bit(img)
    hist = np.bincount(a.ravel(), minlength=256)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogramError("degenerate histogram: image has a single intensity")
    return int(np.argmax(between_class_variance(hist)))


def make_mask(img, threshold) -> np.ndarray:
    return np.asarray(img) >= threshold


def apply_mask(img, mask) -> np.ndarray:
    img = np.asarray(img)
    mask = np.asarray(mask, dtype=bool)
    if img.shape != mask.shape:
        raise ValueError(f"image {img.shape} and mask {mask.shape} differ in size")
    return img * mask.astype(img.dtype)


def largest_component(mask) -> np.ndarray:
    """Boolean mask of the largest 4-connected component (first in raster order on ties)."""
    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask)
    if count == 0:
        raise NoForegroundError("no foreground")
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def bounding_box(mask) -> tuple[int, int, int, int]:
    """``(row0, row1, col0, col1)`` half-open box around the set pixels."""
    rows = np.flatnonzero(np.asarray(mask).any(axis=1))
    cols = np.flatnonzero(np.asarray(mask).any(axis=0))
    if rows.size == 0:
        raise NoForegroundError("no foreground")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def crop_foreground(img, mask) -> np.ndarray:
    """Crop to the bounding box of the largest connected mask component."""
    img = np.asarray(img)
    if img.shape != np.shape(mask):
        raise ValueError("image and mask differ in size")
    r0, r1, c0, c1 = bounding_box(largest_component(mask))
    return img[r0:r1, c0:c1].copy()


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out)
    return np.arange(n_out) * (n_in - 1) / (n_out - 1)


def bilinear_resize(img, out_w: int, out_h: int) -> np.ndarray:
    """Align-corners bilinear resampling to ``out_h`` rows x ``out_w`` columns.

    Output corners coincide with input corners.  Floating inputs keep their
    dtype; integer inputs produce ``float64``.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    dtype = a.dtype if np.issubdtype(a.dtype, np.floating) else np.float64
    a = a.astype(dtype, copy=False)
    h, w = a.shape
    y = _source_coords(h, out_h)
    x = _source_coords(w, out_w)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0).astype(dtype)[:, None]
    fx = (x - x0).astype(dtype)[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def to_8bit(img) -> np.ndarray:
    """Map a normalized ``[0, 1]`` float image onto 0..255 (``round(255 x)``)."""
    a = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
        raise ValueError("normalized intensities must lie in [0, 1]")
    return np.rint(a * 255).astype(np.uint8)


def preprocess_slice(img, size: int = 224) -> np.ndarray:
    """Otsu mask -> masked image -> largest-component crop -> resize, as uint8.

    Floating-point input is taken to be normalized to ``[0, 1]``.
    """
    img = np.asarray(img)
    a = _as_8bit(to_8bit(img) if np.issubdtype(img.dtype, np.floating) else img)
    T = otsu_threshold(a)
    mask = make_mask(a, T)
    cropped = crop_foreground(apply_mask(a, mask), mask)
    out = bilinear_resize(cropped, size, size)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# -------------------------------------------------------------- PGM (P5)


def encode_pgm(img) -> bytes:
    """Binary PGM: ``P5\\n<w> <h>\\n255\\n`` followed by row-major bytes."""
    a = _as_8bit(img).astype(np.uint8)
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + a.tobytes()


def write_pgm(path, img) -> None:
    with open(path, "wb") as fp:
        fp.write(encode_pgm(img))


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fp:
        return decode_pgm(fp.read())


def decode_pgm(data: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval <= 255:
        raise ValueError("only 8-bit PGM is supported")
    pos += 1  # single whitespace after maxval
    if len(data) - pos < w * h:
        raise ValueError("truncated PGM raster")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return raster.reshape(h, w).copy()
