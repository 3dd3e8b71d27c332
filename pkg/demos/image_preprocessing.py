"""
Preparing a slice image
=======================

Otsu threshold, keep the largest bright region, crop to it and resize.
The phantom below has a skull-like ellipse plus a small bright artifact
in the corner that the component filter removes.
"""

import tempfile
from pathlib import Path

import numpy as np

from ichfuse.imgprep import (
    crop_foreground,
    largest_component,
    make_mask,
    otsu_threshold,
    preprocess_slice,
    read_pgm,
    write_pgm,
)

rng = np.random.default_rng(0)
yy, xx = np.mgrid[0:96, 0:128]
img = 20 + rng.normal(0, 4, size=yy.shape)
inside = ((yy - 50) / 36) ** 2 + ((xx - 62) / 44) ** 2 < 1
img[inside] = 140 + rng.normal(0, 10, size=inside.sum())
img[2:6, 118:124] = 230  # label marker in the margin
img = np.clip(img, 0, 255).astype(np.uint8)

# %%
T = otsu_threshold(img)
mask = make_mask(img, T)
print("threshold", T, "foreground pixels", mask.sum())
keep = largest_component(mask)
print("largest component", keep.sum(), "pixels; marker dropped:", not keep[2:6, 118:124].any())

# %%
crop = crop_foreground(img, mask)
out = preprocess_slice(img, size=64)
print("crop", crop.shape, "-> resized", out.shape, out.dtype)

# %%
# Round trip through binary PGM.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "slice.pgm"
    write_pgm(path, out)
    print("pgm bytes", path.stat().st_size, "identical:", np.array_equal(read_pgm(path), out))
