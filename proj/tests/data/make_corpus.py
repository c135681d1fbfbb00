"""Regenerates the 128x128 grayscale test corpus from scikit-image sample data.

All sources are public domain or CC0 (see the scikit-image data docstrings).
Run from this directory: python3 make_corpus.py
"""
import numpy as np
import skimage.data as data
from skimage.color import rgb2gray
from skimage.transform import rescale

TILE = 128

# (source, downscale factor, [(row, col), ...]) in downscaled coordinates
TRAIN = [
    ("astronaut", 0.5, [(20, 60), (90, 40)]),
    ("brick", 0.5, [(60, 60)]),
    ("cell", 0.5, [(100, 100)]),
    ("chelsea", 0.5, [(10, 40)]),
    ("clock", 0.5, [(10, 40)]),
    ("coins", 0.5, [(10, 40)]),
    ("grass", 0.5, [(60, 60)]),
    ("gravel", 0.5, [(60, 60)]),
    ("moon", 0.5, [(60, 60)]),
    ("page", 1.0, [(40, 100)]),
    ("rocket", 0.5, [(60, 60), (40, 180)]),
    ("retina", 0.25, [(100, 100)]),
    ("cell", 0.5, [(10, 10)]),
    ("immunohistochemistry", 0.5, [(60, 60)]),
    ("astronaut", 0.5, [(120, 10)]),
    ("chelsea", 0.5, [(10, 150)]),
    ("clock", 0.5, [(20, 60)]),
    ("coins", 0.5, [(20, 60)]),
]
HELDOUT = [
    ("camera", 0.5, [(60, 100), (128, 100)]),
    ("coffee", 0.5, [(40, 60), (60, 160)]),
    ("text", 1.0, [(20, 150)]),
]


def load(name, scale):
    img = getattr(data, name)()
    if img.ndim == 3:
        img = rgb2gray(img[..., :3])
    else:
        img = img / 255.0
    if scale != 1.0:
        img = rescale(img, scale, anti_aliasing=True)
    return img


def write_pgm(path, img):
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (u8.shape[1], u8.shape[0]))
        f.write(u8.tobytes())


def emit(spec, outdir):
    count = 0
    for name, scale, origins in spec:
        img = load(name, scale)
        for r, c in origins:
            r = min(r, img.shape[0] - TILE)
            c = min(c, img.shape[1] - TILE)
            tile = img[r:r + TILE, c:c + TILE]
            write_pgm(f"{outdir}/{count:02d}_{name}.pgm", tile)
            count += 1
    return count


if __name__ == "__main__":
    print(emit(TRAIN, "corpus/train"), "training tiles")
    print(emit(HELDOUT, "corpus/heldout"), "held-out tiles")
