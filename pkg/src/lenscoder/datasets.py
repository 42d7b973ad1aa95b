"""Digit dataset handling: IDX file ingestion and a synthetic generator.

``ingest_mnist`` reads the classic IDX pair layout (images magic 0x803,
labels 0x801, big-endian dims, u8 payload), plain or gzipped. When no real
dataset is available, ``generate_synthetic`` renders handwritten-style
digits offline (font glyphs deformed by random affine, elastic, and stroke-
thickness perturbations, size-normalized and center-of-mass centered the
way MNIST digits are) and writes standard IDX files, so every downstream
consumer uses the same ingestion path either way.
"""

import gzip
import struct
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .errors import CountMismatch, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


def _read_maybe_gz(path):
    path = Path(path)
    if path.exists():
        raw = path.read_bytes()
    elif path.with_suffix(path.suffix + ".gz").exists():
        raw = path.with_suffix(path.suffix + ".gz").read_bytes()
    elif Path(str(path) + ".gz").exists():
        raw = Path(str(path) + ".gz").read_bytes()
    else:
        raise FileNotFoundError(path)
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx_images(path):
    raw = _read_maybe_gz(path)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic {magic:#x}")
    expected = count * rows * cols
    if len(raw) - 16 != expected:
        raise FormatError(f"{path}: payload {len(raw) - 16} != {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def read_idx_labels(path):
    raw = _read_maybe_gz(path)
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic {magic:#x}")
    if len(raw) - 8 != count:
        raise FormatError(f"{path}: payload {len(raw) - 8} != {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).copy()


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.size))
        f.write(labels.tobytes())


def ingest_mnist(directory):
    """Load the train/test IDX pairs from a directory.

    Returns ``(train_images, train_labels, test_images, test_labels)`` with
    images as float64 in [0, 1].
    """
    directory = Path(directory)
    out = []
    for img_name, lab_name in ((TRAIN_IMAGES, TRAIN_LABELS), (TEST_IMAGES, TEST_LABELS)):
        images = read_idx_images(directory / img_name)
        labels = read_idx_labels(directory / lab_name)
        if images.shape[0] != labels.shape[0]:
            raise CountMismatch(
                f"{img_name}: {images.shape[0]} images vs {labels.shape[0]} labels"
            )
        out.append(images.astype(np.float64) / 255.0)
        out.append(labels.astype(np.int64))
    return tuple(out)


def _font_paths():
    import matplotlib

    ttf = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    names = [
        "DejaVuSans.ttf",
        "DejaVuSans-Bold.ttf",
        "DejaVuSans-Oblique.ttf",
        "DejaVuSans-BoldOblique.ttf",
        "DejaVuSerif.ttf",
        "DejaVuSerif-Bold.ttf",
        "DejaVuSerif-Italic.ttf",
        "DejaVuSansMono.ttf",
        "DejaVuSansMono-Bold.ttf",
        "DejaVuSansMono-Oblique.ttf",
    ]
    found = [ttf / n for n in names if (ttf / n).exists()]
    if not found:
        raise FileNotFoundError(f"no DejaVu fonts under {ttf}")
    return found


def _render_glyph(digit, font):
    from PIL import Image, ImageDraw

    canvas = Image.new("L", (96, 96), 0)
    draw = ImageDraw.Draw(canvas)
    draw.text((48, 48), str(digit), fill=255, font=font, anchor="mm")
    return np.asarray(canvas, dtype=np.float64) / 255.0


def _random_affine(img, rng):
    angle = rng.uniform(-22.0, 22.0)
    shear = rng.uniform(-0.4, 0.4)
    sx = rng.uniform(0.6, 1.15)
    sy = rng.uniform(0.6, 1.15)
    theta = np.deg2rad(angle)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    sh = np.array([[1.0, shear], [0.0, 1.0]])
    sc = np.diag([sy, sx])
    m = rot @ sh @ sc
    c = (np.asarray(img.shape) - 1) / 2.0
    inv = np.linalg.inv(m)
    offset = c - inv @ c
    return ndi.affine_transform(img, inv, offset=offset, order=1, mode="constant")


def _elastic(img, rng, alpha_range=(8.0, 17.0), sigma=4.0):
    shape = img.shape
    alpha = rng.uniform(*alpha_range)
    dy = ndi.gaussian_filter(rng.uniform(-1, 1, shape), sigma) * alpha
    dx = ndi.gaussian_filter(rng.uniform(-1, 1, shape), sigma) * alpha
    ii, jj = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return ndi.map_coordinates(img, [ii + dy, jj + dx], order=1, mode="constant")


def _normalize_digit(img, out_size=28, ink_size=20):
    """MNIST-style normalization: fit the ink box to ``ink_size`` and center
    the result by center of mass in an ``out_size`` square."""
    rows = np.flatnonzero(img.max(axis=1) > 0.05)
    cols = np.flatnonzero(img.max(axis=0) > 0.05)
    if rows.size == 0:
        return np.zeros((out_size, out_size))
    crop = img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    h, w = crop.shape
    scale = ink_size / max(h, w)
    from .fourier import bilinear_resize

    small = bilinear_resize(crop, max(int(round(h * scale)), 1),
                            max(int(round(w * scale)), 1))
    out = np.zeros((out_size, out_size))
    top = (out_size - small.shape[0]) // 2
    left = (out_size - small.shape[1]) // 2
    out[top : top + small.shape[0], left : left + small.shape[1]] = small
    total = out.sum()
    if total > 0:
        cy, cx = ndi.center_of_mass(out)
        dy = int(round(out_size / 2 - 0.5 - cy))
        dx = int(round(out_size / 2 - 0.5 - cx))
        out = np.roll(out, (np.clip(dy, -3, 3), np.clip(dx, -3, 3)), axis=(0, 1))
    return np.clip(out, 0.0, 1.0)


def generate_synthetic(count, seed, out_size=28):
    """Render ``count`` handwritten-style digits; returns (images u8, labels).

    Deterministic for a given seed. Classes cycle so the label histogram is
    balanced to within one example.
    """
    from PIL import ImageFont

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    fonts = []
    for p in _font_paths():
        for size in (54, 62, 70):
            fonts.append(ImageFont.truetype(str(p), size=size))
    images = np.empty((count, out_size, out_size), dtype=np.uint8)
    labels = np.empty(count, dtype=np.uint8)
    order = rng.permutation(count) % 10
    for i in range(count):
        digit = int(order[i])
        glyph = _render_glyph(digit, fonts[int(rng.integers(len(fonts)))])
        img = _random_affine(glyph, rng)
        img = _elastic(img, rng)
        thickness = int(rng.integers(-2, 3))
        if thickness > 0:
            img = ndi.grey_dilation(img, size=(1 + thickness, 1 + thickness))
        elif thickness < 0:
            img = ndi.grey_erosion(img, size=(1 - thickness, 1 - thickness))
        img = ndi.gaussian_filter(img, rng.uniform(0.4, 1.2))
        img = _normalize_digit(img, out_size=out_size)
        peak = img.max()
        if peak > 0:
            img = img / peak
        images[i] = np.round(img * 255).astype(np.uint8)
        labels[i] = digit
    return images, labels


def write_synthetic_idx(directory, train_count, test_count, seed):
    """Generate a synthetic digit dataset and store it as standard IDX files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tr_img, tr_lab = generate_synthetic(train_count, seed)
    te_img, te_lab = generate_synthetic(test_count, seed + 1)
    write_idx_images(directory / TRAIN_IMAGES, tr_img)
    write_idx_labels(directory / TRAIN_LABELS, tr_lab)
    write_idx_images(directory / TEST_IMAGES, te_img)
    write_idx_labels(directory / TEST_LABELS, te_lab)
    return directory
