"""Scene-plane image transformations applied before optical simulation:
shift, rescale, rotate, and perspective distortion.

Rotation and perspective act on the source digit image; rescaling draws a
new physical object height; shifting moves the rescaled scene on the PSF
grid by whole pixels, constrained so all nonzero content stays in the
field. All draws come from an explicit integer-state generator so datasets
are reproducible across platforms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularHomography


@dataclass(frozen=True)
class TransformSpec:
    """One scene transformation and its parameter ranges."""

    kind: str = "none"
    height_range: tuple = (0.02, 0.20)
    max_angle_deg: float = 90.0
    distortion: float = 0.5
    probability: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "shift", "rescale", "rotate", "perspective"):
            raise ValueError(f"unknown transform kind {self.kind!r}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "height_range": list(self.height_range),
            "max_angle_deg": self.max_angle_deg,
            "distortion": self.distortion,
            "probability": self.probability,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "height_range" in d:
            d["height_range"] = tuple(d["height_range"])
        return cls(**d)


def shift_image(img, dy, dx):
    """Integer-pixel translation with zero fill."""
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def feasible_shift_bounds(img):
    """Offset ranges ``((dy_lo, dy_hi), (dx_lo, dx_hi))`` keeping the nonzero
    bounding box of ``img`` inside the field. Empty images allow no shift."""
    flat = img if img.ndim == 2 else img.sum(axis=2)
    rows = np.flatnonzero(flat.any(axis=1))
    cols = np.flatnonzero(flat.any(axis=0))
    if rows.size == 0:
        return (0, 0), (0, 0)
    h, w = flat.shape
    return (
        (-int(rows[0]), int(h - 1 - rows[-1])),
        (-int(cols[0]), int(w - 1 - cols[-1])),
    )


def random_shift(img, rng):
    """Translate by offsets drawn uniformly over the feasible integer set."""
    (dy_lo, dy_hi), (dx_lo, dx_hi) = feasible_shift_bounds(img)
    dy = int(rng.integers(dy_lo, dy_hi + 1))
    dx = int(rng.integers(dx_lo, dx_hi + 1))
    return shift_image(img, dy, dx)


def random_rescale(spec, rng):
    """Draw an object height uniformly from the configured range [m]."""
    lo, hi = spec.height_range
    return float(rng.uniform(lo, hi))


def sample_bilinear(img, yy, xx):
    """Sample ``img`` at fractional coordinates with zero fill outside."""
    h, w = img.shape[:2]
    inside = (yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1)
    yc = np.clip(yy, 0, h - 1)
    xc = np.clip(xx, 0, w - 1)
    y0 = np.floor(yc).astype(np.int64)
    x0 = np.floor(xc).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = yc - y0
    fx = xc - x0
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
        inside = inside[..., None]
    out = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )
    return np.where(inside, out, 0.0)


def rotate_image(img, angle_deg):
    """Rotate about the image center with bilinear resampling, zero fill."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    dy = ii - cy
    dx = jj - cx
    # inverse map: output pixel pulls from the source rotated by -angle
    yy = cy + cos_t * dy + sin_t * dx
    xx = cx - sin_t * dy + cos_t * dx
    return sample_bilinear(img, yy, xx)


def random_rotate(img, rng, max_angle_deg=90.0):
    """Rotate by an angle drawn uniformly from [-max_angle, +max_angle]."""
    angle = float(rng.uniform(-max_angle_deg, max_angle_deg))
    return rotate_image(img, angle)


def solve_homography(src, dst):
    """Homography mapping 4 source points onto 4 destination points (DLT).

    Points are ``(x, y)`` pairs; returns the 3x3 matrix with ``h33 = 1``.

    Raises
    ------
    SingularHomography
        If the correspondence does not determine a projective map.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise SingularHomography("degenerate corner correspondence") from None
    return np.append(h, 1.0).reshape(3, 3)


def warp_homography(img, hom):
    """Inverse-warp: output pixel ``q`` samples the input at ``hom^-1 q``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    inv = np.linalg.inv(hom)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    ones = np.ones_like(jj)
    pts = np.stack([jj, ii, ones], axis=0).reshape(3, -1)
    mapped = inv @ pts
    denom = mapped[2]
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    xx = (mapped[0] / denom).reshape(h, w)
    yy = (mapped[1] / denom).reshape(h, w)
    return sample_bilinear(img, yy, xx)


def perspective_endpoints(dims, distortion, rng):
    """Corner correspondence of a random inward perspective distortion.

    Each corner moves inward by independent integer draws up to
    ``distortion * half_dimension`` per axis, so the warped support stays
    inside the canvas.
    """
    h, w = dims
    half_h, half_w = h // 2, w // 2
    dx = int(distortion * half_w) + 1
    dy = int(distortion * half_h) + 1
    tl = (int(rng.integers(0, dx)), int(rng.integers(0, dy)))
    tr = (w - 1 - int(rng.integers(0, dx)), int(rng.integers(0, dy)))
    br = (w - 1 - int(rng.integers(0, dx)), h - 1 - int(rng.integers(0, dy)))
    bl = (int(rng.integers(0, dx)), h - 1 - int(rng.integers(0, dy)))
    start = [(0, 0), (w - 1, 0), (w - 1, h - 1), (0, h - 1)]
    return start, [tl, tr, br, bl]


def random_perspective(img, rng, distortion=0.5, probability=1.0, max_attempts=10):
    """Random perspective warp with inward corner displacement."""
    if probability < 1.0 and rng.random() >= probability:
        return np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    for _ in range(max_attempts):
        start, end = perspective_endpoints((h, w), distortion, rng)
        try:
            hom = solve_homography(start, end)
        except SingularHomography:
            continue
        return warp_homography(img, hom)
    raise SingularHomography(f"no valid perspective draw in {max_attempts} attempts")


def apply_source_transform(img, spec, rng):
    """Apply the source-image stage of a transform (rotate / perspective)."""
    if spec.kind == "rotate":
        return random_rotate(img, rng, spec.max_angle_deg)
    if spec.kind == "perspective":
        return random_perspective(img, rng, spec.distortion, spec.probability)
    return np.asarray(img, dtype=np.float64)
