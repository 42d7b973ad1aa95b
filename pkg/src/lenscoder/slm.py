"""Parametric amplitude masks: the programmable color-LCD modulator, the
MLS coded aperture baseline, and ingestion of externally measured PSFs.

The modulator model follows the ST7735R display: sub-pixels on a regular
lattice (fine pitch along the sensor's vertical axis where the R/G/B color
stripes interleave, coarse pitch horizontally), each with a transmissive
aperture smaller than its pitch cell (deadspace). A sub-pixel transmits
only at its own color's simulation wavelength.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import optics, tensorio
from .errors import (
    DimensionMismatch,
    FormatError,
    ResolutionTooCoarse,
    UnsupportedDegree,
)

#: ST7735R sub-pixel aperture (height, width) [m].
ST7735R_SUBPIXEL_SIZE = (0.06e-3, 0.18e-3)
#: ST7735R sub-pixel lattice pitch (height, width) [m].
ST7735R_PIXEL_PITCH = (0.073e-3, 0.22e-3)

#: Coded-aperture feature size [m].
CODED_APERTURE_FEATURE_M = 30e-6


@dataclass(frozen=True)
class SensorGeometry:
    """Sony IMX477R sensor: 3040 x 4056 pixels of 1.55 um."""

    full_res: tuple = (3040, 4056)
    pixel_m: float = 1.55e-6

    @property
    def extent(self):
        """(height, width) of the active area [m]."""
        return (self.full_res[0] * self.pixel_m, self.full_res[1] * self.pixel_m)

    def sim_grid(self, downsample=1):
        """Simulation grid (dims, pitch) for a given downsampling factor."""
        dims = (
            int(round(self.full_res[0] / downsample)),
            int(round(self.full_res[1] / downsample)),
        )
        return dims, self.pixel_m * downsample


@dataclass(frozen=True)
class SlmGeometry:
    """Fixed sub-pixel lattice of an amplitude SLM.

    ``color_pattern`` assigns a channel index (0=R, 1=G, 2=B) to each
    sub-pixel row; the stripes interleave along the fine-pitch axis.
    """

    n_rows: int
    n_cols: int
    subpixel_size: tuple = ST7735R_SUBPIXEL_SIZE
    pixel_pitch: tuple = ST7735R_PIXEL_PITCH
    color_pattern: tuple = field(default=None)

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("SLM needs at least one sub-pixel")
        if self.color_pattern is None:
            object.__setattr__(
                self, "color_pattern", tuple(r % 3 for r in range(self.n_rows))
            )
        if len(self.color_pattern) != self.n_rows:
            raise ValueError("color_pattern must assign one channel per row")

    @property
    def count(self):
        return self.n_rows * self.n_cols

    @property
    def fill_factor_per_axis(self):
        return (
            self.subpixel_size[0] / self.pixel_pitch[0],
            self.subpixel_size[1] / self.pixel_pitch[1],
        )

    def row_centers(self):
        return (np.arange(self.n_rows) - (self.n_rows - 1) / 2.0) * self.pixel_pitch[0]

    def col_centers(self):
        return (np.arange(self.n_cols) - (self.n_cols - 1) / 2.0) * self.pixel_pitch[1]

    @classmethod
    def from_json(cls, path):
        """Load an alternative SLM geometry from a JSON override file."""
        with open(path) as f:
            d = json.load(f)
        kwargs = {
            "n_rows": int(d["n_rows"]),
            "n_cols": int(d["n_cols"]),
        }
        if "subpixel_size" in d:
            kwargs["subpixel_size"] = tuple(float(v) for v in d["subpixel_size"])
        if "pixel_pitch" in d:
            kwargs["pixel_pitch"] = tuple(float(v) for v in d["pixel_pitch"])
        if "color_pattern" in d:
            kwargs["color_pattern"] = tuple(int(v) for v in d["color_pattern"])
        return cls(**kwargs)


def active_subpixels(sensor, coverage):
    """Sub-pixel grid (rows, cols) whose apertures cover the given fraction
    of each sensor axis.

    The exposed region scales each axis by ``coverage`` (the usual "80% of
    the sensor" crop that protects the shift-invariance assumption), and the
    count per axis is the number of whole lattice cells fitting inside,
    clamped to at least one.
    """
    if not 0 < coverage <= 1:
        raise ValueError("coverage must be in (0, 1]")
    ext = sensor.extent
    rows = int(coverage * ext[0] / ST7735R_PIXEL_PITCH[0])
    cols = int(coverage * ext[1] / ST7735R_PIXEL_PITCH[1])
    return (max(rows, 1), max(cols, 1))


def slm_for_sensor(sensor=SensorGeometry(), coverage=0.8):
    """ST7735R-lattice geometry sized by ``active_subpixels``."""
    rows, cols = active_subpixels(sensor, coverage)
    return SlmGeometry(rows, cols)


@dataclass
class SlmState:
    """Learnable modulator state: raw weights ``theta`` plus fixed geometry.

    Effective transmittances are ``w = sigmoid(theta)``, which keeps every
    amplitude in (0, 1) while leaving ``theta`` unconstrained for the
    optimizer.
    """

    geometry: SlmGeometry
    raw_weights: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.raw_weights = np.asarray(self.raw_weights, dtype=np.float64)
        if self.raw_weights.shape != (self.geometry.count,):
            raise DimensionMismatch(
                f"need {self.geometry.count} raw weights, got {self.raw_weights.shape}"
            )

    @property
    def weights(self):
        return sigmoid(self.raw_weights)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def logit(p):
    return np.log(p) - np.log1p(-p)


def random_slm_state(geometry, rng, trainable=True):
    """State whose effective weights are i.i.d. Uniform(0, 1)."""
    u = np.clip(rng.random(geometry.count), 1e-9, 1.0 - 1e-9)
    return SlmState(geometry, logit(u), trainable=trainable)


def footprint_maps(geometry, field_dims, pitch_m):
    """Per-axis ownership of field samples by SLM sub-pixels.

    Returns ``(owner_row, owner_col)`` int arrays over field rows/columns;
    entries are the owning lattice index, or -1 for deadspace and the region
    outside the aperture crop.

    Raises
    ------
    ResolutionTooCoarse
        If some sub-pixel aperture contains no field sample center.
    """
    h, w = field_dims
    maps = []
    for n_sub, centers, pitch, aperture, n_field in (
        (geometry.n_rows, geometry.row_centers(), geometry.pixel_pitch[0],
         geometry.subpixel_size[0], h),
        (geometry.n_cols, geometry.col_centers(), geometry.pixel_pitch[1],
         geometry.subpixel_size[1], w),
    ):
        coords = optics.grid_coords(n_field, pitch_m)
        idx = np.round((coords - centers[0]) / pitch).astype(np.int64)
        inside = (idx >= 0) & (idx < n_sub)
        idx_c = np.clip(idx, 0, n_sub - 1)
        inside &= np.abs(coords - centers[idx_c]) <= aperture / 2.0
        owner = np.where(inside, idx_c, -1)
        covered = np.zeros(n_sub, dtype=bool)
        covered[owner[owner >= 0]] = True
        if not covered.all():
            raise ResolutionTooCoarse(
                f"field pitch {pitch_m:.3g} m leaves {int((~covered).sum())} "
                f"sub-pixel apertures without a sample"
            )
        maps.append(owner)
    return maps[0], maps[1]


def rasterize_mask(state, field_dims, pitch_m, channel, footprints=None):
    """Amplitude mask of the SLM on the field grid for one color channel.

    Every field pixel whose center lies inside sub-pixel ``k``'s aperture
    *and* whose color stripe matches ``channel`` takes the value ``w_k``;
    deadspace, mismatched colors, and the region outside the lattice are 0.
    The map is exactly linear in the effective weights.
    """
    owner_row, owner_col = footprints or footprint_maps(
        state.geometry, field_dims, pitch_m
    )
    colors = np.asarray(state.geometry.color_pattern)
    w2d = state.weights.reshape(state.geometry.n_rows, state.geometry.n_cols)
    return scatter_weights(w2d, owner_row, owner_col, colors, channel)


def scatter_weights(w2d, owner_row, owner_col, colors, channel):
    """Spread per-sub-pixel values onto the field grid (forward rasterize)."""
    row_ok = owner_row >= 0
    row_ok &= np.where(row_ok, colors[np.clip(owner_row, 0, None)] == channel, False)
    col_ok = owner_col >= 0
    mask = np.zeros((owner_row.size, owner_col.size), dtype=np.float64)
    mask[np.ix_(row_ok, col_ok)] = w2d[
        np.ix_(owner_row[row_ok], owner_col[col_ok])
    ]
    return mask


def gather_grad(upstream, owner_row, owner_col, colors, channel, n_rows, n_cols):
    """Adjoint of ``scatter_weights``: sum upstream over each footprint."""
    row_ok = owner_row >= 0
    row_ok &= np.where(row_ok, colors[np.clip(owner_row, 0, None)] == channel, False)
    col_ok = owner_col >= 0
    sub = upstream[np.ix_(row_ok, col_ok)]
    by_row = np.zeros((n_rows, sub.shape[1]), dtype=np.float64)
    np.add.at(by_row, owner_row[row_ok], sub)
    grad = np.zeros((n_rows, n_cols), dtype=np.float64)
    np.add.at(grad.T, owner_col[col_ok], by_row.T)
    return grad


# Primitive polynomial taps (1-indexed register positions feeding back)
# giving maximal-length sequences, per the standard LFSR tap tables.
_LFSR_TAPS = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 6, 4, 1),
    13: (13, 4, 3, 1),
    14: (14, 5, 3, 1),
    15: (15, 14),
    16: (16, 15, 13, 4),
}


def mls_sequence(n_bits):
    """Maximum length sequence from an ``n_bits``-stage Fibonacci LFSR.

    The register starts all-ones and the output is the last stage, so the
    full period of ``2**n - 1`` bits contains exactly ``2**(n-1)`` ones and
    the +-1-mapped sequence has two-valued circular autocorrelation.
    """
    if n_bits not in _LFSR_TAPS:
        raise UnsupportedDegree(f"no primitive polynomial tabulated for degree {n_bits}")
    taps = _LFSR_TAPS[n_bits]
    state = (1 << n_bits) - 1
    out = np.empty(2**n_bits - 1, dtype=np.uint8)
    for i in range(out.size):
        out[i] = state & 1  # last stage
        fb = 0
        for t in taps:
            fb ^= (state >> (n_bits - t)) & 1
        state = (state >> 1) | (fb << (n_bits - 1))
    return out


def coded_aperture_mask():
    """126 x 126 binary coded-aperture pattern.

    A length-63 MLS is tiled to length 126 and the outer product with itself
    forms the (rank-1, symmetric) separable mask.
    """
    s = mls_sequence(6)
    tiled = np.concatenate([s, s]).astype(np.float64)
    return np.outer(tiled, tiled)


def rasterize_coded_aperture(
    mask, field_dims, pitch_m, feature_m=CODED_APERTURE_FEATURE_M
):
    """Lay a binary cell mask on the field grid at the given feature size.

    Each field pixel takes the value of the mask cell containing its center;
    pixels outside the mask extent are 0 (the mask is centered on the axis).
    """
    mask = np.asarray(mask, dtype=np.float64)
    n_my, n_mx = mask.shape
    h, w = field_dims
    y = optics.grid_coords(h, pitch_m)
    x = optics.grid_coords(w, pitch_m)
    iy = np.floor(y / feature_m + n_my / 2.0).astype(np.int64)
    ix = np.floor(x / feature_m + n_mx / 2.0).astype(np.int64)
    ok_y = (iy >= 0) & (iy < n_my)
    ok_x = (ix >= 0) & (ix < n_mx)
    out = np.zeros((h, w), dtype=np.float64)
    out[np.ix_(ok_y, ok_x)] = mask[np.ix_(iy[ok_y], ix[ok_x])]
    return out


def load_measured_psf(path):
    """Read a PSF from an LCT1 tensor or PFM file and normalize it.

    Negative pixels are clamped to zero and each channel is scaled to unit
    sum, so measured and simulated PSFs are interchangeable downstream.
    """
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic[:4] == tensorio.MAGIC:
        data, _ = tensorio.read_tensor(path)
    elif magic[:2] in (b"Pf", b"PF"):
        data = tensorio.read_pfm(path)
    else:
        raise FormatError(f"{path}: neither LCT1 nor PFM")
    return optics.normalize_psf(data)
