"""Scalar-diffraction engine: spherical sources, band-limited angular
spectrum propagation, and incoherent intensity PSFs.

The propagation model follows the classic two-step picture: a point source
at distance ``d1`` illuminates the mask plane with a pure-phase spherical
wavefront; the field just after the mask is propagated the short distance
``d2`` to the sensor with the band-limited angular spectrum method; the
incoherent PSF is the squared modulus of the arriving field, one channel
per wavelength.
"""

from dataclasses import dataclass

import numpy as np

from . import fourier
from .errors import DegeneratePsf, DimensionMismatch

#: Simulation wavelengths for the R, G, B channels [m].
RGB_WAVELENGTHS = (640e-9, 550e-9, 460e-9)


@dataclass(frozen=True)
class PropagationPlan:
    """Free-space propagation geometry for one wavelength.

    ``physical_extent`` is ``(S_y, S_x) = (H * pitch, W * pitch)``, the size
    of the propagation region that enters the band-limit frequencies.
    """

    grid_h: int
    grid_w: int
    pitch_m: float
    distance_m: float
    wavelength_m: float

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.pitch_m <= 0 or self.wavelength_m <= 0:
            raise ValueError("pitch and wavelength must be positive")

    @property
    def physical_extent(self):
        return (self.grid_h * self.pitch_m, self.grid_w * self.pitch_m)


@dataclass(frozen=True)
class SourceSpec:
    """Point source at distance ``distance_m`` emitting ``wavelength_m`` light."""

    distance_m: float
    wavelength_m: float

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("source distance must be positive")
        if self.wavelength_m <= 0:
            raise ValueError("wavelength must be positive")


def grid_coords(n, pitch_m):
    """Physical coordinates of pixel centers with the origin at index n//2."""
    return (np.arange(n) - n // 2) * pitch_m


def spherical_source(dims, pitch_m, src):
    """Spherical wavefront from an on-axis point source, sampled at pixel centers.

    The field is pure phase, ``exp(j * 2*pi/lambda * sqrt(x^2 + y^2 + d1^2))``,
    so the modulus is 1 everywhere and the on-axis (center pixel) phase is
    ``2*pi*d1/lambda``.
    """
    h, w = dims
    y = grid_coords(h, pitch_m)[:, None]
    x = grid_coords(w, pitch_m)[None, :]
    r = np.sqrt(x * x + y * y + src.distance_m**2)
    return np.exp(1j * (2.0 * np.pi / src.wavelength_m) * r)


def blas_transfer(plan):
    """Band-limited angular spectrum transfer function on the FFT grid.

    ``H(u, v) = exp(j * 2*pi/lambda * d2 * sqrt(1 - (lambda*u)^2 - (lambda*v)^2))``
    inside the band limits ``|u| <= sqrt((d2/S_x)^2 + 1) / lambda`` (and the
    same with ``S_y`` for ``v``), zero outside; evanescent components
    (``(lambda*u)^2 + (lambda*v)^2 > 1``) are zeroed as well, so the modulus
    is exactly 0 or 1 at every bin. Negative distances give the conjugate
    (backward) transfer on the pass band.
    """
    lam = plan.wavelength_m
    d2 = plan.distance_m
    s_y, s_x = plan.physical_extent
    u = np.fft.fftfreq(plan.grid_w, d=plan.pitch_m)[None, :]
    v = np.fft.fftfreq(plan.grid_h, d=plan.pitch_m)[:, None]
    arg = 1.0 - (lam * u) ** 2 - (lam * v) ** 2
    propagating = arg > 0
    u_limit = np.sqrt((d2 / s_x) ** 2 + 1.0) / lam
    v_limit = np.sqrt((d2 / s_y) ** 2 + 1.0) / lam
    band = (np.abs(u) <= u_limit) & (np.abs(v) <= v_limit)
    h = np.zeros((plan.grid_h, plan.grid_w), dtype=np.complex128)
    keep = propagating & band
    h[keep] = np.exp(1j * (2.0 * np.pi / lam) * d2 * np.sqrt(arg[keep]))
    return h


def propagate(field, plan, transfer=None):
    """Angular-spectrum free-space propagation of a complex field.

    ``U2 = ifft2(fft2(U1) * H)``. Band limiting only removes energy, so
    ``sum |U2|^2 <= sum |U1|^2``. A precomputed ``transfer`` grid may be
    passed to amortize its construction over many fields.
    """
    field = np.asarray(field, dtype=np.complex128)
    if field.shape != (plan.grid_h, plan.grid_w):
        raise DimensionMismatch(
            f"field {field.shape} does not match plan ({plan.grid_h}, {plan.grid_w})"
        )
    if transfer is None:
        transfer = blas_transfer(plan)
    return fourier.ifft2(fourier.fft2(field) * transfer)


def intensity_psf(masks, pitch_m, d1_m, d2_m, wavelengths=RGB_WAVELENGTHS):
    """Incoherent intensity PSF of a masked aperture, one channel per wavelength.

    Parameters
    ----------
    masks : ndarray or sequence of ndarray
        Amplitude mask(s) on the field grid. A single ``(H, W)`` array is
        reused for every wavelength; a sequence supplies one mask per
        wavelength (e.g. per-color SLM sub-pixels). Masks already encode the
        aperture crop.
    pitch_m : float
        Field sampling pitch [m].
    d1_m, d2_m : float
        Scene-to-mask and mask-to-sensor distances [m].
    wavelengths : sequence of float
        Simulation wavelengths [m]; defaults to the R, G, B triple.

    Returns
    -------
    ndarray
        ``(H, W, C)`` nonnegative PSF with each channel normalized to unit
        sum.

    Raises
    ------
    DegeneratePsf
        If a channel carries no energy (e.g. a fully opaque mask).
    """
    if isinstance(masks, np.ndarray) and masks.ndim == 2:
        masks = [masks] * len(wavelengths)
    if len(masks) != len(wavelengths):
        raise DimensionMismatch("need one mask per wavelength (or a single shared one)")
    h, w = masks[0].shape
    out = np.empty((h, w, len(wavelengths)), dtype=np.float64)
    for c, (mask, lam) in enumerate(zip(masks, wavelengths)):
        if mask.shape != (h, w):
            raise DimensionMismatch("all masks must share one grid")
        plan = PropagationPlan(h, w, pitch_m, d2_m, lam)
        src = SourceSpec(d1_m, lam)
        u1 = spherical_source((h, w), pitch_m, src) * mask
        u2 = propagate(u1, plan)
        out[:, :, c] = u2.real**2 + u2.imag**2
    return normalize_psf(out)


def normalize_psf(psf):
    """Clamp negatives and normalize every channel to unit sum."""
    psf = np.maximum(np.asarray(psf, dtype=np.float64), 0.0)
    if psf.ndim == 2:
        psf = psf[:, :, None]
    sums = psf.sum(axis=(0, 1))
    if not np.all(np.isfinite(sums)) or np.any(sums <= 0):
        raise DegeneratePsf(f"channel sums {sums} cannot be normalized")
    return psf / sums
