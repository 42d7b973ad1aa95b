"""Synthetic stand-ins for externally measured PSFs.

Measured PSFs (lens, diffuser, physical SLM) are ingested from files; when
no measurement is at hand these generators produce plausible substitutes so
the ingestion path and the encoder comparisons stay exercisable: a focused
lens is a compact spot, a diffuser is a pseudo-random caustic pattern with
broad support.
"""

import numpy as np
import scipy.ndimage as ndi

from . import optics


def synthetic_lens_psf(dims, spot_sigma_px=1.0, channels=3):
    """Diffraction-limited-style focused spot at the grid center."""
    h, w = dims
    y = np.arange(h) - h // 2
    x = np.arange(w) - w // 2
    r2 = y[:, None] ** 2 + x[None, :] ** 2
    spot = np.exp(-r2 / (2.0 * spot_sigma_px**2))
    return optics.normalize_psf(np.repeat(spot[:, :, None], channels, axis=2))


def synthetic_caustic_psf(dims, rng, smooth_px=2.5, occupancy=0.4, channels=3):
    """Caustic-like pattern: smoothed random field, thresholded, broad support."""
    h, w = dims
    psf = np.empty((h, w, channels))
    base = ndi.gaussian_filter(rng.random((h, w)), smooth_px)
    for c in range(channels):
        jitter = ndi.gaussian_filter(rng.random((h, w)), smooth_px)
        field = 0.8 * base + 0.2 * jitter
        cut = np.quantile(field, 1.0 - occupancy)
        psf[:, :, c] = np.clip(field - cut, 0.0, None)
    # confine to the central 80% like the cropped-aperture cameras
    mask = np.zeros((h, w))
    mask[int(0.1 * h) : int(0.9 * h), int(0.1 * w) : int(0.9 * w)] = 1.0
    return optics.normalize_psf(psf * mask[:, :, None])
