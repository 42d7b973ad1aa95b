"""Dense 2-D FFT, zero-padded linear convolution, and bilinear resampling.

Conventions used throughout the toolkit:

* Grids are row-major numpy arrays: ``(H, W)`` for complex wave fields,
  ``(H, W)`` or ``(H, W, C)`` channels-last for real intensity data.
* The geometric center of an ``(H, W)`` grid is the pixel ``(H // 2, W // 2)``
  (the FFT origin convention), so a "centered" convolution kernel has its
  peak there.
* Spatial frequencies live on the ``numpy.fft.fftfreq`` grid, i.e. spacing
  ``1 / (N * pitch)``.
"""

import numpy as np
import scipy.fft

from .errors import DimensionMismatch
from .utils import worker_count


def fft2(g):
    """Unnormalized forward 2-D FFT over the last two axes of a complex grid."""
    return scipy.fft.fft2(g, workers=worker_count())


def ifft2(g):
    """Inverse 2-D FFT (1/HW normalization) over the last two axes."""
    return scipy.fft.ifft2(g, workers=worker_count())


def conv_fft_shape(h, w):
    """FFT size for linear convolution: >= (2H, 2W), rounded up to fast lengths."""
    return (scipy.fft.next_fast_len(2 * h), scipy.fft.next_fast_len(2 * w))


def crop_center_full_conv(full, h, w):
    """Crop the H x W window of a 2H x 2W full linear convolution so that a
    kernel peaked at (H//2, W//2) acts as the identity."""
    r0, c0 = h // 2, w // 2
    return full[..., r0 : r0 + h, c0 : c0 + w]


def linear_convolve(img, kernel):
    """Linear (zero-padded) FFT convolution, cropped back to the input size.

    Both inputs are zero-padded to twice their size so the product of spectra
    is a linear (not circular) convolution; the centered ``H x W`` window is
    returned. With a unit impulse at ``(H//2, W//2)`` the operation is the
    identity. Multichannel ``(H, W, C)`` inputs are convolved channel by
    channel with the matching kernel channel.

    Parameters
    ----------
    img, kernel : ndarray
        Real arrays of identical shape, ``(H, W)`` or ``(H, W, C)``.
    """
    img = np.asarray(img)
    kernel = np.asarray(kernel)
    if img.shape != kernel.shape:
        raise DimensionMismatch(
            f"image {img.shape} and kernel {kernel.shape} must have equal shape"
        )
    if img.ndim == 3:
        out = np.empty_like(img, dtype=np.result_type(img, kernel, np.float64))
        for c in range(img.shape[2]):
            out[:, :, c] = linear_convolve(img[:, :, c], kernel[:, :, c])
        return out
    h, w = img.shape
    s = conv_fft_shape(h, w)
    fi = scipy.fft.rfft2(img, s=s, workers=worker_count())
    fk = scipy.fft.rfft2(kernel, s=s, workers=worker_count())
    full = scipy.fft.irfft2(fi * fk, s=s, workers=worker_count())
    return crop_center_full_conv(full, h, w)


def convolve_batch(imgs, kernel):
    """``linear_convolve`` of a stack ``(B, H, W)`` against one kernel ``(H, W)``."""
    b, h, w = imgs.shape
    s = conv_fft_shape(h, w)
    fi = scipy.fft.rfft2(imgs, s=s, workers=worker_count())
    fk = scipy.fft.rfft2(kernel, s=s, workers=worker_count())
    full = scipy.fft.irfft2(fi * fk[None], s=s, workers=worker_count())
    return crop_center_full_conv(full, h, w)


def resize_matrix(n_in, n_out, dtype=np.float64):
    """Row-stochastic bilinear interpolation matrix ``(n_out, n_in)``.

    Sample centers follow the align-corners-false convention: output pixel
    ``i`` reads the source coordinate ``(i + 0.5) * n_in / n_out - 0.5``,
    clamped to the valid range (edge replication).
    """
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    m[rows, lo] += 1.0 - frac
    m[rows, hi] += frac
    return m


def bilinear_resize(img, out_h, out_w):
    """Bilinear resize to ``(out_h, out_w)``.

    Accepts ``(H, W)`` or channels-last ``(H, W, C)``; constants map to the
    same constant because interpolation rows sum to one.
    """
    img = np.asarray(img, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    if img.ndim == 2:
        h, w = img.shape
        ry = resize_matrix(h, out_h)
        rx = resize_matrix(w, out_w)
        return ry @ img @ rx.T
    if img.ndim == 3:
        h, w, _ = img.shape
        ry = resize_matrix(h, out_h)
        rx = resize_matrix(w, out_w)
        return np.einsum("oh,pw,hwc->opc", ry, rx, img, optimize=True)
    raise DimensionMismatch(f"cannot resize array of ndim {img.ndim}")


def bilinear_resize_batch(imgs, out_h, out_w, dtype=np.float64):
    """``bilinear_resize`` applied to a stack ``(B, H, W)`` of planes."""
    imgs = np.asarray(imgs)
    _, h, w = imgs.shape
    ry = resize_matrix(h, out_h, dtype=dtype)
    rx = resize_matrix(w, out_w, dtype=dtype)
    return np.einsum("oh,pw,bhw->bop", ry, rx, imgs, optimize=True)
