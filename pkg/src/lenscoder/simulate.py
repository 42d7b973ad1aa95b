"""Scene-to-sensor simulation: object-height rescaling, PSF convolution,
sensor downsampling, and SNR-calibrated noise.

The optical system is treated as linear shift-invariant between the scene
plane and the sensor, so a measurement is the convolution of the rescaled
scene with the camera PSF. Geometry: a scene at distance ``d1`` imaged
through a mask at distance ``d2`` appears demagnified by ``|M| = d2 / d1``,
so the sensor's field of view at the scene plane spans
``extent_sensor / |M|``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import fourier
from .errors import DegenerateSignal, DimensionMismatch, OutOfField
from .slm import SensorGeometry


@dataclass(frozen=True)
class SimConfig:
    """Scene/encoder/sensor geometry and noise target for one camera setup.

    ``downsample`` is the reduction divisor from full sensor resolution to
    the simulation (PSF) grid; ``embedding_dims`` is the final measurement
    resolution after bilinear downsampling.
    """

    d1_m: float = 0.40
    d2_m: float = 0.004
    object_height_m: float = 0.12
    snr_db: float = 40.0
    downsample: int = 8
    embedding_dims: tuple = (24, 32)
    sensor: SensorGeometry = field(default_factory=SensorGeometry)
    grayscale: bool = True

    def __post_init__(self):
        if not self.d1_m > self.d2_m > 0:
            raise ValueError("need d1 > d2 > 0")
        if self.downsample < 1:
            raise ValueError("downsample must be >= 1")

    @property
    def psf_dims(self):
        return self.sensor.sim_grid(self.downsample)[0]

    @property
    def sim_pitch_m(self):
        return self.sensor.sim_grid(self.downsample)[1]

    @property
    def magnification(self):
        return self.d2_m / self.d1_m

    def with_height(self, h):
        return replace(self, object_height_m=h)


def scene_extent(cfg):
    """Physical size (height, width) of the scene patch seen by the sensor [m]."""
    m = cfg.magnification
    ext = cfg.sensor.extent
    return (ext[0] / m, ext[1] / m)


def rescale_to_psf(img, cfg):
    """Resize a scene image to the PSF grid at the configured object height.

    The object spans ``round(h_obj * H_psf / h_scene)`` pixels; the image is
    bilinearly resized to that height (aspect ratio preserved) and zero-padded
    centered to the PSF dimensions.

    Raises
    ------
    OutOfField
        If the object does not fit inside the scene patch.
    """
    img = np.atleast_3d(np.asarray(img, dtype=np.float64))
    h, w = img.shape[:2]
    h_scene, _ = scene_extent(cfg)
    if cfg.object_height_m > h_scene:
        raise OutOfField(
            f"object height {cfg.object_height_m} m exceeds scene height {h_scene:.4f} m"
        )
    ph, pw = cfg.psf_dims
    h_pixel = int(round(cfg.object_height_m * ph / h_scene))
    h_pixel = max(h_pixel, 1)
    scale = h_pixel / h
    w_pixel = max(int(round(scale * w)), 1)
    if h_pixel > ph or w_pixel > pw:
        raise OutOfField(
            f"rescaled object ({h_pixel} x {w_pixel}) exceeds PSF grid ({ph} x {pw})"
        )
    small = fourier.bilinear_resize(img, h_pixel, w_pixel)
    out = np.zeros((ph, pw, img.shape[2]), dtype=np.float64)
    top = (ph - h_pixel) // 2
    left = (pw - w_pixel) // 2
    out[top : top + h_pixel, left : left + w_pixel] = small
    return out


def noise_for(img, snr_db, rng):
    """Zero-mean Poisson noise scaled so that adding it to ``img`` realizes
    the target SNR.

    The clean image is scaled to a mean rate of 10 counts, an elementwise
    Poisson draw provides the noise shape, and the scale
    ``k = sqrt(var_S / (var_N * 10**(T/10)))`` sets the power ratio.
    """
    img = np.asarray(img, dtype=np.float64)
    var_s = img.var()
    if var_s <= 0:
        raise DegenerateSignal("constant image has no signal variance")
    if np.isinf(snr_db):
        return np.zeros_like(img)
    mean = img.mean()
    rate = np.clip(img * (10.0 / mean), 0.0, None) if mean > 0 else np.full_like(img, 10.0)
    n = rng.poisson(rate).astype(np.float64)
    var_n = n.var()
    if var_n <= 0:  # pathological draw; retry once with a flat rate
        n = rng.poisson(10.0, size=img.shape).astype(np.float64)
        var_n = n.var()
    k = np.sqrt(var_s / (var_n * 10.0 ** (snr_db / 10.0)))
    return k * (n - n.mean())


def add_noise(img, snr_db, rng):
    """Add SNR-calibrated Poisson noise (see ``noise_for``)."""
    return np.asarray(img, dtype=np.float64) + noise_for(img, snr_db, rng)


def grayscale_psf(psf):
    """Channel-averaged PSF for grayscale scenes (stays unit-sum)."""
    return psf.mean(axis=2, keepdims=True)


def simulate_example(img, psf, cfg, rng=None):
    """Simulate one sensor measurement: rescale, convolve, downsample, noise.

    Parameters
    ----------
    img : ndarray
        Scene image, ``(H, W)`` grayscale or ``(H, W, 3)``.
    psf : ndarray
        Intensity PSF ``(H_psf, W_psf, C)`` at the simulation grid.
    cfg : SimConfig
    rng : numpy Generator, optional
        Omit for a noiseless measurement.

    Returns
    -------
    ndarray
        Embedding of shape ``(*cfg.embedding_dims, C_out)``.
    """
    if psf.shape[:2] != tuple(cfg.psf_dims):
        raise DimensionMismatch(f"psf {psf.shape[:2]} != configured {cfg.psf_dims}")
    scene = rescale_to_psf(img, cfg)
    if cfg.grayscale:
        psf_used = grayscale_psf(psf) if psf.shape[2] > 1 else psf
        if scene.shape[2] == 3:
            scene = scene.mean(axis=2, keepdims=True)
    else:
        psf_used = psf
        if scene.shape[2] == 1 and psf.shape[2] == 3:
            scene = np.repeat(scene, 3, axis=2)
    if scene.shape[2] != psf_used.shape[2]:
        raise DimensionMismatch(
            f"scene channels {scene.shape[2]} != psf channels {psf_used.shape[2]}"
        )
    sensor_img = fourier.linear_convolve(scene, psf_used)
    emb = fourier.bilinear_resize(sensor_img, *cfg.embedding_dims)
    if rng is not None and np.isfinite(cfg.snr_db):
        emb = add_noise(emb, cfg.snr_db, rng)
    return emb
