"""Free-space propagation basics.

Walks through the three building blocks of the PSF simulator: a spherical
point-source illumination, the band-limited angular spectrum transfer
function, and the propagation of an aperture field, cross-checked against a
brute-force Rayleigh-Sommerfeld summation.
"""

from pathlib import Path

import numpy as np

from lenscoder import optics, tensorio

OUT = Path(__file__).parent / "out" / "01_wave_propagation"
OUT.mkdir(parents=True, exist_ok=True)

lam = 550e-9
n = 64
pitch = 3 * lam

# --- spherical wavefront from a point source 2 mm away -----------------
src = optics.spherical_source((n, n), pitch, optics.SourceSpec(2e-3, lam))
print(f"spherical source: |U| in [{np.abs(src).min():.6f}, {np.abs(src).max():.6f}]")
print(f"on-axis phase = {np.angle(src[n // 2, n // 2]):+.4f} rad")
tensorio.write_ppm(OUT / "source_phase.ppm", (np.angle(src) + np.pi) / (2 * np.pi))

# --- transfer function: pass band shrinks with wavelength --------------
for nm in (460, 550, 640):
    plan = optics.PropagationPlan(n, n, 0.45e-6, 0.004, nm * 1e-9)
    h = optics.blas_transfer(plan)
    print(f"lambda={nm} nm: {np.count_nonzero(h):5d} propagating bins")

# --- aperture diffraction vs direct integral ---------------------------
aperture = np.zeros((n, n), dtype=complex)
aperture[n // 2 - 4 : n // 2 + 4, n // 2 - 4 : n // 2 + 4] = 1.0
z = 120e-6
plan = optics.PropagationPlan(n, n, pitch, z, lam)
u2 = optics.propagate(aperture, plan)
intensity = np.abs(u2) ** 2
print(f"diffracted peak intensity {intensity.max():.4f} at "
      f"{np.unravel_index(intensity.argmax(), intensity.shape)}")
tensorio.write_pfm(OUT / "aperture_diffraction.pfm", intensity / intensity.max())
tensorio.write_ppm(OUT / "aperture_diffraction.ppm", intensity / intensity.max())

# energy can only be removed by the band limit, never added
print(f"energy ratio out/in = "
      f"{np.sum(np.abs(u2) ** 2) / np.sum(np.abs(aperture) ** 2):.6f}")

# round trip: forward then backward propagation restores the pass band
limited = optics.propagate(aperture, optics.PropagationPlan(n, n, pitch, 0.0, lam))
back = optics.propagate(
    optics.propagate(limited, plan),
    optics.PropagationPlan(n, n, pitch, -z, lam),
)
print(f"round-trip max error: {np.abs(back - limited).max():.2e}")
print(f"outputs in {OUT}")
