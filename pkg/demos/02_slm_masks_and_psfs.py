"""Amplitude masks and their diffraction PSFs.

Builds the three simulated encoders: a random pattern on the color-striped
LCD lattice, the MLS coded aperture, and (for reference) the stand-in
"measured" baselines, then simulates each intensity PSF at the sensor.
"""

from pathlib import Path

import numpy as np

from lenscoder import baselines, optics, simulate, slm, tensorio, training

OUT = Path(__file__).parent / "out" / "02_slm_masks"
OUT.mkdir(parents=True, exist_ok=True)

sensor = slm.SensorGeometry()
print(f"sensor: {sensor.full_res} px, {sensor.extent[0] * 1e3:.2f} x "
      f"{sensor.extent[1] * 1e3:.2f} mm")
print(f"sub-pixels over 80% of the sensor: {slm.active_subpixels(sensor, 0.8)}")

sim = simulate.SimConfig(downsample=16, embedding_dims=(24, 32), snr_db=40.0)
dims, pitch = tuple(sim.psf_dims), sim.sim_pitch_m
print(f"simulation grid {dims} at {pitch * 1e6:.1f} um")

# --- random LCD pattern -------------------------------------------------
geometry = slm.slm_for_sensor(sensor, 0.8)
state = slm.random_slm_state(geometry, np.random.default_rng(0))
masks = training.slm_masks(state, dims, pitch)
for c, name in enumerate("RGB"):
    tensorio.write_ppm(OUT / f"mask_{name}.ppm", masks[c] / max(masks[c].max(), 1e-9))
psf_slm = optics.intensity_psf(masks, pitch, sim.d1_m, sim.d2_m)
tensorio.write_tensor(OUT / "psf_fixed_slm.lct", psf_slm, pitch_m=pitch)
tensorio.write_ppm(OUT / "psf_fixed_slm.ppm", psf_slm / psf_slm.max())
print(f"fixed-SLM PSF channels sum to {psf_slm.sum(axis=(0, 1))}")

# --- MLS coded aperture -------------------------------------------------
ca = slm.coded_aperture_mask()
print(f"coded aperture: {ca.shape}, {int(ca.sum())} open cells, "
      f"rank {np.linalg.matrix_rank(ca)}")
field = slm.rasterize_coded_aperture(ca, dims, pitch)
psf_ca = optics.intensity_psf(field, pitch, sim.d1_m, 0.5e-3)
tensorio.write_ppm(OUT / "psf_coded_aperture.ppm", psf_ca / psf_ca.max())

# --- stand-ins for measured PSFs ----------------------------------------
psf_lens = baselines.synthetic_lens_psf(dims)
psf_diff = baselines.synthetic_caustic_psf(dims, np.random.default_rng(1))
tensorio.write_ppm(OUT / "psf_lens.ppm", psf_lens / psf_lens.max())
tensorio.write_ppm(OUT / "psf_diffuser.ppm", psf_diff / psf_diff.max())

# measured-PSF ingestion path: write, reload, renormalize
tensorio.write_tensor(OUT / "diffuser_raw.lct", psf_diff * 3.7)
reloaded = slm.load_measured_psf(OUT / "diffuser_raw.lct")
print(f"ingested diffuser PSF: channel sums {reloaded.sum(axis=(0, 1))}")
print(f"outputs in {OUT}")
