"""From digits to sensor embeddings.

Generates a few synthetic handwritten digits, rescales them to the object
plane (12 cm object, 40 cm away), convolves with a fixed-SLM PSF, and
downsamples to the embedding resolutions studied in the classification
experiments. The contact sheets show how little of the scene survives at
3 x 4 - and how multiplexed even the large embeddings look.
"""

from pathlib import Path

import numpy as np

from lenscoder import datasets, fourier, simulate, training, tensorio
from lenscoder.cli import contact_sheet
from lenscoder.utils import spawn_rngs

OUT = Path(__file__).parent / "out" / "03_measurements"
OUT.mkdir(parents=True, exist_ok=True)

images, labels = datasets.generate_synthetic(25, seed=4)
sim = simulate.SimConfig(downsample=16, embedding_dims=(24, 32), snr_db=40.0)
cfg = training.ExperimentConfig(encoder="fixed-slm-simulated", sim=sim, seed=0)
psf = training.fixed_encoder_psf(cfg)

print(f"scene patch seen by the sensor: "
      f"{simulate.scene_extent(sim)[0]:.3f} m tall (object: {sim.object_height_m} m)")

scenes = training.prepare_scenes(images, labels, cfg.transform, sim, seed=9)
stack = scenes.materialize(range(25))
tensorio.write_ppm(OUT / "scenes.ppm", contact_sheet(stack))

psf_gray = simulate.grayscale_psf(psf)[:, :, 0]
sensor_imgs = fourier.convolve_batch(stack, psf_gray)
tensorio.write_ppm(OUT / "sensor_full.ppm", contact_sheet(sensor_imgs))

rngs = spawn_rngs(123, 25)
for dims in [(24, 32), (12, 16), (6, 8), (3, 4)]:
    emb = fourier.bilinear_resize_batch(sensor_imgs, *dims)
    for i in range(25):
        emb[i] += simulate.noise_for(emb[i], sim.snr_db, rngs[i])
    tensorio.write_ppm(OUT / f"embeddings_{dims[0]}x{dims[1]}.ppm",
                       contact_sheet(emb))
    print(f"{dims[0]:>2} x {dims[1]:<2} embeddings: "
          f"value range [{emb.min():.4f}, {emb.max():.4f}]")
print(f"outputs in {OUT}")
