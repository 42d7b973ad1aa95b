"""Scene transformations and their effect on lensless measurements.

Visualizes the four perturbations applied at the object plane (shift,
rescale, rotate, perspective) and the embeddings they produce. Shifts are
the hard case for lensless cameras: the whole multiplexed pattern slides
across the sensor crop, so a classifier trained on centered digits loses
its footing unless the encoder is trained for it.
"""

from pathlib import Path

import numpy as np

from lenscoder import datasets, fourier, simulate, training, transforms, tensorio
from lenscoder.cli import contact_sheet
from lenscoder.utils import spawn_rngs

OUT = Path(__file__).parent / "out" / "07_transforms"
OUT.mkdir(parents=True, exist_ok=True)

images, labels = datasets.generate_synthetic(5, seed=31)
sim = simulate.SimConfig(downsample=16, embedding_dims=(24, 32), snr_db=40.0)
cfg = training.ExperimentConfig(encoder="fixed-slm-simulated", sim=sim, seed=0)
psf_gray = simulate.grayscale_psf(training.fixed_encoder_psf(cfg))[:, :, 0]

for kind in ("none", "shift", "rescale", "rotate", "perspective"):
    spec = transforms.TransformSpec(kind=kind)
    scenes = training.prepare_scenes(images, labels, spec, sim, seed=77)
    stack = scenes.materialize(range(5))
    sensor = fourier.convolve_batch(stack, psf_gray)
    emb = fourier.bilinear_resize_batch(sensor, 24, 32)
    rngs = spawn_rngs(7, 5)
    for i in range(5):
        emb[i] += simulate.noise_for(emb[i], sim.snr_db, rngs[i])
    tensorio.write_ppm(OUT / f"scenes_{kind}.ppm", contact_sheet(stack, cols=5))
    tensorio.write_ppm(OUT / f"embeddings_{kind}.ppm", contact_sheet(emb, cols=5))
    occupancy = [np.flatnonzero(s.any(axis=1)).size for s in stack]
    print(f"{kind:>12}: digit heights (px) {occupancy}")
print(f"outputs in {OUT}")
