"""Jointly learning the modulator pattern and the classifier.

The sensor embedding here is only 3 x 4 = 12 values. A fixed random
modulator tops out well below what the jointly optimized one reaches: the
optimizer reshapes the PSF (re-simulated every batch from the current
weights) so that those 12 values carry class information. The learned PSF
is rendered at the end for comparison against the random initialization.
"""

import time
from pathlib import Path

import numpy as np

from lenscoder import datasets, optics, simulate, slm, training, tensorio

OUT = Path(__file__).parent / "out" / "06_learned_slm"
DATA = Path(__file__).parent / "out" / "dataset_4k"
OUT.mkdir(parents=True, exist_ok=True)

if not (DATA / datasets.TRAIN_IMAGES).exists():
    print("generating a 4000/800 synthetic digit dataset...")
    datasets.write_synthetic_idx(DATA, 4000, 800, seed=42)

dims = (3, 4)
sim = simulate.SimConfig(downsample=32, embedding_dims=dims, snr_db=40.0)
common = dict(
    embedding_dims=dims, epochs=15, batch_size=200, seed=0,
    sim=sim, data_dir=str(DATA), train_count=4000, test_count=800,
)

cfg_fixed = training.ExperimentConfig(
    encoder="fixed-slm-simulated", classifier="logistic", lr=3e-2, **common
)
t0 = time.time()
report_fixed, _ = training.train(cfg_fixed, out_dir=OUT / "fixed")
print(f"fixed random SLM @ 3x4: {report_fixed.best_accuracy:.3f} "
      f"({time.time() - t0:.0f}s)")

cfg_learned = training.ExperimentConfig(
    encoder="learned-slm", classifier="logistic", lr=3e-2, lr_encoder=3e-2,
    precision="f32", **common
)
t0 = time.time()
report_learned, artifacts = training.train(cfg_learned, out_dir=OUT / "learned")
print(f"learned SLM      @ 3x4: {report_learned.best_accuracy:.3f} "
      f"({time.time() - t0:.0f}s)")
print(f"gap: {(report_learned.best_accuracy - report_fixed.best_accuracy) * 100:.1f} points")

# render initial vs learned PSFs
cache = training.OpticsCache.build(cfg_learned)
theta0 = slm.random_slm_state(cache.geometry,
                              training.rng_from_seed(cfg_learned.seed)).raw_weights
for tag, theta in (("initial", theta0), ("learned", artifacts["theta"])):
    state = slm.SlmState(cache.geometry, theta)
    masks = training.slm_masks(state, tuple(sim.psf_dims), sim.sim_pitch_m,
                               cache.footprints)
    psf = optics.intensity_psf(masks, sim.sim_pitch_m, sim.d1_m, sim.d2_m)
    tensorio.write_ppm(OUT / f"psf_{tag}.ppm", psf / psf.max())
print(f"PSF previews and learning curves in {OUT}")
