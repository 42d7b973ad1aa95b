"""Classifying raw embeddings of a fixed lensless encoder.

Embeddings of a fixed camera can be precomputed once, normalized by the
training-set statistics, and fed to a logistic-regression head. A few
minutes of CPU reaches accuracies in the spirit of the full-scale
experiments, scaled down to a lighter grid and dataset.
"""

import time
from pathlib import Path

from lenscoder import datasets, simulate, training

OUT = Path(__file__).parent / "out" / "05_fixed_training"
DATA = Path(__file__).parent / "out" / "dataset_4k"
OUT.mkdir(parents=True, exist_ok=True)

if not (DATA / datasets.TRAIN_IMAGES).exists():
    print("generating a 4000/800 synthetic digit dataset...")
    datasets.write_synthetic_idx(DATA, 4000, 800, seed=42)

for dims, lr in [((24, 32), 5e-3), ((6, 8), 1e-2)]:
    cfg = training.ExperimentConfig(
        encoder="fixed-slm-simulated",
        classifier="logistic",
        embedding_dims=dims,
        epochs=15,
        batch_size=200,
        seed=0,
        lr=lr,
        sim=simulate.SimConfig(downsample=32, embedding_dims=dims, snr_db=40.0),
        data_dir=str(DATA),
        train_count=4000,
        test_count=800,
    )
    t0 = time.time()
    report, _ = training.train(cfg, out_dir=OUT / f"{dims[0]}x{dims[1]}")
    print(f"fixed SLM, {dims[0]}x{dims[1]} embedding: "
          f"best accuracy {report.best_accuracy:.3f} "
          f"({time.time() - t0:.0f}s, curves in {OUT}/{dims[0]}x{dims[1]})")
