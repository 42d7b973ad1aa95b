"""Command-line surface: dataset ingestion/simulation, PSF generation,
training, evaluation, reconstruction attacks, and rendering.

Every command takes ``--config PATH`` plus ``--set key=value`` overrides
(dotted keys, JSON-parsed values), ``--seed N``, and ``--out DIR``. Exit
codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import admm, datasets, fourier, optics, simulate, slm, tensorio, training
from .errors import (
    ConfigError,
    CountMismatch,
    DegeneratePsf,
    DegenerateSignal,
    FormatError,
    LenscoderError,
)
from .utils import rng_from_seed

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def load_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set wants key=value, got {item!r}")
        key, _, value = item.partition("=")
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # bare strings stay strings
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


# keys consumed by commands themselves, not by ExperimentConfig
_CLI_KEYS = {
    "synthetic_data", "checkpoint", "embeddings", "labels", "measurement",
    "psf", "dims_list", "n_digits", "iters", "tau", "rho", "table",
}


def experiment_config(raw):
    filtered = {
        k: v for k, v in raw.items() if k not in _CLI_KEYS and not k.startswith("_")
    }
    cfg = training.ExperimentConfig.from_dict(filtered)
    cfg.validate()
    return cfg


def ensure_dataset(cfg, raw, out_dir):
    """Resolve the dataset directory, synthesizing IDX files if configured."""
    synth = raw.get("synthetic_data")
    if cfg.data_dir is None and synth is None:
        raise ConfigError("config needs data_dir or synthetic_data")
    if synth is not None:
        target = Path(cfg.data_dir or (out_dir / "dataset"))
        if not (target / datasets.TRAIN_IMAGES).exists():
            datasets.write_synthetic_idx(
                target,
                int(synth.get("train_count", cfg.train_count)),
                int(synth.get("test_count", cfg.test_count)),
                int(synth.get("seed", cfg.seed)),
            )
        cfg.data_dir = str(target)
    return cfg


def minmax(img):
    lo, hi = float(np.min(img)), float(np.max(img))
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def contact_sheet(grids, cols=5):
    """Tile a stack of equally sized grids into one image, min-max per tile."""
    n, h, w = grids.shape[0], grids.shape[1], grids.shape[2]
    rows = (n + cols - 1) // cols
    sheet = np.zeros((rows * h, cols * w))
    for i in range(n):
        r, c = divmod(i, cols)
        sheet[r * h : (r + 1) * h, c * w : (c + 1) * w] = minmax(grids[i])
    return sheet


def _encoder_psf_for_cli(cfg, raw):
    if cfg.encoder == "learned-slm":
        cp = raw.get("checkpoint")
        if not cp:
            raise ConfigError("gen-psf for learned-slm needs a checkpoint path")
        _, _, _, theta = training.load_checkpoint(cp)
        if theta is None:
            raise ConfigError(f"checkpoint {cp} has no SLM weights")
        cache = training.OpticsCache.build(cfg)
        state = slm.SlmState(cache.geometry, theta)
        masks = training.slm_masks(
            state, tuple(cfg.sim.psf_dims), cfg.sim.sim_pitch_m, cache.footprints
        )
        return optics.intensity_psf(
            masks, cfg.sim.sim_pitch_m, cfg.sim.d1_m, cfg.sim.d2_m
        )
    return training.fixed_encoder_psf(cfg)


def cmd_gen_psf(args):
    raw = load_config(args)
    cfg = experiment_config(raw)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    psf = _encoder_psf_for_cli(cfg, raw)
    base = out_dir / f"psf_{cfg.encoder}"
    tensorio.write_tensor(base.with_suffix(".lct"), psf, pitch_m=cfg.sim.sim_pitch_m)
    tensorio.write_pfm(base.with_suffix(".pfm"), minmax(psf))
    print(f"wrote {base}.lct and {base}.pfm " f"({psf.shape[0]}x{psf.shape[1]}x{psf.shape[2]})")
    return 0


def cmd_simulate_dataset(args):
    raw = load_config(args)
    cfg = experiment_config(raw)
    out_dir = Path(args.out or "sim_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = ensure_dataset(cfg, raw, out_dir)
    tr_img, tr_lab, te_img, te_lab = training.load_dataset(cfg)
    train_scenes = training.prepare_scenes(tr_img, tr_lab, cfg.transform, cfg.sim, cfg.seed + 1)
    test_scenes = training.prepare_scenes(te_img, te_lab, cfg.transform, cfg.sim, cfg.seed + 2)
    tr_emb, te_emb, stats = training.precompute_fixed_dataset(cfg, train_scenes, test_scenes)
    h, w = cfg.embedding_dims
    for tag, emb, labels in (
        ("train", tr_emb, tr_lab),
        ("test", te_emb, te_lab),
    ):
        tensorio.write_tensor(out_dir / f"{tag}_embeddings.lct", emb.reshape(-1, h, w))
        tensorio.write_tensor(out_dir / f"{tag}_labels.lct", labels.astype(np.float64))
    with open(out_dir / "simulation.json", "w") as f:
        json.dump(
            {"config": cfg.to_dict(), "normalization": {"mean": stats[0], "std": stats[1]}},
            f, indent=2,
        )
    print(f"wrote {len(tr_emb)} train / {len(te_emb)} test embeddings to {out_dir}")
    return 0


def cmd_train(args):
    raw = load_config(args)
    cfg = experiment_config(raw)
    out_dir = Path(args.out or "train_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = ensure_dataset(cfg, raw, out_dir)
    report, _ = training.train(cfg, out_dir=out_dir)
    print(f"best test accuracy: {report.best_accuracy:.4f}")
    print(f"report: {out_dir / 'report.json'}")
    return 0


def cmd_evaluate(args):
    raw = load_config(args)
    cp = raw.get("checkpoint")
    emb_path = raw.get("embeddings")
    lab_path = raw.get("labels")
    if not (cp and emb_path and lab_path):
        raise ConfigError("evaluate needs checkpoint, embeddings, labels paths")
    manifest, params, running, _ = training.load_checkpoint(cp)
    emb, _ = tensorio.read_tensor(emb_path)
    labels = tensorio.read_tensor(lab_path)[0].astype(np.int64)
    cfg = training.ExperimentConfig(
        encoder=manifest["encoder"], classifier=manifest["classifier"],
        embedding_dims=tuple(manifest["embedding_dims"]),
    )
    acc = training.evaluate_embeddings(params, running, cfg, emb, labels)
    print(f"accuracy: {acc:.4f} ({len(labels)} examples)")
    return 0


def cmd_reconstruct(args):
    raw = load_config(args)
    meas_path, psf_path = raw.get("measurement"), raw.get("psf")
    if not (meas_path and psf_path):
        raise ConfigError("reconstruct needs measurement and psf paths")
    y, _ = tensorio.read_tensor(meas_path)
    psf = slm.load_measured_psf(psf_path)
    if y.ndim == 3:
        y = y.mean(axis=2)
    psf_gray = simulate.grayscale_psf(psf)[:, :, 0]
    if psf_gray.shape != y.shape:
        psf_gray = admm.downsample_psf(psf_gray, y.shape)[:, :, 0]
    problem = admm.InverseProblem(
        y, psf_gray,
        tau=float(raw.get("tau", 1e-4)),
        iters=int(raw.get("iters", 100)),
        rho=tuple(raw.get("rho", (1.0, 1.0, 1.0))),
    )
    result = admm.admm_tv(problem)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out_dir / "reconstruction.lct", result.estimate)
    tensorio.write_ppm(out_dir / "reconstruction.ppm", minmax(result.estimate))
    res = result.primal_residuals[-1]
    print(f"final primal residuals: data={res[0]:.3e} nonneg={res[1]:.3e} tv={res[2]:.3e}")
    print(f"wrote {out_dir / 'reconstruction.ppm'}")
    return 0


def cmd_privacy_sweep(args):
    raw = load_config(args)
    cfg = experiment_config(raw)
    out_dir = Path(args.out or "sweep_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = ensure_dataset(cfg, raw, out_dir)
    dims_list = [tuple(d) for d in raw.get("dims_list", [[192, 253], [24, 32], [6, 8]])]
    n_digits = int(raw.get("n_digits", 25))
    iters = int(raw.get("iters", 100))
    tr_img, tr_lab, _, _ = training.load_dataset(cfg)
    scenes_set = training.prepare_scenes(
        tr_img[:n_digits], tr_lab[:n_digits], cfg.transform, cfg.sim, cfg.seed
    )
    scenes = scenes_set.materialize(range(n_digits))
    psf = training.fixed_encoder_psf(cfg)
    rng = rng_from_seed(cfg.seed + 5)
    sweep = admm.privacy_sweep(
        scenes, psf, dims_list, iters=iters,
        tau=float(raw.get("tau", 1e-4)),
        rho=tuple(raw.get("rho", (1.0, 0.2, 0.2))),
        snr_db=cfg.sim.snr_db, rng=rng,
    )
    with open(out_dir / "psnr.csv", "w") as f:
        f.write("height,width," + ",".join(f"digit_{i}" for i in range(n_digits))
                + ",mean\n")
        for (h, w), row in zip(sweep["dims"], sweep["psnr"]):
            f.write(f"{h},{w}," + ",".join(f"{v:.4f}" for v in row)
                    + f",{row.mean():.4f}\n")
    for dims, recs in sweep["reconstructions"].items():
        sheet = contact_sheet(recs)
        tensorio.write_ppm(out_dir / f"recon_{dims[0]}x{dims[1]}.ppm", sheet)
    tensorio.write_ppm(out_dir / "measurements.ppm", contact_sheet(sweep["measurements"]))
    means = sweep["psnr"].mean(axis=1)
    for dims, mean in zip(sweep["dims"], means):
        print(f"{dims[0]:>4} x {dims[1]:<4} mean PSNR {mean:7.3f} dB")
    print(f"wrote {out_dir / 'psnr.csv'} and contact sheets")
    return 0


def cmd_render(args):
    raw = load_config(args)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote = []
    for path in args.tensors:
        data, _ = tensorio.read_tensor(path)
        stem = Path(path).stem
        if data.ndim == 2:
            tensorio.write_ppm(out_dir / f"{stem}.ppm", minmax(data))
        elif data.ndim == 3 and data.shape[2] == 3:
            tensorio.write_ppm(out_dir / f"{stem}.ppm", minmax(data))
        elif data.ndim == 3:
            tensorio.write_ppm(out_dir / f"{stem}.ppm", contact_sheet(data))
        else:
            raise ConfigError(f"cannot render rank-{data.ndim} tensor {path}")
        wrote.append(f"{stem}.ppm")
        tensorio.write_pfm(
            out_dir / f"{stem}.pfm",
            minmax(data if data.ndim == 2 else data.reshape(-1, data.shape[-1])),
        )
    if raw.get("table"):
        rows = raw["table"]
        cols = sorted({k for r in rows for k in r})
        with open(out_dir / "table.csv", "w") as f:
            f.write(",".join(cols) + "\n")
            for r in rows:
                f.write(",".join(str(r.get(c, "")) for c in cols) + "\n")
        wrote.append("table.csv")
    print("wrote " + ", ".join(wrote))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lenscoder",
        description="programmable lensless camera simulation and training toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-psf": cmd_gen_psf,
        "simulate-dataset": cmd_simulate_dataset,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "reconstruct": cmd_reconstruct,
        "privacy-sweep": cmd_privacy_sweep,
        "render": cmd_render,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted config override (JSON-parsed value)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output directory")
        if name == "render":
            p.add_argument("tensors", nargs="*", help="tensor files to render")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, CountMismatch, FileNotFoundError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DegeneratePsf, DegenerateSignal, np.linalg.LinAlgError, LenscoderError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
