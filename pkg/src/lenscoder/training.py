"""End-to-end experiment orchestration: dataset simulation, fixed-encoder
precomputation, joint SLM/classifier training, and evaluation.

The joint trainer re-simulates the PSF from the current SLM weights at
every batch (the scene-independent pieces, spherical illumination, transfer
function, and rasterization footprints, are cached), pushes a batch of
pre-rescaled scenes through convolution and resizing, applies batch
normalization and rectification to the embedding, and backpropagates the
classifier loss all the way to the modulator weights. Fixed encoders skip
the optics gradient: their embeddings are simulated once and normalized by
the training-set statistics.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import classifiers, datasets, fourier, optics, simulate, slm, tensorio, transforms
from .errors import ConfigError
from .utils import rng_from_seed, spawn_rngs

ENCODER_KINDS = (
    "lens-psf-file",
    "coded-aperture",
    "diffuser-psf-file",
    "fixed-slm-measured-file",
    "fixed-slm-simulated",
    "learned-slm",
)
CLASSIFIER_KINDS = ("logistic", "fcnn800")


@dataclass
class ExperimentConfig:
    """Everything one run needs; serializes to/from JSON."""

    encoder: str = "fixed-slm-simulated"
    classifier: str = "logistic"
    embedding_dims: tuple = (24, 32)
    transform: transforms.TransformSpec = field(default_factory=transforms.TransformSpec)
    epochs: int = 50
    batch_size: int = 200
    seed: int = 0
    lr: float = 1e-3
    lr_encoder: float = 1e-2
    sim: simulate.SimConfig = field(default_factory=lambda: simulate.SimConfig(downsample=32))
    psf_path: str = None
    slm_coverage: float = 0.8
    data_dir: str = None
    train_count: int = 10_000
    test_count: int = 2_000
    precision: str = "f64"
    hidden_units: int = 800

    def validate(self):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.classifier not in CLASSIFIER_KINDS:
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if self.encoder.endswith("-file") and not self.psf_path:
            raise ConfigError(f"encoder {self.encoder} needs psf_path")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        if len(self.embedding_dims) != 2 or min(self.embedding_dims) < 1:
            raise ConfigError(f"bad embedding_dims {self.embedding_dims}")
        return self

    def to_dict(self):
        return {
            "encoder": self.encoder,
            "classifier": self.classifier,
            "embedding_dims": list(self.embedding_dims),
            "transform": self.transform.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "lr": self.lr,
            "lr_encoder": self.lr_encoder,
            "sim": {
                "d1_m": self.sim.d1_m,
                "d2_m": self.sim.d2_m,
                "object_height_m": self.sim.object_height_m,
                "snr_db": None if np.isinf(self.sim.snr_db) else self.sim.snr_db,
                "downsample": self.sim.downsample,
                "grayscale": self.sim.grayscale,
            },
            "psf_path": self.psf_path,
            "slm_coverage": self.slm_coverage,
            "data_dir": self.data_dir,
            "train_count": self.train_count,
            "test_count": self.test_count,
            "precision": self.precision,
            "hidden_units": self.hidden_units,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "transform" in d:
            d["transform"] = transforms.TransformSpec.from_dict(d["transform"])
        if "embedding_dims" in d:
            d["embedding_dims"] = tuple(d["embedding_dims"])
        if "sim" in d:
            sim = dict(d["sim"])
            if sim.get("snr_db") is None:
                sim["snr_db"] = np.inf
            emb = d.get("embedding_dims", (24, 32))
            d["sim"] = simulate.SimConfig(embedding_dims=tuple(emb), **sim)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunReport:
    train_loss: list
    test_accuracy: list
    best_accuracy: float
    wall_time_s: float
    config_hash: str

    def to_dict(self):
        return {
            "train_loss": [float(v) for v in self.train_loss],
            "test_accuracy": [float(v) for v in self.test_accuracy],
            "best_accuracy": float(self.best_accuracy),
            "wall_time_s": float(self.wall_time_s),
            "config_hash": self.config_hash,
        }


# ---------------------------------------------------------------------------
# scenes and encoders


@dataclass
class SceneSet:
    """Transformed, rescaled scenes stored compactly as pasted blocks."""

    blocks: list  # (block float32, top, left)
    labels: np.ndarray
    dims: tuple

    def __len__(self):
        return len(self.blocks)

    def materialize(self, indices, dtype=np.float64):
        out = np.zeros((len(indices),) + self.dims, dtype=dtype)
        for row, i in enumerate(indices):
            block, top, left = self.blocks[i]
            out[row, top : top + block.shape[0], left : left + block.shape[1]] = block
        return out


def prepare_scenes(images, labels, spec, cfg, seed):
    """Transform and rescale every example once (one draw per example)."""
    rngs = spawn_rngs(seed, len(images))
    dims = tuple(cfg.psf_dims)
    blocks = []
    for img, rng in zip(images, rngs):
        img_t = transforms.apply_source_transform(img, spec, rng)
        sim_cfg = cfg
        if spec.kind == "rescale":
            sim_cfg = cfg.with_height(transforms.random_rescale(spec, rng))
        scene = simulate.rescale_to_psf(img_t, sim_cfg)[:, :, 0]
        if spec.kind == "shift":
            scene = transforms.random_shift(scene, rng)
        rows = np.nonzero(scene.any(axis=1))[0]
        cols = np.nonzero(scene.any(axis=0))[0]
        if rows.size == 0:
            blocks.append((np.zeros((1, 1), dtype=np.float32), 0, 0))
        else:
            block = scene[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
            blocks.append((block.astype(np.float32), int(rows[0]), int(cols[0])))
    return SceneSet(blocks, np.asarray(labels, dtype=np.int64), dims)


def slm_masks(state, field_dims, pitch_m, footprints=None):
    """Per-wavelength amplitude masks of an SLM state (R, G, B order)."""
    fp = footprints or slm.footprint_maps(state.geometry, field_dims, pitch_m)
    return [
        slm.rasterize_mask(state, field_dims, pitch_m, channel=c, footprints=fp)
        for c in range(3)
    ]


def fixed_encoder_psf(cfg):
    """Simulate or load the PSF of a fixed encoder at the configured grid."""
    sim = cfg.sim
    dims = tuple(sim.psf_dims)
    pitch = sim.sim_pitch_m
    if cfg.encoder == "coded-aperture":
        mask = slm.rasterize_coded_aperture(slm.coded_aperture_mask(), dims, pitch)
        return optics.intensity_psf(mask, pitch, sim.d1_m, sim.d2_m)
    if cfg.encoder == "fixed-slm-simulated":
        state = slm.random_slm_state(
            slm.slm_for_sensor(sim.sensor, cfg.slm_coverage), rng_from_seed(cfg.seed)
        )
        masks = slm_masks(state, dims, pitch)
        return optics.intensity_psf(masks, pitch, sim.d1_m, sim.d2_m)
    if cfg.encoder.endswith("-file"):
        psf = slm.load_measured_psf(cfg.psf_path)
        if psf.shape[:2] != dims:
            psf = optics.normalize_psf(fourier.bilinear_resize(psf, *dims))
        return psf
    raise ConfigError(f"{cfg.encoder} has no fixed PSF")


def measure_batch(scenes, psf_gray, cfg, rngs=None):
    """Noiseless convolution + resize for a scene stack, then optional noise."""
    sensor_imgs = fourier.convolve_batch(scenes, psf_gray)
    emb = fourier.bilinear_resize_batch(sensor_imgs, *cfg.embedding_dims)
    if rngs is not None and np.isfinite(cfg.sim.snr_db):
        for i in range(emb.shape[0]):
            if emb[i].var() > 0:
                emb[i] += simulate.noise_for(emb[i], cfg.sim.snr_db, rngs[i])
    return emb


def precompute_fixed_dataset(cfg, train_scenes, test_scenes, psf=None, chunk=512):
    """Simulate every example once and normalize by training statistics.

    Returns ``(train_emb, test_emb, stats)`` with embeddings flattened to
    ``(N, F)`` and ``stats = (mean, std)`` of the raw training embeddings.
    """
    psf = fixed_encoder_psf(cfg) if psf is None else psf
    psf_gray = simulate.grayscale_psf(psf)[:, :, 0]
    out = []
    for tag, scenes in (("train", train_scenes), ("test", test_scenes)):
        n = len(scenes)
        rngs = spawn_rngs(cfg.seed + (0 if tag == "train" else 1_000_003), n)
        emb = np.empty((n,) + tuple(cfg.embedding_dims))
        for start in range(0, n, chunk):
            idx = range(start, min(start + chunk, n))
            stack = scenes.materialize(idx)
            emb[start : start + len(idx)] = measure_batch(
                stack, psf_gray, cfg, [rngs[i] for i in idx]
            )
        out.append(emb.reshape(n, -1))
    mean = out[0].mean()
    std = out[0].std()
    if std == 0:
        raise ConfigError("training embeddings are constant; cannot normalize")
    return (out[0] - mean) / std, (out[1] - mean) / std, (mean, std)


# ---------------------------------------------------------------------------
# tape-based forward passes


def init_decoder(cfg, rng):
    feat = int(np.prod(cfg.embedding_dims))
    if cfg.classifier == "logistic":
        params = classifiers.init_logistic(feat, rng)
        running = {}
    else:
        params = classifiers.init_fcnn(feat, rng, hidden=cfg.hidden_units)
        running = {"bn": classifiers.init_running(cfg.hidden_units)}
    if cfg.encoder == "learned-slm":
        params["in_gamma"] = np.ones(feat)
        params["in_beta"] = np.zeros(feat)
        running["in"] = classifiers.init_running(feat)
    return params, running


def decoder_forward(tape, pvars, running, x, cfg, train):
    """Classifier head on a (B, F) variable; learned runs prepend BN+ReLU."""
    if cfg.encoder == "learned-slm":
        x = ad.batch_norm(
            x, pvars["in_gamma"], pvars["in_beta"], running["in"],
            momentum=classifiers.BN_MOMENTUM, eps=classifiers.BN_EPS, train=train,
        )
        x = ad.relu(x)
    if cfg.classifier == "logistic":
        return ad.affine(x, pvars["w"], pvars["b"])
    h = ad.affine(x, pvars["w1"], pvars["b1"])
    h = ad.batch_norm(
        h, pvars["gamma"], pvars["beta"], running["bn"],
        momentum=classifiers.BN_MOMENTUM, eps=classifiers.BN_EPS, train=train,
    )
    h = ad.relu(h)
    return ad.affine(h, pvars["w2"], pvars["b2"])


@dataclass
class OpticsCache:
    """Scene-independent pieces of the per-batch PSF simulation."""

    geometry: object
    footprints: tuple
    sources: list  # spherical illumination per wavelength
    transfers: list  # free-space transfer per wavelength

    @classmethod
    def build(cls, cfg):
        sim = cfg.sim
        dims = tuple(sim.psf_dims)
        pitch = sim.sim_pitch_m
        geometry = slm.slm_for_sensor(sim.sensor, cfg.slm_coverage)
        fp = slm.footprint_maps(geometry, dims, pitch)
        sources, transfers = [], []
        for lam in optics.RGB_WAVELENGTHS:
            sources.append(
                optics.spherical_source(dims, pitch, optics.SourceSpec(sim.d1_m, lam))
            )
            transfers.append(
                optics.blas_transfer(
                    optics.PropagationPlan(dims[0], dims[1], pitch, sim.d2_m, lam)
                )
            )
        return cls(geometry, fp, sources, transfers)


def psf_forward(tape, theta, cache):
    """Differentiable SLM-to-PSF chain; returns the grayscale PSF variable."""
    channels = []
    for c in range(3):
        mask = ad.rasterize(theta, cache.geometry, *cache.footprints, channel=c)
        u1 = ad.mul_complex_const(mask, cache.sources[c])
        spectrum = ad.transfer_multiply(ad.fft2(u1), cache.transfers[c])
        u2 = ad.ifft2(spectrum)
        channels.append(ad.normalize_sum(ad.square_modulus(u2)))
    return ad.average(channels)


def loss_forward(tape, theta, pvars, running, scenes, labels, cfg, cache, train=True,
                 noise_rngs=None):
    """Full pipeline loss for one batch of pre-rescaled scenes.

    Noise is drawn from the clean forward values mid-tape and added as a
    detached constant, so it shifts activations but contributes no gradient.
    """
    psf = psf_forward(tape, theta, cache)
    emb = ad.convolve_scenes(scenes, psf)
    emb = ad.resize_batch(emb, *cfg.embedding_dims)
    if noise_rngs is not None:
        noise = batch_noise(emb.value, cfg, noise_rngs)
        if noise is not None:
            emb = ad.add_const(emb, noise)
    flat = ad.reshape(emb, (scenes.shape[0], -1))
    scores = decoder_forward(tape, pvars, running, flat, cfg, train)
    loss, probs = ad.softmax_cross_entropy(scores, labels)
    return loss, probs, emb


def batch_noise(emb_values, cfg, rngs):
    """Fresh SNR-calibrated noise, detached from the gradient tape."""
    if not np.isfinite(cfg.sim.snr_db):
        return None
    noise = np.zeros_like(emb_values)
    for i in range(emb_values.shape[0]):
        if emb_values[i].var() > 0:
            noise[i] = simulate.noise_for(emb_values[i], cfg.sim.snr_db, rngs[i])
    return noise


# ---------------------------------------------------------------------------
# training loops


def load_dataset(cfg):
    """Load (or lazily synthesize) the digit dataset named by the config."""
    if cfg.data_dir is None:
        raise ConfigError("config has no data_dir")
    data_dir = Path(cfg.data_dir)
    if not (data_dir / datasets.TRAIN_IMAGES).exists() and not (
        data_dir / (datasets.TRAIN_IMAGES + ".gz")
    ).exists():
        raise ConfigError(f"no IDX dataset under {data_dir}")
    tr_img, tr_lab, te_img, te_lab = datasets.ingest_mnist(data_dir)
    return (
        tr_img[: cfg.train_count],
        tr_lab[: cfg.train_count],
        te_img[: cfg.test_count],
        te_lab[: cfg.test_count],
    )


def accuracy_of(scores, labels):
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def evaluate_embeddings(params, running, cfg, emb, labels):
    """Eval-mode accuracy of a decoder on flattened embeddings."""
    x = emb.reshape(emb.shape[0], -1)
    if cfg.encoder == "learned-slm":
        r = running["in"]
        x = (x - r["mean"]) / np.sqrt(r["var"] + classifiers.BN_EPS)
        x = np.maximum(params["in_gamma"] * x + params["in_beta"], 0.0)
    head = {k: v for k, v in params.items() if not k.startswith("in_")}
    scores = classifiers.forward_classifier(
        head, x, mode="eval", running=running.get("bn")
    )
    return accuracy_of(scores, labels)


def train_fixed(cfg, train_scenes, test_scenes, out_dir=None, psf=None):
    """Train a classifier on precomputed fixed-encoder embeddings."""
    t0 = time.time()
    tr_emb, te_emb, stats = precompute_fixed_dataset(cfg, train_scenes, test_scenes, psf)
    rng = rng_from_seed(cfg.seed + 77)
    params, running = init_decoder(cfg, rng)
    opt = classifiers.AdamState(lr=cfg.lr)
    labels_tr = train_scenes.labels
    labels_te = test_scenes.labels

    losses, accs = [], []
    n = tr_emb.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tape = ad.Tape()
            pvars = {k: tape.leaf(v) for k, v in params.items()}
            x = tape.leaf(tr_emb[idx])
            scores = decoder_forward(tape, pvars, running, x, cfg, train=True)
            loss, _ = ad.softmax_cross_entropy(scores, labels_tr[idx])
            tape.backward(loss)
            grads = {k: pvars[k].grad for k in params}
            params = opt.step(params, grads)
            epoch_loss += float(loss.value)
            batches += 1
        losses.append(epoch_loss / batches)
        accs.append(evaluate_embeddings(params, running, cfg, te_emb, labels_te))
        if out_dir is not None:
            save_checkpoint(out_dir, epoch, cfg, params, running, opt, stats=stats)
    report = RunReport(losses, accs, max(accs), time.time() - t0, cfg.config_hash())
    return report, params, running


def train_learned(cfg, train_scenes, test_scenes, out_dir=None):
    """Jointly train SLM weights and classifier; PSF refreshed every batch."""
    t0 = time.time()
    cache = OpticsCache.build(cfg)
    state = slm.random_slm_state(cache.geometry, rng_from_seed(cfg.seed))
    theta = state.raw_weights.copy()
    rng = rng_from_seed(cfg.seed + 77)
    params, running = init_decoder(cfg, rng)
    opt_dec = classifiers.AdamState(lr=cfg.lr)
    opt_enc = classifiers.AdamState(lr=cfg.lr_encoder)
    labels_tr = train_scenes.labels
    labels_te = test_scenes.labels
    dtype = np.float32 if cfg.precision == "f32" else np.float64
    test_rngs = spawn_rngs(cfg.seed + 1_000_003, len(test_scenes))

    losses, accs = [], []
    n = len(train_scenes)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            scenes = train_scenes.materialize(idx, dtype=dtype)
            step_rngs = spawn_rngs(
                cfg.seed + 31 * epoch + 100_000 * (start // cfg.batch_size) + 13,
                len(idx),
            )
            tape = ad.Tape()
            tvar = tape.leaf(theta)
            pvars = {k: tape.leaf(v) for k, v in params.items()}
            loss, _, _ = loss_forward(
                tape, tvar, pvars, running, scenes, labels_tr[idx], cfg, cache,
                train=True, noise_rngs=step_rngs,
            )
            tape.backward(loss)
            grads = {k: pvars[k].grad for k in params}
            params = opt_dec.step(params, grads)
            if cfg.lr_encoder > 0 and tvar.grad is not None:
                theta = opt_enc.step({"theta": theta}, {"theta": tvar.grad})["theta"]
            epoch_loss += float(loss.value)
            batches += 1
        losses.append(epoch_loss / batches)
        accs.append(
            evaluate_learned(cfg, theta, params, running, cache, test_scenes,
                             labels_te, test_rngs, dtype)
        )
        if out_dir is not None:
            save_checkpoint(out_dir, epoch, cfg, params, running, opt_dec,
                            theta=theta, opt_enc=opt_enc)
    report = RunReport(losses, accs, max(accs), time.time() - t0, cfg.config_hash())
    return report, params, running, theta


def evaluate_learned(cfg, theta, params, running, cache, scenes, labels, rngs,
                     dtype=np.float64, chunk=500):
    """Simulate the test split with the current SLM weights and score it."""
    tape = ad.Tape()
    psf = psf_forward(tape, tape.leaf(theta), cache).value
    accs = []
    weights = []
    for start in range(0, len(scenes), chunk):
        idx = range(start, min(start + chunk, len(scenes)))
        stack = scenes.materialize(idx, dtype=dtype)
        emb = fourier.bilinear_resize_batch(
            fourier.convolve_batch(stack, psf), *cfg.embedding_dims
        )
        if np.isfinite(cfg.sim.snr_db):
            for row, i in enumerate(idx):
                if emb[row].var() > 0:
                    emb[row] += simulate.noise_for(emb[row], cfg.sim.snr_db, rngs[i])
        accs.append(
            evaluate_embeddings(params, running, cfg, emb, labels[list(idx)])
        )
        weights.append(len(idx))
    return float(np.average(accs, weights=weights))


def train(cfg, out_dir=None):
    """Run one experiment end to end; returns ``(RunReport, artifacts dict)``.

    Scenes for both splits are prepared once with the configured transform
    (the same distribution for train and test), then the encoder-specific
    trainer runs.
    """
    cfg.validate()
    tr_img, tr_lab, te_img, te_lab = load_dataset(cfg)
    train_scenes = prepare_scenes(tr_img, tr_lab, cfg.transform, cfg.sim, cfg.seed + 1)
    test_scenes = prepare_scenes(te_img, te_lab, cfg.transform, cfg.sim, cfg.seed + 2)
    if cfg.encoder == "learned-slm":
        report, params, running, theta = train_learned(
            cfg, train_scenes, test_scenes, out_dir
        )
        artifacts = {"params": params, "running": running, "theta": theta}
    else:
        report, params, running = train_fixed(cfg, train_scenes, test_scenes, out_dir)
        artifacts = {"params": params, "running": running}
    if out_dir is not None:
        write_report(out_dir, cfg, report)
    return report, artifacts


# ---------------------------------------------------------------------------
# persistence


def save_checkpoint(out_dir, epoch, cfg, params, running, opt_dec, stats=None,
                    theta=None, opt_enc=None):
    cp = Path(out_dir) / "checkpoints" / f"epoch_{epoch + 1:04d}"
    cp.mkdir(parents=True, exist_ok=True)
    manifest = {
        "epoch": epoch + 1,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "encoder": cfg.encoder,
        "classifier": cfg.classifier,
        "embedding_dims": list(cfg.embedding_dims),
        "adam_t": opt_dec.t,
        "params": sorted(params),
        "running": sorted(running),
    }
    if stats is not None:
        manifest["normalization"] = {"mean": float(stats[0]), "std": float(stats[1])}
    for name, value in params.items():
        tensorio.write_tensor(cp / f"param__{name}.lct", value)
    for group, r in running.items():
        tensorio.write_tensor(cp / f"running__{group}__mean.lct", r["mean"])
        tensorio.write_tensor(cp / f"running__{group}__var.lct", r["var"])
    for name, m in opt_dec.m.items():
        tensorio.write_tensor(cp / f"adam__m__{name}.lct", m)
        tensorio.write_tensor(cp / f"adam__v__{name}.lct", opt_dec.v[name])
    if theta is not None:
        tensorio.write_tensor(cp / "theta.lct", theta)
        manifest["has_theta"] = True
    with open(cp / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return cp


def load_checkpoint(cp_dir):
    cp = Path(cp_dir)
    with open(cp / "manifest.json") as f:
        manifest = json.load(f)
    params = {
        name: tensorio.read_tensor(cp / f"param__{name}.lct")[0]
        for name in manifest["params"]
    }
    running = {}
    for group in manifest["running"]:
        running[group] = {
            "mean": tensorio.read_tensor(cp / f"running__{group}__mean.lct")[0],
            "var": tensorio.read_tensor(cp / f"running__{group}__var.lct")[0],
        }
    theta = None
    if manifest.get("has_theta"):
        theta = tensorio.read_tensor(cp / "theta.lct")[0]
    return manifest, params, running, theta


def write_report(out_dir, cfg, report):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        json.dump({"config": cfg.to_dict(), "report": report.to_dict()}, f, indent=2)
    with open(out / "curves.csv", "w") as f:
        f.write("epoch,train_loss,test_accuracy\n")
        for i, (l, a) in enumerate(zip(report.train_loss, report.test_accuracy)):
            f.write(f"{i + 1},{l:.6f},{a:.6f}\n")
