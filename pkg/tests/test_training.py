import copy
import json

import numpy as np
import pytest

from lenscoder import autodiff as ad
from lenscoder import classifiers, datasets, optics, simulate, slm, training
from lenscoder.errors import ConfigError

pytestmark = []


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("digits")
    datasets.write_synthetic_idx(path, 500, 150, seed=11)
    return path


def desk_cfg(data_dir, **kw):
    defaults = dict(
        encoder="fixed-slm-simulated",
        classifier="logistic",
        embedding_dims=(6, 8),
        epochs=2,
        batch_size=100,
        seed=0,
        lr=1e-2,
        sim=simulate.SimConfig(downsample=32, embedding_dims=(6, 8), snr_db=40.0),
        data_dir=str(data_dir),
        train_count=500,
        test_count=150,
    )
    defaults.update(kw)
    return training.ExperimentConfig(**defaults)


class TestConfig:
    def test_roundtrip(self, tiny_dataset):
        cfg = desk_cfg(tiny_dataset)
        back = training.ExperimentConfig.from_dict(
            json.loads(json.dumps(cfg.to_dict()))
        )
        assert back.to_dict() == cfg.to_dict()

    def test_unknown_encoder_rejected(self, tiny_dataset):
        with pytest.raises(ConfigError):
            desk_cfg(tiny_dataset, encoder="pinhole").validate()

    def test_file_encoder_needs_path(self, tiny_dataset):
        with pytest.raises(ConfigError):
            desk_cfg(tiny_dataset, encoder="lens-psf-file").validate()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            training.ExperimentConfig.from_dict({"nonsense": 1})


class TestFixedEncoderPsfs:
    def test_fixed_slm_psf_deterministic(self, tiny_dataset):
        cfg = desk_cfg(tiny_dataset)
        a = training.fixed_encoder_psf(cfg)
        b = training.fixed_encoder_psf(cfg)
        assert np.array_equal(a, b)
        assert a.shape[:2] == tuple(cfg.sim.psf_dims)
        assert np.allclose(a.sum(axis=(0, 1)), 1.0)

    def test_coded_aperture_psf(self, tiny_dataset):
        cfg = desk_cfg(
            tiny_dataset, encoder="coded-aperture",
            sim=simulate.SimConfig(downsample=32, embedding_dims=(6, 8),
                                   d2_m=0.5e-3, snr_db=40.0),
        )
        psf = training.fixed_encoder_psf(cfg)
        assert np.allclose(psf.sum(axis=(0, 1)), 1.0)

    def test_measured_file_resampled(self, tiny_dataset, tmp_path):
        from lenscoder import tensorio

        rng = np.random.default_rng(0)
        raw = rng.random((40, 50, 3))
        path = tmp_path / "measured.lct"
        tensorio.write_tensor(path, raw)
        cfg = desk_cfg(tiny_dataset, encoder="diffuser-psf-file", psf_path=str(path))
        psf = training.fixed_encoder_psf(cfg)
        assert psf.shape[:2] == tuple(cfg.sim.psf_dims)
        assert np.allclose(psf.sum(axis=(0, 1)), 1.0)


class TestPrecompute:
    def test_normalization_statistics(self, tiny_dataset):
        cfg = desk_cfg(tiny_dataset)
        tr_img, tr_lab, te_img, te_lab = training.load_dataset(cfg)
        trs = training.prepare_scenes(tr_img, tr_lab, cfg.transform, cfg.sim, 1)
        tes = training.prepare_scenes(te_img, te_lab, cfg.transform, cfg.sim, 2)
        tr_emb, te_emb, stats = training.precompute_fixed_dataset(cfg, trs, tes)
        assert abs(tr_emb.mean()) < 1e-6
        assert abs(tr_emb.std() - 1.0) < 1e-3
        assert tr_emb.shape == (500, 48)

    def test_determinism_under_seed(self, tiny_dataset):
        cfg = desk_cfg(tiny_dataset)
        out = []
        for _ in range(2):
            tr_img, tr_lab, te_img, te_lab = training.load_dataset(cfg)
            trs = training.prepare_scenes(tr_img, tr_lab, cfg.transform, cfg.sim, 1)
            tes = training.prepare_scenes(te_img, te_lab, cfg.transform, cfg.sim, 2)
            out.append(training.precompute_fixed_dataset(cfg, trs, tes)[0])
        assert np.array_equal(out[0], out[1])

    def test_delta_psf_identity_control(self, tiny_dataset):
        # a delta PSF at infinite SNR reproduces the rescaled digits exactly
        sensor = slm.SensorGeometry(full_res=(64, 80), pixel_m=1.55e-6)
        sim = simulate.SimConfig(
            downsample=1, embedding_dims=(64, 80), snr_db=np.inf,
            object_height_m=2e-4, sensor=sensor,
        )
        cfg = desk_cfg(tiny_dataset, sim=sim, embedding_dims=(64, 80),
                       train_count=20, test_count=10)
        tr_img, tr_lab, te_img, te_lab = training.load_dataset(cfg)
        trs = training.prepare_scenes(tr_img, tr_lab, cfg.transform, cfg.sim, 1)
        tes = training.prepare_scenes(te_img, te_lab, cfg.transform, cfg.sim, 2)
        psf = np.zeros((64, 80, 1))
        psf[32, 40, 0] = 1.0
        tr_emb, _, stats = training.precompute_fixed_dataset(cfg, trs, tes, psf=psf)
        mean, std = stats
        raw = tr_emb[0].reshape(64, 80) * std + mean
        assert np.allclose(raw, trs.materialize([0])[0], atol=1e-9)


class TestEndToEndGradient:
    def test_full_pipeline_matches_finite_differences(self):
        sensor = slm.SensorGeometry(full_res=(16, 20), pixel_m=60e-6)
        sim = simulate.SimConfig(
            d1_m=0.4, d2_m=0.004, object_height_m=0.3, snr_db=np.inf,
            downsample=1, embedding_dims=(4, 5), sensor=sensor,
        )
        cfg = training.ExperimentConfig(
            encoder="learned-slm", classifier="fcnn800", hidden_units=8,
            embedding_dims=(4, 5), sim=sim, seed=3,
        )
        geom = slm.SlmGeometry(
            3, 2, subpixel_size=(2.4e-4, 4.0e-4), pixel_pitch=(3.0e-4, 4.8e-4)
        )
        dims, pitch = tuple(sim.psf_dims), sim.sim_pitch_m
        fp = slm.footprint_maps(geom, dims, pitch)
        sources = [
            optics.spherical_source(dims, pitch, optics.SourceSpec(sim.d1_m, lam))
            for lam in optics.RGB_WAVELENGTHS
        ]
        transfers = [
            optics.blas_transfer(
                optics.PropagationPlan(dims[0], dims[1], pitch, sim.d2_m, lam)
            )
            for lam in optics.RGB_WAVELENGTHS
        ]
        cache = training.OpticsCache(geom, fp, sources, transfers)

        rng = np.random.default_rng(0)
        theta0 = rng.normal(size=geom.count)
        scenes = rng.random((4, *dims))
        labels = np.array([0, 3, 7, 9])
        params, running = training.init_decoder(cfg, rng)

        def loss_at(theta):
            run = copy.deepcopy(running)
            tape = ad.Tape()
            tvar = tape.leaf(theta.copy())
            pvars = {k: tape.leaf(v) for k, v in params.items()}
            loss, _, _ = training.loss_forward(
                tape, tvar, pvars, run, scenes, labels, cfg, cache, train=True
            )
            return tape, tvar, loss

        tape, tvar, loss = loss_at(theta0)
        tape.backward(loss)
        grad = tvar.grad
        eps = 1e-4
        fd = np.zeros_like(theta0)
        for k in range(theta0.size):
            tp, tm = theta0.copy(), theta0.copy()
            tp[k] += eps
            tm[k] -= eps
            fd[k] = (
                float(loss_at(tp)[2].value) - float(loss_at(tm)[2].value)
            ) / (2 * eps)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-10)
        assert rel.max() < 1e-3

    def test_backward_optics_psf_gradient(self):
        # optics-only chain: PSF vs finite differences at tighter tolerance
        sensor = slm.SensorGeometry(full_res=(16, 20), pixel_m=60e-6)
        sim = simulate.SimConfig(
            d1_m=0.4, d2_m=0.004, snr_db=np.inf, downsample=1,
            embedding_dims=(4, 5), sensor=sensor, object_height_m=0.3,
        )
        cfg = training.ExperimentConfig(encoder="learned-slm", sim=sim,
                                        embedding_dims=(4, 5))
        geom = slm.SlmGeometry(
            3, 2, subpixel_size=(2.4e-4, 4.0e-4), pixel_pitch=(3.0e-4, 4.8e-4)
        )
        dims, pitch = tuple(sim.psf_dims), sim.sim_pitch_m
        cache = training.OpticsCache(
            geom,
            slm.footprint_maps(geom, dims, pitch),
            [optics.spherical_source(dims, pitch, optics.SourceSpec(sim.d1_m, lam))
             for lam in optics.RGB_WAVELENGTHS[:2]],
            [optics.blas_transfer(
                optics.PropagationPlan(dims[0], dims[1], pitch, sim.d2_m, lam))
             for lam in optics.RGB_WAVELENGTHS[:2]],
        )
        rng = np.random.default_rng(1)
        theta0 = rng.normal(size=geom.count)
        upstream = rng.normal(size=dims)

        def forward(theta):
            tape = ad.Tape()
            tvar = tape.leaf(theta.copy())
            channels = []
            for c in range(2):
                mask = ad.rasterize(tvar, geom, *cache.footprints, channel=c)
                u1 = ad.mul_complex_const(mask, cache.sources[c])
                u2 = ad.ifft2(ad.transfer_multiply(ad.fft2(u1), cache.transfers[c]))
                channels.append(ad.normalize_sum(ad.square_modulus(u2)))
            return tape, tvar, ad.average(channels)

        tape, tvar, psf = forward(theta0)
        grad = ad.backward_optics(tape, psf, upstream, tvar)
        eps = 1e-4
        for k in range(theta0.size):
            tp, tm = theta0.copy(), theta0.copy()
            tp[k] += eps
            tm[k] -= eps
            fp = float(np.sum(forward(tp)[2].value * upstream))
            fm = float(np.sum(forward(tm)[2].value * upstream))
            fd = (fp - fm) / (2 * eps)
            assert abs(grad[k] - fd) / max(abs(fd), 1e-10) < 1e-4


class TestTrainingLoops:
    def test_fixed_training_smoke_improves_over_chance(self, tiny_dataset, tmp_path):
        cfg = desk_cfg(tiny_dataset, epochs=8, embedding_dims=(6, 8))
        report, artifacts = training.train(cfg, out_dir=tmp_path / "run")
        assert report.best_accuracy > 0.15
        assert len(report.train_loss) == 8
        assert (tmp_path / "run" / "report.json").exists()
        assert (tmp_path / "run" / "checkpoints" / "epoch_0008").exists()

    def test_loss_decreases_smoke(self, tiny_dataset):
        cfg = desk_cfg(tiny_dataset, epochs=10, embedding_dims=(12, 16),
                       sim=simulate.SimConfig(downsample=32,
                                              embedding_dims=(12, 16),
                                              snr_db=40.0))
        report, _ = training.train(cfg)
        losses = report.train_loss
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))

    def test_seed_determinism(self, tiny_dataset):
        cfg = desk_cfg(tiny_dataset, epochs=2)
        r1, _ = training.train(cfg)
        r2, _ = training.train(cfg)
        assert r1.train_loss == r2.train_loss
        assert r1.test_accuracy == r2.test_accuracy

    def test_checkpoint_roundtrip_and_evaluate(self, tiny_dataset, tmp_path):
        cfg = desk_cfg(tiny_dataset, epochs=2)
        report, artifacts = training.train(cfg, out_dir=tmp_path)
        cp = tmp_path / "checkpoints" / "epoch_0002"
        manifest, params, running, theta = training.load_checkpoint(cp)
        assert manifest["config_hash"] == cfg.config_hash()
        for k, v in artifacts["params"].items():
            assert np.array_equal(params[k], v)

    def test_argmax_invariance(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=(50, 10))
        labels = rng.integers(0, 10, 50)
        base = training.accuracy_of(scores, labels)
        assert training.accuracy_of(3.0 * scores + 7.0, labels) == base

    def test_constant_scores_accuracy_is_predicted_class_frequency(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 10, 400)
        scores = np.ones((400, 10))
        acc = training.accuracy_of(scores, labels)
        # argmax ties resolve to class 0, so accuracy = frequency of class 0
        assert acc == pytest.approx(np.mean(labels == 0))

    def test_permutation_invariance_of_accuracy(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=(64, 10))
        labels = rng.integers(0, 10, 64)
        perm = rng.permutation(64)
        assert training.accuracy_of(scores, labels) == training.accuracy_of(
            scores[perm], labels[perm]
        )


@pytest.mark.slow
class TestLearnedSmoke:
    def test_one_epoch_runs_and_theta_moves(self, tiny_dataset, tmp_path):
        sim = simulate.SimConfig(downsample=32, embedding_dims=(3, 4), snr_db=40.0)
        cfg = desk_cfg(
            tiny_dataset, encoder="learned-slm", epochs=1, embedding_dims=(3, 4),
            sim=sim, lr=1e-2, lr_encoder=1e-2, precision="f32",
        )
        report, artifacts = training.train(cfg, out_dir=tmp_path)
        cache = training.OpticsCache.build(cfg)
        theta0 = slm.random_slm_state(
            cache.geometry, training.rng_from_seed(cfg.seed)
        ).raw_weights
        assert not np.allclose(artifacts["theta"], theta0)
        manifest, _, _, theta = training.load_checkpoint(
            tmp_path / "checkpoints" / "epoch_0001"
        )
        assert np.array_equal(theta, artifacts["theta"])
