import json
import os

import numpy as np
import pytest

from quatgan import models as MD
from quatgan import train as T
from quatgan.errors import ConfigError, NumericError


def toy_config(tmp_path, **overrides):
    base = dict(
        model="qsngan_toy8",
        synth={"n": 32, "size": 8, "seed": 3},
        batch_size=4,
        iterations=6,
        critic_iters=1,
        seed=11,
        sn_mode="full",
        loss="hinge",
        checkpoint_every=3,
        eval_every=3,
        eval_samples=16,
        sample_count=4,
        out_dir=str(tmp_path / "run"),
    )
    base.update(overrides)
    return T.TrainConfig(**base)


class TestConfig:
    def test_round_trip_json_has_all_fields(self, tmp_path):
        cfg = toy_config(tmp_path)
        text = cfg.to_json()
        parsed = json.loads(text)
        assert set(parsed) == set(T.TrainConfig.__dataclass_fields__)
        assert T.TrainConfig.from_json(text).to_json() == text

    def test_validation(self, tmp_path):
        with pytest.raises(ConfigError):
            toy_config(tmp_path, critic_iters=0)
        with pytest.raises(ConfigError):
            toy_config(tmp_path, batch_size=1)
        with pytest.raises(ConfigError):
            toy_config(tmp_path, loss="qce")  # qce pairs with qdcgan
        with pytest.raises(ConfigError):
            toy_config(tmp_path, synth=None)  # neither dataset nor synth
        with pytest.raises(ConfigError):
            T.TrainConfig.from_json('{"model": "qsngan_toy8", "bogus": 1}')

    def test_dataset_size_mismatch(self, tmp_path):
        cfg = toy_config(tmp_path, synth={"n": 8, "size": 16, "seed": 0})
        with pytest.raises(ConfigError):
            T.train(cfg)


class TestTrainingLoop:
    def test_zero_iterations_reports_initial_state(self, tmp_path):
        cfg = toy_config(tmp_path, iterations=0)
        report = T.train(cfg)
        assert report["d_losses"] == [] and report["g_losses"] == []
        assert report["fd_trace"][0][0] == 0
        assert report["fd_init"] == report["fd_best"] == report["fd_final"]
        assert os.path.exists(report["checkpoints"][-1])

    def test_runs_and_reports(self, tmp_path):
        report = T.train(toy_config(tmp_path))
        assert len(report["g_losses"]) == 6
        assert all(np.isfinite(v) for v in report["g_losses"])
        assert [it for it, _ in report["fd_trace"]] == [0, 3, 6]
        assert len(report["checkpoints"]) == 3  # iters 3, 6 + final
        assert os.path.exists(os.path.join(cfgdir(report), "report.json"))
        for p in report["samples"]:
            assert os.path.exists(p)

    def test_fixed_seed_bitwise_reruns(self, tmp_path):
        cfg = toy_config(tmp_path, out_dir=str(tmp_path / "a"))
        r1 = T.train(cfg)
        f1 = open(os.path.join(tmp_path, "a", "checkpoint_final.qgn"), "rb").read()
        s1 = open(r1["samples"][-1], "rb").read()
        r2 = T.train(toy_config(tmp_path, out_dir=str(tmp_path / "a")))  # identical config
        f2 = open(os.path.join(tmp_path, "a", "checkpoint_final.qgn"), "rb").read()
        s2 = open(r2["samples"][-1], "rb").read()
        assert r1["d_losses"] == r2["d_losses"]
        assert r1["g_losses"] == r2["g_losses"]
        assert r1["fd_trace"] == r2["fd_trace"]
        assert f1 == f2
        assert s1 == s2

    def test_different_seed_differs(self, tmp_path):
        r1 = T.train(toy_config(tmp_path, out_dir=str(tmp_path / "a")))
        r2 = T.train(toy_config(tmp_path, seed=12, out_dir=str(tmp_path / "b")))
        assert r1["g_losses"] != r2["g_losses"]

    def test_resume_matches_uninterrupted(self, tmp_path):
        full_cfg = toy_config(tmp_path, iterations=16, checkpoint_every=8,
                              eval_every=8, out_dir=str(tmp_path / "full"))
        full = T.train(full_cfg)

        part_cfg = toy_config(tmp_path, iterations=16, checkpoint_every=8,
                              eval_every=8, out_dir=str(tmp_path / "part"))
        # run the first half by training with the same config but stopping at 8
        half_cfg = toy_config(tmp_path, iterations=8, checkpoint_every=8,
                              eval_every=8, out_dir=str(tmp_path / "part"))
        T.train(half_cfg)
        mid = os.path.join(tmp_path, "part", "checkpoint_000008.qgn")
        resumed = T.train(part_cfg, resume_from=mid)
        assert resumed["g_losses"] == full["g_losses"][8:]
        assert resumed["d_losses"] == full["d_losses"][8:]
        # tensor payloads must match bitwise; meta.config differs in out_dir only
        from quatgan import checkpoint as C

        a = C.load_tensors(os.path.join(tmp_path, "full", "checkpoint_final.qgn"))
        b = C.load_tensors(os.path.join(tmp_path, "part", "checkpoint_final.qgn"))
        assert set(a) == set(b)
        for name in a:
            if name == "meta.config":
                continue
            assert np.array_equal(a[name], b[name]), name

    def test_critic_iteration_audit(self, tmp_path):
        cfg = toy_config(tmp_path, critic_iters=5, iterations=4, checkpoint_every=0,
                         eval_every=0)
        report = T.train(cfg)
        assert all(len(v) == 5 for v in report["d_losses"])
        _, _, _, g_adam, d_adam, _, it = T.load_checkpoint(
            os.path.join(cfg.out_dir, "checkpoint_final.qgn"))
        assert it == 4
        assert g_adam.step == 4
        assert d_adam.step == 20  # exactly 5 discriminator updates per generator update

    def test_nan_aborts_with_diagnostic(self, tmp_path):
        cfg = toy_config(tmp_path, lr=1e18, iterations=50, checkpoint_every=0, eval_every=0)
        with pytest.raises(NumericError) as exc:
            T.train(cfg)
        diag = exc.value.diagnostic
        assert "iteration" in diag and "d_param_norms" in diag


def cfgdir(report):
    return report["config"]["out_dir"]


class TestCheckpointIntegration:
    def test_checkpoint_round_trip_bitwise(self, tmp_path):
        cfg = toy_config(tmp_path)
        report = T.train(cfg)
        path = report["checkpoints"][-1]
        config, g, d, g_adam, d_adam, rngs, it = T.load_checkpoint(path)
        path2 = str(tmp_path / "resaved.qgn")
        T.save_checkpoint(path2, config, g, d, g_adam, d_adam, rngs, it)
        assert open(path, "rb").read() == open(path2, "rb").read()

    def test_loaded_generator_reproduces_samples(self, tmp_path):
        cfg = toy_config(tmp_path)
        report = T.train(cfg)
        config, g, *_ = T.load_checkpoint(report["checkpoints"][-1])
        spec = MD.preset_spec(config.model)
        spec.sn = config.sn_mode
        rng1 = np.random.default_rng(0)
        rng2 = np.random.default_rng(0)
        imgs1 = T.generate_images(g, spec, 4, rng1)
        config2, g2, *_ = T.load_checkpoint(report["checkpoints"][-1])
        imgs2 = T.generate_images(g2, spec, 4, rng2)
        assert np.array_equal(imgs1, imgs2)

    def test_qdcgan_family_trains(self, tmp_path):
        cfg = T.TrainConfig(
            model="qdcgan_toy8",
            synth={"n": 16, "size": 8, "seed": 5},
            batch_size=4,
            iterations=3,
            loss="qce",
            sn_mode="none",
            seed=2,
            eval_samples=8,
            sample_count=2,
            out_dir=str(tmp_path / "dc"),
        )
        report = T.train(cfg)
        assert len(report["g_losses"]) == 3
        assert all(np.isfinite(v) for v in report["g_losses"])

    def test_wgan_gp_trains(self, tmp_path):
        cfg = toy_config(tmp_path, loss="wgan_gp", iterations=3, out_dir=str(tmp_path / "w"))
        report = T.train(cfg)
        assert len(report["g_losses"]) == 3
        assert all(np.isfinite(v) for v in report["g_losses"])
