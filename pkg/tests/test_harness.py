import csv
import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
import yaml

from adaptive_ivus import cli, harness
from adaptive_ivus.agent import Agent
from adaptive_ivus.beamform import read_pgm
from adaptive_ivus.environment import EnvConfig
from adaptive_ivus.harness import RunConfig


def tiny_config(tmp_path, **kw):
    data = {
        "train_steps": 24, "eval_interval": 12, "periodic_eval_episodes": 1, "eval_episodes": 2,
        "out_dir": str(tmp_path / "run"),
        "env": {"episode_length": 3},
        "agent": {"warmup_steps": 8, "batch_size": 4, "actor_hidden": [16], "critic_hidden": [16]},
    }
    data.update(kw)
    return harness.config_from_dict(data)


def read_rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = tiny_config(tmp)
    return cfg, harness.cmd_train(cfg)


class TestConfig:
    def test_yaml_round_trip(self):
        cfg = RunConfig(seed=3, factor=8)
        assert harness.config_from_dict(yaml.safe_load(harness.dump_config(cfg))) == cfg

    def test_file_round_trip(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("seed: 7\nenv:\n  threshold: 0.3\nagent:\n  actor_hidden: [32, 32]\n")
        cfg = harness.load_config(p)
        assert cfg.seed == 7 and cfg.env.threshold == 0.3 and cfg.agent.actor_hidden == (32, 32)

    @pytest.mark.parametrize("data,match", [
        ({"sed": 1}, "unknown"),
        ({"agent": {"gama": 0.5}}, "in agent: gama"),
        ({"seed": "one"}, "integer"),
        ({"factor": 3}, "divide"),
        ({"train_steps": -1}, "train_steps"),
        ({"env": {"geometry": {"num_elements": 7}}}, "sub_aperture|elements"),
    ])
    def test_rejects(self, data, match):
        with pytest.raises(ValueError, match=match):
            harness.config_from_dict(data)

    def test_agent_config_filled_from_run(self):
        acfg = RunConfig(factor=8, train_steps=1000).agent_config()
        assert acfg.num_samples == 20 and acfg.rotations == 32 and acfg.gumbel.anneal_steps == 500

    def test_bad_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("seed: [1,\n")
        with pytest.raises(ValueError, match="parse"):
            harness.load_config(p)


class TestEpisodes:
    def test_random_rows_reproducible(self):
        env = EnvConfig(episode_length=2)
        a = harness.run_episodes(harness.random_policy(40, 160), env, 2, 5)
        b = harness.run_episodes(harness.random_policy(40, 160), env, 2, 5)
        assert a == b

    def test_prefiltered_scoring(self):
        env = EnvConfig(episode_length=1)
        raw = harness.run_episodes(harness.random_policy(40, 160), env, 1, 5)
        filt = harness.run_episodes(harness.random_policy(40, 160), env, 1, 5, prefiltered=True)
        assert raw[0]["return"] == filt[0]["return"]
        assert raw[0]["mse"] != filt[0]["mse"]

    def test_full_policy_is_exact(self):
        rows = harness.run_episodes(harness.full_policy(160), EnvConfig(episode_length=2), 2, 5)
        for r in rows:
            assert r["mse"] == 0.0 and r["ssim"] == 1.0 and r["return"] == 0.0


class TestTrain:
    def test_outputs(self, trained):
        cfg, res = trained
        out = res.out_dir
        for name in ("train_log.csv", "eval_log.csv", "final_eval.csv", "summary.json",
                     "learning_curve.png", harness.CHECKPOINT_NAME):
            assert (out / name).is_file(), name
        rows = read_rows(out / "train_log.csv")
        assert len(rows) == 24 and tuple(rows[0]) == harness.TRAIN_FIELDS
        assert rows[7]["critic_loss"] == "" and rows[-1]["critic_loss"] != ""
        evals = read_rows(out / "eval_log.csv")
        assert [(r["step"], r["strategy"]) for r in evals] == [("0", "random"), ("0", "learned"), ("12", "learned"), ("24", "learned")]
        final = read_rows(out / "final_eval.csv")
        assert [r["metric"] for r in final] == ["return", "mse", "mae", "psnr", "ssim"]
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["final"]) == {"random", "learned"}

    def test_zero_steps(self, tmp_path):
        cfg = tiny_config(tmp_path, train_steps=0)
        res = harness.cmd_train(cfg)
        assert read_rows(res.out_dir / "train_log.csv") == []
        fresh = Agent(cfg.agent_config(), 160, seed=cfg.seed)
        np.testing.assert_array_equal(harness.load_agent(cfg, res.out_dir / harness.CHECKPOINT_NAME).actor, fresh.actor)

    def test_logs_byte_identical(self, tmp_path, trained):
        cfg, res = trained
        again = harness.cmd_train(replace(cfg, out_dir=str(tmp_path / "again")))
        for name in ("train_log.csv", "eval_log.csv", "final_eval.csv", "summary.json"):
            assert (again.out_dir / name).read_bytes() == (res.out_dir / name).read_bytes()


class TestEvalAndRender:
    def test_eval_matches_training_summary(self, tmp_path, trained):
        cfg, res = trained
        cfg = replace(cfg, out_dir=str(tmp_path / "ev"))
        table = harness.cmd_eval(cfg, res.out_dir / harness.CHECKPOINT_NAME)
        assert table == res.summary["final"]
        rows = read_rows(tmp_path / "ev" / "eval_table.csv")
        assert list(rows[0]) == ["metric", "random", "learned"]
        assert (tmp_path / "ev" / "eval_metrics.png").is_file()
        assert len(read_rows(tmp_path / "ev" / "eval_episodes.csv")) == 4

    def test_corrupt_checkpoint(self, tmp_path, trained):
        cfg, res = trained
        raw = bytearray((res.out_dir / harness.CHECKPOINT_NAME).read_bytes())
        raw[200] ^= 0x55
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="record"):
            harness.cmd_eval(cfg, bad)

    def test_missing_checkpoint(self, tmp_path, trained):
        with pytest.raises(FileNotFoundError):
            harness.cmd_eval(trained[0], tmp_path / "none.ckpt")

    def test_render(self, tmp_path, trained):
        cfg, res = trained
        cfg = replace(cfg, out_dir=str(tmp_path / "r"))
        harness.cmd_render(cfg, res.out_dir / harness.CHECKPOINT_NAME)
        frames = sorted((tmp_path / "r" / "frames").glob("*.pgm"))
        actions = sorted((tmp_path / "r" / "actions").glob("*.pgm"))
        assert len(frames) == len(actions) == 3
        assert read_pgm(frames[0]).shape == (256, 256)
        assert read_pgm(actions[0]).shape == (16, 256)
        assert (tmp_path / "r" / "episode.png").is_file()
        assert len(read_rows(tmp_path / "r" / "episode_trace.csv")) == 3

    def test_render_full_sampling_is_white(self, tmp_path):
        cfg = tiny_config(tmp_path, factor=1, train_steps=0)
        res = harness.cmd_train(cfg)
        harness.cmd_render(replace(cfg, out_dir=str(tmp_path / "r")), res.out_dir / harness.CHECKPOINT_NAME)
        for p in (tmp_path / "r" / "actions").glob("*.pgm"):
            assert (read_pgm(p) == 255).all()


class TestSweep:
    def test_factor_one(self, tmp_path):
        cfg = tiny_config(tmp_path, train_steps=0, sweep_seeds=2, eval_episodes=1)
        summary = harness.cmd_sweep(cfg, [1])
        assert [(r["factor"], r["strategy"], r["seeds"]) for r in summary] == [(1, "random", 2), (1, "learned", 2)]
        for r in summary:
            assert r["ssim_mean"] == 1.0 and r["mse_mean"] == 0.0
        assert (tmp_path / "run" / "sweep_ssim.png").is_file()
        assert len(read_rows(tmp_path / "run" / "sweep_cells.csv")) == 4

    def test_rejects_non_divisor(self, tmp_path):
        with pytest.raises(ValueError, match="divide"):
            harness.cmd_sweep(tiny_config(tmp_path), [3])

    def test_aggregate(self):
        cells = [{"factor": 2, "seed": s, "strategy": st, "ssim": v, "mse": 0.0}
                 for s, (a, b) in enumerate([(0.8, 0.9), (0.6, 0.7)]) for st, v in (("random", a), ("learned", b))]
        rows = harness.aggregate_sweep(cells)
        assert rows[1]["ssim_mean"] == pytest.approx(0.8) and rows[1]["ssim_std"] == pytest.approx(0.1)


class TestCli:
    def test_print_config_round_trip(self, capsys):
        assert cli.main(["print-config", "--seed", "5", "--factor", "8"]) == 0
        cfg = harness.config_from_dict(yaml.safe_load(capsys.readouterr().out))
        assert cfg.seed == 5 and cfg.factor == 8

    def test_train_eval_render(self, tmp_path, capsys):
        conf = tmp_path / "c.yaml"
        conf.write_text(harness.dump_config(tiny_config(tmp_path, train_steps=10)))
        out = tmp_path / "cli"
        assert cli.main(["train", "--config", str(conf), "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["train_steps"] == 10
        ck = str(out / harness.CHECKPOINT_NAME)
        assert cli.main(["eval", "--config", str(conf), "--checkpoint", ck, "--out", str(tmp_path / "e")]) == 0
        assert capsys.readouterr().out.startswith("metric,random,learned\n")
        assert cli.main(["render", "--config", str(conf), "--checkpoint", ck, "--out", str(tmp_path / "r")]) == 0

    @pytest.mark.parametrize("argv,msg", [
        (["train", "--factor", "3"], "does not divide"),
        (["eval"], "checkpoint"),
        (["eval", "--checkpoint", "/nonexistent.ckpt"], "not found"),
        (["print-config", "--config", "/nonexistent.yaml"], "nonexistent"),
        (["sweep", "--factors", "2,x"], "comma-separated"),
    ])
    def test_failures_exit_nonzero(self, argv, msg, capsys):
        assert cli.main(argv) != 0
        err = capsys.readouterr().err
        assert "error" in err and msg in err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "adaptive_ivus", "print-config"], capture_output=True, text=True)
        assert proc.returncode == 0 and "train_steps: 20000" in proc.stdout
        proc = subprocess.run([sys.executable, "-m", "adaptive_ivus", "train", "--factor", "7"], capture_output=True, text=True)
        assert proc.returncode != 0 and "factor 7" in proc.stderr
