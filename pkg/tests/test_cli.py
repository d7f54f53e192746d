"""End-to-end CLI tests over a miniature world."""

import numpy as np
import pytest

from uavx.cli import main
from uavx.trainer import read_blocks_csv

TINY_WORLD = """
name = cli-test
bounds_min = -30 -30 -30
bounds_max = 30 30 30
spawn_position = 0 0 0
uav_radius = 0.3
control_dt = 0.5
camera_width = 8
camera_height = 8
camera_hfov = 1.5707963267948966
camera_max_range = 20
trainer.max_steps = 15
trainer.warmup = 8
qnet.batch = 4
qnet.hidden = 8
qnet.input_resolution = 8
memory.capacity = 200
explore.v_size = 4
domain.hidden = 8
"""


@pytest.fixture
def world_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_WORLD)
    return path


def train(world_cfg, out, *extra):
    return main(
        [
            "train",
            "--config",
            str(world_cfg),
            "--episodes",
            "6",
            "--out",
            str(out),
            "--quiet",
            *extra,
        ]
    )


# ---------------------------------------------------------------------------
# train


def test_train_writes_expected_artifacts(world_cfg, tmp_path):
    out = tmp_path / "run0"
    assert train(world_cfg, out) == 0
    assert (out / "episodes.csv").is_file()
    assert (out / "blocks.csv").is_file()
    assert (out / "manifest.txt").is_file()
    assert (out / "config.cfg").is_file()
    for name in ("online_trunk.nn", "target_advantage.nn", "policy.txt"):
        assert (out / "checkpoints" / name).is_file()
    blocks = read_blocks_csv(out / "blocks.csv")
    assert len(blocks) == 1 and blocks[0].episodes_in_block == 6
    manifest = (out / "manifest.txt").read_text()
    assert "seed = 0" in manifest and "[config]" in manifest


def test_train_guidance_saves_domain_checkpoint(world_cfg, tmp_path):
    out = tmp_path / "rung"
    assert train(world_cfg, out, "--strategy", "guidance") == 0
    assert (out / "checkpoints" / "domain.nn").is_file()


def test_train_missing_config_exits_2_naming_path(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "nope.cfg" in capsys.readouterr().err


def test_train_bad_config_line_number(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bounds_min = 0 0 0\nbroken\n")
    code = main(["train", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert "bad.cfg:2" in err


def test_train_rejects_unknown_set_key(world_cfg, tmp_path, capsys):
    code = train(world_cfg, tmp_path / "x", "--set", "bogus.key=1")
    assert code == 2
    assert "bogus.key" in capsys.readouterr().err


def test_train_repeated_invocation_identical_episodes(world_cfg, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert train(world_cfg, out_a, "--seed", "3") == 0
    assert train(world_cfg, out_b, "--seed", "3") == 0
    assert (out_a / "episodes.csv").read_bytes() == (out_b / "episodes.csv").read_bytes()
    assert (out_a / "blocks.csv").read_bytes() == (out_b / "blocks.csv").read_bytes()


def test_train_default_out_uses_env_root(world_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("UAVX_OUT_ROOT", str(tmp_path / "root"))
    code = main(["train", "--config", str(world_cfg), "--episodes", "2", "--quiet"])
    assert code == 0
    assert (tmp_path / "root" / "cli-test-epsilon_greedy-s0" / "episodes.csv").is_file()


def test_train_preset_name_resolves(tmp_path):
    out = tmp_path / "preset-run"
    code = main(
        [
            "train", "--config", "corridor", "--episodes", "2", "--quiet",
            "--out", str(out),
            "--set", "trainer.max_steps=5",
            "--set", "qnet.hidden=8",
            "--set", "trainer.warmup=1000000",
        ]
    )
    assert code == 0
    assert (out / "episodes.csv").is_file()


# ---------------------------------------------------------------------------
# compare


def test_compare_joins_runs(world_cfg, tmp_path):
    a, b = tmp_path / "ra", tmp_path / "rb"
    assert train(world_cfg, a) == 0
    assert train(world_cfg, b, "--seed", "1") == 0
    out = tmp_path / "cmp"
    assert main(["compare", str(a), str(b), "--out", str(out), "--svg"]) == 0
    comparison = (out / "comparison.csv").read_text().splitlines()
    assert comparison[0] == "block_index,ra_mean_reward,ra_mean_steps,rb_mean_reward,rb_mean_steps"
    assert len(comparison) == 2  # one block each
    reward_csv = (out / "mean_reward.csv").read_text().splitlines()
    assert reward_csv[0] == "block_index,ra,rb"
    for metric in ("mean_reward", "mean_steps"):
        svg = (out / f"{metric}.svg").read_text()
        assert svg.count("<polyline") == 2


def test_compare_missing_blocks_csv(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["compare", str(empty), "--out", str(tmp_path / "c")]) == 1
    assert "blocks.csv" in capsys.readouterr().err


def test_compare_schema_mismatch_names_file(tmp_path, capsys):
    bad = tmp_path / "badrun"
    bad.mkdir()
    (bad / "blocks.csv").write_text("wrong,header\n1,2\n")
    assert main(["compare", str(bad), "--out", str(tmp_path / "c")]) == 1
    assert "blocks.csv" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# rollout


def test_rollout_from_run_dir(world_cfg, tmp_path, capsys):
    run = tmp_path / "run"
    assert train(world_cfg, run) == 0
    capsys.readouterr()
    traj = tmp_path / "traj.csv"
    assert main(["rollout", "--checkpoint", str(run), "--n", "3", "--out", str(traj)]) == 0
    printed = capsys.readouterr().out
    lines = traj.read_text().splitlines()
    assert lines[0] == "episode,step,x,y,z,heading,pitch,action,reward"
    episodes = {}
    for line in lines[1:]:
        parts = line.split(",")
        episodes.setdefault(int(parts[0]), []).append(float(parts[8]))
        assert int(parts[1]) <= 15
    assert set(episodes) == {1, 2, 3}
    mean_total = np.mean([sum(v) for v in episodes.values()])
    import re

    match = re.search(r"mean reward (-?\d+\.\d+)", printed)
    assert match and float(match.group(1)) == pytest.approx(mean_total, abs=5e-4)


def test_rollout_deterministic(world_cfg, tmp_path):
    run = tmp_path / "run"
    assert train(world_cfg, run) == 0
    t1, t2 = tmp_path / "t1.csv", tmp_path / "t2.csv"
    assert main(["rollout", "--checkpoint", str(run), "--n", "2", "--seed", "7", "--out", str(t1)]) == 0
    assert main(["rollout", "--checkpoint", str(run), "--n", "2", "--seed", "7", "--out", str(t2)]) == 0
    assert t1.read_bytes() == t2.read_bytes()


def test_rollout_bare_checkpoint_needs_config(world_cfg, tmp_path, capsys):
    run = tmp_path / "run"
    assert train(world_cfg, run) == 0
    ckpt = run / "checkpoints"
    assert main(["rollout", "--checkpoint", str(ckpt), "--n", "1", "--out", str(tmp_path / "t.csv")]) == 1
    assert "--config" in capsys.readouterr().err
    code = main(
        [
            "rollout", "--checkpoint", str(ckpt), "--config", str(world_cfg),
            "--n", "1", "--out", str(tmp_path / "t.csv"),
        ]
    )
    assert code == 0


def test_rollout_checkpoint_parse_failure(tmp_path, capsys):
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "policy.txt").write_text("gamma = not-a-number\nsync_interval = 2\n")
    code = main(["rollout", "--checkpoint", str(broken), "--config", "corridor", "--n", "1"])
    assert code == 1
    assert "policy" in capsys.readouterr().err.lower()
