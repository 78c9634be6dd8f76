import csv

import pytest

from irsnoma import cli

FAST = ["scene.users=2", "scene.irs_rows=2", "scene.irs_cols=2", "env.steps=4", "agents.episodes=3",
        "agents.batch_size=4", "agents.power_hidden=[8]", "agents.angle_hidden=[8]",
        "agents.critic_hidden=[8]", "agents.joint_hidden=[8]", "run.checkpoint_every=2"]
TINY = ["scene.users=2", "scene.ap_positions=[[2.5,2.5,3.0]]", "scene.irs_rows=1", "scene.irs_cols=1",
        "scene.user_positions=[[1.5,1.0,1.0],[3.5,3.0,1.0]]", "env.p_block=0", "env.mobility=false"]


def sets(items):
    out = []
    for i in items:
        out += ["--set", i]
    return out


def train(tmp_path, *extra, name="out"):
    root = tmp_path / name
    assert cli.main(["train", "--out", str(root), "--seed", "0"] + sets(FAST) + list(extra)) == 0
    (run,) = [p for p in root.iterdir() if p.is_dir()]
    return run


def read_csv(p):
    with open(p) as fh:
        return list(csv.DictReader(fh))


def test_train_outputs(tmp_path):
    run = train(tmp_path)
    rows = read_csv(run / "metrics.csv")
    assert len(rows) == 3 and [r["episode"] for r in rows] == ["0", "1", "2"]
    assert list(rows[0]) == list(cli.drl.METRIC_COLUMNS)
    ck = sorted(p.name for p in (run / "checkpoints").iterdir())
    assert ck == ["seed0-ep00002.ckpt", "seed0-final.ckpt"]
    assert "users: 2" in (run / "config.resolved").read_text()
    assert run.name.startswith("two_agent-")


def test_metrics_byte_identical(tmp_path):
    a = train(tmp_path, name="a")
    b = train(tmp_path, name="b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert a.name == b.name


def test_multiple_seeds(tmp_path):
    root = tmp_path / "m"
    assert cli.main(["train", "--out", str(root), "--seeds", "0", "1"] + sets(FAST)) == 0
    (run,) = list(root.iterdir())
    assert [r["seed"] for r in read_csv(run / "metrics.csv")] == ["0"] * 3 + ["1"] * 3


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["train", "--seed", "0"] + sets(FAST)) == 0
    assert (tmp_path / "env").is_dir()


def test_evaluate_twice_identical(tmp_path, capsys):
    ck = train(tmp_path) / "checkpoints" / "seed0-final.ckpt"
    outs = []
    for name in ("e1.csv", "e2.csv"):
        assert cli.main(["evaluate", str(ck), "--episodes", "2", "--out", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert len(read_csv(tmp_path / "e1.csv")) == 2
    capsys.readouterr()
    assert cli.main(["evaluate", str(ck), "--episodes", "1"]) == 0
    assert capsys.readouterr().out.startswith("run_id,seed,episode")


def test_evaluate_with_override(tmp_path):
    ck = train(tmp_path) / "checkpoints" / "seed0-final.ckpt"
    lo = cli.evaluate_checkpoint(ck, 1, overrides=["link.p_opt=1.0"])
    hi = cli.evaluate_checkpoint(ck, 1, overrides=["link.p_opt=5.0"])
    assert hi[0]["sum_rate"] > lo[0]["sum_rate"]


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path), "--set", "agents.nope=1"]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert cli.main(["evaluate", str(bad)]) == cli.EXIT_RUNTIME
    assert cli.main(["evaluate", str(tmp_path / "missing.ckpt")]) == cli.EXIT_RUNTIME
    assert cli.main(["sweep", "--axis", "mirrors", "--values", "5", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "--axis", "power", "--values", "1", "2", "--seeds", "0", "1", "2",
                     "--max-cells", "2", "--out", str(tmp_path)] + sets(FAST)) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_sweep_power(tmp_path):
    out = tmp_path / "s"
    args = ["sweep", "--axis", "power", "--values", "2", "1", "--schemes", "two_agent", "no_irs",
            "--seed", "0", "--out", str(out)] + sets(FAST)
    assert cli.main(args) == 0
    rows = read_csv(out / "sweep-power.csv")
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    keys = [(float(r["value"]), r["scheme"]) for r in rows]
    assert keys == sorted(keys) and len(keys) == 4


def test_sweep_r_min_families(tmp_path):
    out = tmp_path / "r"
    args = ["sweep", "--axis", "users", "--values", "2", "--schemes", "fixed_power", "--r-min", "1", "2",
            "--seed", "0", "--out", str(out)] + sets(FAST)
    assert cli.main(args) == 0
    assert {r["scheme"] for r in read_csv(out / "sweep-users.csv")} == {"fixed_power[r_min=1]",
                                                                        "fixed_power[r_min=2]"}


def test_sweep_parallel_matches_serial(tmp_path):
    base = ["sweep", "--axis", "power", "--values", "1", "3", "--schemes", "no_irs", "--seed", "0"] + sets(FAST)
    assert cli.main(base + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    assert (tmp_path / "a" / "sweep-power.csv").read_bytes() == (tmp_path / "b" / "sweep-power.csv").read_bytes()


def test_oracle_command(tmp_path):
    out = tmp_path / "o"
    args = ["oracle", "--seed", "0", "--alpha-steps", "4", "--angle-steps", "3", "--sample", "5",
            "--out", str(out)] + sets(TINY)
    assert cli.main(args) == 0
    (best,) = read_csv(out / "oracle-seed0.csv")
    assert abs(float(best["alpha_0"]) + float(best["alpha_1"]) - 1) < 1e-12
    assert len(read_csv(out / "grid-seed0.csv")) == 5
    assert cli.main(["oracle", "--out", str(out)]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("scheme", ["single_agent_ddpg", "random_irs", "no_irs", "fixed_power", "dqn_codebook"])
def test_train_each_scheme(tmp_path, scheme):
    run = train(tmp_path, "--scheme", scheme, "--set", "baseline.dqn_hidden=[8]")
    assert run.name.startswith(scheme)
    assert len(read_csv(run / "metrics.csv")) == 3
