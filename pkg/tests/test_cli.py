import json
import subprocess
import sys

import pytest
import yaml

from spotfast import cli
from spotfast import config as C


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_data_and_rerun(tmp_path, capsys):
    root = tmp_path / "d"
    code, out, _ = run(capsys, "gen-data", "--classes", 3, "--per-class", 2, "--size", 32, "--seed", 7, "--out", root)
    assert code == 0
    manifest = json.loads(out)
    assert manifest["clip_count"] == 6 and manifest["num_classes"] == 3
    code, out, _ = run(capsys, "gen-data", "--classes", 3, "--per-class", 2, "--size", 32, "--seed", 7, "--out", root)
    assert code == 0 and json.loads(out)["status"] == "unchanged"


def test_gen_data_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "gen-data", "--classes", 2, "--per-class", 1, "--size", 32, "--out", blocker / "sub")
    assert code == 2 and "error" in err


def test_gen_data_degenerate_spec(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-data", "--classes", 2, "--size", 8, "--out", tmp_path)
    assert code == 1


@pytest.mark.parametrize("mean,std,windows", [(10.59, 3.2, [15, 19, 23]), (8.2, 2.6, [11, 15, 17])])
def test_window_stats_fixtures(mean, std, windows, capsys):
    code, out, _ = run(capsys, "window-stats", "--mean", mean, "--std", std)
    assert code == 0 and json.loads(out)["windows"] == windows


def test_window_stats_single_duration(tmp_path, capsys):
    path = tmp_path / "d.json"
    path.write_text("[9]")
    code, out, _ = run(capsys, "window-stats", "--durations", path)
    res = json.loads(out)
    assert code == 0 and res["std"] == 0 and res["windows"] == [9, 9, 9]


def test_window_stats_from_headers(small_data, capsys):
    code, out, _ = run(capsys, "window-stats", "--data", small_data)
    res = json.loads(out)
    assert code == 0 and res["count"] == 24 and len(res["windows"]) == 3


def test_window_stats_missing_metadata(tmp_path, capsys):
    (tmp_path / "A" / "train").mkdir(parents=True)
    code, _, err = run(capsys, "window-stats", "--data", tmp_path)
    assert code == 3 and "boundary" in err


def test_window_stats_usage(capsys):
    assert run(capsys, "window-stats")[0] == 1
    assert run(capsys, "window-stats", "--mean", 3)[0] == 1


def test_bad_subcommand_is_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["nope"])
    assert exc.value.code == 1


def test_help_lists_config_keys():
    text = cli.build_parser().format_help()
    keys = [k for k, _, _ in C.describe()]
    assert len(keys) > 40
    for key, default, _ in C.describe():
        assert f"{key} = {json.dumps(default)}" in text
    assert "model.memory.n_keys_spot = 168" in text
    assert "phases[2].lr0 = 0.0001566" in text


def test_invalid_config_key(tmp_path, small_data, capsys):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"preset": "desk", "model": {"memory": {"n_keyz": 3}}}))
    code, _, err = run(capsys, "train", "--config", path, "--phase", 1, "--data", small_data, "--out", tmp_path)
    assert code == 1 and "model.memory.n_keyz" in err


def test_phase2_without_checkpoint(tmp_path, small_data, capsys):
    code, _, err = run(capsys, "train", "--preset", "desk", "--phase", 2, "--data", small_data, "--out", tmp_path)
    assert code == 3 and "phase1.ckpt" in err


@pytest.fixture(scope="module")
def trained(small_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    code = cli.main(["train", "--preset", "desk", "--phase", "1", "--data", str(small_data),
                     "--out", str(out), "--epochs", "2", "--seed", "3"])
    return code, out


def test_train_phase1(trained, capsys):
    code, out = trained
    assert code == 0
    assert (out / "metrics.jsonl").exists() and (out / "phase1.ckpt").exists()


def test_eval_matches_final_log(trained, capsys):
    _, out = trained
    lines = [json.loads(l) for l in (out / "metrics.jsonl").read_text().splitlines()]
    last = [l for l in lines if l.get("event") == "epoch"][-1]
    code, stdout, _ = run(capsys, "eval", "--ckpt", out / "phase1.ckpt", "--split", "train")
    assert code == 0 and json.loads(stdout)["accuracy"] == last["train_acc"]
    code, stdout, _ = run(capsys, "eval", "--ckpt", out / "phase1.ckpt", "--split", "val")
    assert code == 0 and json.loads(stdout)["accuracy"] == last["val_acc"]


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert run(capsys, "eval", "--ckpt", tmp_path / "none.ckpt")[0] == 2


def test_memory_usage(trained, capsys):
    _, out = trained
    code, stdout, _ = run(capsys, "memory-usage", "--ckpt", out / "phase1.ckpt", "--split", "val")
    res = json.loads(stdout)
    assert code == 0
    # 12 val clips, 7 spot steps / 29 fast steps, 2 heads, k = 4.
    assert res["spot"]["total"] == 12 * 7 * 2 * 4 and res["fast"]["total"] == 12 * 29 * 2 * 4
    assert res["spot"]["size"] == 64


def test_entry_point_subprocess():
    proc = subprocess.run([sys.executable, "-m", "spotfast.cli", "window-stats", "--mean", "10.59", "--std", "3.2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout) == {
        "count": 1, "mean": 10.59, "std": 3.2, "windows": [15, 19, 23]}
