import json
import os
import pathlib
import subprocess

import pytest

CLI = os.environ["SHADOWSTEER_CLI"]
STACK = pathlib.Path(os.environ["SHADOWSTEER_TINY_STACK"])


def run(*args, check=True):
    proc = subprocess.run([CLI, "--log-level", "warn", *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}\n{proc.stdout}\n{proc.stderr}")
    return proc


def test_synth_data_default_corpus(tmp_path):
    run("synth-data", "--out", tmp_path / "corpus", "--identities", 200, "--lights", 6, "--size", 32, "--seed", 1)
    manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
    assert len(manifest["samples"]) == 1200
    assert len(manifest["splits"]["train"]) + len(manifest["splits"]["val"]) == 1200
    again = run("synth-data", "--out", tmp_path / "corpus", check=False)
    assert again.returncode != 0
    assert "overwrite" in again.stderr


def test_bad_flags_exit_2():
    assert run("generate", "--bogus", check=False).returncode == 2
    assert run("no-such-command", check=False).returncode == 2
    bad_light = run("generate", "--diffusion", STACK / "diffusion.pt", "--sd", STACK / "sd.pt", "--id", STACK / "id.pt",
                    "--out", "/tmp/unused", "--light=1,2", check=False)
    assert bad_light.returncode == 2


def test_missing_checkpoint_exits_3_with_hint(tmp_path):
    proc = run("generate", "--diffusion", tmp_path / "absent.pt", "--out", tmp_path / "o", check=False)
    assert proc.returncode == 3
    assert "train-diffusion" in proc.stderr
    proc = run("generate", "--diffusion", STACK / "diffusion.pt", "--sd", tmp_path / "absent.pt", "--id",
               STACK / "id.pt", "--out", tmp_path / "o", "--light=-5,0.5,2", check=False)
    assert proc.returncode == 3
    assert "train-sd" in proc.stderr


def test_strength_zero_matches_uncontrolled(tmp_path):
    run("generate", "--diffusion", STACK / "diffusion.pt", "--out", tmp_path / "plain", "--label", 1, "--seed", 1)
    run("generate", "--diffusion", STACK / "diffusion.pt", "--sd", STACK / "sd.pt", "--id", STACK / "id.pt",
        "--out", tmp_path / "ctl", "--label", 1, "--seed", 1, "--light=-5,0.5,2", "--strength", 0)
    assert (tmp_path / "plain" / "result.png").read_bytes() == (tmp_path / "ctl" / "result.png").read_bytes()
    trace = json.loads((tmp_path / "ctl" / "trace.json").read_text())
    assert trace["iterations"] == 0
    assert trace["executed"] == 0


def test_replay_reproduces_bytes(tmp_path):
    common = ["--diffusion", STACK / "diffusion.pt", "--sd", STACK / "sd.pt", "--id", STACK / "id.pt"]
    run("generate", *common, "--out", tmp_path / "a", "--label", 2, "--seed", 3, "--light=6,0.5,2",
        "--max-iterations", 5)
    run("generate", *common, "--out", tmp_path / "b", "--replay", tmp_path / "a" / "config.json")
    for name in ("result.png", "target_shadow.png", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_with_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"diffusion": str(STACK / "diffusion.pt"), "label": 3, "seed": 7}))
    run("--config", cfg, "generate", "--out", tmp_path / "from_cfg")
    written = json.loads((tmp_path / "from_cfg" / "config.json").read_text())
    assert written["label"] == 3 and written["seed"] == 7
    run("--config", cfg, "generate", "--out", tmp_path / "override", "--seed", 8)
    written = json.loads((tmp_path / "override" / "config.json").read_text())
    assert written["label"] == 3 and written["seed"] == 8
    cfg.write_text("{not json")
    assert run("--config", cfg, "generate", "--out", tmp_path / "x", check=False).returncode == 2


def test_ablate_two_variants(tmp_path):
    run("ablate", "--diffusion", STACK / "diffusion.pt", "--sd", STACK / "sd.pt", "--id", STACK / "id.pt",
        "--data", STACK / "data", "--out", tmp_path / "abl", "--variants", "a,c", "--seeds", 20,
        "--max-iterations", 3)
    report = json.loads((tmp_path / "abl" / "ablation_report.json").read_text())
    assert report["schema"] == "shadowsteer/ablation-report"
    assert [v["tag"] for v in report["variants"]] == ["a_full", "c_last_step"]
    for v in report["variants"]:
        assert len(v["seeds"]) == 20
        assert len(v["shadow_compliance"]) == 20
        for key in ("mean_shadow_compliance", "mean_toy_cvs", "mean_uncontrolled_deviation"):
            assert isinstance(v[key], float)
    assert (tmp_path / "abl" / "ablation_report.md").exists()
