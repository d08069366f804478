import json
import os
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from loradp.cli import main
from loradp.config import SCHEMAS, emit_config, parse_config, parse_config_text, parse_override, validate
from loradp.errors import ConfigError


def test_flag_overrides_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("command: moments\nseed: 1\nparams:\n  samples: 5000\n")
    assert parse_config(path).seed == 1
    cfg = parse_config(path, command="moments", seed=2, params={"samples": 7000})
    assert cfg.seed == 2 and cfg.params["samples"] == 7000


def test_defaults_are_filled():
    cfg = validate({"command": "tv-scaling"})
    assert cfg.params == {k: v for k, (_, v) in SCHEMAS["tv-scaling"].items()}
    assert cfg.output_dir.endswith("tv-scaling")


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv("LORADP_OUTPUT_DIR", str(tmp_path))
    assert validate({"command": "moments"}).output_dir == str(tmp_path)


@pytest.mark.parametrize("raw, field", [
    ({"command": "moments", "colour": 1}, "colour"),
    ({"command": "moments", "params": {"nope": 1}}, "params.nope"),
    ({"command": "lemma1", "params": {"m": 4}}, "params.r"),
    ({"command": "moments", "params": {"samples": "many"}}, "params.samples"),
    ({"command": "moments", "seed": -1}, "seed"),
    ({"command": "launch"}, "command"),
])
def test_schema_violations_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        validate(raw)
    assert info.value.field == field


def test_overrides_parse_yaml_values():
    assert parse_override("m=[1, 2]") == ("m", [1, 2])
    assert parse_override("eta=1e-3") == ("eta", "1e-3")
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_exponent_strings_accepted_for_floats():
    assert validate({"command": "verify-identity", "params": {"tolerance": "1e-10"}}).params["tolerance"] == 1e-10


@st.composite
def configs(draw):
    command = draw(st.sampled_from(sorted(SCHEMAS)))
    raw = {"command": command, "seed": draw(st.integers(0, 2 ** 64 - 1)),
           "parallelism": draw(st.integers(1, 8)), "output_dir": draw(st.sampled_from(["out", "a/b c"]))}
    if command == "lemma1":
        raw["params"] = {"m": draw(st.integers(2, 999)), "r": draw(st.integers(1, 64))}
    if command == "dp-compare":
        raw["params"] = {"clip": draw(st.floats(1e-12, 1e12)), "noise": draw(st.floats(0, 1e6))}
    return validate(raw)


@given(configs())
def test_round_trip(cfg):
    assert parse_config_text(emit_config(cfg)) == cfg


def test_cli_missing_required_field(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["lemma1", "--output-dir", str(out)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config-error" and err["field"] == "params.m"
    assert json.loads((out / "error.json").read_text())["field"] == "params.m"


def test_cli_missing_r_only(tmp_path, capsys):
    assert main(["lemma1", "-p", "m=64", "--output-dir", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "params.r"


def test_cli_invalid_argument_exit_code(tmp_path, capsys):
    assert main(["dp-compare", "-p", "trials=10", "--output-dir", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "invalid-argument"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_divergence_exit_code(tmp_path, capsys):
    code = main(["mia", "-p", "methods=[full]", "-p", "seeds=1", "--output-dir", str(tmp_path),
                 "-p", "study={n_per_split: 20, dim: 4, hidden: 4, classes: 2, pretrain_samples: 30, "
                       "pretrain_epochs: 1, pretrain_lr: .inf}"])
    assert code == 3
    assert json.loads(capsys.readouterr().err)["error"] == "divergence"


def test_cli_unknown_study_key(tmp_path, capsys):
    assert main(["mia", "-p", "study={colour: 1}", "--output-dir", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "params.study.colour"


def test_run_writes_manifest_and_replays(tmp_path):
    out = tmp_path / "vi"
    assert main(["verify-identity", "-p", "T=5", "--output-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["manifest_version"] == 1
    assert manifest["config"]["params"]["T"] == 5
    assert manifest["config"]["params"]["tolerance"] == 1e-10
    assert manifest["outputs"] == ["identity.json", "identity_steps.csv"]
    assert manifest["wall_time_s"] >= 0
    replay = tmp_path / "replay"
    assert main(["replay", str(out / "manifest.json"), "--output-dir", str(replay)]) == 0
    for name in manifest["outputs"]:
        assert (out / name).read_bytes() == (replay / name).read_bytes()


def test_csv_format(tmp_path):
    assert main(["moments", "-p", "samples=2000", "-p", "k=[1]", "--output-dir", str(tmp_path)]) == 0
    raw = (tmp_path / "moments.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == "k,order,empirical,exact,rel_error"
    assert len(lines) == 4


def test_console_script_entry_point(tmp_path):
    env = dict(os.environ, LORADP_OUTPUT_DIR=str(tmp_path / "env_out"))
    res = subprocess.run([sys.executable, "-m", "loradp.cli", "gram-stats", "-p", "trials=2000",
                          "-p", "cross_trials=2000", "-p", "vg_samples=2000"],
                         env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "env_out" / "gram_stats.csv").exists()
