import json
import os
import shutil

import pytest

from spikeforge import cli

TINY = os.path.join(os.path.dirname(__file__), "..", "configs", "tiny.json")


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One completed tiny pipeline shared by the read-only tests."""
    out = str(tmp_path_factory.mktemp("tiny"))
    assert run_cli("--config", TINY, "--outdir", out, "run") == 0
    return out


def test_load_config_defaults_are_isolated():
    cfg = cli.load_config()
    cfg["train"]["epochs"] = 999
    assert cli.load_config()["train"]["epochs"] != 999


def test_set_override_types():
    cfg = cli.load_config(None, ["train.epochs=3",
                                 "sweep.amplitudes=[0.002]",
                                 "train.noise=false",
                                 "quantize.q=0.5"])
    assert cfg["train"]["epochs"] == 3
    assert cfg["sweep"]["amplitudes"] == [0.002]
    assert cfg["train"]["noise"] is False
    assert cfg["quantize"]["q"] == 0.5


def test_set_rejects_unknown_key():
    with pytest.raises(cli.ConfigError, match="train.bogus"):
        cli.load_config(None, ["train.bogus=1"])


def test_set_rejects_wrong_type():
    with pytest.raises(cli.ConfigError, match="train.epochs"):
        cli.load_config(None, ["train.epochs=soon"])
    with pytest.raises(cli.ConfigError, match="expects"):
        cli.load_config(None, ["simulate.steps=12.5"])


def test_set_requires_key_value_form():
    with pytest.raises(cli.ConfigError):
        cli.load_config(None, ["train.epochs"])


def test_config_file_missing_is_config_error(tmp_path):
    assert run_cli("--config", str(tmp_path / "no.json"),
                   "--outdir", str(tmp_path), "build") == 2


def test_config_file_invalid_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert run_cli("--config", str(p), "--outdir", str(tmp_path),
                   "build") == 2


def test_unknown_config_section_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"graphs": {"size": 16}}))
    assert run_cli("--config", str(p), "--outdir", str(tmp_path),
                   "build") == 2


def test_stage_order_enforced(tmp_path):
    out = str(tmp_path / "o")
    assert run_cli("--config", TINY, "--outdir", out, "simulate") == 3
    assert run_cli("--config", TINY, "--outdir", out, "build") == 0
    assert run_cli("--config", TINY, "--outdir", out, "quantize") == 3


def test_stale_input_detected(tmp_path):
    out = str(tmp_path / "o")
    assert run_cli("--config", TINY, "--outdir", out, "build") == 0
    assert run_cli("--config", TINY, "--outdir", out, "train") == 0
    # rebuilding under another seed invalidates the trained model
    assert run_cli("--config", TINY, "--set", "graph.seed=9",
                   "--outdir", out, "build") == 0
    assert run_cli("--config", TINY, "--outdir", out, "quantize") == 3


def test_numeric_failure_exit_code(tmp_path, tiny_run):
    out = str(tmp_path / "o")
    shutil.copytree(tiny_run, out, dirs_exist_ok=True)
    # no exponent can represent weights against an absurd threshold
    assert run_cli("--config", TINY, "--set", "quantize.v_th=1e12",
                   "--outdir", out, "quantize") == 4


def test_pipeline_writes_all_manifests(tiny_run):
    for stage in cli.STAGES:
        man = json.load(open(os.path.join(tiny_run,
                                          f"{stage}.manifest.json")))
        assert man["format"] == "spikeforge-manifest"
        assert man["stage"] == stage
        for name, digest in man["outputs"].items():
            assert os.path.exists(os.path.join(tiny_run, name))
            assert len(digest) == 64
    report = json.load(open(os.path.join(tiny_run, "report.json")))
    assert set(report) == {"accuracy", "layer_rates_hz", "partition", "cost"}


def test_train_manifest_chains_build_hash(tiny_run):
    build = json.load(open(os.path.join(tiny_run, "build.manifest.json")))
    train = json.load(open(os.path.join(tiny_run, "train.manifest.json")))
    assert train["inputs"]["graph.json"] == build["outputs"]["graph.json"]


def test_outdir_env_override(tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv(cli.OUTDIR_ENV, str(out))
    assert run_cli("--config", TINY, "--outdir", str(tmp_path / "cli_out"),
                   "build") == 0
    assert (out / "graph.json").exists()
    assert not (tmp_path / "cli_out").exists()


def test_rerun_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        assert run_cli("--config", TINY, "--outdir", out, "run") == 0
        outs.append(out)
    names = sorted(os.listdir(outs[0]))
    assert names == sorted(os.listdir(outs[1]))
    for name in names:
        with open(os.path.join(outs[0], name), "rb") as fa, \
             open(os.path.join(outs[1], name), "rb") as fb:
            assert fa.read() == fb.read(), name


def test_sweep_writes_rows_and_csv(tmp_path, tiny_run):
    out = str(tmp_path / "o")
    shutil.copytree(tiny_run, out, dirs_exist_ok=True)
    assert run_cli("--config", TINY, "--outdir", out, "sweep") == 0
    sweep = json.load(open(os.path.join(out, "sweep.json")))
    labels = [r["label"] for r in sweep["rows"]]
    assert labels == ["regularized", "1/500"]
    for row in sweep["rows"]:
        assert set(row["accuracy"]) == {"40", "120"}
        assert row["energy_per_inference"] > 0
    assert os.path.exists(os.path.join(out, "sweep.csv"))


def test_sweep_empty_amplitudes_regularized_only(tmp_path, tiny_run):
    out = str(tmp_path / "o")
    shutil.copytree(tiny_run, out, dirs_exist_ok=True)
    assert run_cli("--config", TINY, "--set", "sweep.amplitudes=[]",
                   "--outdir", out, "sweep") == 0
    sweep = json.load(open(os.path.join(out, "sweep.json")))
    assert [r["label"] for r in sweep["rows"]] == ["regularized"]
