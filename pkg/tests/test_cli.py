import subprocess
import sys

import pytest

from edasplit.cli import main, parse_config_text, UsageError
from edasplit.compare import RunConfig
from edasplit.io import read_columns


def test_gradcheck_exit_zero(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    assert "ok" in capsys.readouterr().out


def test_compare_without_methods_is_usage_error(tmp_path, capsys):
    assert main(["compare", "--scenario", "linear", "--out", str(tmp_path)]) == 2
    assert "method" in capsys.readouterr().err


def test_unknown_flag():
    with pytest.raises(SystemExit) as info:
        main(["compare", "--bogus", "1"])
    assert info.value.code == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("methods = detrend\nbogus = 1\n")
    assert main(["compare", "--config", str(cfg)]) == 2


def test_missing_input_is_usage_error(tmp_path):
    assert main(["compare", "--method", "detrend", "--input", str(tmp_path / "no.csv")]) == 2


def test_bad_data_exit_one(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,eda\n0,1\n0.125,nan\n")
    assert main(["compare", "--method", "detrend", "--input", str(p),
                 "--out", str(tmp_path / "o")]) == 1


def test_synth_step(tmp_path):
    assert main(["synth", "--scenario", "step-scl", "--out", str(tmp_path)]) == 0
    for name in ("step-scl.csv", "step-scl_truth.csv", "step-scl_events.csv"):
        assert (tmp_path / name).is_file()
    assert len(read_columns(tmp_path / "step-scl.csv")["eda_us"]) == 1440


def test_config_then_cli_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# run\nscenarios = linear\nmethods = detrend\nout = "
                   f"{tmp_path / 'from_cfg'}\nseed = 3\n")
    assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / "cli")]) == 0
    assert (tmp_path / "cli" / "report.csv").is_file()
    assert not (tmp_path / "from_cfg").exists()


def test_parse_config_types():
    vals = parse_config_text("methods=detrend, deconv\nlam=none\nlr=0.01\nworkers=2")
    assert vals == {"methods": ("detrend", "deconv"), "lam": None, "lr": 0.01, "workers": 2}
    cfg = RunConfig(**vals)
    assert cfg.methods == ("detrend", "deconv")
    with pytest.raises(UsageError):
        parse_config_text("workers=two")
    with pytest.raises(UsageError):
        parse_config_text("no equals sign")


def test_every_key_is_a_flag(capsys):
    from edasplit.compare import CONFIG_KEYS
    with pytest.raises(SystemExit):
        main(["compare", "--help"])
    text = capsys.readouterr().out
    for key in CONFIG_KEYS:
        assert f"--{key}" in text


def test_features_and_plot(tmp_path, capsys):
    assert main(["features", "--scenario", "clean", "--method", "detrend"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("frame,method") and len(lines) == 3
    svg = tmp_path / "p.svg"
    assert main(["plot", "--scenario", "clean", "--method", "deconv", "--frame", "1",
                 "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<svg")


def test_train_writes_checkpoint(tmp_path):
    assert main(["train", "--scenario", "clean", "--method", "feel-3", "--epochs", "1",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "feel-3.ckpt").is_file()
    assert len(read_columns(tmp_path / "feel-3_loss.csv")["loss"]) == 1
    assert main(["compare", "--scenario", "clean", "--method", "feel-3",
                 "--checkpoint", f"feel-3={tmp_path / 'feel-3.ckpt'}",
                 "--out", str(tmp_path / "o")]) == 0


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "edasplit", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "compare" in res.stdout
