import os
import subprocess
import sys

import pytest

from isoseg.cli import EXIT_CODES, main


def test_beta_reports_formula_pinned_and_discrepancy(capsys):
    assert main(["beta"]) == 0
    out = capsys.readouterr().out
    assert "csf: 2.728726" in out
    assert "wm: 1.476364" in out
    assert "1.5" in out and "DISCREPANCY" in out


def test_split_prints_five_folds_of_two(capsys):
    ids = [f"s{i}" for i in range(10)]
    assert main(["split", "--ids", *ids, "--seed", "1"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert all(len(l.split("validation=")[1].split(",")) == 2 for l in lines)


def test_split_too_few_subjects_is_data_error(capsys):
    assert main(["split", "--ids", "a", "b", "--k", "5"]) == EXIT_CODES["data"]
    assert capsys.readouterr().err.startswith("error[data]:")


def test_missing_config_file_is_io_or_config_error(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o"), "--config",
                 str(tmp_path / "nope.ini")])
    assert code in (EXIT_CODES["io"], EXIT_CODES["config"], EXIT_CODES["data"])
    assert capsys.readouterr().err.startswith("error[")


def test_bad_config_key_is_config_error(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[train]\nepochz = 1\n")
    assert main(["phantom", "--out", str(tmp_path / "d"), "--n", "2", "--dims", "16", "16", "16"]) == 0
    code = main(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o"), "--config", str(ini)])
    assert code == EXIT_CODES["config"]
    assert "error[config]" in capsys.readouterr().err


def test_phantom_train_predict_evaluate(tmp_path, capsys):
    data, run, pred = tmp_path / "data", tmp_path / "run", tmp_path / "pred"
    assert main(["phantom", "--out", str(data), "--n", "2", "--dims", "16", "16", "16", "--histograms"]) == 0
    assert (data / "phantom000" / "t1.vol").exists() and (data / "phantom000" / "histograms.tsv").exists()
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\npatch_size = 16\n")
    assert main(["train", "--data", str(data), "--out", str(run), "--config", str(ini), "--epochs", "1",
                 "--patches-per-epoch", "2", "--seed", "3"]) == 0
    assert (run / "model.ckpt").exists() and (run / "manifest.txt").exists()
    manifest = (run / "manifest.txt").read_text()
    assert "seed = 3" in manifest and "[betas]" in manifest
    assert main(["predict", "--checkpoint", str(run / "model.ckpt"), "--data", str(data), "--out", str(pred)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--pred", str(pred), "--truth", str(data), "--tsv", str(tmp_path / "m.tsv")]) == 0
    out = capsys.readouterr().out
    assert "CSF" in out and "WM" in out and "mean" in out
    assert (tmp_path / "m.tsv").read_text().startswith("subject\tcsf_dsc")


def test_console_script_runs_as_module():
    env = dict(os.environ, ISOSEG_THREADS="1")
    res = subprocess.run([sys.executable, "-m", "isoseg.cli", "beta", "--csf", "0.5", "--gm", "0.25",
                          "--wm", "0.25", "--lambda", "0"], capture_output=True, text=True, env=env)
    assert res.returncode == 0
    assert "csf: 1.000000" in res.stdout


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
