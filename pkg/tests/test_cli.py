from __future__ import annotations

import json
import subprocess
import sys

import pytest

from dcifp.cli import main
from dcifp.cnn import load_model
from dcifp.trace import read_trace


def test_every_stage_succeeds(cli_pipeline):
    _, codes, _ = cli_pipeline
    assert codes == {m: 0 for m in codes}


def test_manifest_contents(cli_pipeline):
    d, _, _ = cli_pipeline
    man = json.loads((d / "yt_cap.csv.manifest.json").read_text())
    assert man["tool"] == "dcifp" and man["subcommand"] == "capture"
    assert man["seeds"] == {"seed": 3}
    assert set(man["inputs"]) == {"yt.csv"} and set(man["outputs"]) == {"yt_cap.csv"}
    assert man["params"]["prob"] == 0.1 and man["exit_code"] == 0
    assert len(man["stdout_sha256"]) == 64 and man["timing_s"] >= 0
    sweep = json.loads((d / "sweep" / "manifest.json").read_text())
    assert "sweep/model_W40.bin" in sweep["outputs"]


def test_outputs_are_well_formed(cli_pipeline):
    d, _, _ = cli_pipeline
    assert read_trace(d / "yt_cap.csv").meta.capture_ratio == 0.1
    assert load_model(d / "model.bin").class_order == ["YouTube", "WhatsApp"]
    hunt = dict(l.split("=", 1) for l in (d / "hunt.txt").read_text().splitlines())
    assert hunt["unique_target"] == "4ABC"
    assert (d / "track.txt").read_text().count("rnti.") >= 2
    assert (d / "grad.txt").read_text().startswith("W=12\n")
    assert (d / "lat.csv").read_text().splitlines()[0] == "app,window,n,mean_s,std_s,median_s"
    assert (d / "sweep" / "summary.csv").read_text().count("\n") == 3


def test_replay_detects_changed_output(cli_pipeline, tmp_path, monkeypatch):
    d, _, _ = cli_pipeline
    monkeypatch.chdir(d)
    man = json.loads((d / "sig.txt.manifest.json").read_text())
    man["outputs"]["sig.txt"] = "0" * 64
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(man))
    assert main(["replay", str(bad)]) == 1
    assert main(["replay", "sig.txt.manifest.json"]) == 0


def test_replay_rejects_foreign_json(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "x.json").write_text('{"tool": "other"}')
    assert main(["replay", "x.json"]) == 1


def test_missing_input_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["capture", "--prob", "0.1", "nope.csv", "out.csv"]) == 1
    assert "no such file" in capsys.readouterr().err
    assert json.loads((tmp_path / "capture.manifest.json").read_text())["exit_code"] == 1


def test_bad_values_exit_code(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["gen", "--app", "Nope", "--duration", "5", "--out", "a.csv"]) == 1
    assert main(["gen", "--app", "YouTube", "--duration", "5", "--out", "a.csv"]) == 0
    assert main(["capture", "--prob", "1.5", "a.csv", "b.csv"]) == 1


@pytest.mark.parametrize("argv", [
    ["gen", "--duration", "5", "--out", "a.csv"],
    ["gen", "--app", "YouTube", "--cell", "3", "--duration", "5", "--out", "a.csv"],
    ["sweep", "--windows", "20:x", "--out-dir", "s"],
    ["scan", "--model", "m", "--trace", "t", "--rnti", "XYZ", "--out", "o"],
    ["nosuch"],
])
def test_usage_errors_exit_2(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 2


def test_scan_window_mismatch(cli_pipeline, monkeypatch):
    d, _, _ = cli_pipeline
    monkeypatch.chdir(d)
    assert main(["--manifest", "x.json", "scan", "--model", "model.bin", "--trace",
                 "inj_cap.csv", "--window", "40", "--out", "s2.txt"]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "dcifp", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.startswith("dcifp ")


def test_help_documents_every_flag(capsys):
    from dcifp.cli import build_parser
    parser = build_parser()
    sub = next(a for a in parser._actions if a.choices and isinstance(a.choices, dict))
    for name, sp in sub.choices.items():
        with pytest.raises(SystemExit) as e:
            main([name, "--help"])
        assert e.value.code == 0
        text = capsys.readouterr().out
        for act in sp._actions:
            for flag in act.option_strings:
                assert flag in text, (name, flag)
            if act.option_strings and act.dest != "help":
                assert act.help, (name, act.dest)
