from __future__ import annotations

import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcifp.cnn import TrainConfig, train
from dcifp.corpus import corpus
from dcifp.features import build_dataset
from dcifp.synth import builtin_profiles

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (ok, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}")


class Timed:
    """Result of a cached session computation and how long it took."""

    def __init__(self, fn):
        t = time.perf_counter()
        self.value = fn()
        self.seconds = time.perf_counter() - t


@pytest.fixture(scope="session")
def sweep_run():
    """Full default sweep; ``step_seconds[W]`` is the train+test time of one W."""
    from dcifp.experiments import sweep_experiment
    marks = [time.perf_counter()]
    steps = {}

    def progress(W, report):
        marks.append(time.perf_counter())
        steps[W] = marks[-1] - marks[-2]

    run = Timed(lambda: sweep_experiment(progress=progress))
    # the first step also absorbs corpus generation
    run.step_seconds = steps
    return run


@pytest.fixture(scope="session")
def small_bundle():
    """Two-class W=20 model trained in a few seconds, for scan and CLI tests."""
    profs = builtin_profiles()
    sel = {k: profs[k] for k in ("YouTube", "WhatsApp")}
    ds = build_dataset(corpus(sel, 0.1, {20: 150}, seed=42), 20)
    return train(ds, TrainConfig(epochs=4, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# every pipeline stage, in dependency order: (manifest, argv)
PIPELINE = [
    ("profiles.ini.manifest.json", ["profiles", "--out", "profiles.ini"]),
    ("yt.csv.manifest.json", ["gen", "--app", "YouTube", "--duration", "900", "--seed", "1",
                              "--profiles", "profiles.ini", "--out", "yt.csv"]),
    ("wa.csv.manifest.json", ["gen", "--app", "WhatsApp", "--duration", "300", "--seed", "2",
                              "--rnti", "4602", "--out", "wa.csv"]),
    ("yt_cap.csv.manifest.json", ["capture", "--prob", "0.1", "--seed", "3",
                                  "yt.csv", "yt_cap.csv"]),
    ("wa_cap.csv.manifest.json", ["capture", "--prob", "0.1", "--seed", "4", "--jitter-ms", "2",
                                  "wa.csv", "wa_cap.csv"]),
    ("ds.csv.manifest.json", ["dataset", "--window", "20", "--max-per-class", "120",
                              "--seed", "5", "--out", "ds.csv", "yt_cap.csv", "wa_cap.csv"]),
    ("model.bin.manifest.json", ["train", "--dataset", "ds.csv", "--epochs", "3",
                                 "--seed", "6", "--out", "model.bin"]),
    ("report.txt.manifest.json", ["eval", "--model", "model.bin", "--dataset", "ds.csv",
                                  "--report", "report.txt"]),
    ("cell.csv.manifest.json", ["gen", "--cell", "16", "--duration", "100", "--seed", "7",
                                "--out", "cell.csv"]),
    ("sig.txt.manifest.json", ["signature", "--out", "sig.txt"]),
    ("inj.csv.manifest.json", ["inject", "--spec", "sig.txt", "--trace", "cell.csv",
                               "--rnti", "4ABC", "--t0-ms", "10000", "--capture-estimate", "0.1",
                               "--seed", "8", "--out", "inj.csv"]),
    ("inj_cap.csv.manifest.json", ["capture", "--prob", "0.1", "--seed", "9",
                                   "inj.csv", "inj_cap.csv"]),
    ("hunt.txt.manifest.json", ["hunt", "--spec", "sig.txt", "--trace", "inj_cap.csv",
                                "--t0-ms", "10000", "--out", "hunt.txt"]),
    ("scan.txt.manifest.json", ["scan", "--model", "model.bin", "--trace", "inj_cap.csv",
                                "--out", "scan.txt"]),
    ("track.txt.manifest.json", ["scan", "--model", "model.bin", "--trace", "inj_cap.csv",
                                 "--rnti", "4ABC", "--out", "track.txt"]),
    ("lat.csv.manifest.json", ["latency", "--windows", "20,40", "--trials", "10",
                               "--out", "lat.csv"]),
    ("lat2.csv.manifest.json", ["latency", "--windows", "20", "--out", "lat2.csv",
                                "yt_cap.csv", "wa_cap.csv"]),
    ("grad.txt.manifest.json", ["gradcheck", "--window", "12", "--classes", "3",
                                "--out", "grad.txt"]),
    ("sweep/manifest.json", ["sweep", "--windows", "20:40:20", "--at-100", "40",
                             "--test-per-class", "20", "--epochs", "1", "--save-models",
                             "--out-dir", "sweep"]),
]


@pytest.fixture(scope="session")
def cli_pipeline(tmp_path_factory):
    """Run every subcommand once in a scratch directory.

    Returns (directory, {manifest: exit code}, seconds).
    """
    import os
    from dcifp.cli import main
    d = tmp_path_factory.mktemp("cli")
    old = os.getcwd()
    os.chdir(d)
    try:
        t = time.perf_counter()
        codes = {m: main(argv) for m, argv in PIPELINE}
        return d, codes, time.perf_counter() - t
    finally:
        os.chdir(old)
