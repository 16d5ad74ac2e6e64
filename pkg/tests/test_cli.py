import json
from pathlib import Path

import numpy as np
import pytest

from stratstab import ConfigError, load_config, run_pipeline, write_matrix
from stratstab.cli import PipelineError, main, read_trajectories
from stratstab.config import bundled_config, parse_config

REPO = Path(__file__).resolve().parents[1]

SMALL = """
[model]
kind = "advdiff"
n = 40
nu = 0.01
c = -0.5

[mask]
lo = 0.3
hi = 0.5

[controller]
kind = "real"
target_rate = -0.15
tuning_paths = 8
tuning_T = 10.0

[sde]
T = 30.0
paths = 8
seed = 3
record_dt = 0.1

[sweep]
param = "sigma"
values = [0.0, 4.0]
paths = 8
"""


def write_cfg(tmp_path, text=SMALL, name="cfg.toml", **subs):
    for old, new in subs.items():
        text = text.replace(old.replace("__", " = "), new)
    p = tmp_path / name
    p.write_text(text)
    return p


def test_bundled_config_contents():
    cfg = load_config(REPO / "configs" / "advdiff_real.toml")
    assert (cfg.model.n, cfg.model.nu, cfg.model.c) == (200, 0.01, -0.5)
    assert (cfg.mask.lo, cfg.mask.hi) == (0.3, 0.5)
    assert cfg.controller.kind == "real" and cfg.sde.paths == 64 and cfg.sde.T == 60.0
    assert bundled_config("advdiff_real.toml").read_text() == (REPO / "configs" / "advdiff_real.toml").read_text()
    assert load_config("advdiff_real.toml") == cfg.with_overrides()


@pytest.mark.parametrize("data, match", [
    ({}, "missing \\[model\\]"),
    ({"model": {"kind": "advdiff"}, "extra": {}}, "unknown sections"),
    ({"model": {"kind": "advdiff", "size": 3}}, "unknown keys"),
    ({"model": {"kind": "advdiff", "n": 4}}, "model.n"),
    ({"model": {"kind": "advdiff", "n": "40"}}, "integer"),
    ({"model": {"kind": "advdiff", "nu": "x"}}, "number"),
    ({"model": {"kind": "advdiff", "nu": -1}}, "nu"),
    ({"model": {"kind": "fem"}}, "model.kind"),
    ({"model": {"kind": "matrix"}}, "model.path"),
    ({"model": {"kind": "matrix", "path": "/nonexistent/m.txt"}}, "does not exist"),
    ({"model": {}, "mask": {"lo": 0.6, "hi": 0.4}}, "mask"),
    ({"model": {}, "controller": {"kind": "hybrid"}}, "controller.kind"),
    ({"model": {}, "controller": {"target_rate": 0.2}}, "negative"),
    ({"model": {}, "controller": {"sigma": -1.0}}, "sigma"),
    ({"model": {}, "sde": {"paths": 0}}, "paths"),
    ({"model": {}, "sde": {"seed": -1}}, "seed"),
    ({"model": {}, "sde": {"scheme": "rk4"}}, "scheme"),
    ({"model": {}, "certify": {"gamma": 0.0}}, "gamma"),
    ({"model": {}, "certify": {"window": 2.0}}, "window"),
    ({"model": {}, "output": {"per_path": "yes"}}, "true or false"),
    ({"model": {}, "sweep": {"param": "nu"}}, "sweep.param"),
])
def test_config_validation(data, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(data)


def test_missing_config_file_and_bad_toml(tmp_path, capsys):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert main(["run", "--config", str(bad)]) == 2


def test_matrix_path_relative_to_config(tmp_path):
    write_matrix(tmp_path / "a.txt", np.diag([-1.0, 2.0, 3.0]))
    p = write_cfg(tmp_path, '[model]\nkind = "matrix"\npath = "a.txt"\n')
    cfg = load_config(p)
    assert Path(cfg.model.path) == tmp_path / "a.txt"


def test_spectrum_subcommand(tmp_path):
    out = tmp_path / "out"
    assert main(["spectrum", "--config", str(write_cfg(tmp_path)), "--out", str(out), "--quiet"]) == 0
    info = json.loads((out / "spectrum.json").read_text())
    assert info["N"] == 4 and info["semisimple"] is True
    assert info["sum_re"] == pytest.approx(0.96, rel=0.05)
    rows = (out / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "index,re,im,residual" and len(rows) == 41


def test_run_pass_and_round_trip(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "run"
    code = main(["run", "--config", str(cfg), "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0
    assert "verdict: PASS" in text and "N=4" in text and "M=3" in text
    for name in ("spectrum.csv", "spectrum.json", "synthesis.json", "ensemble.csv", "certificate.json", "summary.txt"):
        assert (out / name).is_file()
    syn = json.loads((out / "synthesis.json").read_text())
    assert set(syn) == {"N", "M", "sigma", "achieved_rate", "gram_condition", "eq18_residual", "kind"}
    assert syn["eq18_residual"] <= 1e-8 and syn["kind"] == "real"
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["verdict"] == "PASS" and cert["paths"] == 8
    assert (out / "paths" / "path_00000.csv").read_text().startswith("t,norm_X,norm_Xu,norm_Xs\n")
    # certificate recomputed from the written trajectories
    assert main(["certify", "--config", str(cfg), "--trajectories", str(out), "--out", str(tmp_path / "c"),
                 "--quiet"]) == 0
    again = json.loads((tmp_path / "c" / "certificate.json").read_text())
    assert again["gamma_hat"] == pytest.approx(cert["gamma_hat"], rel=1e-12)
    assert len(read_trajectories(out)) == 8


def test_outputs_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("T = 30.0", "T = 5.0").replace("tuning_T = 10.0", "tuning_T = 5.0"))
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d), "--quiet"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "4", "--quiet"]) == 0
    assert (tmp_path / "c" / "ensemble.csv").read_bytes() != (tmp_path / "a" / "ensemble.csv").read_bytes()


def test_sigma_zero_fails(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("target_rate = -0.15", "sigma = 0.0"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 1
    assert json.loads((tmp_path / "o" / "certificate.json").read_text())["verdict"] == "FAIL"


def test_empty_mask_is_model_stage_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.replace("hi = 0.5", "hi = 0.301"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "stage 'model'" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    write_matrix(tmp_path / "a.txt", np.diag([-3.0, -1.0, 1.0]))
    cfg = write_cfg(tmp_path, '[model]\nkind = "matrix"\npath = "a.txt"\n')
    assert main(["spectrum", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "stage 'spectrum'" in capsys.readouterr().err


def test_partial_outputs_preserved(tmp_path):
    cfg = load_config(write_cfg(tmp_path, SMALL.replace("target_rate = -0.15", "target_rate = -5.0")))
    cfg = cfg.with_overrides(out=tmp_path / "o")
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "synthesis"
    assert (tmp_path / "o" / "spectrum.json").is_file()
    assert (tmp_path / "o" / "summary.txt").is_file()
    assert not (tmp_path / "o" / "synthesis.json").exists()


def test_complex_controller_and_synthesize(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace('kind = "real"', 'kind = "complex"'))
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    syn = json.loads((tmp_path / "o" / "synthesis.json").read_text())
    assert syn["kind"] == "complex" and syn["M"] == 3 and syn["achieved_rate"] <= -0.15


def test_sweep_sigma(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "sigma,rate,stderr" and len(rows) == 3
    r0, r4 = float(rows[1].split(",")[1]), float(rows[2].split(",")[1])
    assert r0 > 0 > r4
    assert main(["sweep", "--config", str(cfg), "--values", "a,b"]) == 2


def test_sweep_mask_width(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("T = 30.0", "T = 10.0"))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o"), "--param", "mask_width",
                 "--values", "0.2,0.4", "--quiet"]) == 0
    rows = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("mask_width,gram_condition") and len(rows) == 3


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("STRATSTAB_OUT", str(tmp_path / "env"))
    assert main(["spectrum", "--config", str(write_cfg(tmp_path)), "--quiet"]) == 0
    assert (tmp_path / "env" / "spectrum.json").is_file()


def test_quiet_prints_nothing(tmp_path, capsys):
    assert main(["spectrum", "--config", str(write_cfg(tmp_path)), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert capsys.readouterr().out == ""


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["run"])


@pytest.mark.slow
def test_bundled_config_passes(tmp_path, capsys):
    code = main(["run", "--config", str(REPO / "configs" / "advdiff_real.toml"), "--out", str(tmp_path)])
    text = capsys.readouterr().out
    assert code == 0
    assert "N=4" in text and "M=3" in text and "verdict: PASS" in text
