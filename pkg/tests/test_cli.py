import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from levy_loewner.cli import ConfigError, main, render_svg, run, sha256, validate_config
from levy_loewner.forward_flow import LoewnerChain, trace_extract


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_verify_exponents(capsys):
    assert main(["verify-exponents"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    for val in ("0.1666666666666667", "0.4", "0.0546875", "14", "0.5333333333333333", "0.6666666666666666"):
        assert val in out


def test_zero_driver_campaign(tmp_path):
    cfg = write(tmp_path / "cfg.json", {"suites": ["simulate", "trace", "verify-exponents"],
                                        "driver": {"kind": "zero"}, "trace_times": 11})
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "trace.csv")))
    last = rows[-1]
    assert float(last["re_gamma"]) == pytest.approx(0.0, abs=1e-6)
    assert float(last["im_gamma"]) == pytest.approx(2.0, abs=1e-6)
    svg = (out / "trace.svg").read_text()
    assert svg.count("<polyline") == 1 and "dasharray" not in svg


def test_manifest_complete(tmp_path):
    cfg = validate_config({"suites": ["simulate", "trace", "verify-exponents"],
                           "driver": {"kind": "symmetric-stable", "params": {"alpha": 1.5, "scale": 0.1},
                                      "kappa": 2.0, "epsilon": 0.1, "delta_sim": 0.01},
                           "trace_times": 20, "dt": 1e-2})
    out = tmp_path / "o"
    run(cfg, 1, out)
    man = json.loads((out / "manifest.json").read_text())
    listed = {a["file"] for a in man["artifacts"]}
    assert listed == {p.name for p in out.iterdir()} - {"manifest.json"}
    for a in man["artifacts"]:
        assert a["sha256"] == sha256(out / a["file"])


def test_determinism(tmp_path):
    spec = {"suites": ["simulate", "trace", "mc-supermartingale"], "n_paths": 50, "dt": 1e-2,
            "trace_times": 20,
            "driver": {"kind": "symmetric-stable", "params": {"alpha": 1.5, "scale": 0.1},
                       "kappa": 2.0, "epsilon": 0.05, "delta_sim": 0.005},
            "observable": {"flow": "backward", "dt_max": 1e-2}}
    cfg = write(tmp_path / "cfg.json", spec)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", cfg, "--seed", "7", "--out", str(a)])
    env = dict(os.environ, LL_THREADS="3")
    subprocess.run([sys.executable, "-m", "levy_loewner.cli", "run", "--config", cfg, "--seed", "7",
                    "--out", str(b)], check=True, env=env, capture_output=True)
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_gate_refusal_exit(tmp_path, capsys):
    cfg = write(tmp_path / "cfg.json", {
        "suites": ["mc-supermartingale"], "n_paths": 10,
        "driver": {"kind": "symmetric-stable", "params": {"alpha": 1.5}, "kappa": 4.0,
                   "epsilon": 0.1, "delta_sim": 0.01}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
    assert "lambda_hol_max" in capsys.readouterr().out


def test_kappa8_trace_refused(tmp_path, capsys):
    cfg = write(tmp_path / "cfg.json", {"suites": ["mc-supermartingale"], "n_paths": 10,
                                        "driver": {"kind": "zero", "kappa": 8.0},
                                        "observable": {"flow": "forward"}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "gate refused" in capsys.readouterr().out


@pytest.mark.parametrize("bad", [{}, {"suites": []}, {"suites": ["nope"]},
                                 {"suites": ["simulate"], "dt": -1},
                                 {"suites": ["simulate"], "n_paths": 0},
                                 {"suites": ["simulate"], "driver": {"kind": "zero", "epsilon": 2}}])
def test_config_errors(bad, tmp_path):
    with pytest.raises(ConfigError):
        validate_config(bad)
    assert main(["run", "--config", write(tmp_path / "c.json", bad)]) == 2


def test_trace_subcommand(tmp_path):
    drv = write(tmp_path / "d.json", {"kind": "compound-poisson", "params": {"atoms": [[1.0, 2.0]]},
                                      "kappa": 0.0, "seed": 1})
    svg, csvp = tmp_path / "t.svg", tmp_path / "t.csv"
    assert main(["trace", "--driver", drv, "--T", "0.5", "--svg", str(svg), "--csv", str(csvp),
                 "--dt", "1e-2", "--n-times", "50"]) == 0
    assert svg.read_text().startswith("<svg")
    assert len(list(csv.reader(open(csvp)))) == 51


def test_render_empty():
    svg = render_svg([])
    assert "<polyline" not in svg and svg.count("<line") == 2


def test_render_jump_fixture():
    ch = LoewnerChain(np.array([3 / 16, 5 / 16]), np.array([0.0, 1.0]), 1.0)
    tt = np.sort(np.concatenate([np.linspace(0, 0.5, 41), [3 / 16]]))
    svg = render_svg(trace_extract(ch, tt, tol=1e-10), [3 / 16])
    assert svg.count("<polyline") == 2 and svg.count("stroke-dasharray") == 1
