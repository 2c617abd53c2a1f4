import csv
import json
import os

import pytest

from nsg import __version__
from nsg.cli import main
from nsg.harness import ConfigError, EXPERIMENTS, bundled_configs, run_config, validate_config


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_list_names_every_experiment(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in ("clarke-examples", "mollify-bounds", "sigma-conditions", "extension-certificates",
                 "twisted-hypotheses", "gram-dependence"):
        assert f"{name}: " in out


def test_version(capsys):
    assert main(["version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_top_level_key_exits_2(tmp_path, capsys):
    assert main(["run", "--config", write(tmp_path, {"experiment": "gram-dependence", "bogus": 1})]) == 2
    assert "bogus" in capsys.readouterr().err


def test_unknown_param_exits_2(tmp_path, capsys):
    cfg = {"experiment": "gram-dependence", "params": {"epsilon": [0.5]}}
    assert main(["run", "--config", write(tmp_path, cfg)]) == 2
    assert "params.epsilon" in capsys.readouterr().err


def test_bad_type_and_experiment():
    with pytest.raises(ConfigError, match="seed"):
        validate_config({"experiment": "gram-dependence", "seed": "zero"})
    with pytest.raises(ConfigError, match="experiment"):
        validate_config({"experiment": "nope"})


def test_domain_error_exits_3_naming_check(tmp_path, capsys):
    cfg = {"experiment": "gram-dependence", "params": {"eps": [1.5]}}
    assert main(["run", "--config", write(tmp_path, cfg)]) == 3
    assert "near-orthonormal-dependent" in capsys.readouterr().err


def test_gram_report_contents(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", "--config", write(tmp_path, {"experiment": "gram-dependence"}), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["version"] == __version__ and rep["platform"]
    assert rep["config"] == {"experiment": "gram-dependence"}
    for c in rep["checks"]:
        assert set(c) >= {"name", "anchor", "satisfied", "margin", "runtime_ms"}


def test_sigma_identity_and_csv(tmp_path):
    cfg = {"experiment": "sigma-conditions", "params": {"family": "identity", "geodesic_count": 8,
                                                        "pairs": 2000, "csv_geodesics": 1}}
    out, table = tmp_path / "r.json", tmp_path / "t.csv"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out), "--csv", str(table)]) == 0
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["t", "quantity", "value", "geodesic_id", "seed"]
    assert len(rows) > 64


def test_sigma_twist_fails_with_worst_geodesic(tmp_path):
    cfg = {"experiment": "sigma-conditions", "params": {"family": "latitude-twist", "amplitude": 0.5,
                                                        "geodesic_count": 8, "pairs": 2000}}
    out = tmp_path / "r.json"
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 1
    rep = json.loads(out.read_text())
    curv = next(c for c in rep["checks"] if c["name"] == "curvature")
    assert not curv["satisfied"] and curv["detail"]["worst_geodesic"] is not None


def test_reports_reproducible_apart_from_timing():
    cfg = {"experiment": "twisted-hypotheses", "params": {"manifold": "flat-torus", "p": [0, 0],
                                                          "q": [0.5, 0.5], "grid": 32}}
    a, _ = run_config(cfg)
    b, _ = run_config(cfg)
    strip = lambda r: [{k: v for k, v in c.items() if k != "runtime_ms"} for c in r["checks"]]
    assert strip(a) == strip(b)
    assert not a["satisfied"]


def test_thread_cap_does_not_change_results(monkeypatch):
    cfg = {"experiment": "gram-dependence", "params": {"hyperplane_pairs": 10}}
    a, _ = run_config(cfg, timing=False)
    monkeypatch.setenv("NSG_THREADS", "4")
    b, _ = run_config(cfg, timing=False)
    assert a == b


def test_bundled_configs_validate():
    cfgs = bundled_configs()
    assert len(cfgs) >= len(EXPERIMENTS)
    for path in cfgs:
        with open(path) as fh:
            validate_config(json.load(fh))
