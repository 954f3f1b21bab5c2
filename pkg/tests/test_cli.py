import dataclasses
import json

import numpy as np
import pytest

from conftest import small_experiment
from skelsafe import cli, plots
from skelsafe import experiment as ex
from skelsafe.config import ConfigError, ExperimentConfig, config_from_dict, load_config


def _write_cfg(tmp_path, cfg):
    d = cfg.to_dict()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return path


# --- config ----------------------------------------------------------------------------------

def test_config_roundtrip_and_hash():
    cfg = ExperimentConfig()
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg and again.hash() == cfg.hash()
    moved = dataclasses.replace(cfg, out="elsewhere")
    assert moved.hash() == cfg.hash()
    assert dataclasses.replace(cfg, seed=1).hash() != cfg.hash()


@pytest.mark.parametrize("bad", [
    {"unknown": 1},
    {"model": {"width": 3}},
    {"seed": "1"},
    {"adapt": {"target": "elsewhere"}},
    {"adapt": {"n_labeled": 900}},
    {"uq": {"ensemble_k": 1}},
    {"metrics": {"grid": [0.5, 0.4, 1.0]}},
    {"corruption": {"drops": [30]}},
    {"model": {"d_model": 30, "heads": 4}},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_load_config_errors(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


# --- CLI -------------------------------------------------------------------------------------

def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_error_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    code, _, err = _run(capsys, "gen", "--config", str(bad))
    assert code == 2 and json.loads(err)["error"] == "config"

    cfg_path = _write_cfg(tmp_path, small_experiment(tmp_path / "run"))
    code, _, err = _run(capsys, "eval", "--config", str(cfg_path))
    assert code == 3
    assert "source_train" in json.loads(err)["message"]

    code, _, _ = _run(capsys, "gen", "--config", str(cfg_path))
    assert code == 0
    code, _, err = _run(capsys, "gen", "--config", str(cfg_path))
    assert code == 2 and json.loads(err)["error"] == "exists"
    assert _run(capsys, "gen", "--config", str(cfg_path), "--force")[0] == 0


def test_cli_overrides(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, small_experiment(tmp_path / "ignored"))
    code, out, _ = _run(capsys, "gen", "--config", str(cfg_path), "--out", str(tmp_path / "o"), "--seed", "99")
    assert code == 0
    report = json.loads((tmp_path / "o" / "data" / "report.json").read_text())
    assert report["seed"] == 99
    assert json.loads(out)["config_hash"] == report["config_hash"]
    assert not (tmp_path / "ignored").exists()


def test_cli_numerical_failure(tmp_path, capsys, monkeypatch):
    cfg_path = _write_cfg(tmp_path, small_experiment(tmp_path / "run"))

    def boom(cfg, force=False):
        from skelsafe.numerics import NumericsError
        raise NumericsError("non-finite logits at index (0, 1)")

    monkeypatch.setattr(ex, "cmd_gen", boom)
    code, _, err = _run(capsys, "gen", "--config", str(cfg_path))
    assert code == 4 and json.loads(err)["error"] == "numerical"


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SKELSAFE_THREADS", "2")
    assert ex._threads() == 2
    monkeypatch.setenv("SKELSAFE_THREADS", "zero")
    with pytest.raises(ConfigError):
        ex._threads()


# --- pipeline structure at toy scale ---------------------------------------------------------

@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    cfg = small_experiment(tmp_path_factory.mktemp("toy"))
    return cfg, ex.run_all(cfg)


def test_gen_structure(toy_run):
    cfg, reports = toy_run
    root = ex._out(cfg) / "data"
    for name in ex.BUNDLES:
        manifest = json.loads((root / name / "manifest.json").read_text())
        assert manifest["format"] == "SKEL1"
    assert reports["gen"]["config_hash"] == cfg.hash()


def test_train_structure(toy_run):
    cfg, reports = toy_run
    root = ex._out(cfg) / "checkpoints"
    assert (root / "main" / "weights.bin").exists() and (root / "member-1" / "weights.bin").exists()
    rows = (root / "train_log.csv").read_text().splitlines()
    assert rows[0] == "member,epoch,train_loss,train_acc,val_acc"
    assert len(rows) == 1 + cfg.uq.ensemble_k * cfg.train.epochs


def test_eval_report(toy_run):
    cfg, reports = toy_run
    r = reports["eval"]
    folder = ex._out(cfg) / "eval"
    assert set(r["domains"]) == {"source_test", "style_shift", "semantic_shift"}
    for d in r["domains"].values():
        assert all(c["wsr_identity_ok"] for c in d["risk_coverage"].values())
        assert set(d["risk_coverage"]) == {"msp", "msp_temp", "mc_entropy", "disagreement", "energy",
                                           "mahalanobis"}
    for name, fname in r["score_files"].items():
        table = ex.ScoreTable.read(folder / fname)
        assert r["domains"][name]["accuracy"] == pytest.approx(np.mean(table.correct))
    assert json.loads((folder / "report.json").read_text())["config_hash"] == cfg.hash()
    assert (folder / "risk_coverage_style_shift.svg").read_text().startswith("<svg")
    n_test = cfg.data.sizes.style_shift - cfg.adapt.n_labeled
    assert r["domains"]["style_shift"]["n"] == n_test


def test_adapt_and_sweeps(toy_run):
    cfg, reports = toy_run
    fr, ft = reports["adapt_frozen"], reports["adapt_finetuned"]
    assert "temperature_refit" in ft and "temperature_refit" not in fr
    assert len(ft["multi_seed"]["accuracy"]["values"]) == cfg.adapt.seeds
    assert ft["zero_shot"] == fr["zero_shot"]
    c = reports["corrupt"]
    assert c["accuracy"][0][0] == c["clean_accuracy"]
    assert len((ex._out(cfg) / "corrupt" / "corruption.csv").read_text().splitlines()) == 1 + 4
    m = reports["ablate_mc"]
    assert [r["n"] for r in m["per_n"]] == cfg.uq.ablation_passes
    assert sorted(p.name for p in (ex._out(cfg) / "ablate_mc").glob("curve_N*.csv")) == \
        ["curve_N01.csv", "curve_N02.csv", "curve_N03.csv"]


def test_adapt_requires_checkpoint(tmp_path):
    cfg = small_experiment(tmp_path)
    ex.cmd_gen(cfg)
    with pytest.raises(ex.MissingArtifact, match="main"):
        ex.cmd_adapt(cfg, "frozen")
    with pytest.raises(ConfigError):
        ex.cmd_adapt(cfg, "sideways")


# --- plots -----------------------------------------------------------------------------------

def test_svgs_are_deterministic():
    a = plots.line_chart({"x": ([0.1, 0.5, 1.0], [0.3, 0.2, 0.1])}, "t")
    assert a == plots.line_chart({"x": ([0.1, 0.5, 1.0], [0.3, 0.2, 0.1])}, "t")
    assert a.count("<polyline") == 1
    h = plots.heatmap(np.eye(2), ["a", "b"], ["c", "d"], "h", "r", "c")
    assert h.count("<rect") == 5
    r = plots.reliability_chart([0, 0.5], [0.5, 1.0], [np.nan, 0.7], [np.nan, 0.8], "r")
    assert r.count("<circle") == 1


def test_train_requires_datasets(tmp_path):
    with pytest.raises(ex.MissingArtifact, match="source_train"):
        ex.cmd_train(small_experiment(tmp_path))
