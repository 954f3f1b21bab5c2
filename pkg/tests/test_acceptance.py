"""Acceptance checks, one test per criterion; each prints a PASS/FAIL line in the terminal summary.

Criteria 7-10 read the reports of one full default-config pipeline run that is
shared across the session; criterion 12 reruns pieces of it.
"""
import filecmp
import itertools
import json
import shutil
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, small_experiment
from skelsafe import experiment as ex
from skelsafe.config import ExperimentConfig
from skelsafe.model import (GATE, ModelConfig, attach_gate, build_forward, cross_entropy, init_state,
                            load_checkpoint, save_checkpoint)
from skelsafe.numerics import SeededRng, grad_check, softmax
from skelsafe.safety import auroc, ece, risk_coverage
from skelsafe.skeldata import read_dataset, write_dataset
from skelsafe.uq import (ScoreTable, confidence, energy_score, fit_mahalanobis, fit_temperature,
                         mahalanobis_distance, nll)


def verdict(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number:02d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    cfg = ExperimentConfig(out=str(tmp_path_factory.mktemp("default_run")))
    return cfg, ex.run_all(cfg)


def test_criterion_01_wsr_identity(default_run):
    worst = 0.0
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 300))
        c = risk_coverage(rng.random(n), rng.random(n) < 0.6)
        worst = max(worst, c.wsr_identity_error())
    cfg, reports = default_run
    emitted = []

    def walk(node):
        if isinstance(node, dict):
            if "wsr_identity_max_error" in node:
                emitted.append(node["wsr_identity_max_error"])
            for v in node.values():
                walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    walk(reports)
    for path in (Path(cfg.out) / "eval").glob("scores_*.csv"):
        t = ScoreTable.read(path)
        for s, v in t.scores.items():
            emitted.append(risk_coverage(confidence(s, v), t.correct, cfg.metrics.grid).wsr_identity_error())
    pair_error = abs(0.982 * 0.5 - 0.491)
    ok = worst < 1e-12 and max(emitted) < 1e-12 and pair_error < 1e-12 and len(emitted) > 30
    verdict(1, "WSR identity", ok, f"{len(emitted)} emitted curves, max error {max(emitted):.1e}; "
                                   f"random max {worst:.1e}; 0.982*0.5 vs 0.491 off by {pair_error:.1e}")


def test_criterion_02_auroc_oracle():
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(200):
        n_id, n_ood = rng.integers(1, 40, size=2)
        if i % 2:
            a, b = rng.integers(0, 5, n_id).astype(float), rng.integers(0, 5, n_ood).astype(float)
        else:
            a, b = rng.normal(size=n_id), rng.normal(0.5, 1, size=n_ood)
        pairs = sum(Fraction(1) if o > s else Fraction(1, 2) if o == s else Fraction(0)
                    for s, o in itertools.product(a, b))
        worst = max(worst, abs(auroc(a, b) - float(pairs / (n_id * n_ood))))
    verdict(2, "AUROC oracle", worst < 1e-12, f"200 sets (100 with ties), max |diff| {worst:.1e}")


def test_criterion_03_mahalanobis_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for d, C in itertools.product(range(1, 9), range(1, 6)):
        n = C * (d + 5)
        y = np.arange(n) % C
        z = rng.normal(size=(n, d)) @ rng.normal(size=(d, d)) + 3 * rng.normal(size=(C, d))[y]
        params = fit_mahalanobis(z, y, C)
        mu = np.stack([z[y == c].mean(axis=0) for c in range(C)])
        cov = sum(np.outer(r, r) for r in z - mu[y]) / n
        P = np.linalg.inv(cov + 1e-3 * np.trace(cov) / d * np.eye(d))
        q = rng.normal(size=(10, d)) * 3
        oracle = np.array([min((v - m) @ P @ (v - m) for m in mu) for v in q])
        rel = np.abs(mahalanobis_distance(q, params) - oracle) / np.abs(oracle)
        worst = max(worst, rel.max())
    verdict(3, "Mahalanobis oracle", worst < 1e-8, f"d in 1..8, C in 1..5, max relative error {worst:.1e}")


def test_criterion_04_energy_closed_forms():
    rng = np.random.default_rng(4)
    worst_eq, worst_shift = 0.0, 0.0
    for _ in range(500):
        C, T, l = int(rng.integers(1, 20)), rng.uniform(0.05, 10), rng.normal(0, 20)
        worst_eq = max(worst_eq, abs(energy_score(np.full(C, l), T) - (-l - T * np.log(C))))
        logits, c = rng.normal(0, 5, size=(4, C)), rng.normal(0, 30)
        worst_shift = max(worst_shift, np.max(np.abs(energy_score(logits + c) - (energy_score(logits) - c))))
    ok = worst_eq < 1e-12 and worst_shift < 1e-12
    verdict(4, "energy closed forms", ok, f"equal-logit max error {worst_eq:.1e}, shift max error {worst_shift:.1e}")


def test_criterion_05_temperature_recovery():
    rng = np.random.default_rng(5)
    logits = rng.normal(0, 3, size=(20000, 6))
    p = softmax(logits, axis=1)
    labels = np.minimum((rng.random(20000)[:, None] > np.cumsum(p, axis=1)).sum(axis=1), 5)
    details, ok = [], True
    for s in (0.5, 2.0):
        fit = fit_temperature(s * logits, labels)
        good = abs(fit.T_star / s - 1) < 0.05 and fit.nll_after <= nll(s * logits, labels, 1.0)
        ok &= good
        details.append(f"s={s}: T*={fit.T_star:.4f}")
    for seed in range(50):
        r = np.random.default_rng(seed)
        l, y = r.normal(0, r.uniform(0.1, 8), size=(60, 4)), r.integers(0, 4, 60)
        y[:2] = [0, 1]
        ok &= fit_temperature(l, y).nll_after <= nll(l, y, 1.0)
    verdict(5, "temperature recovery", ok, ", ".join(details) + "; NLL(T*) <= NLL(1) on 50 random sets")


def test_criterion_06_gradient_correctness():
    cfg = ModelConfig(n_classes=3, frames=2, d_joint=4, d_model=8, layers=2, heads=2, mlp_ratio=2)
    state = attach_gate(init_state(cfg, SeededRng(6)))
    state.params[GATE] = np.random.default_rng(6).normal(size=cfg.d_model)
    x = np.random.default_rng(7).normal(size=(3, cfg.frames, cfg.joints, 3))
    y = np.array([2, 0, 1])
    err = grad_check(lambda g, p: cross_entropy(build_forward(g, p, x, cfg, "eval")[1], y), state.params, 1e-5)
    verdict(6, "gradient correctness", err < 1e-4,
            f"{state.n_params()} parameters, max relative error {err:.2e}")


def test_criterion_07_dissociation(default_run):
    cfg, reports = default_run
    r = reports["eval"]
    style = r["domains"]["style_shift"]
    table = ScoreTable.read(Path(cfg.out) / "eval" / r["score_files"]["style_shift"])
    acc, mean_msp = float(np.mean(table.correct)), float(np.mean(table.scores["msp"]))
    energy = r["auroc"]["style_shift"]["energy"]["auroc"]
    rc = style["risk_coverage"]["msp"]
    gap = abs(rc["risk@50"] - rc["risk@100"])
    chance = 1.0 / cfg.data.n_classes
    ok = (acc <= 2 * chance and mean_msp >= 0.8 and energy >= 0.85 and gap < 0.05
          and acc == pytest.approx(style["accuracy"]))
    verdict(7, "dissociation", ok, f"style-shift accuracy {acc:.3f} (2x chance {2 * chance:.3f}), "
                                   f"mean MSP {mean_msp:.3f}, energy AUROC {energy:.3f}, "
                                   f"|R(0.5)-R(1.0)| = {gap:.3f}")


def test_criterion_08_gating_adaptation(default_run):
    _, reports = default_run
    fr, ft = reports["adapt_frozen"], reports["adapt_finetuned"]
    gain, wsr_drop = ft["accuracy_change"], -ft["wsr@50_change"]
    frozen = fr["accuracy_change"]
    overhead = ft["parameters"]["gate_overhead"]
    ok = gain >= 0.15 and wsr_drop >= 0.10 and abs(frozen) <= 0.02 and overhead < 0.01
    verdict(8, "gating adaptation", ok, f"finetuned gain {100 * gain:.1f} pts, WSR@50 drop {wsr_drop:.3f}, "
                                        f"frozen change {100 * frozen:.1f} pts, gate overhead {100 * overhead:.2f}%")


def test_criterion_09_corruption_sweep(default_run):
    _, reports = default_run
    c = reports["corrupt"]
    acc = np.array(c["accuracy"])
    rises = np.diff(acc, axis=0).max()
    msp_gap = abs(c["clean_mean_msp"] - c["worst_cell"]["mean_msp"])
    ok = rises <= 0.02 and msp_gap <= 0.10 and acc[0, 0] == c["clean_accuracy"]
    verdict(9, "corruption sweep", ok, f"largest accuracy rise along sigma {100 * max(rises, 0):.1f} pts, "
                                       f"worst cell accuracy {c['worst_cell']['accuracy']:.3f} with mean MSP "
                                       f"{c['worst_cell']['mean_msp']:.3f} vs clean {c['clean_mean_msp']:.3f}")


def test_criterion_10_mc_ablation(default_run):
    cfg, reports = default_run
    m = reports["ablate_mc"]
    risks = {r["n"]: r["risk@50"] for r in m["per_n"]}
    spread = max(risks.values()) - min(risks.values())
    n20 = next(r for r in m["per_n"] if r["n"] == 20)["auroc_vs_source"]
    ok = sorted(risks) == [5, 10, 20, 30] and spread < 0.05
    verdict(10, "MC ablation", ok, f"risk@50 by N { {n: round(v, 4) for n, v in risks.items()} }, spread {spread:.3f}; "
                                   f"N=20 entropy AUROC {n20:.3f} (reference {m['reference_auroc_n20']})")


def test_criterion_11_calibration():
    rng = np.random.default_rng(11)
    conf = rng.uniform(0, 1, 100_000)
    calibrated = ece(conf, rng.random(100_000) < conf, 15).ece
    const = ece(np.full(1000, 0.9), np.arange(1000) % 2 == 0, 15).ece
    ok = calibrated < 0.02 and abs(const - 0.4) < 1e-12
    verdict(11, "calibration", ok, f"self-sampled ECE {calibrated:.4f}, constant 0.9 / 50% ECE {const!r}")


def _tree_equal(a: Path, b: Path) -> list:
    """Relative paths whose contents differ; report.json files are compared without metadata."""
    diffs = []
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if files_a != files_b:
        return ["file lists differ"]
    for rel in files_a:
        if rel.name == "report.json":
            ra, rb = (ex.strip_metadata(json.loads((root / rel).read_text())) for root in (a, b))
            if ra != rb:
                diffs.append(str(rel))
        elif not filecmp.cmp(a / rel, b / rel, shallow=False):
            diffs.append(str(rel))
    return diffs


def test_criterion_12_determinism_and_formats(default_run, tmp_path):
    cfg, _ = default_run
    root = Path(cfg.out)
    for name in ex.BUNDLES:
        bundle = read_dataset(root / "data" / name)
        write_dataset(bundle, tmp_path / "rt" / name)
        assert read_dataset(tmp_path / "rt" / name) == bundle
        for f in ("coords.bin", "labels.csv", "manifest.json"):
            assert (tmp_path / "rt" / name / f).read_bytes() == (root / "data" / name / f).read_bytes()
    state = load_checkpoint(root / "checkpoints" / "main")
    save_checkpoint(state, tmp_path / "ck")
    for f in ("model.json", "weights.bin"):
        assert (tmp_path / "ck" / f).read_bytes() == (root / "checkpoints" / "main" / f).read_bytes()

    # desk scale: regenerate data and re-evaluate the trained models in a copy of the run
    copy = ExperimentConfig(out=str(tmp_path / "again"))
    ex.cmd_gen(copy)
    shutil.copytree(root / "checkpoints", tmp_path / "again" / "checkpoints")
    ex.cmd_eval(copy)
    desk_diffs = _tree_equal(root / "data", tmp_path / "again" / "data") + \
        _tree_equal(root / "eval", tmp_path / "again" / "eval")

    # every step end to end, twice, at toy scale
    runs = []
    for name in ("a", "b"):
        small = small_experiment(tmp_path / name)
        ex.run_all(small)
        runs.append(tmp_path / name)
    toy_diffs = _tree_equal(*runs)
    n_files = sum(1 for p in runs[0].rglob("*") if p.is_file())
    ok = not desk_diffs and not toy_diffs
    verdict(12, "determinism and formats", ok,
            f"dataset and checkpoint roundtrips byte-exact; desk-scale gen+eval rerun diffs {desk_diffs or 'none'}; "
            f"two full toy pipelines ({n_files} files) diffs {toy_diffs or 'none'}")


@pytest.mark.xfail(strict=False, reason="the finetuned gate is already close to calibrated on the target, so "
                                        "a temperature fit on 50 validation clips moves ECE by sampling noise")
def test_temperature_refit_lowers_target_ece(default_run):
    refit = default_run[1]["adapt_finetuned"]["temperature_refit"]
    assert refit["ece"] < refit["ece_before"]
