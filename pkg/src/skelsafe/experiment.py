"""Config-driven experiment steps: generate, train, evaluate, adapt, corrupt, ablate.

Each step reads its inputs from the run directory, writes its outputs next to
them and returns the report it wrote. Every output is a function of the config
and the artifacts already on disk; the only run-dependent values (wall time)
sit in the ``metadata`` block of each report.json.

Run directory layout::

    data/<bundle>/             SKEL1 datasets
    checkpoints/main/          source model
    checkpoints/member-<i>/    further ensemble members
    eval/ adapt/<mode>/ corrupt/ ablate_mc/
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import plots
from .config import ConfigError, ExperimentConfig
from .model import (ModelConfig, ModelState, TrainHyper, accuracy, ensemble_train, finetune_gating, forward,
                    load_checkpoint, save_checkpoint, train)
from .numerics import SeededRng, entropy, softmax
from .safety import auroc, ece, per_class_accuracy, risk_coverage
from .skeldata import (DatasetBundle, corrupt_bundle, generate_domain, read_dataset,
                       semantic_shift_spec, source_spec, stratified_split, style_shift_spec, write_dataset)
from .uq import (SCORES, ScoreTable, build_score_table, confidence, fit_mahalanobis, fit_temperature,
                 mc_dropout_probs, ood_score, scale_logits)

BUNDLES = ("source_train", "source_val", "source_test", "style_shift", "semantic_shift")
TARGETS = ("style_shift", "semantic_shift")
MC_ENTROPY_REFERENCE = 0.8108  # N=20 entropy AUROC measured on real skeleton data, shown for comparison only


class MissingArtifact(FileNotFoundError):
    pass


class OutputExists(FileExistsError):
    pass


# --- small helpers ---------------------------------------------------------------------------

def _clean(obj):
    """Make a report JSON-safe: numpy scalars to Python, nan to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_report(path: Path, body: dict, cfg: ExperimentConfig, started: float) -> dict:
    report = {"config_hash": cfg.hash(), "seed": cfg.seed, **body,
              "metadata": {"wall_time_s": round(time.perf_counter() - started, 3)}}
    report = _clean(report)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def strip_metadata(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "metadata"}


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.9g}" if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())
    return path


def _require(paths) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise MissingArtifact("missing artifacts: " + ", ".join(missing))


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out)


def _threads() -> int:
    raw = os.environ.get("SKELSAFE_THREADS")
    if raw is None:
        return max(1, min(3, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SKELSAFE_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("SKELSAFE_THREADS must be >= 1")
    return n


def _sub(cfg: ExperimentConfig, label: str) -> SeededRng:
    return SeededRng(cfg.seed).child(label)


# --- data ------------------------------------------------------------------------------------

def domain_specs(cfg: ExperimentConfig) -> dict:
    d = cfg.data

    def kw(s):
        return dict(noise_std=s.noise_std, scale_range=tuple(s.scale_range), phase_jitter=s.phase_jitter)

    src = source_spec(d.n_classes, d.frames, _sub(cfg, "spec/source").seed, **kw(d.source),
                      azimuth_range=tuple(d.source.azimuth_range), elevation_range=tuple(d.source.elevation_range))
    style = style_shift_spec(src, _sub(cfg, "spec/style_shift").seed, tuple(d.style_shift.azimuth_range),
                             tuple(d.style_shift.elevation_range), **kw(d.style_shift))
    sem = semantic_shift_spec(src, _sub(cfg, "spec/semantic_shift").seed, None,
                              tuple(d.semantic_shift.azimuth_range), tuple(d.semantic_shift.elevation_range),
                              **kw(d.semantic_shift))
    return {"source": src, "style_shift": style, "semantic_shift": sem}


def cmd_gen(cfg: ExperimentConfig, force: bool = False) -> dict:
    started = time.perf_counter()
    root = _out(cfg) / "data"
    existing = [b for b in BUNDLES if (root / b).exists()]
    if existing and not force:
        raise OutputExists(f"dataset directories exist: {', '.join(existing)} (use --force to overwrite)")
    specs = domain_specs(cfg)
    sizes = cfg.data.sizes
    plan = {
        "source_train": (specs["source"], sizes.source_train, "train"),
        "source_val": (specs["source"], sizes.source_val, "val"),
        "source_test": (specs["source"], sizes.source_test, "test"),
        "style_shift": (specs["style_shift"], sizes.style_shift, "target"),
        "semantic_shift": (specs["semantic_shift"], sizes.semantic_shift, "target"),
    }
    body = {"bundles": {}}
    for name, (spec, n, tag) in plan.items():
        bundle = generate_domain(spec, n, _sub(cfg, f"data/{name}"), tag)
        write_dataset(bundle, root / name)
        manifest = json.loads((root / name / "manifest.json").read_text())
        body["bundles"][name] = {"n": n, "kind": spec.kind, "payload_sha256": manifest["payload_sha256"]}
    return write_report(root / "report.json", body, cfg, started)


def load_bundles(cfg: ExperimentConfig, names=BUNDLES) -> dict:
    root = _out(cfg) / "data"
    _require([root / n / "manifest.json" for n in names])
    return {n: read_dataset(root / n) for n in names}


def target_split(cfg: ExperimentConfig, bundle: DatasetBundle) -> tuple[np.ndarray, np.ndarray]:
    """(adaptation, test) indices: a seeded permutation, first ``n_labeled`` go to adaptation."""
    n = len(bundle)
    if not 0 < cfg.adapt.n_labeled < n:
        raise ConfigError(f"adapt.n_labeled={cfg.adapt.n_labeled} does not fit a target of {n} samples")
    perm = _sub(cfg, "target-split").generator.permutation(n)
    return np.sort(perm[:cfg.adapt.n_labeled]), np.sort(perm[cfg.adapt.n_labeled:])


def eval_domains(cfg: ExperimentConfig, bundles: dict) -> dict:
    """Evaluation bundles: source test, and each target (its test split if it is the adaptation target)."""
    out = {"source_test": bundles["source_test"]}
    for t in TARGETS:
        b = bundles[t]
        if t == cfg.adapt.target:
            b = b.subset(target_split(cfg, b)[1], "test")
        out[t] = b
    return out


# --- training --------------------------------------------------------------------------------

def model_config(cfg: ExperimentConfig) -> ModelConfig:
    m = cfg.model
    return ModelConfig(n_classes=cfg.data.n_classes, frames=cfg.data.frames, d_joint=m.d_joint, d_model=m.d_model,
                       layers=m.layers, heads=m.heads, mlp_ratio=m.mlp_ratio, dropout=m.dropout,
                       seed=_sub(cfg, "train").seed)


def train_hyper(cfg: ExperimentConfig) -> TrainHyper:
    t = cfg.train
    return TrainHyper(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, weight_decay=t.weight_decay,
                      seed=_sub(cfg, "train").seed)


def _ckpt(cfg: ExperimentConfig, name: str) -> Path:
    return _out(cfg) / "checkpoints" / name


def cmd_train(cfg: ExperimentConfig, force: bool = False) -> dict:
    started = time.perf_counter()
    bundles = load_bundles(cfg, ("source_train", "source_val"))
    root = _out(cfg) / "checkpoints"
    if (root / "main").exists() and not force:
        raise OutputExists(f"checkpoints exist in {root} (use --force to overwrite)")
    k = cfg.uq.ensemble_k
    mc, hyper = model_config(cfg), train_hyper(cfg)
    main, log = train(mc, bundles["source_train"], hyper, bundles["source_val"])
    members, logs = ensemble_train(mc, bundles["source_train"], hyper, k, bundles["source_val"], first=main)
    logs[0] = log
    rows = []
    for i, (state, member_log) in enumerate(zip(members, logs)):
        save_checkpoint(state, root / ("main" if i == 0 else f"member-{i}"))
        rows += [(i, r["epoch"], r["train_loss"], r["train_acc"], r["val_acc"]) for r in member_log]
    _write_csv(root / "train_log.csv", ("member", "epoch", "train_loss", "train_acc", "val_acc"), rows)
    body = {
        "members": k,
        "n_params": members[0].n_params(),
        "val_accuracy": [max(r["val_acc"] for r in lg) for lg in logs],
        "source_test_accuracy": None,
    }
    if (_out(cfg) / "data" / "source_test").exists():
        body["source_test_accuracy"] = accuracy(main, read_dataset(_out(cfg) / "data" / "source_test"))
    return write_report(root / "report.json", body, cfg, started)


def load_models(cfg: ExperimentConfig) -> tuple[ModelState, list]:
    names = ["main"] + [f"member-{i}" for i in range(1, cfg.uq.ensemble_k)]
    _require([_ckpt(cfg, n) / "model.json" for n in names])
    states = [load_checkpoint(_ckpt(cfg, n)) for n in names]
    return states[0], states


# --- evaluation ------------------------------------------------------------------------------

def curve_summary(curve) -> dict:
    r50, w50 = curve.at(0.5)
    r100, _ = curve.at(1.0)
    err = curve.wsr_identity_error()
    return {"risk@50": r50, "wsr@50": w50, "risk@100": r100,
            "wsr_identity_max_error": err, "wsr_identity_ok": bool(err < 1e-12)}


def summarize_table(table: ScoreTable, class_names, grid, bins: int) -> dict:
    """Accuracy, per-score risk-coverage, ECE and per-class accuracy for one score table."""
    curves = {s: risk_coverage(confidence(s, table.scores[s]), table.correct, grid) for s in table.scores}
    calib = {s: ece(table.scores[s], table.correct, bins) for s in ("msp", "msp_temp") if s in table.scores}
    return {
        "n": len(table),
        "accuracy": float(np.mean(table.correct)),
        "mean_msp": float(np.mean(table.scores["msp"])) if "msp" in table.scores else None,
        "risk_coverage": {s: curve_summary(c) for s, c in curves.items()},
        "ece": {s: c.ece for s, c in calib.items()},
        "per_class_accuracy": per_class_accuracy(table.pred, table.label, class_names),
        "_curves": curves,
        "_calib": calib,
    }


def write_domain_files(folder: Path, name: str, table: ScoreTable, summary: dict, title: str) -> None:
    table.write(folder / f"scores_{name}.csv")
    curves, calib = summary.pop("_curves"), summary.pop("_calib")
    rows = [(s, k, r, w, a) for s, c in curves.items() for k, r, w, a in c.rows()]
    _write_csv(folder / f"risk_coverage_{name}.csv", ("score", "kappa", "risk", "wsr", "accepted"), rows)
    rows = [(s, lo, hi, conf, acc, cnt) for s, b in calib.items() for lo, hi, conf, acc, cnt in b.rows()]
    _write_csv(folder / f"reliability_{name}.csv", ("score", "lo", "hi", "confidence", "accuracy", "count"), rows)
    series = {s: (c.kappa, c.risk) for s, c in curves.items()}
    (folder / f"risk_coverage_{name}.svg").write_text(plots.line_chart(series, f"Risk vs coverage: {title}"))
    if "msp" in calib:
        b = calib["msp"]
        (folder / f"reliability_{name}.svg").write_text(
            plots.reliability_chart(b.lo, b.hi, b.accuracy, b.confidence, f"Reliability (MSP): {title}"))


def auroc_table(tables: dict, id_name: str = "source_test") -> dict:
    """AUROC of every score, ID = ``id_name`` against each other table; values below 0.5 are flagged."""
    out = {}
    ref = tables[id_name]
    for name, t in tables.items():
        if name == id_name:
            continue
        out[name] = {}
        for s in SCORES:
            if s in t.scores and s in ref.scores:
                a = auroc(ood_score(s, ref.scores[s]), ood_score(s, t.scores[s]))
                out[name][s] = {"auroc": a, "inverted": bool(a < 0.5)}
    return out


def fit_artifacts(cfg: ExperimentConfig, state: ModelState, bundles: dict):
    _, val_logits = forward(state, bundles["source_val"].coords)
    temp = fit_temperature(val_logits, bundles["source_val"].labels)
    z_train, _ = forward(state, bundles["source_train"].coords)
    maha = fit_mahalanobis(z_train, bundles["source_train"].labels, cfg.data.n_classes, cfg.uq.shrinkage)
    return temp, maha


def cmd_eval(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    bundles = load_bundles(cfg)
    main, members = load_models(cfg)
    folder = _out(cfg) / "eval"
    folder.mkdir(parents=True, exist_ok=True)
    temp, maha = fit_artifacts(cfg, main, bundles)
    domains = eval_domains(cfg, bundles)

    def score(name):
        return name, build_score_table(main, domains[name], temperature=temp, mahalanobis=maha, ensemble=members,
                                       mc_passes=cfg.uq.mc_passes, rng=_sub(cfg, f"eval/mc/{name}"),
                                       energy_T=cfg.uq.energy_T, post_gate_features=cfg.uq.post_gate_features)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        tables = dict(pool.map(score, list(domains)))
    summaries = {}
    for name, table in tables.items():
        summaries[name] = summarize_table(table, domains[name].class_names, cfg.metrics.grid, cfg.metrics.bins)
        write_domain_files(folder, name, table, summaries[name], name)
    aurocs = auroc_table(tables)
    _write_csv(folder / "auroc.csv", ("domain", "score", "auroc", "inverted"),
               [(d, s, v["auroc"], int(v["inverted"])) for d, row in aurocs.items() for s, v in row.items()])
    body = {
        "temperature": {"T_star": temp.T_star, "nll_before": temp.nll_before, "nll_after": temp.nll_after},
        "mahalanobis_shrinkage": maha.shrinkage,
        "chance_accuracy": 1.0 / cfg.data.n_classes,
        "domains": summaries,
        "auroc": aurocs,
        "score_files": {n: f"scores_{n}.csv" for n in tables},
    }
    return write_report(folder / "report.json", body, cfg, started)


# --- adaptation ------------------------------------------------------------------------------

def _selective(table: ScoreTable, score: str, grid) -> dict:
    curve = risk_coverage(confidence(score, table.scores[score]), table.correct, grid)
    return {"accuracy": float(np.mean(table.correct)), **curve_summary(curve)}


def _basic_table(state: ModelState, bundle: DatasetBundle, T: float | None = None) -> tuple[ScoreTable, np.ndarray]:
    _, logits = forward(state, bundle.coords)
    scores = {"msp": softmax(logits, axis=1).max(axis=1)}
    if T is not None:
        scores["msp_temp"] = softmax(scale_logits(logits, T), axis=1).max(axis=1)
    return ScoreTable(bundle.domain_tag, bundle.labels.copy(), logits.argmax(axis=1), scores), logits


def _mc_auroc(state: ModelState, id_bundle: DatasetBundle, ood_bundle: DatasetBundle, passes: int,
              rng: SeededRng) -> float:
    h_id = entropy(mc_dropout_probs(state, id_bundle.coords, passes, rng.child("id")).mean(axis=0), axis=1)
    h_ood = entropy(mc_dropout_probs(state, ood_bundle.coords, passes, rng.child("ood")).mean(axis=0), axis=1)
    return auroc(h_id, h_ood)


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=0)), "values": v.tolist()}


def cmd_adapt(cfg: ExperimentConfig, mode: str = "finetuned") -> dict:
    """Gate the source model on labelled target samples and compare against zero-shot.

    ``frozen`` trains only the gate; ``finetuned`` trains gate and backbone.
    Seed 0 is the single-seed headline and also gets an MC-dropout entropy
    AUROC against source test; all ``adapt.seeds`` runs feed the mean/std
    block, whose AUROC column uses the deterministic MSP score. The finetuned
    report adds a temperature refit row.
    """
    if mode not in ("frozen", "finetuned"):
        raise ConfigError("mode must be frozen or finetuned")
    started = time.perf_counter()
    target = cfg.adapt.target
    bundles = load_bundles(cfg, ("source_test", target))
    main, _ = load_models(cfg)
    folder = _out(cfg) / "adapt" / mode
    folder.mkdir(parents=True, exist_ok=True)
    adapt_idx, test_idx = target_split(cfg, bundles[target])
    adapt_set = bundles[target].subset(adapt_idx, "adapt")
    test_set = bundles[target].subset(test_idx, "test")
    grid, a = cfg.metrics.grid, cfg.adapt

    zero_table, _ = _basic_table(main, test_set)
    before = _selective(zero_table, "msp", grid)
    before["ece"] = ece(zero_table.scores["msp"], zero_table.correct, cfg.metrics.bins).ece
    zero_table.write(folder / "scores_target_zero_shot.csv")

    runs, seed_rows = [], []
    for i in range(a.seeds):
        rng = _sub(cfg, f"adapt/{mode}/seed-{i}")
        hyper = TrainHyper(epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, weight_decay=a.weight_decay,
                           seed=rng.seed, trainable="gate" if mode == "frozen" else "gate+backbone",
                           val_fraction=a.val_fraction)
        rest, held = stratified_split(adapt_set.labels, a.val_fraction, rng.child("val-split"))
        fit_set, val_set = adapt_set.subset(rest), adapt_set.subset(held, "val")
        state, log, params = finetune_gating(main, fit_set, hyper, val_set)
        table, _ = _basic_table(state, test_set)
        source_table, _ = _basic_table(state, bundles["source_test"])
        row = _selective(table, "msp", grid)
        row["auroc_msp_vs_source"] = auroc(ood_score("msp", source_table.scores["msp"]),
                                           ood_score("msp", table.scores["msp"]))
        row["inverted"] = bool(row["auroc_msp_vs_source"] < 0.5)
        if i == 0:
            row["auroc_mc_entropy_vs_source"] = _mc_auroc(state, bundles["source_test"], test_set,
                                                          cfg.uq.mc_passes, rng.child("mc"))
        runs.append((state, log, params, table, val_set, row))
        seed_rows.append(row)

    state, log, params, table, val_set, after = runs[0]
    after["ece"] = ece(table.scores["msp"], table.correct, cfg.metrics.bins).ece
    save_checkpoint(state, folder / "checkpoint")
    table.write(folder / "scores_target_adapted.csv")
    _write_csv(folder / "adapt_log.csv", ("epoch", "train_loss", "train_acc", "val_acc"),
               [(r["epoch"], r["train_loss"], r["train_acc"], r["val_acc"]) for r in log])

    body = {
        "mode": mode,
        "target": target,
        "n_adapt": len(adapt_set),
        "n_test": len(test_set),
        "zero_shot": before,
        "adapted": after,
        "accuracy_change": after["accuracy"] - before["accuracy"],
        "wsr@50_change": after["wsr@50"] - before["wsr@50"],
        "parameters": params,
        "multi_seed": {
            "seeds": a.seeds,
            "accuracy": _mean_std([r["accuracy"] for r in seed_rows]),
            "risk@50": _mean_std([r["risk@50"] for r in seed_rows]),
            "wsr@50": _mean_std([r["wsr@50"] for r in seed_rows]),
            "auroc_msp_vs_source": _mean_std([r["auroc_msp_vs_source"] for r in seed_rows]),
        },
    }
    zero_curve = risk_coverage(zero_table.scores["msp"], zero_table.correct, grid)
    adapted_curve = risk_coverage(table.scores["msp"], table.correct, grid)
    series = {"zero-shot": (zero_curve.kappa, zero_curve.risk), f"{mode} gating": (adapted_curve.kappa,
                                                                                  adapted_curve.risk)}
    if mode == "finetuned":
        _, val_logits = forward(state, val_set.coords)
        temp = fit_temperature(val_logits, val_set.labels)
        t_table, _ = _basic_table(state, test_set, temp.T_star)
        refit = _selective(t_table, "msp_temp", grid)
        refit["ece"] = ece(t_table.scores["msp_temp"], t_table.correct, cfg.metrics.bins).ece
        refit["ece_before"] = ece(table.scores["msp"], table.correct, cfg.metrics.bins).ece
        refit["T_star"] = temp.T_star
        body["temperature_refit"] = refit
        t_curve = risk_coverage(t_table.scores["msp_temp"], t_table.correct, grid)
        series["+ temperature"] = (t_curve.kappa, t_curve.risk)
        b = ece(t_table.scores["msp_temp"], t_table.correct, cfg.metrics.bins)
        (folder / "reliability_temperature.svg").write_text(
            plots.reliability_chart(b.lo, b.hi, b.accuracy, b.confidence, "Reliability after temperature refit"))
    b = ece(table.scores["msp"], table.correct, cfg.metrics.bins)
    (folder / "reliability.svg").write_text(
        plots.reliability_chart(b.lo, b.hi, b.accuracy, b.confidence, f"Reliability (MSP): {mode} gating"))
    (folder / "risk_coverage.svg").write_text(plots.line_chart(series, f"Risk vs coverage on {target}"))
    body["per_class_accuracy"] = per_class_accuracy(table.pred, table.label, test_set.class_names)
    return write_report(folder / "report.json", body, cfg, started)


# --- corruption sweep ------------------------------------------------------------------------

def cmd_corrupt(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    test = load_bundles(cfg, ("source_test",))["source_test"]
    main, _ = load_models(cfg)
    folder = _out(cfg) / "corrupt"
    folder.mkdir(parents=True, exist_ok=True)
    sigmas, drops = cfg.corruption.sigmas, cfg.corruption.drops
    acc = np.zeros((len(sigmas), len(drops)))
    conf = np.zeros_like(acc)
    rows = []
    for i, s in enumerate(sigmas):
        for j, k in enumerate(drops):
            bundle = corrupt_bundle(test, s, k, _sub(cfg, f"corrupt/sigma-{i}/drop-{j}"))
            _, logits = forward(main, bundle.coords)
            probs = softmax(logits, axis=1)
            acc[i, j] = np.mean(probs.argmax(axis=1) == bundle.labels)
            conf[i, j] = np.mean(probs.max(axis=1))
            rows.append((s, k, acc[i, j], conf[i, j]))
    _write_csv(folder / "corruption.csv", ("sigma", "drop", "accuracy", "mean_msp"), rows)
    (folder / "corruption_accuracy.svg").write_text(
        plots.heatmap(acc, sigmas, drops, "Accuracy under corruption", "jitter sigma", "dropped joints"))
    (folder / "corruption_msp.svg").write_text(
        plots.heatmap(conf, sigmas, drops, "Mean MSP under corruption", "jitter sigma", "dropped joints"))
    worst = np.unravel_index(np.argmin(acc), acc.shape)
    body = {
        "sigmas": sigmas,
        "drops": drops,
        "accuracy": acc,
        "mean_msp": conf,
        "clean_accuracy": accuracy(main, test),
        "clean_mean_msp": float(np.mean(softmax(forward(main, test.coords)[1], axis=1).max(axis=1))),
        "worst_cell": {"sigma": sigmas[worst[0]], "drop": drops[worst[1]], "accuracy": acc[worst],
                       "mean_msp": conf[worst]},
    }
    return write_report(folder / "report.json", body, cfg, started)


# --- MC pass-count ablation ------------------------------------------------------------------

def cmd_ablate_mc(cfg: ExperimentConfig) -> dict:
    """Risk-coverage of MC-dropout entropy on the OOD target for each pass count.

    One run of max(N) stochastic passes is drawn per domain and every N uses
    its first N passes, so curves differ only by the number of passes.
    """
    started = time.perf_counter()
    target = cfg.adapt.target
    bundles = load_bundles(cfg)
    main, _ = load_models(cfg)
    folder = _out(cfg) / "ablate_mc"
    folder.mkdir(parents=True, exist_ok=True)
    domains = eval_domains(cfg, bundles)
    ood, idb = domains[target], domains["source_test"]
    passes = [int(n) for n in cfg.uq.ablation_passes]
    top = max(passes)
    p_ood = mc_dropout_probs(main, ood.coords, top, _sub(cfg, "ablate/ood"))
    p_id = mc_dropout_probs(main, idb.coords, top, _sub(cfg, "ablate/id"))
    _, logits = forward(main, ood.coords)
    correct = logits.argmax(axis=1) == ood.labels
    per_n, series = [], {}
    for n in passes:
        h_ood = entropy(p_ood[:n].mean(axis=0), axis=1)
        h_id = entropy(p_id[:n].mean(axis=0), axis=1)
        curve = risk_coverage(-h_ood, correct, cfg.metrics.grid)
        _write_csv(folder / f"curve_N{n:02d}.csv", ("kappa", "risk", "wsr", "accepted"), curve.rows())
        per_n.append({"n": n, **curve_summary(curve), "auroc_vs_source": auroc(h_id, h_ood)})
        series[f"N={n}"] = (curve.kappa, curve.risk)
    (folder / "ablate_mc.svg").write_text(plots.line_chart(series, f"MC dropout entropy on {target}"))
    risks = [v["risk@50"] for v in per_n]
    body = {
        "target": target,
        "passes": passes,
        "per_n": per_n,
        "risk@50_range": max(risks) - min(risks),
        "reference_auroc_n20": MC_ENTROPY_REFERENCE,
    }
    return write_report(folder / "report.json", body, cfg, started)


def run_all(cfg: ExperimentConfig, force: bool = False) -> dict:
    """Every step in order; returns the reports keyed by step."""
    return {
        "gen": cmd_gen(cfg, force),
        "train": cmd_train(cfg, force),
        "eval": cmd_eval(cfg),
        "adapt_frozen": cmd_adapt(cfg, "frozen"),
        "adapt_finetuned": cmd_adapt(cfg, "finetuned"),
        "corrupt": cmd_corrupt(cfg),
        "ablate_mc": cmd_ablate_mc(cfg),
    }
