"""Experiment orchestration behind the CLI: corpus synthesis, the three
training scopes, policy evaluation, correlation reports, and the mu
threshold sweep."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .corpus import (
    NOISE_PRESETS,
    DatasetManifest,
    build_dataset,
    default_manifest,
    entries_for,
    entry_id,
    load_entry_frames,
    load_entry_signals,
    load_manifest,
    open_dataset,
)
from .dsp import FrameConfig, Signal, istft_overlap_add, read_wav, stft, write_wav
from .errors import EmptyDataset, InvalidConfig, MissingModels
from .mcdrop import (
    McConfig,
    enhance_deterministic,
    enhance_single_mc,
    mc_for_model,
    mc_spectral_stats,
)
from .metrics import sse, ssnr, threshold_sweep, variance_error_correlation
from .neural import TrainConfig, forward, load_model, save_model, train_classifier, train_regressor
from .selection import (
    ModelBank,
    PolicyKind,
    SelectionPolicy,
    decisions_to_csv,
    enhance_multi,
    load_bank,
    route_frames,
    save_bank,
    select_frames,
    sweep_bank,
)

POLICY_NAMES = ("single-conv", "single-mc", "class-conv", "class-mc",
                "var-mc", "mu-mc")
BANK_POLICIES = ("class-conv", "class-mc", "var-mc", "mu-mc")
# Coarse log ladder below the useful range of frame traces, step ladder
# across it. The endpoints pin the two pure policies: 0 routes every
# frame by variance, the top value is past any trace so the classifier
# decides alone.
DEFAULT_MU_GRID = (0.0, 0.16, 1.0, 4.0, 8.0, 16.0, 24.0, 32.0, 40.0,
                   48.0, 56.0, 64.0, 80.0, 96.0, 128.0, 1e9)

# A threshold is usable only while conditions the bank was trained on
# keep close to the classifier's error; 5% on validation leaves headroom
# for the held-out side of the split.
MU_GUARDRAIL = 1.05

_TAG_MC = 301
_TAG_EXPERT = 401
_TAG_SINGLE = 402
_TAG_BASELINE = 403
_TAG_CLASSIFIER = 404


@dataclass
class ExperimentConfig:
    """Everything the CLI verbs need; JSON config keys map 1:1 to fields
    and flags override them."""

    corpus_dir: str = "corpus"
    models_dir: str = "models"
    reports_dir: str = "reports"
    seed: int = 0
    n_passes: int = 50
    mu: float = 0.16
    mu_grid: tuple = DEFAULT_MU_GRID
    hidden_dims: tuple = (256, 256, 256)
    keep_prob: float = 0.8
    n_epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adam"
    input_norm: str = "zscore"
    n_train: int = 60
    n_val: int = 8
    n_test: int = 20
    duration_s: float = 2.0
    separate_baseline: bool = False
    policies: tuple = POLICY_NAMES


def make_config(file_data: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then config-file keys, then explicit flag overrides."""
    known = {f.name for f in fields(ExperimentConfig)}
    merged = {}
    for source, where in ((file_data, "config file"), (overrides, "flags")):
        if not source:
            continue
        for key, value in source.items():
            if key not in known:
                raise InvalidConfig(f"unknown {where} key {key!r}")
            if value is not None:
                merged[key] = value
    for key in ("mu_grid", "hidden_dims", "policies"):
        if key in merged:
            merged[key] = tuple(merged[key])
    return ExperimentConfig(**merged)


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InvalidConfig(f"no config file at {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: top level must be a JSON object")
    return data


def _derived_seed(*words) -> int:
    return int(np.random.SeedSequence(list(words)).generate_state(1, np.uint32)[0])


def _mc_cfg(cfg: ExperimentConfig) -> McConfig:
    return McConfig(n_passes=cfg.n_passes, rng_seed=_derived_seed(cfg.seed, _TAG_MC))


def _train_cfg(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        n_epochs=cfg.n_epochs,
        rng_seed=seed,
        hidden_dims=tuple(cfg.hidden_dims),
        keep_prob=cfg.keep_prob,
        optimizer=cfg.optimizer,
        input_norm=cfg.input_norm,
    )


def _write_rows(path, header, rows, comment: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


# ---------------------------------------------------------------- synth

def run_synth(cfg: ExperimentConfig, manifest_path=None) -> Path:
    if manifest_path is not None:
        manifest = load_manifest(manifest_path)
    else:
        manifest = default_manifest(
            seed=cfg.seed, n_train=cfg.n_train, n_val=cfg.n_val,
            n_test=cfg.n_test, duration_s=cfg.duration_s)
    return build_dataset(manifest, cfg.corpus_dir)


# ---------------------------------------------------------------- train

def bank_labels(manifest: DatasetManifest) -> list:
    """Train-set noise names in preset registry order; fixes the class
    index every component agrees on."""
    train_noises = {e.noise for e in manifest.entries if e.split == "train"}
    return [name for name in NOISE_PRESETS if name in train_noises]


def _concat_frames(corpus_dir, entries) -> tuple[np.ndarray, np.ndarray]:
    noisy, clean = [], []
    for e in entries:
        nm, cm = load_entry_frames(corpus_dir, e)
        noisy.append(nm)
        clean.append(cm)
    if not noisy:
        raise EmptyDataset("no training entries matched")
    return np.concatenate(noisy), np.concatenate(clean)


def _write_loss_csv(cfg, name, losses) -> None:
    rows = [(epoch, _fmt(loss)) for epoch, loss in enumerate(losses)]
    _write_rows(Path(cfg.reports_dir) / f"loss_{name}.csv",
                ["epoch", "loss"], rows,
                comment="epoch 0 is the pre-training loss (deterministic pass)")


def run_train(cfg: ExperimentConfig, scope: str) -> list:
    """Train one scope; returns the written model paths."""
    if scope not in ("single", "per-noise", "classifier", "all"):
        raise InvalidConfig(f"unknown train scope {scope!r}")
    manifest = open_dataset(cfg.corpus_dir)
    models_dir = Path(cfg.models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    written = []

    if scope in ("single", "all"):
        entries = entries_for(manifest, "train")
        noisy, clean = _concat_frames(cfg.corpus_dir, entries)
        model, losses = train_regressor(
            noisy, clean, _train_cfg(cfg, _derived_seed(cfg.seed, _TAG_SINGLE)),
            noise_label="all")
        save_model(model, models_dir / "single.model")
        _write_loss_csv(cfg, "single", losses)
        written.append(models_dir / "single.model")
        if cfg.separate_baseline:
            base, base_losses = train_regressor(
                noisy, clean, _train_cfg(cfg, _derived_seed(cfg.seed, _TAG_BASELINE)),
                noise_label="all")
            save_model(base, models_dir / "baseline.model")
            _write_loss_csv(cfg, "baseline", base_losses)
            written.append(models_dir / "baseline.model")

    if scope in ("per-noise", "all"):
        labels = bank_labels(manifest)
        experts = []
        for j, label in enumerate(labels):
            entries = entries_for(manifest, "train", noise=label)
            noisy, clean = _concat_frames(cfg.corpus_dir, entries)
            model, losses = train_regressor(
                noisy, clean, _train_cfg(cfg, _derived_seed(cfg.seed, _TAG_EXPERT, j)),
                noise_label=label)
            experts.append(model)
            _write_loss_csv(cfg, f"expert_{label}", losses)
        classifier = None
        if (models_dir / "classifier.model").exists():
            classifier = load_model(models_dir / "classifier.model")
        save_bank(ModelBank(models=experts, labels=labels, classifier=classifier),
                  models_dir)
        written += [models_dir / f"expert_{label}.model" for label in labels]

    if scope in ("classifier", "all"):
        labels = bank_labels(manifest)
        noisy_blocks, label_blocks = [], []
        for j, label in enumerate(labels):
            entries = entries_for(manifest, "train", noise=label)
            noisy, _ = _concat_frames(cfg.corpus_dir, entries)
            noisy_blocks.append(noisy)
            label_blocks.append(np.full(noisy.shape[0], j, dtype=np.int64))
        model, losses = train_classifier(
            np.concatenate(noisy_blocks), np.concatenate(label_blocks),
            _train_cfg(cfg, _derived_seed(cfg.seed, _TAG_CLASSIFIER)),
            n_classes=len(labels), noise_label="classifier")
        save_model(model, models_dir / "classifier.model")
        _write_loss_csv(cfg, "classifier", losses)
        written.append(models_dir / "classifier.model")
        expert_files = [models_dir / f"expert_{label}.model" for label in labels]
        if all(p.exists() for p in expert_files):
            experts = [load_model(p) for p in expert_files]
            save_bank(ModelBank(models=experts, labels=labels, classifier=model),
                      models_dir)

    return written


# -------------------------------------------------------------- enhance

def _load_single_model(models_dir, prefer_baseline: bool = False):
    models_dir = Path(models_dir)
    if prefer_baseline and (models_dir / "baseline.model").exists():
        return load_model(models_dir / "baseline.model")
    path = models_dir / "single.model"
    if not path.exists():
        raise MissingModels(f"no single-model file at {path}")
    return load_model(path)


def run_enhance(
    cfg: ExperimentConfig,
    policy_name: str,
    in_path,
    out_path,
    mu: float | None = None,
    decisions_path=None,
) -> Path:
    """Enhance one WAV under any of the six policies."""
    if policy_name not in POLICY_NAMES:
        raise InvalidConfig(f"unknown policy {policy_name!r}")
    noisy = read_wav(in_path)
    frame = FrameConfig()
    mc = _mc_cfg(cfg)
    out_path = Path(out_path)

    if policy_name == "single-conv":
        model = _load_single_model(cfg.models_dir, prefer_baseline=True)
        out = enhance_deterministic(model, noisy, frame)
    elif policy_name == "single-mc":
        model = _load_single_model(cfg.models_dir)
        out = enhance_single_mc(model, noisy, mc_for_model(model, mc), frame)
    else:
        bank = load_bank(cfg.models_dir)
        policy = SelectionPolicy(
            kind=PolicyKind(policy_name),
            mu=cfg.mu if mu is None else mu,
            mc=mc)
        out, decisions = enhance_multi(bank, noisy, policy, frame)
        if decisions_path is None:
            decisions_path = out_path.with_suffix(".decisions.csv")
        decisions_to_csv(decisions, bank.labels, decisions_path)

    tmp = out_path.with_suffix(out_path.suffix + ".tmp")
    write_wav(tmp, out)
    tmp.replace(out_path)
    return out_path


# ------------------------------------------------------------- evaluate

def _group_by_condition(entries) -> dict:
    groups = {}
    for e in entries:
        groups.setdefault((e.noise, e.snr_db), []).append(e)
    return groups


def resolve_mu(cfg: ExperimentConfig, mu: float | None = None) -> float:
    """Explicit value, else the validation-selected one, else the default."""
    if mu is not None:
        return mu
    mu_star_path = Path(cfg.reports_dir) / "mu_star.json"
    if mu_star_path.exists():
        return float(json.loads(mu_star_path.read_text())["mu_star"])
    return cfg.mu


def run_evaluate(
    cfg: ExperimentConfig,
    policies=None,
    mu: float | None = None,
    split: str = "test",
) -> list:
    """Mean SSE and SSNR per (noise, SNR, policy); writes eval.csv.

    Returns dict rows so callers can assert on them directly.
    """
    policies = list(policies if policies is not None else cfg.policies)
    for p in policies:
        if p not in POLICY_NAMES:
            raise InvalidConfig(f"unknown policy {p!r}")
    manifest = open_dataset(cfg.corpus_dir)
    frame = manifest.frame
    mc = _mc_cfg(cfg)
    mu_val = resolve_mu(cfg, mu)

    needs_bank = any(p in BANK_POLICIES for p in policies)
    bank = load_bank(cfg.models_dir) if needs_bank else None
    single = _load_single_model(cfg.models_dir) if "single-mc" in policies else None
    baseline = (_load_single_model(cfg.models_dir, prefer_baseline=True)
                if "single-conv" in policies else None)

    condition_of = {}
    for e in entries_for(manifest, split):
        condition_of[(e.noise, e.snr_db)] = e.condition

    rows = []
    for (noise, snr_db), entries in _group_by_condition(entries_for(manifest, split)).items():
        sse_acc = {p: [] for p in policies}
        ssnr_acc = {p: [] for p in policies}
        for e in entries:
            clean_sig, noisy_sig = load_entry_signals(cfg.corpus_dir, e)
            frames = stft(noisy_sig, frame)
            mag = frames.magnitude
            clean_mag = stft(clean_sig, frame).magnitude
            n = mag.shape[0]

            means = traces = posteriors = None
            if needs_bank:
                means, traces = sweep_bank(bank, mag, mc)
                posteriors, _ = forward(bank.classifier, mag)

            for p in policies:
                if p == "single-conv":
                    est, _ = forward(baseline, mag)
                elif p == "single-mc":
                    est = mc_spectral_stats(single, mag, mc_for_model(single, mc)).means
                elif p == "class-conv":
                    est, _ = select_frames(
                        bank, mag, SelectionPolicy(PolicyKind.CLASSIFIER_CONV, mc=mc))
                else:
                    policy = SelectionPolicy(PolicyKind(p), mu=mu_val, mc=mc)
                    chosen, _ = route_frames(policy, traces, posteriors, n)
                    est = means[chosen, np.arange(n)]
                total, _ = sse(clean_mag, est)
                est_sig = istft_overlap_add(est, frames.phase, frame)
                clean_cut = Signal(samples=clean_sig.samples[:len(est_sig)],
                                   sample_rate_hz=clean_sig.sample_rate_hz)
                sse_acc[p].append(total)
                ssnr_acc[p].append(ssnr(clean_cut, est_sig, frame))
        for p in policies:
            rows.append({
                "condition": noise,
                "snr_db": snr_db,
                "policy": p,
                "sse": float(np.mean(sse_acc[p])),
                "ssnr_db": float(np.mean(ssnr_acc[p])),
                "tag": condition_of[(noise, snr_db)],
                "n_files": len(entries),
            })

    csv_rows = [(r["condition"], r["snr_db"], r["policy"],
                 _fmt(r["sse"]), _fmt(r["ssnr_db"])) for r in rows]
    _write_rows(Path(cfg.reports_dir) / "eval.csv",
                ["condition", "snr_db", "policy", "sse", "ssnr"], csv_rows,
                comment="sse: mean over files of per-file totals on magnitude "
                        "frames; ssnr: mean over files, dB")
    return rows


# ------------------------------------------------------------ correlate

def run_correlate(cfg: ExperimentConfig, split: str = "test") -> list:
    """Pearson r between per-frame squared error and trace variance for
    the matched expert on every seen condition; writes correlation.csv
    and the per-frame scatter.csv."""
    manifest = open_dataset(cfg.corpus_dir)
    frame = manifest.frame
    mc = _mc_cfg(cfg)
    bank = load_bank(cfg.models_dir)

    rows = []
    scatter = []
    for (noise, snr_db), entries in _group_by_condition(entries_for(manifest, split)).items():
        if noise not in bank.labels:
            continue
        model = bank.models[bank.labels.index(noise)]
        ses, traces = [], []
        for e in entries:
            clean_sig, noisy_sig = load_entry_signals(cfg.corpus_dir, e)
            mag = stft(noisy_sig, frame).magnitude
            clean_mag = stft(clean_sig, frame).magnitude
            sweep = mc_spectral_stats(model, mag, mc_for_model(model, mc))
            _, per_frame = sse(clean_mag, sweep.means)
            ses.append(per_frame)
            traces.append(sweep.traces)
            for i in range(per_frame.size):
                scatter.append((noise, snr_db, entry_id(e), i,
                                _fmt(per_frame[i]), _fmt(sweep.traces[i])))
        se_all = np.concatenate(ses)
        tv_all = np.concatenate(traces)
        r = variance_error_correlation(se_all, tv_all)
        rows.append({"model": noise, "snr_db": snr_db,
                     "pearson_r": r, "n_frames": int(se_all.size)})

    csv_rows = [(r["model"], r["snr_db"], _fmt(r["pearson_r"]), r["n_frames"])
                for r in rows]
    _write_rows(Path(cfg.reports_dir) / "correlation.csv",
                ["model", "snr_db", "pearson_r", "n_frames"], csv_rows)
    _write_rows(Path(cfg.reports_dir) / "scatter.csv",
                ["model", "snr_db", "entry", "frame_index", "se", "trace_var"],
                scatter)
    return rows


# ---------------------------------------------------------------- sweep

def run_sweep(
    cfg: ExperimentConfig,
    split: str = "test",
    mu_grid=None,
) -> tuple[list, float | None]:
    """Threshold sweep over one split; on the val split also selects and
    records mu_star (smallest threshold that keeps every trained-noise
    condition within MU_GUARDRAIL of the largest-mu column)."""
    grid = np.asarray(mu_grid if mu_grid is not None else cfg.mu_grid, dtype=np.float64)
    manifest = open_dataset(cfg.corpus_dir)
    bank = load_bank(cfg.models_dir)
    mc = _mc_cfg(cfg)

    test_set = []
    for e in entries_for(manifest, split):
        clean_sig, noisy_sig = load_entry_signals(cfg.corpus_dir, e)
        test_set.append((f"{e.noise}_snr{e.snr_db:+d}", noisy_sig, clean_sig))
    if not test_set:
        raise EmptyDataset(f"no entries in split {split!r}")

    rows = threshold_sweep(bank, test_set, grid, mc, manifest.frame)
    name = "sweep.csv" if split == "test" else f"sweep_{split}.csv"
    _write_rows(Path(cfg.reports_dir) / name,
                ["mu", "condition", "sse"],
                [(_fmt(mu), cond, _fmt(val)) for mu, cond, val in rows],
                comment="sse: mean over files of per-file totals on magnitude frames")

    mu_star = None
    if split == "val":
        mu_star = _select_mu_star(rows, grid, bank.labels)
        out = Path(cfg.reports_dir) / "mu_star.json"
        tmp = out.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"mu_star": mu_star, "grid": grid.tolist()},
                                  indent=2) + "\n")
        tmp.replace(out)
    return rows, mu_star


def _select_mu_star(rows, grid, trained_labels) -> float:
    """Smallest mu whose SSE on conditions the bank has an expert for
    stays within MU_GUARDRAIL of the largest-mu column (the classifier
    limit). Lower thresholds route more frames by variance, which is
    where any gain on unfamiliar noise lives, so the cheapest threshold
    that does not give up known ground wins. The largest mu always
    qualifies; with no trained-noise condition in the split every mu
    does, and the sweep returns the smallest grid value."""
    by_mu = {}
    ref = {}
    for mu, cond, val in rows:
        by_mu.setdefault(mu, {})[cond] = val
        if mu == grid[-1]:
            ref[cond] = max(val, 1e-30)
    trained = [c for c in ref
               if c.rsplit("_snr", 1)[0] in set(trained_labels)]
    for mu in grid:
        cells = by_mu[float(mu)]
        if all(cells[c] / ref[c] <= MU_GUARDRAIL for c in trained):
            return float(mu)
    return float(grid[-1])
