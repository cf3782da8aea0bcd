"""Config plumbing, mu resolution, and report helpers."""

import json

import pytest

from mcenhance.corpus import NOISE_PRESETS, SEEN_NOISES, default_manifest
from mcenhance.errors import InvalidConfig
from mcenhance.pipeline import (
    DEFAULT_MU_GRID,
    POLICY_NAMES,
    ExperimentConfig,
    _select_mu_star,
    _write_rows,
    bank_labels,
    load_config_file,
    make_config,
    resolve_mu,
)


def test_make_config_defaults():
    cfg = make_config()
    assert cfg == ExperimentConfig()
    assert cfg.policies == POLICY_NAMES
    assert cfg.mu_grid == DEFAULT_MU_GRID
    assert cfg.n_passes == 50


def test_make_config_rejects_unknown_keys():
    with pytest.raises(InvalidConfig, match="config file"):
        make_config({"n_epoch": 3})
    with pytest.raises(InvalidConfig, match="flags"):
        make_config(None, {"pases": 10})


def test_make_config_precedence_and_none_skipping():
    cfg = make_config({"seed": 5, "mu": 0.3}, {"seed": 9, "mu": None})
    assert cfg.seed == 9
    assert cfg.mu == 0.3


def test_make_config_tuples_sequence_fields():
    cfg = make_config({"mu_grid": [0.0, 1.0], "hidden_dims": [8, 8],
                       "policies": ["var-mc"]})
    assert cfg.mu_grid == (0.0, 1.0)
    assert cfg.hidden_dims == (8, 8)
    assert cfg.policies == ("var-mc",)


def test_load_config_file(tmp_path):
    path = tmp_path / "cfg.json"
    with pytest.raises(InvalidConfig):
        load_config_file(path)
    path.write_text("not json")
    with pytest.raises(InvalidConfig):
        load_config_file(path)
    path.write_text("[1, 2]")
    with pytest.raises(InvalidConfig, match="JSON object"):
        load_config_file(path)
    path.write_text(json.dumps({"seed": 3}))
    assert load_config_file(path) == {"seed": 3}


def test_resolve_mu_precedence(tmp_path):
    cfg = ExperimentConfig(reports_dir=tmp_path, mu=0.16)
    assert resolve_mu(cfg) == 0.16
    (tmp_path / "mu_star.json").write_text(json.dumps({"mu_star": 0.08}))
    assert resolve_mu(cfg) == 0.08
    assert resolve_mu(cfg, mu=0.5) == 0.5


def test_select_mu_star_smallest_within_guardrail():
    grid = (0.0, 0.16, 1e9)
    rows = []
    # Variance routing hurts the trained condition badly at 0, mildly at
    # 0.16; the first threshold inside the guardrail wins.
    for mu, a, b in ((0.0, 2.0, 0.8), (0.16, 1.03, 0.9), (1e9, 1.0, 1.0)):
        rows.append((mu, "pink_snr+0", a))
        rows.append((mu, "mix_snr-10", b))
    assert _select_mu_star(rows, grid, ["pink"]) == 0.16


def test_select_mu_star_ignores_unfamiliar_conditions():
    grid = (0.0, 0.16, 1e9)
    rows = []
    # The unfamiliar condition degrades at low mu, but only trained
    # conditions hold the guardrail.
    for mu, a, b in ((0.0, 1.0, 3.0), (0.16, 1.0, 2.0), (1e9, 1.0, 1.0)):
        rows.append((mu, "pink_snr+0", a))
        rows.append((mu, "mix_snr-10", b))
    assert _select_mu_star(rows, grid, ["pink"]) == 0.0


def test_select_mu_star_falls_back_to_classifier():
    grid = (0.0, 0.16, 1e9)
    rows = []
    for mu, a in ((0.0, 1.5), (0.16, 1.2), (1e9, 1.0)):
        rows.append((mu, "pink_snr+0", a))
    assert _select_mu_star(rows, grid, ["pink"]) == 1e9


def test_select_mu_star_without_trained_conditions():
    grid = (0.16, 1e9)
    rows = [(0.16, "mix_snr-10", 5.0), (1e9, "mix_snr-10", 1.0)]
    assert _select_mu_star(rows, grid, ["pink"]) == 0.16


def test_bank_labels_registry_order():
    manifest = default_manifest(seed=1, n_train=2, n_val=1, n_test=1,
                                duration_s=1.0)
    assert bank_labels(manifest) == list(SEEN_NOISES)

    # Order follows the preset registry even if entries arrive shuffled.
    keep = {"babble_proxy", "pink_broadband"}
    manifest.entries = [e for e in manifest.entries
                        if e.split != "train" or e.noise in keep]
    labels = bank_labels(manifest)
    registry = list(NOISE_PRESETS)
    assert labels == sorted(keep, key=registry.index)


def test_write_rows_comment_and_atomicity(tmp_path):
    out = tmp_path / "sub" / "table.csv"
    _write_rows(out, ["x", "y"], [(1, 2), (3, 4)], comment="note")
    text = out.read_text().splitlines()
    assert text[0] == "# note"
    assert text[1] == "x,y"
    assert text[2] == "1,2"
    assert not list(out.parent.glob("*.tmp"))
