import copy
import csv
import json
import math

import numpy as np
import pytest

from leaklab.errors import DuplicateCell
from leaklab.harness import (
    CSV_COLUMNS,
    ResultStore,
    SweepConfig,
    cell_key,
    parse_transform,
    run_cell,
    run_sweep,
    seed_average,
    store_threshold,
)
from leaklab.metrics import METRIC_FIELDS, Regime


def tiny(**over):
    obj = {
        "name": "tiny",
        "dataset": {"kind": "random_iid", "d": 20, "c": 2},
        "alpha_grid": [0.5, 1.0, 1.5],
        "rho_grid": [0.5, 0.8],
        "tau_grid": [1.0],
        "seeds": [0, 1],
        "teacher": {"arch": "linear", "train": {"steps": 300, "lr": 1e-2}},
        "student": {"arch": "linear", "mode": "pinv"},
    }
    obj.update(over)
    return SweepConfig.from_dict(obj)


def test_parse_transform():
    assert parse_transform("none") == ("none", None)
    assert parse_transform("topk:9") == ("topk", 9)
    assert parse_transform("zerocol:0") == ("zerocol", 0)
    with pytest.raises(ValueError):
        parse_transform("topk:x")
    with pytest.raises(ValueError):
        parse_transform("flip")


@pytest.mark.parametrize("bad", [
    {"alpha_grid": []},
    {"rho_grid": [1.0]},
    {"tau_grid": [0.0]},
    {"alpha_grid": [-1.0]},
    {"seeds": []},
    {"alpha_convention": "n"},
    {"transform": "shuffle"},  # pinv students have no soft labels to shuffle
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        tiny(**bad)


def test_config_defaults_and_hash():
    cfg = SweepConfig.from_dict({"dataset": {"kind": "random_iid", "d": 10, "c": 2}})
    assert cfg.teacher.train.steps == 10_000 and cfg.student.train.steps == 5000
    mlp = SweepConfig.from_dict({"student": {"arch": "mlp1", "hidden": [8]}})
    assert mlp.student.train.steps == 50_000
    assert tiny().config_hash() == tiny(output_dir="elsewhere", name="x").config_hash()
    assert tiny().config_hash() != tiny(rank_tol=1e-8).config_hash()


def test_cell_key_distinguishes_coords():
    cfg = tiny()
    keys = {cell_key(cfg, c) for c in cfg.coords()}
    assert len(keys) == len(cfg.coords()) == 3 * 2 * 1 * 2


def test_run_cell_is_deterministic():
    cfg = tiny()
    a = run_cell(cfg, (1.5, 0.8, 1.0), seed=0)
    b = run_cell(cfg, (1.5, 0.8, 1.0), seed=0)
    assert a.ok and a.metrics == b.metrics and a.data_hash == b.data_hash
    assert a.n == 30 and a.n_train == 24 and a.d == 20


def test_run_cell_identifiable_pinv_recovers_teacher():
    cfg = tiny(dataset={"kind": "random_iid", "d": 40, "c": 2}, teacher={"arch": "linear", "train": {"steps": 3000}})
    cell = run_cell(cfg, (1.25, 0.8, 1.0), seed=3)
    assert cell.metrics.acc_T_star == 1.0
    assert cell.metrics.mse_test < 1e-8
    assert cell.regime == Regime.full_recovery


def test_run_cell_below_capacity_teacher_memorizes():
    cfg = tiny(dataset={"kind": "random_iid", "d": 100, "c": 2}, teacher={"arch": "linear"})
    cell = run_cell(cfg, (0.2, 0.5, 1.0), seed=0)
    assert cell.metrics.acc_T_star == 1.0


def test_failed_cells_are_marked_not_raised():
    cfg = tiny(dataset={"kind": "random_iid", "d": 2, "c": 2})
    cell = run_cell(cfg, (0.5, 0.5, 1.0), seed=0)  # one teacher sample: no test split
    assert cell.status == "failed" and "InvalidSplit" in cell.error
    assert cell.metrics is None


def test_sweep_cardinality_and_csv(tmp_path):
    cfg = tiny(rho_grid=[0.5, 0.6, 0.8])
    store = run_sweep(cfg, tmp_path / "out", deterministic=True)
    assert len(store) == 18
    with open(tmp_path / "out" / "cells.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 18 and list(rows[0]) == CSV_COLUMNS
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config_hash"] == cfg.config_hash() and "code_version" in manifest
    assert "created" not in manifest


def test_csv_round_trip_is_bit_exact(tmp_path):
    store = run_sweep(tiny(), tmp_path, deterministic=True)
    again = ResultStore.open(tmp_path)
    for key, cell in store.cells.items():
        other = again.cells[key]
        for name in METRIC_FIELDS:
            assert getattr(cell.metrics, name) == getattr(other.metrics, name)
        assert cell.alpha == other.alpha and cell.regime == other.regime


def test_sweep_resume_runs_only_missing(tmp_path):
    cfg = tiny()
    partial = tiny(alpha_grid=[0.5])
    run_sweep(partial, tmp_path, deterministic=True)
    seen = []
    store = run_sweep(cfg, tmp_path, deterministic=True, progress=lambda cell, i: seen.append(cell.key))
    assert len(seen) == len(cfg.coords()) - len(partial.coords())
    assert len(store) == len(cfg.coords())
    again = []
    run_sweep(cfg, tmp_path, deterministic=True, progress=lambda cell, i: again.append(cell))
    assert again == []


def test_sweep_output_is_byte_identical(tmp_path):
    run_sweep(tiny(), tmp_path / "a", deterministic=True)
    run_sweep(tiny(), tmp_path / "b", deterministic=True)
    for name in ("cells.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    serial = run_sweep(tiny(), tmp_path / "s", workers=1, deterministic=True)
    parallel = run_sweep(tiny(), tmp_path / "p", workers=2, deterministic=True)
    assert {k: c.metrics for k, c in serial.cells.items()} == {k: c.metrics for k, c in parallel.cells.items()}


def test_store_rejects_conflicting_duplicates(tmp_path):
    store = run_sweep(tiny(seeds=[0], alpha_grid=[1.0], rho_grid=[0.5]), tmp_path, deterministic=True)
    cell = copy.deepcopy(next(iter(store)))
    store.append(cell)  # identical payload: no-op
    assert len(store) == 1
    cell.metrics.acc_S_test = 0.123
    with pytest.raises(DuplicateCell):
        store.append(cell)


def test_store_rejects_other_config(tmp_path):
    run_sweep(tiny(seeds=[0], alpha_grid=[1.0]), tmp_path, deterministic=True)
    with pytest.raises(DuplicateCell):
        run_sweep(tiny(seeds=[0], alpha_grid=[1.0], rank_tol=1e-6), tmp_path)


def test_shuffled_and_plain_sweeps_share_data(tmp_path):
    base = {"student": {"arch": "linear", "mode": "ce", "train": {"steps": 50}}, "seeds": [0], "alpha_grid": [1.0, 1.5]}
    plain = run_sweep(tiny(**base), tmp_path / "plain", deterministic=True)
    shuffled = run_sweep(tiny(**base, transform="shuffle"), tmp_path / "shuf", deterministic=True)
    pairs = {(c.alpha, c.rho, c.seed): c.data_hash for c in plain}
    assert pairs == {(c.alpha, c.rho, c.seed): c.data_hash for c in shuffled}
    # identical teachers too: the teacher-side metrics agree exactly
    t1 = {(c.alpha, c.rho, c.seed): c.metrics.acc_T_star for c in plain}
    assert t1 == {(c.alpha, c.rho, c.seed): c.metrics.acc_T_star for c in shuffled}


def test_traces_are_written(tmp_path):
    cfg = tiny(seeds=[0], alpha_grid=[1.0], rho_grid=[0.5], record_traces=True,
               student={"arch": "linear", "mode": "ce", "train": {"steps": 200, "record_every": 50}})
    store = run_sweep(cfg, tmp_path, deterministic=True)
    trace = store.trace(next(iter(store)).key)
    assert [r["step"] for r in trace["student"]] == [0, 50, 100, 150, 200]
    assert "acc_S_test" in trace["student"][0] and "acc_T_star" in trace["teacher"][0]


def test_modular_addition_cell():
    cfg = SweepConfig.from_dict({
        "dataset": {"kind": "modular_addition", "p": 7, "teacher_frac": 0.5},
        "rho_grid": [0.6], "tau_grid": [2.0], "seeds": [0],
        "teacher": {"arch": "mlp1", "hidden": [16], "train": {"steps": 100}},
        "student": {"arch": "mlp1", "hidden": [16], "train": {"steps": 100}},
    })
    (coords,) = cfg.coords()
    assert coords[0] is None
    cell = run_cell(cfg, coords)
    assert cell.ok and cell.n == 24 and math.isclose(cell.alpha, 24 / 21)


def test_dropclass_and_focus_metrics():
    cfg = tiny(dataset={"kind": "random_iid", "d": 10, "c": 3}, alpha_convention="n/(dc)", seeds=[0],
               student={"arch": "linear", "mode": "ce", "train": {"steps": 100}}, transform="dropclass:0")
    cell = run_cell(cfg, (1.0, 0.5, 1.0), seed=0)
    assert cell.ok and cell.n == 30
    assert 0.0 <= cell.acc_S_test_focus <= 1.0 and 0.0 <= cell.acc_S_test_rest <= 1.0


def test_d_overrides():
    cfg = tiny(d_overrides={"1.5": 10})
    assert run_cell(cfg, (1.5, 0.8, 1.0), seed=0).d == 10
    assert run_cell(cfg, (1.0, 0.8, 1.0), seed=0).d == 20


def test_thresholds_from_store(tmp_path):
    cfg = tiny(dataset={"kind": "random_iid", "d": 30, "c": 2}, alpha_grid=[0.5, 1.0, 1.5, 2.0], rho_grid=[0.8])
    store = run_sweep(cfg, tmp_path, deterministic=True)
    est = store_threshold(store, "alpha_S_id")
    assert est.crossed and 1.0 <= est.alpha_star <= 1.5 and est.n_seeds == 2
    with pytest.raises(ValueError):
        store_threshold(store, "alpha_S_shuffle_label")
    avg = seed_average(store)
    assert set(avg) == {(a, 0.8) for a in cfg.alpha_grid}
    assert len(avg[(1.0, 0.8)][1]) == 2
