"""Shared fixtures for the acceptance suite: cached desk-scale artifacts.

Desk trainings take minutes, so they live in session-scoped fixtures backed
by an on-disk cache. Set JEPAPLAN_TEST_CACHE to a directory to keep the
cache across pytest invocations; otherwise a per-session temp directory is
used. Entries are keyed by the full config fingerprint plus the dataset id,
so a config change can never hit a stale entry. Each cached entry records
the wall-clock seconds of the original computation; runtime budgets are
asserted against those, not against the (instant) cache replay.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import pytest
import torch

from jepaplan.config import (
    canonical_json,
    desk_train_defaults,
    model_config_for,
    plan_config,
    wall_gen_config,
)
from jepaplan.data import generate_wall_dataset, load_dataset
from jepaplan.evaluation import BenchmarkSpec, run_benchmark
from jepaplan.models import WorldModel, load_model
from jepaplan.training import (
    TrainConfig,
    config_fingerprint,
    dataset_id,
    get_mode,
    resolve_loss_config,
    resolve_model_config,
    train,
)

CACHE_ENV = "JEPAPLAN_TEST_CACHE"


@pytest.fixture(scope="session")
def test_cache(tmp_path_factory) -> Path:
    root = os.environ.get(CACHE_ENV)
    if root:
        path = Path(root)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("cache")


def _meta(path: Path) -> dict:
    return json.loads(path.read_text())


@pytest.fixture(scope="session")
def desk_ws_dataset(test_cache):
    """300-trajectory desk WS dataset (32px observations), seed 0, cached."""
    cfg = wall_gen_config("ws", preset="desk")
    key = canonical_json({"kind": "wall", "seed": 0, **cfg.__dict__})
    out = test_cache / "data_ws_desk_s0"
    meta_path = out / "gen.meta.json"
    if not meta_path.exists():
        t0 = time.time()
        generate_wall_dataset(out, seed=0, cfg=cfg)
        meta_path.write_text(json.dumps(
            {"seconds": time.time() - t0, "key": key}) + "\n")
    meta = _meta(meta_path)
    assert meta["key"] == key, "cached dataset was built from a different config"
    ds = load_dataset(out)
    ds.gen_seconds = meta["seconds"]
    return ds


@pytest.fixture(scope="session")
def desk_trainer(test_cache, desk_ws_dataset):
    """Factory: cached desk-scale training on the shared WS dataset.

    get(mode, seed) -> (model, dict with train_seconds / dir / config_hash).
    mode "untrained" skips training and just seeds a fresh desk model.
    """
    ds = desk_ws_dataset

    def get(mode_name: str, seed: int):
        if mode_name == "untrained":
            torch.manual_seed(seed)
            model_cfg = model_config_for(ds, "VF", preset="desk")
            model = WorldModel(model_cfg)
            model.eval()
            key = canonical_json(model_cfg.to_json())
            digest = hashlib.sha256(key.encode()).hexdigest()[:12]
            return model, {"train_seconds": 0.0, "dir": None,
                           "label": f"untrained_s{seed}_{digest}"}
        cfg = TrainConfig(
            mode=mode_name, seed=seed, threads=1,
            model=model_config_for(ds, mode_name, preset="desk"),
            **desk_train_defaults(),
        )
        loss_cfg = resolve_loss_config(cfg, ds)
        model_cfg = resolve_model_config(cfg, ds, get_mode(mode_name))
        _, chash = config_fingerprint(cfg, model_cfg, loss_cfg)
        out = test_cache / f"train_{mode_name}_s{seed}_{chash[:12]}_{dataset_id(ds)}"
        meta_path = out / "train.meta.json"
        if not meta_path.exists():
            t0 = time.time()
            model, record = train(mode_name, ds, cfg, out_dir=out)
            meta_path.write_text(json.dumps(
                {"seconds": time.time() - t0, "config_hash": chash}) + "\n")
        else:
            model, _, _ = load_model(out / "model.ckpt")
        model.eval()
        meta = _meta(meta_path)
        return model, {"train_seconds": meta["seconds"], "dir": out,
                       "config_hash": meta["config_hash"],
                       "label": f"{mode_name}_s{seed}_{chash[:12]}"}

    return get


def desk_wall_benchmark_spec(instances: int = 50, seed: int = 0) -> BenchmarkSpec:
    """Shared desk WS benchmark: geometry from the desk generator config."""
    gen = wall_gen_config("ws", preset="desk")
    return BenchmarkSpec(
        env_kind="wall", regime="ws", instances=instances, seed=seed,
        plan=plan_config("wall", "ws", preset="desk"),
        side=gen.side, agent_radius=gen.agent_radius,
        door_half_width_range=gen.door_half_width_range,
        wall_x_frac=gen.wall_x_frac,
        wall_half_thickness=gen.wall_half_thickness,
    )


@pytest.fixture(scope="session")
def desk_benchmark(test_cache):
    """Factory: cached 50-instance desk WS benchmark for a trained model.

    get(model, label) -> (success_rate, bench_seconds). The label must
    uniquely identify the model (mode + seed + config hash).
    """
    spec = desk_wall_benchmark_spec()
    spec_key = canonical_json(spec.to_json())

    def get(model, label: str):
        path = test_cache / f"bench_{label}.json"
        if path.exists():
            meta = _meta(path)
            if meta["spec"] == spec_key:
                return meta["success_rate"], meta["seconds"]
        t0 = time.time()
        bench = run_benchmark(model, spec)
        meta = {"success_rate": bench.success_rate,
                "seconds": time.time() - t0, "spec": spec_key}
        path.write_text(json.dumps(meta) + "\n")
        return meta["success_rate"], meta["seconds"]

    return get


# ---------------------------------------------------------------------------
# Acceptance summary: one PASS/FAIL line per criterion at the end of the run
# ---------------------------------------------------------------------------

_ACCEPTANCE: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    if report.when != "call":
        return
    _ACCEPTANCE[report.nodeid] = {
        "passed": report.passed,
        "duration": report.duration,
    }


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE, key=lambda n: n.split("::test_c")[1]):
        info = _ACCEPTANCE[nodeid]
        name = nodeid.split("::")[-1]
        number = int(name.split("_")[1][1:])
        label = " ".join(name.split("_")[2:])
        status = "PASS" if info["passed"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:>2} ({label}): {status} [{info['duration']:.1f}s]"
        )
