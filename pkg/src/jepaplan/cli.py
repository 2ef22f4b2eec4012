"""Command-line interface.

Subcommands cover the full pipeline: gen-data, train, plan, eval, sweep,
inspect, and reproduce-table2. Every option resolves through the layered
config in config.py (flag > --set > file > preset > default) and each run
directory gets an effective_config.json with a content hash.

Exit codes: 0 success, 2 usage, 3 config error, 4 data error, 5 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import (
    default_output_root,
    desk_train_defaults,
    load_config_file,
    maze_gen_config,
    model_config_for,
    parse_set_overrides,
    plan_config,
    resolve_keys,
    wall_gen_config,
    write_effective_config,
)
from .data import (
    MazeGenConfig,
    TrajectoryDataset,
    WallGenConfig,
    generate_maze_dataset,
    generate_wall_dataset,
)
from .envs import WallWorld, maze_legal, wall_legal
from .errors import ConfigError, DataError, NumericError
from .evaluation import (
    BenchmarkSpec,
    benchmark_instances,
    oracle_values,
    run_benchmark,
    sweep as run_sweep,
    value_alignment,
)
from .models import count_parameters, load_any_model
from .nncore import set_threads
from .planning import PlanConfig, make_session, mpc_plan
from .reports import (
    alignment_figure,
    benchmark_figure,
    loss_figure,
    mode_table_figure,
    plan_figure,
    sweep_figure,
    write_benchmark_csv,
    write_mode_table_csv,
    write_plan_csv,
    write_sweep_csv,
)
from .training import (
    MODES,
    TABLE_MODES,
    TrainConfig,
    dataset_id,
    train,
    train_dual,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

# Flat keys each subcommand accepts from --set and config files.
_TRAIN_KEYS = (
    "steps", "batch_size", "segment_len", "lr", "warmup_steps", "gamma",
    "tau", "var_weight", "cov_weight", "vcreg_eps", "margin_pos",
    "margin_neg", "vf_weight", "pred_weight", "vcreg_axes", "ema_rho",
    "latent_hidden",
)
_MODEL_KEYS = (
    "latent_dim", "widths", "predictor_hidden", "group_norm_groups",
    "components", "component_dim",
)
_PLAN_KEYS = tuple(f.name for f in dataclasses.fields(PlanConfig))


def _fail(kind: str, code: int, err: Exception) -> int:
    print(json.dumps({"error": kind, "message": str(err)}), file=sys.stderr)
    return code


def _canonical_mode(name: str) -> str:
    if name in MODES:
        return name
    lowered = {m.lower(): m for m in MODES}
    if name.lower() in lowered:
        return lowered[name.lower()]
    raise ConfigError(f"unknown mode {name!r}; known: {', '.join(MODES)}")


def _claim_out_dir(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(
            f"output directory {out} is not empty; pass --force to reuse it")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args, schema: dict, flag_keys: tuple[str, ...]) -> dict:
    """Layered resolution for one subcommand's flat keys."""
    file_cfg = load_config_file(args.config) if args.config else {}
    overrides = parse_set_overrides(args.set)
    flags = {k: getattr(args, k, None) for k in flag_keys}
    return resolve_keys(schema, flags, overrides, file_cfg)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _out_dir(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else default_output_root() / default_name
    return _claim_out_dir(out, args.force)


def _parse_xy(text: str, label: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{label} must be 'x,y', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as e:
        raise ConfigError(f"{label} must be numeric: {e}") from e


def _resolved_knobs(args, with_plan: bool) -> tuple[dict, dict, dict]:
    """Split the layered flat keys into train, model, and planner overrides."""
    schema = {k: None for k in _TRAIN_KEYS + _MODEL_KEYS}
    if with_plan:
        schema.update({k: None for k in _PLAN_KEYS})
    if args.preset == "desk":
        schema.update(desk_train_defaults())
    resolved = _drop_none(_resolve(
        args, schema, ("steps", "batch_size", "lr", "gamma", "tau")))
    plan_over = {k: resolved.pop(k) for k in _PLAN_KEYS if k in resolved}
    model_over = {k: resolved.pop(k) for k in _MODEL_KEYS if k in resolved}
    if "latent_hidden" in resolved:
        resolved["latent_hidden"] = tuple(resolved["latent_hidden"])
    return resolved, model_over, plan_over


def _train_config(args, ds, mode: str, train_over: dict,
                  model_over: dict) -> TrainConfig:
    model_cfg = model_config_for(ds, mode, args.preset, model_over)
    return TrainConfig(mode=mode, seed=args.seed, threads=args.threads,
                       model=model_cfg, **train_over)


def _check_model_env(model, env_kind: str, image_size: int) -> None:
    enc = model.cfg.encoder
    want_c = 2 if env_kind == "wall" else 3
    if enc.in_channels != want_c:
        raise ConfigError(
            f"model expects {enc.in_channels}-channel images but the "
            f"{env_kind} environment renders {want_c} channels")
    if enc.image_size != image_size:
        raise ConfigError(
            f"model expects {enc.image_size}px observations but this "
            f"environment renders {image_size}px; match --preset or pass "
            "--data with the training dataset")
    if (enc.proprio_dim > 0) != (env_kind == "maze"):
        raise ConfigError("model proprio branch does not match the environment")


def _benchmark_spec(env_kind: str, regime: str, preset: str, seed: int,
                    instances: int | None, plan_cfg: PlanConfig,
                    label: str = "", manifest: dict | None = None,
                    ) -> BenchmarkSpec:
    """Instance-set geometry from a dataset manifest, else from the preset."""
    if manifest is not None:
        gc = manifest["generator"]["config"]
        if env_kind == "wall":
            return BenchmarkSpec(
                env_kind="wall", regime=regime, instances=instances,
                seed=seed, plan=plan_cfg, label=label,
                side=gc["side"], agent_radius=gc["agent_radius"],
                door_half_width_range=tuple(gc["door_half_width_range"]),
                wall_x_frac=tuple(gc["wall_x_frac"]),
                wall_half_thickness=gc["wall_half_thickness"])
        return BenchmarkSpec(
            env_kind="maze", regime="maze", instances=instances, seed=seed,
            plan=plan_cfg, label=label, cell_size=gc["cell_size"],
            maze_agent_radius=gc["agent_radius"],
            resolution=gc["resolution"], layout_seed=manifest["seed"],
            n_train_layouts=gc["n_train_layouts"],
            n_eval_layouts=gc["n_eval_layouts"])
    if env_kind == "wall":
        g = wall_gen_config(regime, preset)
        return BenchmarkSpec(
            env_kind="wall", regime=regime, instances=instances, seed=seed,
            plan=plan_cfg, label=label, side=g.side,
            agent_radius=g.agent_radius,
            door_half_width_range=g.door_half_width_range,
            wall_x_frac=g.wall_x_frac,
            wall_half_thickness=g.wall_half_thickness)
    g = maze_gen_config(preset)
    return BenchmarkSpec(
        env_kind="maze", regime="maze", instances=instances, seed=seed,
        plan=plan_cfg, label=label, cell_size=g.cell_size,
        maze_agent_radius=g.agent_radius, resolution=g.resolution,
        layout_seed=seed, n_train_layouts=g.n_train_layouts,
        n_eval_layouts=g.n_eval_layouts)


def _spec_image_size(spec: BenchmarkSpec) -> int:
    if spec.env_kind == "wall":
        return int(round(spec.side))
    return int(spec.resolution)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.env == "wall":
        schema = {f.name: None for f in dataclasses.fields(WallGenConfig)}
        schema.pop("regime")
    else:
        schema = {f.name: None for f in dataclasses.fields(MazeGenConfig)}
    resolved = _drop_none(_resolve(args, schema, ("n_trajectories", "n_states")))
    if args.env == "wall":
        cfg = wall_gen_config(args.regime, args.preset, resolved)
        tag = f"data-wall-{args.regime}-s{args.seed}"
    else:
        cfg = maze_gen_config(args.preset, resolved)
        tag = f"data-maze-s{args.seed}"
    out = _out_dir(args, tag)
    if args.env == "wall":
        ds = generate_wall_dataset(out, seed=args.seed, cfg=cfg)
    else:
        ds = generate_maze_dataset(out, seed=args.seed, cfg=cfg)
    write_effective_config(out, {
        "command": "gen-data", "preset": args.preset, "seed": args.seed,
        "env": args.env, "regime": ds.regime, "generator": asdict(cfg),
    })
    print(f"dataset {dataset_id(ds)}: {ds.n_trajectories} trajectories x "
          f"{ds.n_states} states, images {ds.image_shape}, at {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    mode = _canonical_mode(args.mode)
    ds = TrajectoryDataset(args.data)
    train_over, model_over, _ = _resolved_knobs(args, with_plan=False)
    cfg = _train_config(args, ds, mode, train_over, model_over)
    out = _out_dir(args, f"train-{mode}-s{args.seed}")
    if mode == "Dual":
        model, record = train_dual(ds, cfg, out_dir=out)
    else:
        model, record = train(mode, ds, cfg, out_dir=out)
    loss_figure(record.loss_history, out / "losses.png")
    write_effective_config(out, {
        "command": "train", "preset": args.preset, "mode": mode,
        "seed": args.seed, "threads": args.threads,
        "dataset_id": record.dataset_id, **record.config,
    })
    final = ", ".join(f"{k}={v:.4f}" for k, v in record.final_losses.items())
    print(f"trained {mode} on {ds.env_kind}/{ds.regime} "
          f"({count_parameters(model):,} params): {final}")
    print(f"run dir {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------


def _load_model(path: str) -> tuple:
    ckpt = Path(path)
    if not ckpt.exists():
        raise DataError(f"model checkpoint not found: {ckpt}")
    return load_any_model(ckpt)


def cmd_plan(args) -> int:
    model, _, meta = _load_model(args.model)
    plan_over = _drop_none(_resolve(args, {k: None for k in _PLAN_KEYS}, ()))
    pcfg = plan_config(args.env, args.regime, args.preset, plan_over)
    spec = _benchmark_spec(args.env, args.regime, args.preset, args.seed,
                           instances=1, plan_cfg=pcfg)
    _check_model_env(model, args.env, _spec_image_size(spec))
    inst = benchmark_instances(spec)[0]
    start = _parse_xy(args.start, "--start") if args.start else inst.start
    goal = _parse_xy(args.goal, "--goal") if args.goal else inst.goal
    session = make_session(inst.env, start)
    legal = wall_legal if args.env == "wall" else maze_legal
    for label, pos in (("start", start), ("goal", goal)):
        if not legal(session.world, np.asarray(pos, dtype=np.float64)):
            raise ConfigError(f"{label} position {pos} is not legal here")

    out = _out_dir(args, f"plan-{args.env}-s{args.seed}")
    set_threads(args.threads)
    res = mpc_plan(session, model, goal, pcfg, seed=inst.seed)
    res.save(out / "plan.json")
    write_plan_csv(res, out / "plan.csv")
    plan_figure(res, out / "plan.png")
    write_effective_config(out, {
        "command": "plan", "preset": args.preset, "seed": args.seed,
        "env": args.env, "regime": args.regime,
        "model_config_hash": meta.get("config_hash"),
        "start": list(start), "goal": list(goal), "plan": asdict(pcfg),
    })
    outcome = (f"reached the goal in {res.steps_to_goal} steps"
               if res.success else
               f"did not reach the goal in {len(res.executed_actions)} steps")
    print(f"{outcome}; outputs at {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    model, _, meta = _load_model(args.model)
    manifest = None
    env_kind, regime = args.env, args.regime
    if args.data:
        ds = TrajectoryDataset(args.data)
        manifest = ds.manifest
        if args.env not in (None, ds.env_kind):
            raise ConfigError(
                f"--env {args.env} conflicts with dataset env {ds.env_kind}")
        env_kind, regime = ds.env_kind, ds.regime
    if env_kind is None:
        raise ConfigError("pass --env or --data to pick the environment")
    if env_kind == "wall" and regime is None:
        regime = "ws"

    plan_over = _drop_none(_resolve(args, {k: None for k in _PLAN_KEYS}, ()))
    pcfg = plan_config(env_kind, regime, args.preset, plan_over)
    spec = _benchmark_spec(env_kind, regime, args.preset, args.seed,
                           args.instances, pcfg, label=args.label,
                           manifest=manifest)
    _check_model_env(model, env_kind, _spec_image_size(spec))

    out = _out_dir(args, f"eval-{env_kind}-{regime}-s{args.seed}")
    set_threads(args.threads)
    bench = run_benchmark(model, spec, out_dir=out / "instances")
    write_benchmark_csv(bench, out / "benchmark.csv")
    benchmark_figure(bench, out / "traces.png")

    payload = {
        "command": "eval", "preset": args.preset, "seed": args.seed,
        "model_config_hash": meta.get("config_hash"),
        "spec": spec.to_json(),
    }
    if args.alignment_pairs > 0:
        if spec.env_kind != "wall":
            raise ConfigError("value alignment needs the wall environment")
        inst = benchmark_instances(replace(spec, instances=1))[0]
        world = WallWorld.from_json(inst.env["world"])
        table = oracle_values(world, resolution=int(round(spec.side)),
                              gamma=args.oracle_gamma)
        alignment = value_alignment(model, table,
                                    n_pairs=args.alignment_pairs,
                                    seed=args.seed)
        (out / "alignment.json").write_text(
            json.dumps(alignment.to_json(), indent=1) + "\n")
        alignment_figure(alignment, out / "alignment.png")
        payload["alignment"] = alignment.to_json()
        rho = alignment.rho
        print("value alignment rho "
              + ("undefined" if np.isnan(rho) else f"{rho:.3f}")
              + f" over {alignment.n_pairs} pairs")
    write_effective_config(out, payload)
    print(f"success rate {bench.success_rate:.3f} over "
          f"{len(bench.results)} instances; outputs at {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    mode = _canonical_mode(args.mode)
    if mode == "Dual":
        raise ConfigError("sweep trains single-level modes only")
    ds = TrajectoryDataset(args.data)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--values must be comma-separated numbers: {e}") from e
    train_over, model_over, plan_over = _resolved_knobs(args, with_plan=True)
    cfg = _train_config(args, ds, mode, train_over, model_over)
    pcfg = plan_config(ds.env_kind, ds.regime, args.preset, plan_over)
    spec = _benchmark_spec(ds.env_kind, ds.regime, args.preset, args.seed,
                           args.instances, pcfg, manifest=ds.manifest)
    out = _out_dir(args, f"sweep-{args.param}-{mode}-s{args.seed}")
    rows = run_sweep(args.param, values, ds, cfg, spec, out)
    write_sweep_csv(rows, out / "sweep.csv")
    sweep_figure(rows, out / "sweep.png")
    write_effective_config(out, {
        "command": "sweep", "preset": args.preset, "seed": args.seed,
        "mode": mode, "param": args.param, "values": values,
        "instances": spec.n_instances, "dataset_id": dataset_id(ds),
    })
    for row in rows:
        print(f"{args.param}={row['value']:g}: "
              f"success rate {row['success_rate']:.3f}")
    print(f"outputs at {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


def cmd_inspect(args) -> int:
    if not args.model and not args.data:
        print("inspect needs --model or --data", file=sys.stderr)
        return EXIT_USAGE
    if args.model:
        model, step, meta = _load_model(args.model)
        print(f"checkpoint {args.model}")
        print(f"  kind {meta.get('kind')}, mode {meta.get('mode')}, "
              f"step {step}")
        if meta.get("config_hash"):
            print(f"  config_hash {meta['config_hash']}")
        enc = model.cfg.encoder
        print(f"  observations {enc.in_channels}x{enc.image_size}px, "
              f"latent {enc.latent_dim}, proprio {enc.proprio_dim}")
        if meta.get("kind") == "dual":
            print(f"  level1_params {count_parameters(model.level1):,}")
            print(f"  latent_encoder_params "
                  f"{count_parameters(model.latent_encoder):,}")
        else:
            print(f"  encoder_params {count_parameters(model.encoder):,}")
            print(f"  predictor_params {count_parameters(model.predictor):,}")
            print(f"  head_params {count_parameters(model.head):,}")
        print(f"  total_params {count_parameters(model):,}")
        return EXIT_OK
    ds = TrajectoryDataset(args.data)
    man = ds.manifest
    print(f"dataset {args.data}")
    print(f"  id {dataset_id(ds)}")
    print(f"  env {ds.env_kind}, regime {ds.regime}, seed {man['seed']}")
    print(f"  {ds.n_trajectories} trajectories x {ds.n_states} states")
    print(f"  images {ds.image_shape}, proprio {ds.has_proprio}")
    if "crossed" in man:
        crossed = sum(1 for c in man["crossed"] if c)
        print(f"  door crossings {crossed}/{ds.n_trajectories}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce-table2
# ---------------------------------------------------------------------------

_TABLE_ENVS = ("wall-ws", "wall-wb", "maze")
_ENV_DISPLAY = {"wall-ws": "WS", "wall-wb": "WB", "maze": "Maze"}


def _table_dataset(tag: str, data_root: Path, seed: int, preset: str,
                   gen_over: dict) -> TrajectoryDataset:
    out = data_root / tag
    if (out / "manifest.json").exists():
        return TrajectoryDataset(out)
    if tag == "maze":
        return generate_maze_dataset(out, seed, maze_gen_config(preset, gen_over))
    regime = tag.split("-")[1]
    return generate_wall_dataset(out, seed,
                                 wall_gen_config(regime, preset, gen_over))


def cmd_reproduce_table2(args) -> int:
    if not args.acknowledge_budget:
        print("reproduce-table2 trains and benchmarks every mode/environment "
              "cell, which takes hours on the desk preset and far longer at "
              "full scale; rerun with --acknowledge-budget to proceed",
              file=sys.stderr)
        return EXIT_USAGE
    env_tags = tuple(t.strip() for t in args.envs.split(",") if t.strip())
    for tag in env_tags:
        if tag not in _TABLE_ENVS:
            raise ConfigError(
                f"unknown environment tag {tag!r}; known: {', '.join(_TABLE_ENVS)}")
    modes = tuple(_canonical_mode(m.strip())
                  for m in args.modes.split(",") if m.strip())
    for m in modes:
        if m == "Dual":
            raise ConfigError("the mode table covers single-level modes only")

    out = Path(args.out) if args.out else default_output_root() / "table2"
    out.mkdir(parents=True, exist_ok=True)
    data_root = Path(args.data_root) if args.data_root else out / "data"
    gen_over = {}
    if args.n_trajectories:
        gen_over["n_trajectories"] = args.n_trajectories
    if args.n_states:
        gen_over["n_states"] = args.n_states
    train_over, model_over, plan_over = _resolved_knobs(args, with_plan=True)

    grid: dict[str, dict[str, float | None]] = {m: {} for m in modes}
    for tag in env_tags:
        ds = _table_dataset(tag, data_root, args.seed, args.preset, gen_over)
        pcfg = plan_config(ds.env_kind, ds.regime, args.preset, plan_over)
        spec = _benchmark_spec(ds.env_kind, ds.regime, args.preset, args.seed,
                               args.instances, pcfg, label=tag,
                               manifest=ds.manifest)
        col = _ENV_DISPLAY[tag]
        for mode in modes:
            cell = out / mode / tag
            summary = cell / "bench" / "benchmark.json"
            if summary.exists():
                grid[mode][col] = json.loads(summary.read_text())["success_rate"]
                print(f"{mode} / {col}: cached {grid[mode][col]:.3f}")
                continue
            cfg = _train_config(args, ds, mode, train_over, model_over)
            model, record = train(mode, ds, cfg, out_dir=cell)
            loss_figure(record.loss_history, cell / "losses.png")
            bench = run_benchmark(model, spec, out_dir=cell / "bench")
            write_benchmark_csv(bench, cell / "benchmark.csv")
            grid[mode][col] = bench.success_rate
            print(f"{mode} / {col}: success rate {bench.success_rate:.3f}")

    env_names = [_ENV_DISPLAY[t] for t in env_tags]
    write_mode_table_csv(grid, out / "table2.csv",
                         mode_order=list(modes), env_order=env_names)
    mode_table_figure(grid, out / "table2.png",
                      mode_order=list(modes), env_order=env_names)
    write_effective_config(out, {
        "command": "reproduce-table2", "preset": args.preset,
        "seed": args.seed, "envs": list(env_tags), "modes": list(modes),
        "instances": args.instances, "n_trajectories": args.n_trajectories,
    })
    print(f"table at {out / 'table2.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=1)
    sub.add_argument("--out", help="output directory (default under "
                     "$JEPAPLAN_OUT or ./runs)")
    sub.add_argument("--force", action="store_true",
                     help="reuse a non-empty output directory")
    sub.add_argument("--config", help="flat JSON config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key; repeatable")
    sub.add_argument("--preset", choices=("paper", "desk"), default="paper")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jepaplan",
        description="Latent world models with value-aligned embeddings for "
                    "sampling-based control.")
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("gen-data", help="generate a trajectory dataset")
    p.add_argument("--env", required=True, choices=("wall", "maze"))
    p.add_argument("--regime", default="ws", choices=("ws", "wb"),
                   help="wall action regime (ignored for maze)")
    p.add_argument("--n-trajectories", type=int, dest="n_trajectories")
    p.add_argument("--n-states", type=int, dest="n_states")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train", help="train one mode on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--mode", required=True,
                   help="training mode, e.g. VF, VF_quasi, Dual")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("plan", help="plan to a goal in one sampled world")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--env", default="wall", choices=("wall", "maze"))
    p.add_argument("--regime", default="ws", choices=("ws", "wb"))
    p.add_argument("--start", help="override start as 'x,y'")
    p.add_argument("--goal", help="override goal as 'x,y'")
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = subs.add_parser("eval", help="success-rate benchmark for a model")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--env", choices=("wall", "maze"))
    p.add_argument("--regime", choices=("ws", "wb"))
    p.add_argument("--data", help="dataset dir; reuses its world geometry")
    p.add_argument("--instances", type=int,
                   help="instance count (default 200 wall / 80 maze)")
    p.add_argument("--label", default="")
    p.add_argument("--alignment-pairs", type=int, default=0,
                   dest="alignment_pairs",
                   help="also rank-correlate the model value against the "
                        "shortest-path oracle on this many pairs (wall only)")
    p.add_argument("--oracle-gamma", type=float, default=0.98,
                   dest="oracle_gamma")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("sweep", help="sweep gamma or tau and benchmark each")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True)
    p.add_argument("--param", required=True, choices=("gamma", "tau"))
    p.add_argument("--values", required=True,
                   help="comma-separated values, e.g. 0.9,0.93,0.98")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("inspect", help="summarize a checkpoint or dataset")
    p.add_argument("--model", help="model checkpoint")
    p.add_argument("--data", help="dataset directory")
    p.set_defaults(func=cmd_inspect)

    p = subs.add_parser("reproduce-table2",
                        help="train and benchmark every mode per environment")
    p.add_argument("--acknowledge-budget", action="store_true",
                   dest="acknowledge_budget",
                   help="confirm the multi-hour compute budget")
    p.add_argument("--envs", default=",".join(_TABLE_ENVS))
    p.add_argument("--modes", default=",".join(TABLE_MODES))
    p.add_argument("--instances", type=int,
                   help="benchmark instances per cell")
    p.add_argument("--n-trajectories", type=int, dest="n_trajectories",
                   help="dataset size when generating")
    p.add_argument("--n-states", type=int, dest="n_states",
                   help="states per trajectory when generating")
    p.add_argument("--data-root", dest="data_root",
                   help="where datasets live or get generated")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_reproduce_table2)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return EXIT_OK if code == 0 else EXIT_USAGE
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return int(args.func(args))
    except ConfigError as e:
        return _fail("config", EXIT_CONFIG, e)
    except DataError as e:
        return _fail("data", EXIT_DATA, e)
    except NumericError as e:
        return _fail("numeric", EXIT_NUMERIC, e)


if __name__ == "__main__":
    sys.exit(main())
