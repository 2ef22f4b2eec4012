"""CSV tables and matplotlib figures for training and evaluation runs.

Everything here is batch output: functions take in-memory results, write
files under a directory the caller owns, and return the written path.
Figures use the Agg backend so report generation works headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .envs import MazeWorld, WallWorld

# ---------------------------------------------------------------------------
# Loss curves
# ---------------------------------------------------------------------------


def loss_figure(history, path: str | Path) -> Path:
    """Plot every logged loss series against its step.

    history: iterable of (step, name, value, lr) rows, as stored on a run
    record or parsed back from losses.csv.
    """
    series: dict[str, tuple[list, list]] = {}
    for step, name, value, _ in history:
        series.setdefault(name, ([], []))
        series[name][0].append(int(step))
        series[name][1].append(float(value))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in sorted(series):
        steps, values = series[name]
        ax.plot(steps, values, label=name, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if series and all(v > 0 for _, vs in series.values() for v in vs):
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def parse_loss_csv(path: str | Path) -> list[tuple[int, str, float, float]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["step"]), rec["loss_name"],
                         float(rec["value"]), float(rec["lr"])))
    return rows


# ---------------------------------------------------------------------------
# Benchmark reports
# ---------------------------------------------------------------------------


def write_benchmark_csv(bench, path: str | Path) -> Path:
    """Per-instance outcomes; the success column re-derives the headline rate."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance", "seed", "success", "steps_to_goal",
                         "final_distance", "start_x", "start_y",
                         "goal_x", "goal_y"])
        for i, res in enumerate(bench.results):
            goal = np.asarray(res.goal)
            final = float(np.linalg.norm(res.poses[-1] - goal))
            writer.writerow([
                i, res.seed, int(res.success),
                "" if res.steps_to_goal is None else res.steps_to_goal,
                f"{final:.6g}",
                f"{res.poses[0][0]:.6g}", f"{res.poses[0][1]:.6g}",
                f"{goal[0]:.6g}", f"{goal[1]:.6g}",
            ])
    return path


def _draw_env(ax, env: dict) -> None:
    if env.get("kind") == "wall":
        world = WallWorld.from_json(env["world"])
        for x0, x1, y0, y1 in world.wall_rects:
            ax.fill([x0, x1, x1, x0], [y0, y0, y1, y1], color="0.3")
        ax.set_xlim(0, world.side)
        ax.set_ylim(0, world.side)
    elif env.get("kind") == "maze":
        world = MazeWorld.from_json(env["world"])
        c = world.cell_size
        for ix in range(world.grid.shape[0]):
            for iy in range(world.grid.shape[1]):
                if not world.grid[ix, iy]:
                    ax.fill([ix * c, (ix + 1) * c, (ix + 1) * c, ix * c],
                            [iy * c, iy * c, (iy + 1) * c, (iy + 1) * c],
                            color="0.3")
        ax.set_xlim(0, world.side)
        ax.set_ylim(0, world.side)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def benchmark_figure(bench, path: str | Path, max_traces: int = 24) -> Path:
    """Grid of executed traces over the instance worlds, colored by outcome."""
    n = min(len(bench.results), max_traces)
    cols = min(6, max(1, n))
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows),
                             squeeze=False)
    for k in range(rows * cols):
        ax = axes[k // cols][k % cols]
        if k >= n:
            ax.axis("off")
            continue
        res = bench.results[k]
        _draw_env(ax, res.env)
        color = "tab:green" if res.success else "tab:red"
        ax.plot(res.poses[:, 0], res.poses[:, 1], color=color, linewidth=1.0)
        ax.plot(*res.poses[0], marker="o", color=color, markersize=3)
        ax.plot(*res.goal, marker="*", color="tab:blue", markersize=7)
    fig.suptitle(f"success rate {bench.success_rate:.2f} "
                 f"({len(bench.results)} instances)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_plan_csv(res, path: str | Path) -> Path:
    """Executed trajectory of one plan, a row per control step."""
    poses = np.asarray(res.poses)
    actions = np.asarray(res.executed_actions)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "x", "y", "action_x", "action_y"])
        for t in range(len(poses)):
            row = [t, f"{poses[t, 0]:.6g}", f"{poses[t, 1]:.6g}"]
            if t < len(actions):
                row += [f"{actions[t, 0]:.6g}", f"{actions[t, 1]:.6g}"]
            else:
                row += ["", ""]
            writer.writerow(row)
    return path


def plan_figure(res, path: str | Path) -> Path:
    """Trace over the world next to the best-sampled-cost curve."""
    fig, (ax, axc) = plt.subplots(1, 2, figsize=(9, 4))
    _draw_env(ax, res.env)
    color = "tab:green" if res.success else "tab:red"
    poses = np.asarray(res.poses)
    ax.plot(poses[:, 0], poses[:, 1], color=color, linewidth=1.2)
    ax.plot(*poses[0], marker="o", color=color, markersize=4)
    ax.plot(*res.goal, marker="*", color="tab:blue", markersize=9)
    label = "reached goal" if res.success else "did not reach goal"
    if res.steps_to_goal is not None:
        label += f" in {res.steps_to_goal} steps"
    ax.set_title(label, fontsize=9)
    axc.plot(res.best_costs, linewidth=1.2)
    axc.set_xlabel("replan index")
    axc.set_ylabel("best sampled cost")
    axc.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Sweep reports
# ---------------------------------------------------------------------------


def write_sweep_csv(rows: list[dict], path: str | Path) -> Path:
    """CSV with the sweep grid recorded verbatim in a comment header."""
    path = Path(path)
    param = rows[0]["param"] if rows else ""
    values = ",".join(f"{r['value']:g}" for r in rows)
    fields = ["param", "value", "success_rate", "instances", "mode",
              "config_hash", "run_dir"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# sweep param={param} values={values}\n")
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in fields})
    return path


def sweep_figure(rows: list[dict], path: str | Path) -> Path:
    param = rows[0]["param"] if rows else "value"
    xs = [r["value"] for r in rows]
    ys = [r["success_rate"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel(param)
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Value alignment
# ---------------------------------------------------------------------------


def alignment_figure(alignment, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(-alignment.oracle_values, -alignment.model_values,
               s=6, alpha=0.4, linewidths=0)
    ax.set_xlabel("oracle cost-to-go")
    ax.set_ylabel("model cost-to-go")
    rho = alignment.rho
    label = "undefined" if np.isnan(rho) else f"{rho:.3f}"
    ax.set_title(f"Spearman rho = {label} (n={alignment.n_pairs})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Mode-by-environment summary table
# ---------------------------------------------------------------------------


def write_mode_table_csv(grid: dict, path: str | Path,
                         mode_order: list[str] | None = None,
                         env_order: list[str] | None = None) -> Path:
    """grid[mode][env] = success rate (or None for cells not yet run)."""
    path = Path(path)
    modes = mode_order if mode_order is not None else sorted(grid)
    envs = env_order
    if envs is None:
        seen = {e for row in grid.values() for e in row}
        envs = sorted(seen)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode"] + list(envs))
        for mode in modes:
            row = grid.get(mode, {})
            writer.writerow([mode] + [
                "" if row.get(e) is None else f"{row[e]:.3f}" for e in envs])
    return path


def mode_table_figure(grid: dict, path: str | Path,
                      mode_order: list[str] | None = None,
                      env_order: list[str] | None = None) -> Path:
    modes = mode_order if mode_order is not None else sorted(grid)
    envs = env_order
    if envs is None:
        seen = {e for row in grid.values() for e in row}
        envs = sorted(seen)
    width = 0.8 / max(1, len(envs))
    xs = np.arange(len(modes))
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(modes)), 4))
    for j, env in enumerate(envs):
        ys = [grid.get(m, {}).get(env) for m in modes]
        ys = [np.nan if y is None else y for y in ys]
        ax.bar(xs + (j - (len(envs) - 1) / 2) * width, ys, width=width,
               label=env)
    ax.set_xticks(xs)
    ax.set_xticklabels(modes, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("success rate")
    ax.set_ylim(0, 1.0)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
