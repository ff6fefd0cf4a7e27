"""Command-line entry points: dataset generation, training, evaluation,
sweeps, benchmarks, and the live dispatch service."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .controllers import POLICIES, make_policy
from .data import Dataset, MixSpec, collect
from .env import CorridorEnv, Scenario
from .evalkit import SweepSpec, episode_metrics, run_sweep, spacetime_export, welch_t
from .gridnet import GridSpec, Network, load_grid_config
from . import report

DEFAULT_PORT = int(os.environ.get("EVCORRIDOR_PORT", "8777"))


def scenario_from_args(args) -> Scenario:
    if getattr(args, "config", None):
        spec, extras = load_grid_config(args.config)
        if "seed" in extras and getattr(args, "seed", None) is None:
            args.seed = extras["seed"]
    else:
        spec = GridSpec(rows=args.grid_size, cols=args.grid_size)
    if getattr(args, "demand", None) is not None:
        spec = replace(spec, entry_demand=args.demand)
    return Scenario(spec=spec)


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-size", type=int, default=4,
                   help="grid side length (NxN)")
    p.add_argument("--demand", type=float, default=None,
                   help="entry demand in veh/s per entry point")
    p.add_argument("--config", type=str, default=None,
                   help="key=value grid config file (overrides --grid-size)")


def cmd_generate_dataset(args) -> int:
    scenario = scenario_from_args(args)
    mix = MixSpec(n_episodes=args.num_episodes, expert=args.expert_ratio,
                  random=args.random_ratio, noisy=args.noisy_ratio,
                  noisy_eps=args.noisy_eps, base_seed=args.seed)
    mix.validate()
    t0 = time.perf_counter()
    ds = collect(mix, scenario, progress=not args.quiet,
                 agent_mode=args.obs_mode == "agents")
    ds.save(args.output)
    stats = ds.stats()
    if not args.quiet:
        print(f"wrote {args.output}: {len(ds)} episodes in "
              f"{time.perf_counter() - t0:.1f}s")
        print(json.dumps(stats["per_policy"], indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    import torch
    from .model import ModelConfig, TrainOptions, save_checkpoint, train
    from .model.gat import grid_adjacency

    ds = Dataset.load(args.dataset)
    scen = ds.header_extra.get("scenario") or {}
    rows = int(scen.get("rows", 4))
    cols = int(scen.get("cols", 4))
    cfg = ModelConfig.for_variant(
        args.variant,
        d=args.hidden_dim, n_layers=args.num_layers, n_heads=args.num_heads,
        context=args.context_length, k=rows + cols - 1,
        t_max=int(scen.get("t_max", 200)), dropout=args.dropout,
        causal_mask=not args.no_causal_mask, n_agents=rows * cols)
    opts = TrainOptions(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        weight_decay=args.weight_decay, warmup_epochs=args.warmup_epochs,
        grad_clip=args.grad_clip, seed=args.seed,
        out_dir=str(Path(args.output).parent),
        stratified=args.stratified_sampling,
        log_every=0 if args.quiet else 1)
    adjacency = grid_adjacency(rows, cols) if args.variant == "madt" else None
    result = train(ds, cfg, opts, adjacency=adjacency)
    save_checkpoint(args.output, result.model, epoch=len(result.history),
                    val_loss=result.best_val_loss)
    hist_path = Path(args.output).with_suffix(".history.jsonl")
    report.write_jsonl(hist_path, result.history)
    report.training_figure(Path(args.output).with_suffix(".loss.png"),
                           result.history)
    if not args.quiet:
        print(f"checkpoint: {args.output}\nhistory: {hist_path}\n"
              f"best val loss {result.best_val_loss:.4f} "
              f"@ epoch {result.best_epoch}")
    return 0


def _load_model(path: str):
    from .model import load_checkpoint
    if not Path(path).exists():
        print(f"error: checkpoint {path} not found", file=sys.stderr)
        raise SystemExit(2)
    return load_checkpoint(path)


def _eval_policy_episodes(env: CorridorEnv, name: str, seeds, episodes):
    out = []
    for seed in seeds:
        for ep in range(episodes):
            s = 100_000 * (seed + 1) + ep
            env.reset(s)
            pol = make_policy(name)
            pol.reset(env, np.random.default_rng(s + 17))
            done = False
            while not done:
                done = env.step(pol.action(env)).done
            env.cooldown()
            out.append(episode_metrics(env, s))
    return out


def _eval_model_episodes(model, env: CorridorEnv, g_star, c_star,
                         seeds, episodes):
    from .model.rollout import rollout, rollout_madt
    from .model.gat import grid_adjacency
    out = []
    adjacency = None
    if model.cfg.variant == "madt":
        adjacency = grid_adjacency(env.scenario.spec.rows,
                                   env.scenario.spec.cols)
    for seed in seeds:
        for ep in range(episodes):
            s = 100_000 * (seed + 1) + ep
            if adjacency is not None:
                rollout_madt(model, env, g_star, adjacency, seed=s)
            else:
                rollout(model, env, g_star, c_star=c_star, seed=s,
                        record_obs=False)
            env.cooldown()
            out.append(episode_metrics(env, s))
    return out


def cmd_evaluate(args) -> int:
    scenario = scenario_from_args(args)
    env = CorridorEnv(scenario)
    groups: dict[str, list] = {}
    label = None
    if args.model:
        model, _ = _load_model(args.model)
        label = f"{model.cfg.variant}@{args.target_return:g}"
        groups[label] = _eval_model_episodes(
            model, env, args.target_return, args.cost_budget,
            args.seeds, args.num_episodes)
    for name in args.baselines:
        if name not in POLICIES:
            print(f"error: unknown baseline {name}", file=sys.stderr)
            return 2
        groups[name] = _eval_policy_episodes(env, name, args.seeds,
                                             args.num_episodes)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for name, ms in groups.items():
        for m in ms:
            rec = m.as_record()
            rec["policy"] = name
            records.append(rec)
    report.write_jsonl(out_dir / "episodes.jsonl", records)
    table = report.metrics_table(groups)
    (out_dir / "summary.txt").write_text(table + "\n")
    report.eval_figure(out_dir / "metrics.png", groups)
    print(table)
    if label and "ft_evp" in groups:
        a = [m.ett_s for m in groups[label]]
        b = [m.ett_s for m in groups["ft_evp"]]
        t, dof, p = welch_t(a, b)
        print(f"\nETT {label} vs ft_evp: t={t:.3f} dof={dof:.1f} p={p:.2e} "
              f"improvement={(1 - np.mean(a) / np.mean(b)) * 100:.1f}%")
    return 0


def cmd_sweep(args) -> int:
    scenario = scenario_from_args(args)
    env = CorridorEnv(scenario)
    model = None
    if args.model:
        model, _ = _load_model(args.model)

    axis = args.axis
    values = [float(v) for v in args.values]

    def run_point(value, seed, ep):
        s = 100_000 * (seed + 1) + ep
        if axis == "target_return":
            from .model.rollout import rollout
            rollout(model, env, value, seed=s, record_obs=False)
            env.cooldown()
            return episode_metrics(env, s)
        if axis == "demand":
            local_env = CorridorEnv(scenario.with_demand(value))
            if model is not None:
                from .model.rollout import rollout
                rollout(model, local_env, args.target_return, seed=s,
                        record_obs=False)
                local_env.cooldown()
                return episode_metrics(local_env, s)
            pol = make_policy(args.baseline)
            local_env.reset(s)
            pol.reset(local_env, np.random.default_rng(s + 17))
            done = False
            while not done:
                done = local_env.step(pol.action(local_env)).done
            local_env.cooldown()
            return episode_metrics(local_env, s)
        raise ValueError(f"unsupported sweep axis {axis!r}")

    spec = SweepSpec(axis=axis, values=values,
                     episodes_per_point=args.num_episodes,
                     seeds=tuple(args.seeds))
    result = run_sweep(spec, run_point)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{axis}_seeds{'-'.join(map(str, args.seeds))}"
    report.write_jsonl(out_dir / f"{stem}.jsonl", result.records)
    table = report.sweep_table(result)
    (out_dir / f"{stem}.txt").write_text(table + "\n")
    report.sweep_figure(out_dir / f"{stem}.png", result)
    print(table)
    return 0


def cmd_bench(args) -> int:
    rows = []
    for size in args.sizes:
        scenario = Scenario(spec=GridSpec(rows=size, cols=size))
        env = CorridorEnv(scenario)
        env.reset(0)
        action = env.ev_required_phases().clip(0)
        n = 0
        t0 = time.perf_counter()
        while time.perf_counter() - t0 < args.seconds:
            if env.done:
                env.reset(n)
            env.step(action)
            n += 1
        steps_per_s = n / (time.perf_counter() - t0)
        row = {"grid": f"{size}x{size}", "env_steps_per_s": steps_per_s,
               "model_ms_per_step": None}
        if args.model:
            model, _ = _load_model(args.model)
            if model.cfg.k == env.k_max:
                from .model.rollout import LiveRollout
                live = LiveRollout(model, env, 0.0, seed=0, record_obs=False)
                t1 = time.perf_counter()
                m = 0
                while not live.done and m < 200:
                    live.step()
                    m += 1
                row["model_ms_per_step"] = ((time.perf_counter() - t1) / m
                                            * 1000.0)
        rows.append(row)
    table = report.bench_table(rows)
    print(table)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        report.write_jsonl(args.output, rows)
    return 0


def cmd_serve(args) -> int:
    from .serve import serve
    scenario = scenario_from_args(args)
    serve(args.checkpoint, scenario, host=args.host, port=args.port,
          rate=args.rate, seed=args.seed, max_sessions=args.max_sessions)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evcorridor")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-dataset",
                       help="collect a mixed-quality offline dataset")
    _add_scenario_flags(g)
    g.add_argument("--num-episodes", type=int, default=5000)
    g.add_argument("--expert-ratio", type=float, default=0.70)
    g.add_argument("--random-ratio", type=float, default=0.15)
    g.add_argument("--noisy-ratio", type=float, default=0.15)
    g.add_argument("--noisy-eps", type=float, default=0.3)
    g.add_argument("--obs-mode", choices=("corridor", "agents"),
                   default="corridor")
    g.add_argument("--output", required=True)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--quiet", action="store_true")
    g.set_defaults(func=cmd_generate_dataset)

    t = sub.add_parser("train", help="train a model on a dataset file")
    t.add_argument("--dataset", required=True)
    t.add_argument("--variant", choices=("dt", "cdt", "madt"), default="dt")
    t.add_argument("--hidden-dim", type=int, default=128)
    t.add_argument("--num-layers", type=int, default=None)
    t.add_argument("--num-heads", type=int, default=4)
    t.add_argument("--context-length", type=int, default=None)
    t.add_argument("--dropout", type=float, default=0.1)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--warmup-epochs", type=int, default=5)
    t.add_argument("--grad-clip", type=float, default=1.0)
    t.add_argument("--stratified-sampling", action="store_true", default=True)
    t.add_argument("--no-stratified-sampling", dest="stratified_sampling",
                   action="store_false")
    t.add_argument("--no-causal-mask", action="store_true",
                   help="ablation: disable the causal attention mask")
    t.add_argument("--output", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint and baselines")
    _add_scenario_flags(e)
    e.add_argument("--model", type=str, default=None)
    e.add_argument("--target-return", type=float, default=0.0)
    e.add_argument("--cost-budget", type=float, default=None)
    e.add_argument("--baselines", nargs="*", default=["ft_evp"],
                   choices=sorted(POLICIES))
    e.add_argument("--num-episodes", type=int, default=20,
                   help="episodes per seed")
    e.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    e.add_argument("--output", default="results/evaluate")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="sweep a knob or scenario axis")
    _add_scenario_flags(s)
    s.add_argument("--axis", choices=("target_return", "demand"),
                   required=True)
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--model", type=str, default=None)
    s.add_argument("--baseline", type=str, default="ft_evp")
    s.add_argument("--target-return", type=float, default=0.0)
    s.add_argument("--num-episodes", type=int, default=20)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--output", default="results/sweeps")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="environment and model throughput")
    b.add_argument("--sizes", type=int, nargs="+", default=[4, 8])
    b.add_argument("--seconds", type=float, default=3.0)
    b.add_argument("--model", type=str, default=None)
    b.add_argument("--output", type=str, default=None)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("serve", help="live dispatch console service")
    _add_scenario_flags(v)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=DEFAULT_PORT)
    v.add_argument("--rate", type=float, default=2.0,
                   help="snapshots per second")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-sessions", type=int, default=None)
    v.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "num_layers", 0) is None:
        args.num_layers = 3 if args.variant == "madt" else 4
    if getattr(args, "context_length", 0) is None:
        args.context_length = 20 if args.variant == "madt" else 30
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
