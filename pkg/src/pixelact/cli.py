"""Command-line entry point.

Every subcommand honors --seed and --dry-run, writes a run manifest next
to its outputs, and follows the exit-code contract: 0 success, 1 for
validation/usage errors, 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .actions import TruncatedNormalParams, load_binning, save_binning
from .trajectory import load_trajectory, save_trajectory


class CliError(Exception):
    """Validation error: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def write_manifest(out_dir, command: str, args: dict, inputs=(), outputs=()):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(args, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "args": args,
        "seed": args.get("seed"),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))


def _load_dataset(data_dir) -> list:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise CliError(f"{data_dir} is not a directory")
    dirs = sorted(p for p in data_dir.iterdir()
                  if p.is_dir() and (p / "meta").exists())
    if not dirs:
        raise CliError(f"no trajectory directories under {data_dir}")
    return [load_trajectory(p) for p in dirs]


def _load_model(path, expect_kind: str):
    from .model.checkpoint import load_checkpoint
    ck = load_checkpoint(path)
    if ck.kind != expect_kind:
        raise CliError(f"{path} holds a {ck.kind} checkpoint, expected {expect_kind}")
    return ck.build_model()


def _engine(args):
    from .engine import InferenceEngine, RealtimeConfig
    model = _load_model(args.model, "policy")
    binning = load_binning(args.binning)
    return InferenceEngine(
        model, binning,
        config=RealtimeConfig(temperature=args.temperature, seed=args.seed),
    )


# --- subcommand implementations -------------------------------------------

def cmd_gen_data(args):
    from .env import collect_dataset, collect_target_dataset
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    if args.dry_run:
        return
    if args.env == "corridor":
        trajs = collect_dataset(args.episodes, seed=args.seed,
                                correction_noise=args.correction_noise)
    else:
        trajs = collect_target_dataset(args.episodes, seed=args.seed)
    out = Path(args.out)
    paths = []
    for i, t in enumerate(trajs):
        p = out / f"traj_{i:05d}"
        save_trajectory(t, p)
        paths.append(p)
    write_manifest(out, "gen-data", vars(args), outputs=paths)
    print(f"wrote {len(paths)} trajectories to {out}")


def cmd_filter(args):
    from .quality import quality_filter
    trajs = _load_dataset(args.data)
    if args.dry_run:
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["index,passed,hold,simultaneity,interaction"]
    n_pass = 0
    for i, t in enumerate(trajs):
        r = quality_filter(t)
        n_pass += r.passed
        rows.append(f"{i},{int(r.passed)},{int(r.hold_violation)},"
                    f"{int(r.simultaneity_violation)},{int(r.interaction_violation)}")
    (out / "filter_report.csv").write_text("\n".join(rows) + "\n")
    write_manifest(out, "filter", vars(args), inputs=[args.data],
                   outputs=[out / "filter_report.csv"])
    print(f"{n_pass}/{len(trajs)} trajectories pass")


def _train_common(args, kind: str):
    import torch
    from .model import ModelConfig, TrainConfig
    from .model.train import fit_binning_from_trajectories, train_idm, train_policy
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    tcfg = TrainConfig(steps=args.steps, batch_size=args.batch_size,
                       window=args.window, learning_rate=args.lr,
                       eval_every=args.eval_every, seed=args.seed,
                       action_dropout=args.action_dropout)
    trajs = _load_dataset(args.data)
    if args.dry_run:
        return
    torch.manual_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    binning = fit_binning_from_trajectories(trajs)
    save_binning(binning, out / "binning.json")
    # size the mouse-bin vocabularies to what was actually fitted
    import dataclasses
    cfg = dataclasses.replace(cfg, mouse_bins_x=binning.x.n_bins,
                              mouse_bins_y=binning.y.n_bins)
    cfg.save(out / "model_config.json")
    if kind == "policy":
        from .model import PolicyModel
        model = PolicyModel(cfg)
        result = train_policy(model, trajs, tcfg, binning=binning, out_dir=out)
    else:
        from .model import InverseDynamicsModel
        model = InverseDynamicsModel(cfg)
        result = train_idm(model, trajs, tcfg, binning=binning, out_dir=out)
    rows = ["step,test_loss"] + [f"{s},{l:.6f}" for s, l in result.test_losses]
    (out / "test_losses.csv").write_text("\n".join(rows) + "\n")
    write_manifest(out, f"train-{kind}", vars(args), inputs=[args.data],
                   outputs=result.checkpoint_paths)
    if result.halted:
        raise RuntimeError("training halted on non-finite loss")
    print(f"trained {kind} for {args.steps} steps; "
          f"final test loss {result.test_losses[-1][1]:.4f}")


def cmd_train(args):
    _train_common(args, "policy")


def cmd_train_idm(args):
    _train_common(args, "idm")


def cmd_pseudo_label(args):
    from .model.idm import pseudo_label
    model = _load_model(args.model, "idm")
    binning = load_binning(args.binning)
    trajs = _load_dataset(args.data)
    if args.dry_run:
        return
    out = Path(args.out)
    paths = []
    for i, t in enumerate(trajs):
        labeled = pseudo_label(model, t.frames, binning, game_id=t.game_id)
        p = out / f"traj_{i:05d}"
        save_trajectory(labeled, p)
        paths.append(p)
    write_manifest(out, "pseudo-label", vars(args), inputs=[args.data],
                   outputs=paths)
    print(f"pseudo-labeled {len(paths)} trajectories")


def cmd_rollout(args):
    from .env import CorridorConfig, engine_policy, env_step, render, reset
    from .env.corridor import EnvAction
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    engine = None if args.dry_run else _engine(args)
    if args.dry_run:
        return
    from .trajectory import Trajectory
    out = Path(args.out)
    paths = []
    step_fn = engine_policy(engine)
    for ep in range(args.episodes):
        engine.reset()
        world = reset(CorridorConfig(), args.seed + ep)
        frame = render(world)
        frames, actions = [], []
        for _ in range(args.budget):
            act = step_fn(frame)
            frames.append(frame)
            actions.append(act.to_raw())
            frame = env_step(world, act)
            if world.lap_completed:
                break
        # agent-generated frames carry no loss
        traj = Trajectory(frames=np.stack(frames), actions=tuple(actions),
                          loss_mask=np.zeros(len(frames), dtype=bool),
                          game_id="corridor")
        p = out / f"traj_{ep:05d}"
        save_trajectory(traj, p)
        paths.append(p)
    write_manifest(out, "rollout", vars(args), inputs=[args.model],
                   outputs=paths)
    print(f"rolled out {len(paths)} episodes")


def cmd_evaluate(args):
    from .env import engine_policy, evaluate
    engine = None if args.dry_run else _engine(args)
    if args.dry_run:
        return
    stats = evaluate(engine_policy(engine), n_episodes=args.episodes,
                     step_budget=args.budget, seed=args.seed,
                     on_episode_start=engine.reset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["episode,completed,steps_to_lap,wall_contacts"]
    for i, r in enumerate(stats.results):
        rows.append(f"{i},{int(r.completed)},{r.steps_to_lap},{r.wall_contacts}")
    (out / "evaluation.csv").write_text("\n".join(rows) + "\n")
    (out / "summary.txt").write_text(stats.summary())
    write_manifest(out, "evaluate", vars(args), inputs=[args.model],
                   outputs=[out / "evaluation.csv"])
    print(stats.summary(), end="")


def cmd_benchmark(args):
    from .engine import benchmark
    engine = None if args.dry_run else _engine(args)
    if args.dry_run:
        return
    rng = np.random.default_rng(args.seed)
    res = engine.model.cfg.frame_resolution
    frames = [rng.integers(0, 256, (res, res, 3), dtype=np.uint8)
              for _ in range(32)]
    report = benchmark(engine, frames, args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "latency.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    write_manifest(out, "benchmark", vars(args), inputs=[args.model],
                   outputs=[out / "latency.csv"])
    print(report.summary(), end="")


def cmd_toy_run(args):
    from .toy import ToyRunConfig, run_toy_experiment, write_toy_csv
    depths = tuple(int(d) for d in args.depths.split(","))
    cfg = ToyRunConfig(depths=depths, steps=args.steps, lr=args.lr,
                       n_seeds=args.seeds, base_seed=args.seed)
    if args.dry_run:
        return
    rows = run_toy_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_toy_csv(rows, out / "toy_causality.csv")
    write_manifest(out, "toy-run", vars(args),
                   outputs=[out / "toy_causality.csv"])
    print(f"wrote {len(rows)} rows to {out / 'toy_causality.csv'}")


def cmd_eval_causality(args):
    from .analysis import CausalityEvalConfig, causality_score
    from .model.train import fit_binning_from_trajectories, prepare_trajectory
    model = None if args.dry_run else _load_model(args.model, "policy")
    cfg = CausalityEvalConfig(chunks=args.chunks, perturb_prob=args.perturb_prob,
                              batch_size=args.batch)
    trajs = _load_dataset(args.data)
    if args.dry_run:
        return
    binning = load_binning(args.binning)
    prepared = [prepare_trajectory(t, binning) for t in trajs]
    window = model.cfg.history_length
    seqs = [{"frames": p["frames"][:window], "slots": p["slots"][:window],
             "game_id": p["game_id"]} for p in prepared]
    score = causality_score(model, seqs, cfg, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "causality.csv").write_text(f"score\n{score!r}\n")
    write_manifest(out, "eval-causality", vars(args), inputs=[args.model, args.data],
                   outputs=[out / "causality.csv"])
    print(f"causality score {score:.6f}")


def cmd_eval_perplexity(args):
    from .analysis import keyboard_perplexity
    from .model.train import prepare_trajectory
    model = None if args.dry_run else _load_model(args.model, "policy")
    trajs = _load_dataset(args.data)
    if args.dry_run:
        return
    binning = load_binning(args.binning)
    prepared = [prepare_trajectory(t, binning) for t in trajs]
    ppl = keyboard_perplexity(model, prepared)
    print(f"keyboard perplexity {ppl:.4f}")


def cmd_gap_probe(args):
    from .analysis import gap_probe_sweep
    from .model.train import prepare_trajectory
    model = None if args.dry_run else _load_model(args.model, "policy")
    trajs = _load_dataset(args.data)
    strengths = [float(s) for s in args.strengths.split(",")]
    if args.dry_run:
        return
    binning = load_binning(args.binning)
    p = prepare_trajectory(trajs[0], binning)
    rows = gap_probe_sweep(model, p["frames"], p["slots"], args.transform, strengths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = "transform,strength,mean_kl\n" + "".join(
        f"{n},{s},{kl!r}\n" for n, s, kl in rows)
    (out / "gap_probe.csv").write_text(text)
    write_manifest(out, "gap-probe", vars(args), inputs=[args.model, args.data],
                   outputs=[out / "gap_probe.csv"])
    print(text, end="")


def cmd_fit_scaling(args):
    from .scaling import fit_power_law
    path = Path(args.points)
    if not path.exists():
        raise CliError(f"no such file: {path}")
    points = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.lower().startswith(("d,", "#")):
            continue
        d, l = line.split(",")
        points.append((float(d), float(l)))
    if args.dry_run:
        return
    fit = fit_power_law(points)
    print(json.dumps(asdict(fit), indent=1))


# --- parser ----------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pixelact",
                     description="Behavior-cloning laboratory CLI")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dry-run", action="store_true")
        p.add_argument("--workers", type=int, default=1)
        return p

    p = add("gen-data", cmd_gen_data, help="collect expert datasets")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--env", choices=["corridor", "target-tap"], default="corridor")
    p.add_argument("--correction-noise", type=float, default=0.0)

    p = add("filter", cmd_filter, help="run quality filters over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    for name, fn in (("train", cmd_train), ("train-idm", cmd_train_idm)):
        p = add(name, fn, help=f"{name} on a trajectory dataset")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None)
        p.add_argument("--steps", type=int, default=500)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--window", type=int, default=32)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--eval-every", type=int, default=100)
        p.add_argument("--action-dropout", type=float, default=0.0)

    p = add("pseudo-label", cmd_pseudo_label, help="impute actions with an IDM")
    p.add_argument("--model", required=True)
    p.add_argument("--binning", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    for name, fn in (("rollout", cmd_rollout), ("evaluate", cmd_evaluate)):
        p = add(name, fn, help=f"closed-loop {name}")
        p.add_argument("--model", required=True)
        p.add_argument("--binning", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--episodes", type=int, default=16)
        p.add_argument("--budget", type=int, default=1500)
        p.add_argument("--temperature", type=float, default=1.0)

    p = add("benchmark", cmd_benchmark, help="latency benchmark")
    p.add_argument("--model", required=True)
    p.add_argument("--binning", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--temperature", type=float, default=1.0)

    p = add("toy-run", cmd_toy_run, help="brake/obstacle causality experiment")
    p.add_argument("--depths", default="0,1,3")
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)

    p = add("eval-causality", cmd_eval_causality, help="perturbation-KL score")
    p.add_argument("--model", required=True)
    p.add_argument("--binning", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunks", type=int, default=10)
    p.add_argument("--perturb-prob", type=float, default=0.5)
    p.add_argument("--batch", type=int, default=32)

    p = add("eval-perplexity", cmd_eval_perplexity, help="keyboard perplexity")
    p.add_argument("--model", required=True)
    p.add_argument("--binning", required=True)
    p.add_argument("--data", required=True)

    p = add("gap-probe", cmd_gap_probe, help="training-inference gap sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--binning", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transform", default="additive_noise")
    p.add_argument("--strengths", default="1,4,16")

    p = add("fit-scaling", cmd_fit_scaling, help="fit the data scaling law")
    p.add_argument("--points", required=True)

    return parser


def dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        args.fn(args)
        return 0
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"failure: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())
