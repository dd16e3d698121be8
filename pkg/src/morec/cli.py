"""Command-line driver: ingest -> pretrain -> train -> eval -> frontier.

Every command resolves its configuration the same way (defaults, then the
--config file, then explicit flags), echoes the result, and writes it next
to the outputs. Exit codes: 0 success, 1 internal error, 2 usage or input
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import frontier as frontier_mod
from . import metrics as metrics_mod
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config, write_resolved
from .data import (
    DataFormatError,
    chronological_split,
    dataset_stats,
    group_items_by_popularity,
    load_interactions,
    read_grouping_csv,
    read_split_manifest,
    stats_to_dict,
    write_grouping_csv,
    write_split_manifest,
)
from .embed import MfConfig, load_embeddings, normalize_items, pretrain_mf, save_embeddings

log = logging.getLogger("morec")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Bad flags, bad config values, or missing prerequisite artifacts."""


def setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    wanted = os.environ.get("MOFIR_LOG", "info").lower()
    logging.basicConfig(level=levels.get(wanted, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def resolve_config(args) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        config = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data", None):
        overrides["data_path"] = args.data
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if overrides:
        config = config.merged(**overrides)
    return config.validate()


def announce(config: RunConfig) -> None:
    path = write_resolved(config, config.out_dir)
    print(f"resolved config (seed={config.seed}) written to {path}")
    print(config.to_json(), end="")


def artifact(config: RunConfig, name: str, must_exist: bool = True) -> Path:
    path = Path(config.out_dir) / name
    if must_exist and not path.exists():
        raise UsageError(
            f"missing prerequisite {path}; run the earlier pipeline stage first")
    return path


def load_split_artifacts(config: RunConfig):
    stats_doc = json.loads(artifact(config, "stats.json").read_text(encoding="utf-8"))
    split = read_split_manifest(artifact(config, "split.json"),
                                num_users=stats_doc["users"],
                                num_items=stats_doc["items"])
    grouping = read_grouping_csv(artifact(config, "grouping.csv"))
    return split, grouping


def load_embedding_table(config: RunConfig):
    table = load_embeddings(artifact(config, "embeddings.ckpt"))
    if table.dim != config.embed_dim:
        raise UsageError(
            f"embeddings have d={table.dim}, config expects {config.embed_dim}")
    return normalize_items(table) if config.normalize_items else table


def arch_from_config(config: RunConfig) -> agent_mod.AgentArch:
    return agent_mod.AgentArch(
        embed_dim=config.embed_dim, gru_hidden=config.gru_hidden,
        gru_layers=config.gru_layers, slate_size=config.slate_size,
        actor_hidden=config.actor_hidden, critic_hidden=config.critic_hidden,
        omega_scale=config.omega_scale)


def parse_omega(value: float) -> agent_mod.PreferenceVector:
    if not 0.0 <= value <= 1.0:
        raise UsageError(f"--omega must be in [0, 1], got {value}")
    return agent_mod.PreferenceVector(value, 1.0 - value)


# -- commands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = resolve_config(args)
    if not config.data_path:
        raise UsageError("ingest needs --data PATH (or data_path in the config)")
    announce(config)
    log_data = load_interactions(config.data_path, delimiter=config.delimiter)
    if not log_data.interactions:
        raise UsageError(f"{config.data_path}: no interactions parsed")
    stats = dataset_stats(log_data.interactions)
    split = chronological_split(log_data, ratio=config.split_ratio,
                                min_interactions=config.min_interactions)
    grouping = group_items_by_popularity(split,
                                         popular_fraction=config.popular_fraction,
                                         scope=config.popularity_scope)
    out = Path(config.out_dir)
    write_split_manifest(split, out / "split.json")
    write_grouping_csv(grouping, out / "grouping.csv")
    (out / "stats.json").write_text(
        json.dumps(stats_to_dict(stats), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    print(f"users={stats.users} items={stats.items} actions={stats.actions} "
          f"density={100 * stats.density:.3f}%")
    print(f"split: kept {len(split.users)} users, dropped {split.dropped_users}; "
          f"grouping: {grouping.popular_count} popular / "
          f"{grouping.longtail_count} long-tail (beta={grouping.beta:.5f})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    config = resolve_config(args)
    announce(config)
    split, _ = load_split_artifacts(config)
    table, losses = pretrain_mf(split, MfConfig(
        dim=config.embed_dim, epochs=config.mf_epochs, lr=config.mf_lr,
        reg=config.mf_reg, negatives_per_positive=config.mf_negatives,
        seed=config.seed))
    path = artifact(config, "embeddings.ckpt", must_exist=False)
    save_embeddings(table, path)
    print(f"pretrained d={table.dim} embeddings for {table.user_embeddings.shape[0]} "
          f"users / {table.item_embeddings.shape[0]} items -> {path}")
    print("mse per epoch: " + ", ".join(f"{v:.5f}" for v in losses))
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_config(args)
    announce(config)
    split, grouping = load_split_artifacts(config)
    table = load_embedding_table(config)
    settings = agent_mod.TrainSettings(
        episodes=config.episodes, max_steps=config.max_steps,
        gamma=config.gamma, tau=config.tau, pref_samples=config.pref_samples,
        batch_size=config.batch_size, actor_lr=config.actor_lr,
        critic_lr=config.critic_lr, buffer_capacity=config.buffer_capacity,
        warmup_transitions=config.warmup_transitions,
        update_every=config.update_every,
        exploration_scale=config.exploration_scale,
        exploration_decay_to=config.exploration_decay_to,
        proposal_reg=config.proposal_reg, seed=config.seed)
    trained, logs = agent_mod.train(
        split, grouping, table, arch_from_config(config), settings,
        fairness_variant=config.fairness_variant,
        history_len=config.history_len)
    ckpt = artifact(config, "policy.ckpt", must_exist=False)
    agent_mod.save_checkpoint(trained, ckpt)
    agent_mod.write_training_log(logs, artifact(config, "training_log.csv",
                                                must_exist=False))
    returns = [row.scalarized_return for row in logs]
    print(f"trained {len(logs)} episodes -> {ckpt}")
    print(f"scalarized return: first 10% mean {np.mean(returns[:max(1, len(returns)//10)]):.4f}, "
          f"last 10% mean {np.mean(returns[-max(1, len(returns)//10):]):.4f}")
    return EXIT_OK


def _load_policy(config: RunConfig) -> agent_mod.MoDdpg:
    try:
        return agent_mod.load_checkpoint(artifact(config, "policy.ckpt"),
                                         arch_from_config(config))
    except CheckpointError as exc:
        raise UsageError(str(exc)) from exc


def cmd_eval(args) -> int:
    config = resolve_config(args)
    omega = parse_omega(args.omega)
    announce(config)
    split, grouping = load_split_artifacts(config)
    table = load_embedding_table(config)
    trained = _load_policy(config)
    report = metrics_mod.evaluate(
        trained.actor, split, grouping, table, omega, ks=config.eval_ks,
        history_len=config.history_len, kl_log_base=config.kl_log_base,
        kl_mode=config.kl_mode, jobs=args.jobs)
    tag = f"{args.omega:g}"
    out = Path(config.out_dir)
    (out / f"eval_omega_{tag}.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out / f"eval_omega_{tag}.csv").write_text(
        "\n".join(report.csv_rows()) + "\n", encoding="utf-8")
    print(f"evaluated omega=({omega.utility:g}, {omega.fairness:g}) over "
          f"{report.fairness_users} users")
    for k, m in sorted(report.per_k.items()):
        print(f"  K={k:<3d} recall={m.recall:.5f} f1={m.f1:.5f} "
              f"ndcg={m.ndcg:.5f} kl%={m.kl_percent:.3f} "
              f"pop%={m.popularity_rate_percent:.3f}")
    return EXIT_OK


def cmd_frontier(args) -> int:
    config = resolve_config(args)
    if args.grid < 1:
        raise UsageError(f"--grid must be >= 1, got {args.grid}")
    announce(config)
    split, grouping = load_split_artifacts(config)
    table = load_embedding_table(config)
    trained = _load_policy(config)
    grid = frontier_mod.default_grid(args.grid)
    points = frontier_mod.sweep(
        trained.actor, split, grouping, table, grid,
        history_len=config.history_len, kl_log_base=config.kl_log_base,
        jobs=args.jobs)
    flags = frontier_mod.pareto_flags(
        [(p.ndcg20, p.longtail_rate20) for p in points])
    path = artifact(config, "frontier.csv", must_exist=False)
    frontier_mod.emit_frontier(points, flags, path)
    kept = sum(flags)
    print(f"swept {len(points)} preference points -> {path} "
          f"({kept} on the approximate Pareto frontier)")
    for p, keep in zip(points, flags):
        marker = "*" if keep else " "
        print(f" {marker} w_u={p.omega.utility:.2f} ndcg20={p.ndcg20:.5f} "
              f"longtail20={p.longtail_rate20:.3f}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="morec",
        description="Preference-conditioned multi-objective RL recommendation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--data", help="interaction log path")
        p.add_argument("--out", help="artifact directory")

    p = sub.add_parser("ingest", help="load, split, and group a dataset")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pretrain", help="pretrain fixed MF embeddings")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train the conditioned actor-critic")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate the checkpoint at one preference")
    common(p)
    p.add_argument("--omega", type=float, required=True,
                   help="utility weight in [0, 1]; fairness gets 1 - omega")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel evaluation workers")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("frontier", help="sweep preferences and extract the frontier")
    common(p)
    p.add_argument("--grid", type=int, default=11,
                   help="number of evenly spaced utility weights")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel evaluation workers")
    p.set_defaults(func=cmd_frontier)
    return parser


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataFormatError, CheckpointError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # pragma: no cover - internal failure path
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
