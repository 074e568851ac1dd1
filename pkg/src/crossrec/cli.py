"""Command-line entry point.

Every subcommand reads an optional flat ``key=value`` config file; the
flags repeated here override file values.  Exit codes: 0 on success, 2 for
configuration problems, 3 for data problems, 4 for numeric failures.

Subcommands::

    gen-synth        write synthetic source/target interaction files
    build-scenario   filter two domains and carve the evaluation split
    train-embed      fit one embedding space and save it
    train-map        fit the cross-domain mapping and save it
    eval             evaluate saved artifacts, write a report
    run              full pipeline: scenario, training, evaluation
    export-vectors   write inferred target-space vectors for test users

All randomness derives from the single ``--seed`` through fixed stream
slots, so ``run`` and an equivalent chain of the step subcommands produce
identical artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import coldstart, data, embed, evaluation, experiment, mapping
from .errors import ConfigError, DataError, NumericError


def _resolve_config(args):
    kv = {}
    if getattr(args, "config", None):
        kv = experiment.parse_config_file(args.config)
    cfg = experiment.config_from_mapping(kv)
    for flag, attr in (("method", "method"), ("phi", "phi"),
                       ("hops", "hops"), ("lam", "map_lam"),
                       ("seed", "seed"), ("out", "out_dir"),
                       ("source", "source_path"),
                       ("target", "target_path"),
                       ("scenario", "scenario_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    return cfg


def _add_common(p, out_required=False):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="experiment seed")
    p.add_argument("--out", required=out_required,
                   help="output file or directory")


def _cmd_gen_synth(args):
    cfg = _resolve_config(args)
    if cfg.synth_users < 1:
        raise ConfigError("gen-synth needs synth.users > 0")
    from .synth import generate_synthetic
    source, target = generate_synthetic(
        cfg.synth_users, cfg.synth_source_items, cfg.synth_target_items,
        cfg.synth_k_true, cfg.synth_overlap, cfg.synth_density,
        experiment.derive_seed(cfg.seed, 0))
    os.makedirs(cfg.out_dir, exist_ok=True)
    data.write_interactions(os.path.join(cfg.out_dir, "source.tsv"), source)
    data.write_interactions(os.path.join(cfg.out_dir, "target.tsv"), target)
    print(f"wrote {source.n_interactions} source and "
          f"{target.n_interactions} target interactions to {cfg.out_dir}")
    return 0


def _cmd_build_scenario(args):
    cfg = _resolve_config(args)
    cfg.method = experiment.METHOD_ITEMPOP  # irrelevant here
    cfg.validate()
    scenario = experiment.prepare_scenario(cfg)
    data.save_scenario(scenario, cfg.out_dir)
    print(f"scenario: {scenario.source.n_users} source users, "
          f"{scenario.target.n_users} target training users, "
          f"{len(scenario.overlap_users)} overlapping, "
          f"{len(scenario.test_users)} test, "
          f"{len(scenario.train_overlap_users)} train-overlap "
          f"(phi={scenario.phi:g})")
    return 0


_EMBED_SLOTS = {"source": 2, "target": 3, "unified": 4}


def _cmd_train_embed(args):
    cfg = _resolve_config(args)
    scenario = data.load_scenario(args.scenario)
    if args.domain == "source":
        interactions = scenario.source
    elif args.domain == "target":
        interactions = scenario.target
    else:
        interactions = data.build_unified(scenario)
    train_cfg = embed.EmbedTrainConfig(
        dim=cfg.embed_dim, margin=cfg.embed_margin,
        learning_rate=cfg.embed_lr, l2_reg=cfg.embed_l2,
        epochs=cfg.embed_epochs, batch_size=cfg.embed_batch,
        seed=experiment.derive_seed(cfg.seed, _EMBED_SLOTS[args.domain]))
    history = []
    space = embed.train_embeddings(interactions, train_cfg,
                                   objective=args.objective,
                                   loss_history=history)
    embed.save_embeddings(space, args.out)
    print(f"trained {args.domain} {args.objective} space "
          f"({space.U.shape[0]} users, {space.V.shape[0]} items, "
          f"K={space.dim}); final epoch loss {history[-1]:.6f}")
    return 0


def _cmd_train_map(args):
    cfg = _resolve_config(args)
    if args.mode is not None:
        mode = args.mode
    else:
        mode = mapping.MODE_SEMI
    scenario = data.load_scenario(args.scenario)
    source_space = embed.load_embeddings(args.source_emb)
    target_space = embed.load_embeddings(args.target_emb)
    train_cfg = mapping.MapTrainConfig(
        lam=cfg.map_lam, margin=cfg.map_margin, learning_rate=cfg.map_lr,
        epochs=cfg.map_epochs, batch_size=cfg.map_batch, mode=mode,
        seed=experiment.derive_seed(cfg.seed, 5))
    history = []
    net = mapping.train_mapping(source_space, target_space, scenario,
                                train_cfg, loss_history=history)
    mapping.save_mapping(net, args.out)
    print(f"trained {mode} mapping (K={net.dim}); "
          f"final epoch loss {history[-1]:.6f}")
    return 0


def _cmd_eval(args):
    cfg = _resolve_config(args)
    cfg.validate()
    scenario = data.load_scenario(args.scenario)
    art = experiment.MethodArtifacts()
    if args.unified_emb:
        art.unified_space = embed.load_embeddings(args.unified_emb)
    if args.source_emb:
        art.source_space = embed.load_embeddings(args.source_emb)
    if args.target_emb:
        art.target_space = embed.load_embeddings(args.target_emb)
    if args.mapping:
        art.net = mapping.load_mapping(args.mapping)
    if cfg.method == experiment.METHOD_SSCDR:
        art.hops = cfg.hops
    _require_artifacts(cfg.method, art)
    eval_cfg = evaluation.EvalConfig(
        cutoffs=cfg.eval_cutoffs, repeats=cfg.eval_repeats,
        negatives=cfg.eval_negatives,
        seed=experiment.derive_seed(cfg.seed, 6))
    scorer = experiment.make_scorer(scenario, cfg, art)
    report = evaluation.evaluate(scorer, scenario, eval_cfg,
                               positive=cfg.eval_positive)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_tsv(cfg.method, scenario.phi))
    print(report.format_table(title=f"{cfg.method} phi={scenario.phi:g}"))
    return 0


def _require_artifacts(method, art):
    if method in (experiment.METHOD_BPR, experiment.METHOD_CML):
        if art.unified_space is None:
            raise ConfigError(f"{method} needs --unified-emb")
    elif method != experiment.METHOD_ITEMPOP:
        missing = [flag for flag, val in (
            ("--source-emb", art.source_space),
            ("--target-emb", art.target_space),
            ("--mapping", art.net)) if val is None]
        if missing:
            raise ConfigError(f"{method} needs {', '.join(missing)}")


def _cmd_run(args):
    cfg = _resolve_config(args)
    report = experiment.run_experiment(cfg)
    print(report.format_table(title=f"{cfg.method} phi={cfg.phi:g}"))
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _cmd_export_vectors(args):
    cfg = _resolve_config(args)
    scenario = data.load_scenario(args.scenario)
    source_space = embed.load_embeddings(args.source_emb)
    net = mapping.load_mapping(args.mapping)
    hops = cfg.hops if args.hops is not None else 0
    if hops > 0:
        agg = coldstart.aggregate_hops(source_space, scenario.source, hops)
        rows = agg.user_vectors
    else:
        rows = source_space.U
    users = [u for u in scenario.test_users if source_space.has_user(u)]
    inferred = np.stack([
        coldstart.infer_cold_start(net, rows[source_space.user_index(u)])
        for u in users])
    space = embed.EmbeddingSpace(users, (), inferred,
                                 np.zeros((0, net.dim)),
                                 embed.KIND_INFERRED)
    embed.save_embeddings(space, args.out)
    print(f"exported {len(users)} inferred vectors (hops={hops})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crossrec",
        description="cross-domain cold-start recommendation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate synthetic domains")
    _add_common(p, out_required=True)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("build-scenario", help="filter and split two domains")
    _add_common(p, out_required=True)
    p.add_argument("--source", help="source interactions tsv")
    p.add_argument("--target", help="target interactions tsv")
    p.add_argument("--phi", type=float, help="train-overlap fraction")
    p.set_defaults(func=_cmd_build_scenario)

    p = sub.add_parser("train-embed", help="train one embedding space")
    _add_common(p, out_required=True)
    p.add_argument("--scenario", required=True, help="scenario directory")
    p.add_argument("--domain", required=True,
                   choices=("source", "target", "unified"))
    p.add_argument("--objective", default=embed.KIND_METRIC,
                   choices=(embed.KIND_METRIC, embed.KIND_INNER))
    p.set_defaults(func=_cmd_train_embed)

    p = sub.add_parser("train-map", help="train the cross-domain mapping")
    _add_common(p, out_required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--source-emb", required=True)
    p.add_argument("--target-emb", required=True)
    p.add_argument("--mode", choices=(mapping.MODE_SUPERVISED,
                                      mapping.MODE_SEMI))
    p.add_argument("--lambda", dest="lam", type=float,
                   help="weight of the unsupervised term")
    p.set_defaults(func=_cmd_train_map)

    p = sub.add_parser("eval", help="evaluate saved artifacts")
    _add_common(p, out_required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--unified-emb")
    p.add_argument("--source-emb")
    p.add_argument("--target-emb")
    p.add_argument("--mapping")
    p.add_argument("--hops", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="full pipeline from one config")
    _add_common(p)
    p.add_argument("--method")
    p.add_argument("--phi", type=float)
    p.add_argument("--hops", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("export-vectors",
                       help="export inferred cold-start vectors")
    _add_common(p, out_required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--source-emb", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--hops", type=int)
    p.set_defaults(func=_cmd_export_vectors)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else int(exc.code)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
