"""Command-line entry points.

Subcommand groups mirror the library modules: corpus management, encoder
training and querying, sequence generation, dataset generation, retriever
training and retrieval, offline evaluation, and the live evaluation
server. Every command is a thin wrapper over library functions.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import crs as crs_mod
from . import embedder
from . import evalharness
from . import interactive
from . import seqgen
from . import uttgen


def _load_corpus_arg(path):
    return corpus_mod.load_corpus(path)


def cmd_corpus_validate(args) -> int:
    try:
        corp = corpus_mod.load_corpus(args.path)
    except corpus_mod.CorpusError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(f"ok: {len(corp.items)} items, {len(corp.collections)} collections, "
          f"types={sorted(corp.types)}")
    return 0


def cmd_corpus_derive_artists(args) -> int:
    corp = _load_corpus_arg(args.input)
    derived = corpus_mod.derive_artist_collections(corp)
    corpus_mod.save_corpus(derived, args.output)
    added = len(derived.collections) - len(corp.collections)
    print(f"wrote {args.output}: {added} artist collections added")
    return 0


def cmd_corpus_fixture(args) -> int:
    corp = corpus_mod.make_fixture_corpus(args.items, args.collections, args.seed)
    if args.derive_artists:
        corp = corpus_mod.derive_artist_collections(corp)
    corpus_mod.save_corpus(corp, args.output)
    print(f"wrote {args.output}: {len(corp.items)} items, "
          f"{len(corp.collections)} collections")
    return 0


def cmd_embed_train(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    config = embedder.TrainConfig(dim=args.dim, steps=args.steps,
                                  batch_size=args.batch, lr=args.lr,
                                  tau=args.tau, seed=args.seed)
    params, report = embedder.train_dual_encoder(corp, config, return_report=True)
    embedder.save_params(params, args.out)
    print(f"wrote {args.out}: probe loss {report.initial_probe_loss:.4f} -> "
          f"{report.final_probe_loss:.4f} over {report.steps} steps")
    return 0


def cmd_embed_index(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    params = embedder.load_params(args.params)
    if args.kind == "item":
        index = embedder.index_corpus_items(params, corp)
    else:
        index = embedder.index_corpus_collections(params, corp, seed=args.seed)
    embedder.save_index(index, args.out)
    print(f"wrote {args.out}: {len(index)} {args.kind} vectors, dim {index.dim}")
    return 0


def cmd_embed_query(args) -> int:
    params = embedder.load_params(args.params)
    index = embedder.load_index(args.index)
    tokens = embedder.tokenize(args.text)
    if len(tokens) == 0:
        print("query tokenized to nothing", file=sys.stderr)
        return 1
    vec = embedder.encode(params, tokens)
    for ident, score in embedder.nearest(index, vec, args.k):
        print(f"{score:.4f}\t{ident}")
    return 0


def _build_indices(corp, params, seed):
    item_index = embedder.index_corpus_items(params, corp)
    coll_index = embedder.index_corpus_collections(params, corp, seed=seed)
    return coll_index, item_index


def cmd_seqgen_run(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    params = embedder.load_params(args.params)
    coll_index, item_index = _build_indices(corp, params, args.seed)
    cfg = seqgen.WalkConfig(turns=args.turns)
    rng = np.random.default_rng(args.seed)
    children = rng.spawn(args.count)
    partition = seqgen.type_partition(coll_index)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for i in range(args.count):
            walk = seqgen.generate_sequence(corp, coll_index, item_index, cfg,
                                            children[i], partition)
            record = {
                "target_collection": walk.target_collection,
                "turns": [
                    {"slate": list(t.slate), "ptype": t.ptype,
                     "source_collection": t.source_collection,
                     "alpha": t.alpha, "beta": t.beta}
                    for t in walk.turns
                ],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    print(f"wrote {args.out}: {args.count} sequences of {args.turns} turns")
    return 0


def cmd_uttgen_run(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    params = embedder.load_params(args.params)
    coll_index, item_index = _build_indices(corp, params, args.seed)
    cfg = seqgen.WalkConfig(turns=args.turns)
    rules = uttgen.load_filter_rules(args.filters) if args.filters else None
    inpainter = None
    if args.mode == uttgen.MODE_INPAINT:
        if not args.endpoint:
            print("--endpoint is required for inpaint mode", file=sys.stderr)
            return 1
        inpainter = uttgen.InpainterClient(endpoint=args.endpoint)
    stats = uttgen.DatasetStats()
    stream = uttgen.generate_dataset(
        corp, coll_index, item_index, cfg, args.mode,
        np.random.default_rng(args.seed), args.count, rules=rules,
        inpainter=inpainter, stats=stats,
    )
    uttgen.save_dataset(stream, args.out)
    print(f"wrote {args.out}")
    print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_crs_train(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    dataset = uttgen.load_dataset(args.data, corp)
    dev = evalharness.load_benchmark(args.dev)
    checkpoints = tuple(int(s) for s in args.checkpoints.split(","))
    config = crs_mod.CrsTrainConfig(dim=args.dim, batch_size=args.batch,
                                    lr=args.lr, tau=args.tau, seed=args.seed,
                                    checkpoints=checkpoints)
    params, report = crs_mod.train_crs(dataset, corp, config, dev)
    embedder.save_params(params, args.out)
    print(f"wrote {args.out}")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_crs_retrieve(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    params = embedder.load_params(args.params)
    index = embedder.load_index(args.index)
    hits = crs_mod.retrieve(params, index, [], args.query, args.k)
    for ident, score in hits:
        item = corp.items.get(ident)
        label = f"{item.title} - {', '.join(item.artists)}" if item else ident
        print(f"{score:.4f}\t{ident}\t{label}")
    return 0


def cmd_eval_run(args) -> int:
    corp = _load_corpus_arg(args.corpus)
    bench = evalharness.load_benchmark(args.bench)
    ks = tuple(int(s) for s in args.k.split(","))
    params = embedder.load_params(args.params) if args.params else None
    item_index = embedder.load_index(args.index) if args.index else None
    report = evalharness.run_eval(
        args.system, bench, ks=ks, corpus=corp, params=params,
        item_index=item_index, seed=args.seed, exclude_seen=args.exclude_seen,
    )
    print(report.summary())
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        print(f"wrote {args.out}")
    return 0


def _experiment_setup(args):
    corp = _load_corpus_arg(args.corpus)
    params = embedder.load_params(args.params)
    coll_index, item_index = _build_indices(corp, params, args.seed)
    bench = evalharness.load_benchmark(args.bench)
    checkpoints = tuple(int(s) for s in args.checkpoints.split(","))
    config = crs_mod.CrsTrainConfig(dim=args.dim, checkpoints=checkpoints,
                                    seed=args.seed)
    return corp, coll_index, item_index, bench, config


def cmd_eval_ablate(args) -> int:
    corp, coll_index, item_index, bench, config = _experiment_setup(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = evalharness.run_ablation(
        corp, coll_index, item_index, seqgen.WalkConfig(), args.budget,
        config, bench, seeds=seeds,
    )
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return 0


def cmd_eval_sweep(args) -> int:
    corp, coll_index, item_index, bench, config = _experiment_setup(args)
    sizes = tuple(int(s) for s in args.sizes.split(","))
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = evalharness.run_scaling_sweep(
        corp, coll_index, item_index, seqgen.WalkConfig(), sizes,
        config, bench, seeds=seeds,
    )
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    corp = _load_corpus_arg(args.corpus)
    names = args.systems.split(",")
    if len(names) != 2:
        print("--systems needs exactly two comma-separated names", file=sys.stderr)
        return 1
    params = embedder.load_params(args.params) if args.params else None
    item_index = embedder.load_index(args.index) if args.index else None
    systems = {}
    for name in names:
        systems[name] = evalharness.make_system(
            name, corpus=corp, params=params, item_index=item_index,
            seed=args.seed,
        )
    service = interactive.EvalService(systems, (names[0], names[1]), corp,
                                      log_dir=args.log_dir, seed=args.seed)
    app = interactive.build_app(service)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slatewalk")
    sub = parser.add_subparsers(dest="group", required=True)

    corpus_p = sub.add_parser("corpus", help="corpus files")
    corpus_sub = corpus_p.add_subparsers(dest="command", required=True)
    p = corpus_sub.add_parser("validate")
    p.add_argument("path")
    p.set_defaults(fn=cmd_corpus_validate)
    p = corpus_sub.add_parser("derive-artists")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_corpus_derive_artists)
    p = corpus_sub.add_parser("fixture")
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--collections", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--derive-artists", action="store_true")
    p.add_argument("output")
    p.set_defaults(fn=cmd_corpus_fixture)

    embed_p = sub.add_parser("embed", help="dual encoder and index")
    embed_sub = embed_p.add_subparsers(dest="command", required=True)
    p = embed_sub.add_parser("train")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_embed_train)
    p = embed_sub.add_parser("index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--kind", choices=["item", "collection"], default="item")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_embed_index)
    p = embed_sub.add_parser("query")
    p.add_argument("--params", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(fn=cmd_embed_query)

    seq_p = sub.add_parser("seqgen", help="slate sequence generation")
    seq_sub = seq_p.add_subparsers(dest="command", required=True)
    p = seq_sub.add_parser("run")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--turns", type=int, default=6)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_seqgen_run)

    utt_p = sub.add_parser("uttgen", help="conversation dataset generation")
    utt_sub = utt_p.add_subparsers(dest="command", required=True)
    p = utt_sub.add_parser("run")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--mode", choices=[uttgen.MODE_TEMPLATE, uttgen.MODE_INPAINT],
                   default=uttgen.MODE_TEMPLATE)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--filters", default=None)
    p.add_argument("--turns", type=int, default=6)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_uttgen_run)

    crs_p = sub.add_parser("crs", help="conversational retriever")
    crs_sub = crs_p.add_subparsers(dest="command", required=True)
    p = crs_sub.add_parser("train")
    p.add_argument("--corpus", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--checkpoints", default="500,1000,1500,2000")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_crs_train)
    p = crs_sub.add_parser("retrieve")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(fn=cmd_crs_retrieve)

    eval_p = sub.add_parser("eval", help="offline evaluation")
    eval_sub = eval_p.add_subparsers(dest="command", required=True)
    p = eval_sub.add_parser("run")
    p.add_argument("--system", required=True, choices=evalharness.KNOWN_SYSTEMS)
    p.add_argument("--bench", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", default="10,20,100")
    p.add_argument("--params", default=None)
    p.add_argument("--index", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude-seen", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval_run)
    for name, fn, extra in (
        ("ablate", cmd_eval_ablate, ("--budget",)),
        ("sweep", cmd_eval_sweep, ("--sizes",)),
    ):
        p = eval_sub.add_parser(name)
        p.add_argument("--corpus", required=True)
        p.add_argument("--params", required=True)
        p.add_argument("--bench", required=True)
        p.add_argument("--checkpoints", default="400,800")
        p.add_argument("--dim", type=int, default=32)
        p.add_argument("--seeds", default="0,1,2")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None)
        if name == "ablate":
            p.add_argument("--budget", type=int, required=True)
        else:
            p.add_argument("--sizes", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("serve", help="live interleaved evaluation API")
    p.add_argument("--systems", required=True, help="two names, e.g. crs,bm25")
    p.add_argument("--corpus", required=True)
    p.add_argument("--params", default=None)
    p.add_argument("--index", default=None)
    p.add_argument("--port", type=int, default=8040)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--log-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
