"""``birar`` command line.

Exit codes: 0 success, 1 user error (bad flags, bad config, bad input
files), 2 internal error. Errors print as ``[module] message``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import BirarError, ConfigError

log = logging.getLogger("birar")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"[cli] {self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="INI config file (default: $BIRAR_CONFIG)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="birar", description="Bidirectional information-distance rewards lab.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("build-index", help="build a BM25 index from a JSONL corpus")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k1", type=float)
    p.add_argument("--b", type=float)

    p = sub.add_parser("gen-env", help="generate a synthetic multi-hop world")
    _common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="GRPO training under one reward mode")
    _common(p)
    p.add_argument("--world", required=True)
    p.add_argument("--mode", choices=("outcome", "forward", "backward"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--G", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("merge", help="interpolate forward/backward checkpoints, or sweep lambda")
    _common(p)
    p.add_argument("--forward", required=True)
    p.add_argument("--backward", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--sweep", nargs="?", const="", default=None,
                   help="comma-separated lambda grid (empty: config grid); writes CSV to --out")
    p.add_argument("--world", help="world directory (required with --sweep)")
    p.add_argument("--questions", help="questions.jsonl subset (default: the world's eval split)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    _common(p)
    p.add_argument("--ckpt", help="checkpoint JSON (required for --policy greedy)")
    p.add_argument("--policy", choices=("greedy", "oracle", "random"), default="greedy")
    p.add_argument("--random-seed", type=int, default=0)
    p.add_argument("--world", required=True)
    p.add_argument("--questions", help="questions.jsonl subset (default: the world's eval split)")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv", help="also write per-question rows as CSV")
    p.add_argument("--no-rewards", action="store_true", help="skip R_forward/R_backward")

    p = sub.add_parser("compare", help="compare eval reports; optionally plot training logs")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--metrics", nargs="+", help="training metrics.csv files to plot")
    p.add_argument("--metric", default="reward")
    p.add_argument("--plot", help="SVG output path")

    p = sub.add_parser("score-trajectory", help="reward breakdown for one trajectory")
    _common(p)
    p.add_argument("--traj", required=True, help="trajectory JSON or raw rollout text")
    p.add_argument("--gold", help="gold answer (default: the file's 'gold' field)")
    p.add_argument("--question", help="question text for raw rollouts")
    p.add_argument("--world", help="train the n-gram provider on this world's corpus")
    p.add_argument("--corpus", help="train the n-gram provider on this JSONL corpus")
    p.add_argument("--provider", choices=("ngram", "remote"))
    p.add_argument("--mode", choices=("forward", "backward", "outcome", "all"), default="all")
    p.add_argument("--out", help="write JSON here instead of stdout")

    p = sub.add_parser("replicate", help="directional replication: every reward mode over several seeds")
    p.add_argument("--world-seed", type=int, default=7)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", required=True, help="summary JSON")

    p = sub.add_parser("serve", help="HTTP scoring and retrieval service")
    _common(p)
    p.add_argument("--index", help="saved index (default: built from the corpus at startup)")
    p.add_argument("--corpus", help="corpus JSONL (texts for /v1/retrieve, n-gram training)")
    p.add_argument("--world", help="world directory (alternative to --corpus)")
    p.add_argument("--provider", choices=("ngram", "remote"))
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    return ap


def make_provider(cfg, docs=None):
    from .lm import NGramProvider, RemoteProvider, RemoteProviderConfig, train_ngram
    from .text import tokenize

    lm = cfg.section("lm")
    if lm["provider"] == "remote":
        return RemoteProvider(RemoteProviderConfig(
            endpoint=lm["endpoint"], model=lm["model"], timeout=lm["timeout"],
            max_retries=lm["max_retries"], max_in_flight=lm["max_in_flight"], api_key=lm["api_key"] or None,
        ))
    if lm["provider"] != "ngram":
        raise ConfigError(f"unknown provider {lm['provider']!r}")
    if not docs:
        raise ConfigError("the n-gram provider needs a corpus (--world or --corpus)")
    model = train_ngram([tokenize(d.text) for d in docs], lm["order"], lm["k"])
    return NGramProvider(model, cache_weight=lm["cache_weight"])


def _world_params(cfg):
    from .synthenv import WorldParams

    e = cfg.section("env")
    e.pop("seed")
    return WorldParams(**e)


def _qids(world, questions_path):
    from .synthenv import load_questions

    if questions_path:
        return load_questions(questions_path)
    return [q.qid for q in world.split("eval")]


def cmd_build_index(args):
    from .retrieval import build_index, load_corpus, save_index

    cfg = load_config(args.config, overrides={("retrieval", "k1"): args.k1, ("retrieval", "b"): args.b})
    docs = load_corpus(args.corpus)
    index = build_index(docs, cfg.get("retrieval", "k1"), cfg.get("retrieval", "b"))
    save_index(index, args.out)
    print(f"indexed {len(docs)} documents, {len(index.terms)} terms -> {args.out}")


def cmd_gen_env(args):
    from .synthenv import generate_world, save_world

    cfg = load_config(args.config, overrides={("env", "seed"): args.seed})
    world = generate_world(cfg.get("env", "seed"), _world_params(cfg))
    save_world(world, args.out)
    hops = {}
    for q in world.questions:
        hops[q.hop_depth] = hops.get(q.hop_depth, 0) + 1
    print(f"world seed {world.seed}: {len(world.corpus)} documents, {len(world.questions)} questions, "
          f"hops {dict(sorted(hops.items()))} -> {args.out}")


def cmd_train(args):
    from .synthenv import Environment, load_world
    from .trainer import TrainConfig, train

    over = {("train", k): v for k, v in (
        ("mode", args.mode), ("seed", args.seed), ("steps", args.steps), ("workers", args.workers),
        ("lr", args.lr), ("beta", args.beta), ("eps", args.eps), ("G", args.G), ("batch_size", args.batch_size),
    )}
    cfg = load_config(args.config, overrides=over)
    tc = TrainConfig(**cfg.section("train"))
    world = load_world(args.world)
    provider = None if tc.mode.value == "outcome" else make_provider(cfg, world.corpus)
    w, rows = train(tc, Environment.from_world(world), provider, args.out)
    last = rows[-1] if rows else None
    msg = f"trained {tc.mode.value} for {tc.steps} steps -> {Path(args.out) / f'theta_{tc.mode.value}.json'}"
    if last:
        msg += f" (final reward {last[1]:.4f}, search calls {last[3]:.3f})"
    print(msg)


def cmd_merge(args):
    from .merge import MergeSpec, interpolate, sweep
    from .trainer import TrainConfig, save_checkpoint

    cfg = load_config(args.config, overrides={("merge", "lambda"): args.lam,
                                              ("merge", "grid"): args.sweep or None})
    spec = MergeSpec(Path(args.forward), Path(args.backward), cfg.get("merge", "lambda"))
    wf, wb = spec.load()
    if args.sweep is None:
        w = interpolate(wf, wb, spec.lam)
        save_checkpoint(args.out, w, TrainConfig(**cfg.section("train")), 0)
        print(f"merged with lambda={spec.lam} -> {args.out}")
        return
    if not args.world:
        raise ConfigError("merge --sweep needs --world")
    from .synthenv import Environment, load_world

    world = load_world(args.world)
    env = Environment.from_world(world)
    provider = make_provider(cfg, world.corpus)
    rows = sweep(wf, wb, cfg.get("merge", "grid"), env, _qids(world, args.questions), provider,
                 {"world_seed": world.seed})
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    print(f"swept {len(rows)} lambda values -> {args.out}")


def cmd_eval(args):
    from .evalreport import emit, evaluate, greedy_chooser, oracle_chooser, random_chooser
    from .synthenv import Environment, load_world
    from .trainer import load_checkpoint

    cfg = load_config(args.config)
    world = load_world(args.world)
    meta = {"world_seed": world.seed, "policy": args.policy}
    if args.policy == "greedy":
        if not args.ckpt:
            raise ConfigError("eval --policy greedy needs --ckpt")
        w, ck = load_checkpoint(args.ckpt)
        choose = greedy_chooser(w)
        meta.update(mode=ck.get("config", {}).get("mode"), seed=ck.get("config", {}).get("seed"),
                    checkpoint=str(args.ckpt))
    elif args.policy == "oracle":
        choose = oracle_chooser
    else:
        choose = random_chooser(args.random_seed)
        meta["seed"] = args.random_seed
    provider = None if args.no_rewards else make_provider(cfg, world.corpus)
    report = evaluate(choose, Environment.from_world(world), _qids(world, args.questions), provider, meta)
    emit(report, "json", args.out)
    if args.csv:
        emit(report, "csv", args.csv)
    agg = report.aggregates
    print(f"EM {agg['em']:.4f}  search calls {agg['search_calls']:.3f}  "
          f"response length {agg['response_length']:.2f}  (n={agg['n']}) -> {args.out}")


def cmd_compare(args):
    from .evalreport import compare, emit, plot_metric, read_report_json
    from .trainer import read_metrics

    reports = [read_report_json(p) for p in args.reports]
    labels = args.labels or [Path(p).stem for p in args.reports]
    if len(labels) != len(reports):
        raise ConfigError("--labels must name every report")
    emit(compare(reports, labels), args.format, args.out)
    if args.plot:
        if not args.metrics:
            raise ConfigError("--plot needs --metrics")
        names = labels if len(labels) == len(args.metrics) else [Path(m).parent.name or m for m in args.metrics]
        plot_metric({n: read_metrics(m) for n, m in zip(names, args.metrics)}, args.metric, args.plot)
    print(f"compared {len(reports)} reports -> {args.out}")


def _load_trajectory_request(path, gold, question):
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except ValueError:
        obj = None
    if isinstance(obj, dict):
        gold = gold if gold is not None else obj.get("gold")
        traj = obj.get("trajectory", obj)
        if question is not None and isinstance(traj, dict):
            traj = {**traj, "question": question}
        req = {"trajectory": traj, "gold": gold}
        if isinstance(traj, str):
            req["question"] = question or obj.get("question", "")
    else:
        req = {"trajectory": text, "gold": gold, "question": question or ""}
    if req["gold"] is None:
        raise ConfigError("no gold answer: pass --gold or include a 'gold' field")
    return req


def cmd_score_trajectory(args):
    from .retrieval import load_corpus
    from .service import score_request
    from .synthenv import load_world

    cfg = load_config(args.config, overrides={("lm", "provider"): args.provider})
    docs = None
    if args.world:
        docs = load_world(args.world).corpus
    elif args.corpus:
        docs = load_corpus(args.corpus)
    req = _load_trajectory_request(args.traj, args.gold, args.question)
    req["modes"] = {"all": ["forward", "backward"], "outcome": []}.get(args.mode, [args.mode])
    provider = make_provider(cfg, docs) if req["modes"] else None
    out = score_request(provider, req)
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)


def cmd_replicate(args):
    from .replicate import run, summarize

    summary = summarize(run(args.world_seed, range(args.seeds), steps=args.steps))
    Path(args.out).write_text(json.dumps(summary, indent=1) + "\n")
    for m, v in summary["convergence_mean"].items():
        print(f"{m:<9} convergence step {v:6.1f}  eval EM {summary['eval_em_mean'][m]:.3f}  "
              f"eval search calls {summary['search_calls_mean'][m]:.3f}")
    print(f"-> {args.out}")


def cmd_serve(args):
    from .retrieval import build_index, load_corpus, load_index
    from .service import make_server
    from .synthenv import load_world

    cfg = load_config(args.config, overrides={("lm", "provider"): args.provider,
                                              ("serve", "host"): args.host, ("serve", "port"): args.port})
    docs = load_world(args.world).corpus if args.world else (load_corpus(args.corpus) if args.corpus else None)
    if args.index:
        index = load_index(args.index)
    elif docs:
        index = build_index(docs, cfg.get("retrieval", "k1"), cfg.get("retrieval", "b"))
    else:
        index = None
    provider = make_provider(cfg, docs)
    srv = make_server(cfg.get("serve", "host"), cfg.get("serve", "port"), provider, index, docs)
    host, port = srv.server_address[:2]
    print(f"serving on http://{host}:{port}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()


COMMANDS = {
    "build-index": cmd_build_index,
    "gen-env": cmd_gen_env,
    "train": cmd_train,
    "merge": cmd_merge,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "score-trajectory": cmd_score_trajectory,
    "replicate": cmd_replicate,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except BirarError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"[cli] {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"[cli] internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
