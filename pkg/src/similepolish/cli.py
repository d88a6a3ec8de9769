"""Command-line entry points for the full pipeline.

Subcommands: extract, synth, vocab, train, eval, retrieve, polish, serve.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus, metrics, retrieval
from .checkpoint import load_checkpoint, save_checkpoint
from .model import TrainConfig, encode_records, train, loss_curve_csv
from .nn import ModelConfig


def _load_lexicon(path) -> corpus.PatternLexicon:
    if path is None:
        return corpus.PatternLexicon()
    with open(path, encoding="utf-8") as f:
        return corpus.PatternLexicon.from_json(f.read())


def _model_config(args, vocab_size: int) -> ModelConfig:
    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            overrides = json.load(f)
    overrides.setdefault("vocab_size", vocab_size)
    if args.precision is not None:
        overrides["precision"] = args.precision
    return ModelConfig(**overrides)


def _cmd_extract(args) -> int:
    lex = _load_lexicon(args.lexicon)
    docs = []
    with open(args.input, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("{"):
                obj = json.loads(line)
                docs.append(corpus.RawDocument(doc_id=str(obj.get("id", lineno)),
                                               text=obj["text"]))
            else:
                docs.append(corpus.RawDocument(doc_id=str(lineno), text=line))
    records = corpus.extract_corpus(docs, lex)
    if args.downsample:
        records = corpus.downsample(records, seed=args.seed)
    corpus.write_records(args.out, records)
    print(f"extracted {len(records)} records from {len(docs)} documents -> {args.out}")
    if records:
        print(corpus.format_stats_table(corpus.corpus_stats(records), title="extracted"))
    return 0


def _cmd_synth(args) -> int:
    records = corpus.generate_synthetic(args.n, seed=args.seed)
    corpus.write_records(args.out, records)
    print(f"wrote {len(records)} synthetic records -> {args.out}")
    print(corpus.format_stats_table(corpus.corpus_stats(records), title="synthetic"))
    return 0


def _cmd_vocab(args) -> int:
    records = corpus.read_records(args.data)
    vocab = corpus.build_vocab(records)
    vocab.save(args.out)
    print(f"vocabulary of {vocab.size} tokens -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    records = corpus.read_records(args.data)
    if args.dev_data:
        dev = corpus.read_records(args.dev_data)
        train_recs = records
    else:
        n_dev = max(1, int(len(records) * args.dev_fraction))
        rng = np.random.default_rng(args.seed)
        order = rng.permutation(len(records))
        dev = [records[i] for i in order[:n_dev]]
        train_recs = [records[i] for i in order[n_dev:]]
    vocab = corpus.Vocabulary.load(args.vocab) if args.vocab else corpus.build_vocab(records)

    model_config = _model_config(args, vocab.size)
    train_config = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, max_steps=args.steps,
        eval_every=args.eval_every, patience=args.patience,
        pretrain_steps=args.pretrain_steps,
    )
    model, curve = train(train_recs, dev, model_config, train_config, vocab, seed=args.seed)
    save_checkpoint(args.out, model)
    if args.curve:
        with open(args.curve, "w", encoding="utf-8") as f:
            f.write(loss_curve_csv(curve))
    samples = encode_records(train_recs, vocab, model_config)
    pos_acc, tok_acc = model.teacher_forced_accuracy(samples[: args.batch_size * 4])
    print(f"trained {len(curve)} steps; train positioning acc {pos_acc:.3f}, "
          f"token acc {tok_acc:.3f} -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    golds = corpus.read_records(args.data)
    table = retrieval.EmbeddingTable.load_text(args.embeddings) if args.embeddings else None

    positions = []
    similes = []
    for rec in golds:
        result = model.polish_automatic(rec.context, beam_size=args.beam)
        positions.append(result.position)
        similes.append(result.simile_text)
    result = metrics.evaluate(positions, similes, golds, model=model, table=table)
    print(metrics.format_report_table(result))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2)
        print(f"report -> {args.report}")
    return 0


def _cmd_retrieve(args) -> int:
    train_recs = corpus.read_records(args.train_data)
    queries = corpus.read_records(args.input)
    index = retrieval.index_similes(train_recs)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None

    table = None
    match_model = None
    if args.mode == "cbow":
        table = (retrieval.EmbeddingTable.load_text(args.embeddings)
                 if args.embeddings else retrieval.train_cbow(train_recs, seed=args.seed))
    elif args.mode == "match":
        if not args.match_checkpoint:
            print("--match-checkpoint is required for --mode match", file=sys.stderr)
            return 2
        match_model = retrieval.load_match_checkpoint(args.match_checkpoint)

    outputs = []
    for rec in queries:
        position = (model.polish_automatic(rec.context).position
                    if model is not None else rec.position)
        window = retrieval.context_window(rec.context, position)
        candidates = retrieval.bm25_retrieve(index, window, topk=args.topk)
        cand_texts = [c for c, _ in candidates]
        if args.mode == "cbow":
            ranked = retrieval.cbow_rerank(cand_texts, rec.context, table)
        elif args.mode == "match":
            ranked = retrieval.match_rerank(cand_texts, rec.context, match_model)
        else:
            ranked = candidates
        outputs.append({"context": rec.context, "position": position,
                        "simile": ranked[0][0], "score": ranked[0][1]})
    with open(args.out, "w", encoding="utf-8") as f:
        for obj in outputs:
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
    print(f"retrieved similes for {len(outputs)} inputs -> {args.out}")
    return 0


def _cmd_polish(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.position is not None:
        result = model.polish_semi_automatic(args.text, args.position, beam_size=args.beam)
    else:
        result = model.polish_automatic(args.text, beam_size=args.beam)
    print(f"position: {result.position}")
    print(f"simile:   {result.simile_text}")
    print(f"polished: {result.polished_text}")
    if args.verbose:
        for text, score in result.candidates:
            print(f"  candidate {score:10.4f}  {text}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    checkpoint = os.environ.get("SIMILEPOLISH_CHECKPOINT") or args.checkpoint
    if not checkpoint:
        print("error: --checkpoint or SIMILEPOLISH_CHECKPOINT is required",
              file=sys.stderr)
        return 2
    config = ServiceConfig(
        checkpoint_path=checkpoint,
        host=os.environ.get("SIMILEPOLISH_HOST") or args.host,
        port=args.port, beam_size=args.beam, static_dir=args.static_dir,
    )
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="similepolish",
        description="Locate a simile insertion point in plain text, then "
                    "generate a location-conditioned simile there.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file of model hyperparameter overrides")
    common.add_argument("--precision", type=int, choices=(32, 64), default=None)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common],
                       help="pattern-extract similes from raw paragraphs")
    p.add_argument("--input", required=True, help="JSONL {id,text} or plain text lines")
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", help="pattern lexicon JSON")
    p.add_argument("--downsample", action="store_true")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("vocab", parents=[common], help="build the char vocabulary")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_vocab)

    p = sub.add_parser("train", parents=[common], help="train the interpolation model")
    p.add_argument("--data", required=True)
    p.add_argument("--dev-data")
    p.add_argument("--dev-fraction", type=float, default=0.1)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)
    p.add_argument("--curve", help="write the loss curve CSV here")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--pretrain-steps", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common], help="run the automatic metric suite")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--embeddings", help="embedding text file for EA/GM/VE")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("retrieve", parents=[common], help="retrieval baselines")
    p.add_argument("--train-data", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("bm25", "cbow", "match"), default="bm25")
    p.add_argument("--checkpoint", help="model checkpoint for position predictions")
    p.add_argument("--match-checkpoint")
    p.add_argument("--embeddings")
    p.add_argument("--topk", type=int, default=100)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("polish", parents=[common], help="polish one text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--position", type=int, help="semi-automatic mode: force this gap")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_polish)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--checkpoint",
                   help="model file; SIMILEPOLISH_CHECKPOINT overrides")
    p.add_argument("--host", default="127.0.0.1",
                   help="bind address; SIMILEPOLISH_HOST overrides")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--beam", type=int, default=20)
    p.add_argument("--static-dir")
    p.set_defaults(func=_cmd_serve)
    return parser


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())
