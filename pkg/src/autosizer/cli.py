"""Command-line entry point: gen, train, prune, eval, report."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checkpoint
from .autosize import SystemRow, prune, render_records, render_table
from .config import ConfigError, load_config, render_defaults
from .data import TASKS, ParallelCorpus, Vocab, gen_task
from .decode import bleu, greedy, token_accuracy, translate
from .model import ModelConfig, Transformer, count_parameters
from .train import TrainingError, train_loop

log = logging.getLogger("autosizer")


def _records(**kv) -> str:
    return " ".join(f"{k}={v}" for k, v in kv.items())


def cmd_gen(args) -> int:
    corpus = gen_task(args.task, args.vocab_size, args.size, (args.min_len, args.max_len), args.seed, args.heldout)
    corpus.save(args.out)
    print(_records(task=args.task, train=len(corpus.splits["train"]), valid=len(corpus.splits["valid"]),
                   test=len(corpus.splits["test"]), vocab=len(corpus.vocab), checksum=corpus.checksum()))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    corpus = ParallelCorpus.load(cfg.data)
    model = Transformer(cfg.model_config(len(corpus.vocab)), seed=cfg.seed)
    tcfg = cfg.train_config()
    history_path = Path(args.history or f"{args.out_checkpoint}.history.jsonl")
    with history_path.open("w", encoding="utf-8") as fh:
        def emit(rec):
            fh.write(rec.to_json() + "\n")
            fh.flush()
            print(_records(epoch=rec.epoch, loss=f"{rec.loss:.6f}", val_loss=f"{rec.val_loss:.6f}",
                           val_acc=f"{rec.val_acc:.6f}", lr=f"{rec.lr:.3e}", zero_groups=rec.zero_groups,
                           reg_value=f"{rec.reg_value:.6f}"))
        try:
            train_loop(model, corpus, tcfg, on_epoch=emit)
        except TrainingError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    extra = {"lam": tcfg.lam, "regularizer": tcfg.regularizer, "scope": tcfg.scope, "seed": tcfg.seed}
    size = checkpoint.save(args.out_checkpoint, model, corpus.vocab.tokens, extra)
    print(_records(checkpoint=args.out_checkpoint, bytes=size, num_parameters=model.num_parameters()))
    return 0


def cmd_prune(args) -> int:
    model, vocab, extra = checkpoint.load(args.checkpoint)
    new, rep = prune(model, vocab, epsilon=args.epsilon)
    size = checkpoint.save(args.out, new, vocab, dict(extra, pruned_from=str(args.checkpoint)))
    rep.bytes_before = Path(args.checkpoint).stat().st_size
    rep.bytes_after = size
    for line in rep.records():
        print(line)
    return 0


def _evaluate(model: Transformer, corpus: ParallelCorpus, split: str, beam: int, alpha: float,
              smooth: bool = False) -> tuple[dict, list[str]]:
    pairs = corpus.splits[split]
    hyps = [corpus.vocab.decode(h) for h in translate(model, [s for s, _ in pairs], beam, alpha)]
    refs = [corpus.vocab.decode(t) for _, t in pairs]
    score = bleu(hyps, refs, smooth=smooth)
    acc = token_accuracy(model, pairs)
    return {"bleu": round(score.score, 6), "token_accuracy": round(acc, 6)}, hyps


def cmd_eval(args) -> int:
    model, vocab, _ = checkpoint.load(args.checkpoint)
    corpus = ParallelCorpus.load(args.corpus)
    if corpus.vocab.tokens != vocab:
        print("error: corpus vocabulary differs from the checkpoint's", file=sys.stderr)
        return 1
    if args.greedy:
        pairs = corpus.splits[args.split]
        hyps = [corpus.vocab.decode(greedy(model, s)) for s, _ in pairs]
        refs = [corpus.vocab.decode(t) for _, t in pairs]
        metrics = {"bleu": round(bleu(hyps, refs, smooth=args.smooth).score, 6),
                   "token_accuracy": round(token_accuracy(model, pairs), 6)}
    else:
        metrics, hyps = _evaluate(model, corpus, args.split, args.beam, args.alpha, args.smooth)
    if args.out:
        Path(args.out).write_text("".join(h + "\n" for h in hyps), encoding="utf-8")
    print(_records(split=args.split, beam=1 if args.greedy else args.beam, alpha=args.alpha, **metrics))
    return 0


def cmd_report(args) -> int:
    rows = []
    if args.reference_config:
        cfg = ModelConfig(vocab_size=args.vocab_size)
        vocab = Vocab.synthetic(args.vocab_size).tokens
        rows.append(SystemRow("Baseline (reference config)", checkpoint.serialized_size(cfg, vocab),
                              count_parameters(cfg)))
    corpus = ParallelCorpus.load(args.corpus) if args.corpus else None
    paths = ([args.baseline] if args.baseline else []) + list(args.pruned or [])
    for i, path in enumerate(paths):
        model, vocab, extra = checkpoint.load(path)
        if args.baseline and i == 0:
            name = "Baseline"
        else:
            name = Path(path).stem
            if extra.get("lam"):
                name = f"{extra.get('scope', '').upper()} {extra.get('regularizer')}={extra['lam']:g}"
        metrics = {}
        if corpus is not None:
            m, _ = _evaluate(model, corpus, args.split, args.beam, args.alpha)
            metrics = {f"BLEU ({args.split})": m["bleu"], f"Acc% ({args.split})": 100 * m["token_accuracy"]}
        rows.append(SystemRow(name, Path(path).stat().st_size, model.num_parameters(), metrics))
    if not rows:
        print("error: nothing to report; pass --baseline/--pruned or --reference-config", file=sys.stderr)
        return 2
    # metric columns are always present; rows without an evaluation show "-"
    print(render_table(rows, [f"BLEU ({args.split})", f"Acc% ({args.split})"]))
    print()
    print(render_records(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autosizer", description="Auto-sizing Transformer toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic parallel corpus")
    g.add_argument("--task", choices=TASKS, required=True)
    g.add_argument("--size", type=int, required=True, help="number of training pairs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--vocab-size", type=int, default=64)
    g.add_argument("--min-len", type=int, default=3)
    g.add_argument("--max-len", type=int, default=8)
    g.add_argument("--heldout", type=int, default=None, help="valid/test pairs each (default size/10)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser(
        "train", help="train with proximal group regularization",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config keys and defaults:\n" + render_defaults(),
    )
    t.add_argument("--config", required=True)
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--history", default=None, help="JSON-lines history (default <checkpoint>.history.jsonl)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("prune", help="delete exactly-zero groups and write a smaller checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--epsilon", type=float, default=0.0,
                   help="first zero groups whose max-abs entry is below this (default 0: no thresholding)")
    r.set_defaults(func=cmd_prune)

    e = sub.add_parser("eval", help="decode a split and score BLEU / token accuracy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True, help="corpus directory")
    e.add_argument("--split", default="test")
    e.add_argument("--beam", type=int, default=5, help="beam width (default 5)")
    e.add_argument("--alpha", type=float, default=1.0, help="length-normalization exponent (default 1.0)")
    e.add_argument("--greedy", action="store_true", help="greedy decoding instead of beam search")
    e.add_argument("--smooth", action="store_true", help="add-one BLEU smoothing")
    e.add_argument("--out", default=None, help="write hypotheses, one per line")
    e.set_defaults(func=cmd_eval)

    rp = sub.add_parser("report", help="size/quality comparison table")
    rp.add_argument("--baseline", default=None)
    rp.add_argument("--pruned", nargs="*", default=[])
    rp.add_argument("--reference-config", action="store_true",
                    help="add a closed-form row for the reference config (6+6 layers, 512, 8 heads, 2048)")
    rp.add_argument("--vocab-size", type=int, default=35000, help="vocabulary for --reference-config")
    rp.add_argument("--corpus", default=None)
    rp.add_argument("--split", default="test")
    rp.add_argument("--beam", type=int, default=5)
    rp.add_argument("--alpha", type=float, default=1.0)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
