"""Command-line entry point: ``hnmt <subcommand> ...``."""

import argparse
import logging
import os
import sys

from .checkpoint import average_parameters, load_checkpoint, save_checkpoint, select_best_savepoint
from .decoding import (
    EnsembleSpec,
    ModelScorer,
    PenaltyConfig,
    beam_search,
    read_nbest,
    rerank_corpus,
    translate,
    write_nbest,
)
from .errors import HNMTError
from .metrics import bleu, chrf3, ter
from .model import HNMTModel, build_vocabularies
from .pipeline import (
    backtranslate,
    load_config,
    model_sentence_scorer,
    postprocess_line,
    preprocess_line,
)
from .segmentation import BpeModel, TruecaseModel, bpe_apply, bpe_learn, truecase_train
from .training import TrainConfig, read_parallel, train

log = logging.getLogger("hnmt")


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def _penalties(args):
    return PenaltyConfig(args.alpha, args.beta, args.gamma)


def _max_len(args):
    return args.max_len if args.max_len and args.max_len > 0 else None


# -- subcommands --------------------------------------------------------------


def cmd_preprocess(args):
    tc = TruecaseModel.load(args.truecase_model) if args.truecase_model else None
    bpe = BpeModel.load(args.bpe_model) if args.bpe_model else None
    out = [preprocess_line(line, tc, bpe, args.expand_contractions) for line in _read_lines(args.input)]
    _write_lines(args.output, out)


def cmd_bpe_learn(args):
    corpus = [line.split() for line in _read_lines(args.input)]
    model = bpe_learn(corpus, num_merges=args.num_merges, vocab_size=args.vocab_size,
                      min_frequency=args.min_frequency)
    model.save(args.output)
    log.info("learned %d merges", len(model.merges))


def cmd_bpe_apply(args):
    bpe = BpeModel.load(args.model)
    _write_lines(args.output, [" ".join(bpe_apply(bpe, line.split())) for line in _read_lines(args.input)])


def cmd_truecase_train(args):
    truecase_train(line.split() for line in _read_lines(args.input)).save(args.output)


def cmd_train(args):
    overrides = list(args.set or [])
    for key in ("source", "target", "dev_source", "dev_target", "output_dir", "steps", "seed"):
        value = getattr(args, key)
        if value is not None:
            name = {"source": "train_source", "target": "train_target"}.get(key, key)
            overrides.append(f"{name}={value}")
    cfg = load_config(args.config, overrides)
    if not cfg.train_source or not cfg.train_target:
        raise HNMTError("training needs train_source and train_target")
    seed = cfg.resolved_seed()
    mcfg = cfg.model_config()
    os.makedirs(cfg.output_dir, exist_ok=True)
    cfg.write(os.path.join(cfg.output_dir, "run.conf"))

    def pairs_of(raw):
        out = []
        for s, t in raw:
            trg = list(t) if mcfg.decoder_level == "char" else t.split()
            out.append((s.split(), trg))
        return out

    corpus = pairs_of(read_parallel(cfg.train_source, cfg.train_target))
    heldout = pairs_of(read_parallel(cfg.dev_source, cfg.dev_target)) if cfg.dev_source else []
    vocabs = build_vocabularies(corpus, mcfg, cfg.src_vocab_size or None, cfg.trg_vocab_size or None)
    model = HNMTModel.from_vocabularies(mcfg, vocabs, seed=seed)
    tcfg = TrainConfig(
        batch_size=cfg.batch_size, steps=cfg.steps, savepoint_interval=cfg.savepoint_interval,
        lr=cfg.lr, clip_norm=cfg.clip_norm, seed=seed, max_time=cfg.max_time or None,
        score_heldout=cfg.score_heldout, decode_max_len=cfg.max_len or None, model_id=cfg.model_id,
        log_every=100,
    )
    savepoints = train(model, corpus, tcfg, heldout)
    for sp in savepoints:
        save_checkpoint(sp, os.path.join(cfg.output_dir, f"{cfg.model_id}-{sp.step}.ckpt"))
    final = savepoints[-1]
    if heldout and cfg.score_heldout:
        final = select_best_savepoint(savepoints[1:] or savepoints, "chrf3")
    save_checkpoint(final, os.path.join(cfg.output_dir, f"{cfg.model_id}-best.ckpt"))
    for sp in savepoints:
        if sp.scores:
            print(sp.label, " ".join(f"{k}={v:.4f}" for k, v in sorted(sp.scores.items())))


def _translate_with(scorer, args):
    sources = [line.split() for line in _read_lines(args.input)]
    pen = _penalties(args)
    # blank input lines map to blank output lines so the files stay aligned
    live = [i for i, s in enumerate(sources) if s]
    if len(live) < len(sources):
        log.warning("%d empty input lines left untranslated", len(sources) - len(live))
    outputs = [""] * len(sources)
    if args.nbest_output:
        lists = [beam_search(scorer, sources[i], args.beam, _max_len(args), pen, n_best=args.nbest, sentence_id=i)
                 for i in live]
        write_nbest(lists, args.nbest_output)
        for i, nb in zip(live, lists):
            outputs[i] = nb.best.surface if nb.best else ""
    else:
        done = translate(scorer, [sources[i] for i in live], args.beam, _max_len(args), pen)
        for i, out in zip(live, done):
            outputs[i] = out
    _write_lines(args.output, outputs)


def cmd_translate(args):
    _translate_with(ModelScorer(load_checkpoint(args.model).to_model()), args)


def cmd_ensemble_translate(args):
    groups = [[load_checkpoint(p) for p in g.split(",") if p] for g in args.group]
    _translate_with(EnsembleSpec(groups).build(), args)


def cmd_average(args):
    save_checkpoint(average_parameters([load_checkpoint(p) for p in args.checkpoints]), args.output)


def cmd_rerank(args):
    results, counts = rerank_corpus(read_nbest(args.forward), read_nbest(args.backward))
    _write_lines(args.output, [r.surface for r in results])
    if args.provenance:
        _write_lines(args.provenance, [r.provenance for r in results])
    total = max(len(results), 1)
    for k in ("forward", "backward", "both"):
        print(f"{k}={counts[k]} ({100.0 * counts[k] / total:.1f}%)")


def cmd_backtranslate(args):
    scorer = ModelScorer(load_checkpoint(args.model).to_model())
    pen = _penalties(args)

    def one(line):
        return translate(scorer, [line.split()], args.beam, _max_len(args), pen)[0]

    result = backtranslate(one, _read_lines(args.input), label=args.model)
    result.write(args.output_source, args.output_target)
    print(f"translated={len(result.pairs)} skipped={len(result.skipped)}")


def cmd_score(args):
    hyps, refs = _read_lines(args.hyp), _read_lines(args.ref)
    fns = {"bleu": bleu, "chrf3": chrf3, "ter": ter}
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    for m in names:
        if m not in fns:
            raise HNMTError(f"unknown metric {m!r}")
    reports = [fns[m](hyps, refs) for m in names]
    for r in reports:
        print(f"{r.name}={r.score:.6f}")
    if args.tsv:
        rows = ["id\t" + "\t".join(names)]
        for i in range(len(hyps)):
            rows.append(f"{i}\t" + "\t".join(f"{r.sentence_scores[i]:.6f}" for r in reports))
        _write_lines(args.tsv, rows)


def cmd_postprocess(args):
    lines = _read_lines(args.input)
    scorers = [None] * len(lines)
    if args.hyphen_model:
        if not args.source:
            raise HNMTError("--hyphen-model needs --source")
        model = load_checkpoint(args.hyphen_model).to_model()
        bpe = BpeModel.load(args.bpe_model) if args.bpe_model else None
        srcs = _read_lines(args.source)
        if len(srcs) != len(lines):
            raise HNMTError(f"{args.source} has {len(srcs)} lines, {args.input} has {len(lines)}")
        scorers = [model_sentence_scorer(model, s.split(), bpe) for s in srcs]
    out = [postprocess_line(l, sc, not args.no_detruecase) for l, sc in zip(lines, scorers)]
    _write_lines(args.output, out)


# -- parser -------------------------------------------------------------------


def _decode_flags(p):
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--max-len", type=int, default=0, help="content symbols per output (0: 2*source+10)")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--nbest", type=int, default=None)
    p.add_argument("--nbest-output", default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="hnmt", description="Hybrid neural machine translation toolkit")
    ap.add_argument("--seed", type=int, default=None, help="random seed (default: $HNMT_SEED or 0)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize, tokenize, truecase and segment text")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--truecase-model")
    p.add_argument("--bpe-model")
    p.add_argument("--expand-contractions", action="store_true")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("bpe-learn", help="learn BPE merges from tokenized text")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--num-merges", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--min-frequency", type=int, default=2)
    p.set_defaults(fn=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment tokenized text with a BPE model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_bpe_apply)

    p = sub.add_parser("truecase-train", help="train a truecasing model")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_truecase_train)

    p = sub.add_parser("train", help="train a model and write savepoint checkpoints")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--source")
    p.add_argument("--target")
    p.add_argument("--dev-source")
    p.add_argument("--dev-target")
    p.add_argument("--output-dir")
    p.add_argument("--steps", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("translate", help="beam-search translation with one checkpoint")
    p.add_argument("--model", required=True)
    _decode_flags(p)
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("average", help="average the parameters of checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_average)

    p = sub.add_parser("ensemble-translate",
                       help="translate with groups of checkpoints (averaged within, ensembled across)")
    p.add_argument("--group", action="append", required=True, metavar="A.ckpt[,B.ckpt...]")
    _decode_flags(p)
    p.set_defaults(fn=cmd_ensemble_translate)

    p = sub.add_parser("rerank", help="choose between forward and backward n-best lists")
    p.add_argument("--forward", required=True)
    p.add_argument("--backward", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--provenance")
    p.set_defaults(fn=cmd_rerank)

    p = sub.add_parser("backtranslate", help="create synthetic parallel data with a reverse model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output-source", required=True)
    p.add_argument("--output-target", required=True)
    p.add_argument("--beam", type=int, default=10)
    p.add_argument("--max-len", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.set_defaults(fn=cmd_backtranslate)

    p = sub.add_parser("score", help="corpus BLEU / chrF3 / TER")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="bleu,chrf3,ter")
    p.add_argument("--tsv", help="write per-sentence scores here")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("postprocess", help="detruecase, detokenize and repair hyphen spacing")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--hyphen-model", help="checkpoint used to score hyphen variants")
    p.add_argument("--source", help="source sentences for --hyphen-model")
    p.add_argument("--bpe-model")
    p.add_argument("--no-detruecase", action="store_true")
    p.set_defaults(fn=cmd_postprocess)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except OSError as e:
        print(f"hnmt {args.command}: {e.filename or ''}: {e.strerror or e}", file=sys.stderr)
        return 1
    except HNMTError as e:
        print(f"hnmt {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
