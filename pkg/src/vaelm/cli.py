"""Command-line entry point: ``vaelm <command> [options]``.

Exit codes: 0 success, 1 failed suite or runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import estimators
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .data import SyntheticSpec, gen_synthetic, load_corpus
from .errors import ConfigError, VaeError
from .model import SeqVae
from .plots import write_plots
from .probes import ProbeReport
from .probes import latent as probes
from .probes.cluster import gmm_cluster, linear_classify, matched_accuracy, predict
from .trainer import RECIPES, make_recipe, train

log = logging.getLogger("vaelm")


class UsageError(Exception):
    pass


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _emit_json(obj, out) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "corpus", None):
        cfg.corpus = args.corpus
    if not cfg.corpus:
        raise UsageError("no corpus given (--corpus or 'corpus =' in the config)")
    return cfg


def _load(args):
    cfg = _config(args)
    corpus = load_corpus(cfg.corpus, min_count=cfg.min_count)
    ckpt = load_checkpoint(args.ckpt, vocab_hash=corpus.vocab.hash)
    return cfg, corpus, ckpt.model


# --- commands ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(vocab_size=args.vocab_size, num_sentences=args.sentences,
                         num_valid=args.valid, num_test=args.test, min_len=args.min_len,
                         max_len=args.max_len, num_factors=args.factors)
    out = gen_synthetic(spec, args.seed, args.out)
    log.info("wrote synthetic corpus to %s", out)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.target_rate is not None:
        cfg.target_rate = args.target_rate
    corpus = load_corpus(cfg.corpus, min_count=cfg.min_count)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.txt", dump_config(cfg))
    recipe = make_recipe(args.recipe, cfg.target_rate, cfg.iwae_k, cfg.linear_epochs,
                         cfg.cycles, bool(cfg.fb_anneal))
    model = SeqVae.create(cfg.model_dims(len(corpus.vocab)), args.seed, cfg.dropout)
    log_path = out / "log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        def write(record):
            fh.write(json.dumps(record) + "\n")
            fh.flush()
        result = train(model, corpus, recipe, args.seed, cfg.train_config(), write)
    last = result.log[-1]["epoch"] if result.log else 0
    save_checkpoint(out / "best.ckpt", result.model, corpus.vocab.hash, args.recipe,
                    last, result.rng_state, {"seed": args.seed, "target_rate": cfg.target_rate})
    write_plots(result.log, out / "plots")
    log.info("wrote %s and %s", log_path, out / "best.ckpt")
    return 0


def cmd_evaluate(args) -> int:
    cfg, corpus, model = _load(args)
    k = args.iw_k or cfg.iw_k
    rep = estimators.evaluate(model, corpus.split(args.split), k=k, seed=args.seed,
                              mi_size=cfg.mi_size, au_threshold=cfg.au_threshold)
    _emit_json(rep.to_dict(), args.out)
    return 0


def _interp_block(model, corpus, sentences, i: int, j: int, steps: int, max_len: int) -> str:
    z = probes.codes(model, [sentences[i], sentences[j]])
    outs = probes.interpolate(model, z[0], z[1], steps, max_len)
    lines = [" ".join(corpus.vocab.decode(sentences[i])),
             *(" ".join(corpus.vocab.itos[w] for w in o) for o in outs),
             " ".join(corpus.vocab.decode(sentences[j]))]
    return "\n".join(lines) + "\n"


def cmd_probe(args) -> int:
    cfg, corpus, model = _load(args)
    rng = np.random.default_rng(args.seed)
    test = corpus.test
    rep = ProbeReport()
    rep.bleu, rep.bleu_sentence = probes.reconstruction_bleu(model, test, cfg.max_decode_len)
    rep.pcc = probes.smoothness_pcc(model, corpus.split(cfg.pcc_split), cfg.pcc_pairs,
                                    np.random.default_rng([args.seed, 1]))
    for k in cfg.swap_counts():
        rep.noisy_recon[str(k)] = probes.noisy_reconstruction(
            model, test, k, np.random.default_rng([args.seed, 2, k]))
    copy = probes.copying_check(model, corpus.train, cfg.copy_samples,
                                np.random.default_rng([args.seed, 3]), cfg.max_decode_len)
    rep.copy_edit_distance = copy.mean_distance
    rep.copy_train_length = copy.mean_train_length
    if "test" in corpus.labels:
        labels = corpus.labels["test"]
        _, rep.cluster_accuracy = gmm_cluster(probes.codes(model, test), len(set(labels)),
                                              labels, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _emit_json(rep.to_dict(), out / "probe.json")
    blocks = []
    for _ in range(args.pairs):
        i, j = (int(v) for v in rng.choice(len(test), size=2, replace=False))
        blocks.append(_interp_block(model, corpus, test, i, j, cfg.interp_steps,
                                    cfg.max_decode_len))
    _write_text(out / "interpolation.txt", "\n".join(blocks))
    return 0


def cmd_classify(args) -> int:
    cfg, corpus, model = _load(args)
    if "train" not in corpus.labels or "test" not in corpus.labels:
        raise UsageError("classify needs train.labels and test.labels next to the corpus")
    counts = [int(c) for c in args.labeled_counts.split(",") if c.strip()]
    train_codes = probes.codes(model, corpus.train)
    test_codes = probes.codes(model, corpus.test)
    y_train, y_test = corpus.labels["train"], corpus.labels["test"]
    result = {}
    for n in counts:
        if n == 0:
            state, _ = gmm_cluster(train_codes, len(set(y_train)), y_train, args.seed)
            result["0"] = matched_accuracy(predict(test_codes, state), np.asarray(y_test))
        else:
            result[str(n)] = linear_classify(train_codes, y_train, test_codes, y_test, n)
    _emit_json({"classifier_accuracy": result}, args.out)
    return 0


def cmd_interpolate(args) -> int:
    cfg, corpus, model = _load(args)
    sents = corpus.split(args.split)
    if args.pair:
        i, j = (int(v) for v in args.pair.split(","))
    else:
        rng = np.random.default_rng(args.seed)
        i, j = (int(v) for v in rng.choice(len(sents), size=2, replace=False))
    text = _interp_block(model, corpus, sents, i, j, args.steps or cfg.interp_steps,
                         cfg.max_decode_len)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_oracle_check(args) -> int:
    from .suites import oracle_check, oracle_corpus, train_oracle_model

    corpus = oracle_corpus(args.seed)
    model = train_oracle_model(corpus, "iwae", seed=args.seed, max_epochs=args.epochs)
    chk = oracle_check(model, corpus.test[:args.sentences], k=args.k, seed=args.seed)
    ok_err = chk.mean_abs_error <= args.tol
    print(f"{'PASS' if ok_err else 'FAIL'} iw_nll(k={args.k}) vs quadrature: "
          f"mean |error| {chk.mean_abs_error:.4f} nats (tol {args.tol})")
    print(f"{'PASS' if chk.monotone else 'FAIL'} mean iw_nll by k: "
          + ", ".join(f"k={k}: {v:.4f}" for k, v in sorted(chk.iw_by_k.items())))
    return 0 if ok_err and chk.monotone else 1


def cmd_grad_check(args) -> int:
    from .suites import run_grad_suite

    results = run_grad_suite(args.cases, args.seed, args.tol, progress=print)
    return 0 if all(r.passed for r in results) else 1


# --- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vaelm", description="LSTM sequence VAE toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic latent-factor corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--vocab-size", type=int, default=100)
    g.add_argument("--sentences", type=int, default=5000)
    g.add_argument("--valid", type=int, default=500)
    g.add_argument("--test", type=int, default=500)
    g.add_argument("--min-len", type=int, default=4)
    g.add_argument("--max-len", type=int, default=12)
    g.add_argument("--factors", type=int, default=2)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model with a named recipe")
    t.add_argument("--config")
    t.add_argument("--corpus")
    t.add_argument("--recipe", required=True, choices=RECIPES)
    t.add_argument("--lambda", dest="target_rate", type=float)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    def model_cmd(name, help_):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--ckpt", required=True)
        c.add_argument("--corpus")
        c.add_argument("--config")
        c.add_argument("--seed", type=int, default=0)
        return c

    e = model_cmd("evaluate", "write an evaluation report")
    e.add_argument("--iw-k", type=int)
    e.add_argument("--split", default="test", choices=("train", "valid", "test"))
    e.add_argument("--out")
    e.set_defaults(fn=cmd_evaluate)

    pr = model_cmd("probe", "run the latent-space probes")
    pr.add_argument("--out", required=True)
    pr.add_argument("--pairs", type=int, default=3)
    pr.set_defaults(fn=cmd_probe)

    cl = model_cmd("classify", "accuracy sweep over labeled-example counts")
    cl.add_argument("--labeled-counts", default="0,100,500,1000")
    cl.add_argument("--out")
    cl.set_defaults(fn=cmd_classify)

    ip = model_cmd("interpolate", "decode along a segment between two sentences")
    ip.add_argument("--steps", type=int)
    ip.add_argument("--pair")
    ip.add_argument("--split", default="test", choices=("train", "valid", "test"))
    ip.add_argument("--out")
    ip.set_defaults(fn=cmd_interpolate)

    o = sub.add_parser("oracle-check", help="importance sampling vs quadrature suite")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--k", type=int, default=1000)
    o.add_argument("--sentences", type=int, default=50)
    o.add_argument("--epochs", type=int, default=15)
    o.add_argument("--tol", type=float, default=0.05)
    o.set_defaults(fn=cmd_oracle_check)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    gc.add_argument("--cases", type=int, default=100)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(fn=cmd_grad_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"vaelm: error: {exc}", file=sys.stderr)
        return 2
    except (VaeError, OSError) as exc:
        print(f"vaelm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
