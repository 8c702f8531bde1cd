"""Command-line entry point.

Subcommands: gen-corpus, train, eval, ablate, lambda-sweep. Every command is
fully determined by (config, seed); artifacts carry the config hash and eval
refuses a checkpoint whose hash or vocabulary disagrees with the corpus.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 IO error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, pack_training_state, save_checkpoint, unpack_training_state
from .config import VARIANTS, RunConfig
from .corpus import load_corpus, write_corpus
from .errors import ConfigError, NumericsError
from .evaluate import generation_records, make_score_fn
from .learning import Adam, IntentPartition, train
from .metrics import evaluate_records, write_report
from .model import ModelConfig, MoGNet


def _write_json(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")
    os.replace(tmp, path)


def _corpus_dir(cfg, args):
    """Resolve the corpus directory, generating one when none was given."""
    if getattr(args, "corpus", None):
        return args.corpus
    cdir = os.path.join(args.out_dir, "corpus")
    if not os.path.exists(os.path.join(cdir, "meta.json")):
        write_corpus(cdir, cfg.grammar(), seed=args.seed,
                     partition=cfg["corpus.partition"], n=cfg["corpus.n_samples"],
                     ratio=cfg.split_ratio(),
                     extra_meta={"config_hash": cfg.config_hash()})
    return cdir


def _check_hash(cfg, meta, what):
    got = meta.get("config_hash")
    if got is not None and got != cfg.config_hash():
        raise ConfigError(f"{what} was built from config hash {got}, "
                          f"this run has {cfg.config_hash()}")


def _model_meta(cfg, mcfg: ModelConfig, splits, variant, lambda_, seed):
    return {
        "config_hash": cfg.config_hash(),
        "vocab_size": mcfg.vocab_size,
        "n_experts": mcfg.n_experts,
        "n_belief": mcfg.n_belief,
        "n_db": mcfg.n_db,
        "emb_size": mcfg.emb_size,
        "hidden_size": mcfg.hidden_size,
        "max_src_len": mcfg.max_src_len,
        "max_len": mcfg.max_len,
        "intents": list(splits.meta["intents"]),
        "partition": splits.meta["partition"],
        "variant": variant,
        "lambda": lambda_,
        "seed": seed,
    }


def _model_from_meta(meta):
    mcfg = ModelConfig(vocab_size=meta["vocab_size"], n_experts=meta["n_experts"],
                       n_belief=meta["n_belief"], n_db=meta["n_db"],
                       emb_size=meta["emb_size"], hidden_size=meta["hidden_size"],
                       max_src_len=meta["max_src_len"], max_len=meta["max_len"])
    return MoGNet(mcfg, seed=meta.get("seed", 0))


def _train_once(cfg, splits, seed, variant, out_dir, lambda_=None, resume=None,
                log_fn=None):
    os.makedirs(out_dir, exist_ok=True)
    partition = IntentPartition(splits.meta["intents"])
    mcfg = cfg.model_config(len(splits.vocab), partition.k,
                            splits.meta["n_belief"], splits.meta["n_db"])
    model = MoGNet(mcfg, seed=seed)
    loss_cfg = cfg.loss_config(variant, lambda_)
    opt_cfg = cfg.optimizer_config()

    adam = None
    start_epoch = 0
    if resume is not None:
        tensors, ck_meta = load_checkpoint(resume)
        _check_hash(cfg, ck_meta, "checkpoint")
        if ck_meta.get("kind") != "last":
            raise ConfigError("resume needs the 'last' checkpoint, which carries "
                              "optimizer state")
        state, adam_state = unpack_training_state(tensors)
        model.params.load_state(state)
        adam = Adam(model.params, opt_cfg)
        adam.load_state(adam_state)
        start_epoch = int(ck_meta["epochs_run"])

    result = train(splits, model, partition, loss_cfg, opt_cfg,
                   epochs=cfg["train.epochs"], seed=seed,
                   score_fn=make_score_fn(splits.vocab, splits.meta),
                   start_epoch=start_epoch, adam=adam,
                   validate_every=cfg["train.validate_every"], log_fn=log_fn)

    meta = _model_meta(cfg, mcfg, splits, variant, loss_cfg.lambda_, seed)
    best_path = os.path.join(out_dir, "best.ckpt")
    save_checkpoint(best_path, result.best_state,
                    dict(meta, kind="best", epoch=result.best_epoch,
                         best_score=result.best_score))
    save_checkpoint(os.path.join(out_dir, "last.ckpt"),
                    pack_training_state(result.final_state, result.adam_state),
                    dict(meta, kind="last", epochs_run=result.epochs_run))
    _write_json(os.path.join(out_dir, "train_log.json"),
                {"header": result.header, "epochs": result.log,
                 "best_epoch": result.best_epoch, "best_score": result.best_score})
    return best_path, result


def _eval_checkpoint(ckpt_path, splits, split_name, gold=False):
    tensors, meta = load_checkpoint(ckpt_path)
    if meta.get("kind") == "last":
        tensors, _ = unpack_training_state(tensors)
    if meta["vocab_size"] != len(splits.vocab):
        raise ConfigError(f"checkpoint vocabulary size {meta['vocab_size']} does not "
                          f"match the corpus ({len(splits.vocab)})")
    corpus_hash = splits.meta.get("config_hash")
    if corpus_hash is not None and meta.get("config_hash") not in (None, corpus_hash):
        raise ConfigError(f"checkpoint config hash {meta.get('config_hash')} does not "
                          f"match the corpus ({corpus_hash})")
    model = _model_from_meta(meta)
    model.params.load_state(tensors)
    samples = getattr(splits, split_name)
    if not samples:
        raise ConfigError(f"split {split_name!r} is empty")
    loss_flags = RunConfig().loss_config(meta.get("variant", "mognet"),
                                         meta.get("lambda")).flags
    records = generation_records(model, samples, splits.vocab, splits.meta,
                                 loss_flags, compute_ppl=True, gold=gold)
    report = evaluate_records(records)
    k = meta["n_experts"]
    support = {"chair": False, "retro": False, "prosp": False}
    for s in samples[:8]:
        out = model.generate(s, loss_flags)
        for beta in out.betas:
            support["chair"] |= bool(beta[0] > 0)
            support["retro"] |= bool(np.any(beta[1:1 + k] > 0))
            support["prosp"] |= bool(np.any(beta[1 + k:] > 0))
    return report, meta, support


# -- commands -------------------------------------------------------------------


def cmd_gen_corpus(args):
    cfg = _load_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    meta, stats = write_corpus(args.out_dir, cfg.grammar(), seed=args.seed,
                               partition=cfg["corpus.partition"],
                               n=cfg["corpus.n_samples"], ratio=cfg.split_ratio(),
                               extra_meta={"config_hash": cfg.config_hash()})
    print(f"wrote corpus to {args.out_dir}: counts={meta['counts']} "
          f"min_offdiag_kl={stats['min_offdiag_kl']:.3f} "
          f"multi_intent_fraction={stats['multi_intent_fraction']:.3f}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    splits = load_corpus(_corpus_dir(cfg, args))
    _check_hash(cfg, splits.meta, "corpus")
    log_fn = None if args.quiet else print
    best_path, result = _train_once(cfg, splits, args.seed, args.variant,
                                    args.out_dir, resume=args.resume, log_fn=log_fn)
    print(f"saved {best_path} (best epoch {result.best_epoch}, "
          f"valid score {result.best_score:.2f})")
    return 0


def cmd_eval(args):
    splits = load_corpus(args.corpus)
    if args.config:
        _check_hash(RunConfig.load(args.config), splits.meta, "corpus")
    report, meta, support = _eval_checkpoint(args.checkpoint, splits, args.split,
                                             gold=args.gold)
    os.makedirs(args.out_dir, exist_ok=True)
    out_path = os.path.join(args.out_dir, "report.json")
    write_report(out_path, report, extra={"config_hash": meta.get("config_hash"),
                                          "variant": meta.get("variant"),
                                          "split": args.split,
                                          "beta_support": support})
    print(report.line())
    print(f"wrote {out_path}")
    return 0


def _run_grid(cfg, args, rows):
    """Train+eval each (name, variant, lambda) row; failures don't stop the grid."""
    os.makedirs(args.out_dir, exist_ok=True)
    splits = load_corpus(_corpus_dir(cfg, args))
    _check_hash(cfg, splits.meta, "corpus")
    out_rows = []
    for name, variant, lam in rows:
        row_dir = os.path.join(args.out_dir, name)
        row = {"name": name, "variant": variant,
               "lambda": cfg.loss_config(variant, lam).lambda_}
        try:
            best_path, result = _train_once(cfg, splits, args.seed, variant,
                                            row_dir, lambda_=lam)
            report, _, support = _eval_checkpoint(best_path, splits, "test")
            row.update({"bleu": report.bleu, "inform": report.inform,
                        "success": report.success, "score": report.score,
                        "ppl": report.ppl, "best_epoch": result.best_epoch,
                        "beta_support": support})
        except (ConfigError, NumericsError, OSError, ValueError) as e:
            row["error"] = f"{type(e).__name__}: {e}"
        out_rows.append(row)
        label = row.get("error") or f"score {row['score']:.2f}"
        print(f"{name}: {label}")
    return splits, out_rows


def _markdown_table(rows, key_col):
    cols = [key_col, "bleu", "inform", "success", "score", "ppl"]
    lines = ["| " + " | ".join(cols) + " |",
             "| " + " | ".join("---" for _ in cols) + " |"]
    for row in rows:
        if "error" in row:
            cells = [str(row[key_col]), row["error"], "", "", "", ""]
        else:
            cells = [str(row[key_col]), f"{row['bleu']:.4f}", f"{row['inform']:.4f}",
                     f"{row['success']:.4f}", f"{row['score']:.2f}", f"{row['ppl']:.3f}"]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def cmd_ablate(args):
    cfg = _load_config(args)
    rows = [(name, name, None) for name in VARIANTS]
    _, out_rows = _run_grid(cfg, args, rows)
    _write_json(os.path.join(args.out_dir, "ablation.json"),
                {"seed": args.seed, "rows": out_rows})
    md = _markdown_table(out_rows, "variant")
    with open(os.path.join(args.out_dir, "ablation.md"), "w", encoding="utf-8") as f:
        f.write(md)
    print(md, end="")
    return 0


def cmd_lambda_sweep(args):
    cfg = _load_config(args)
    try:
        lambdas = [float(x) for x in args.lambdas.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --lambdas list: {e}") from e
    if not lambdas:
        raise ConfigError("--lambdas is empty")
    rows = [(f"lambda_{lam:g}", "mognet", lam) for lam in lambdas]
    _, out_rows = _run_grid(cfg, args, rows)
    _write_json(os.path.join(args.out_dir, "sweep.json"),
                {"seed": args.seed, "rows": out_rows})
    md = _markdown_table(out_rows, "lambda")
    with open(os.path.join(args.out_dir, "sweep.md"), "w", encoding="utf-8") as f:
        f.write(md)
    print(md, end="")
    return 0


# -- wiring ---------------------------------------------------------------------


def _load_config(args):
    overrides = {}
    if getattr(args, "partition", None):
        overrides["corpus.partition"] = args.partition
    return RunConfig.load(args.config, overrides)


def build_parser():
    p = argparse.ArgumentParser(prog="mognet",
                                description="mixture-of-generators sequence models")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, corpus_flag=True):
        sp.add_argument("--config", default=None, help="flat dotted-key config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out-dir", required=True)
        sp.add_argument("--partition", choices=["domain", "action"], default=None)
        if corpus_flag:
            sp.add_argument("--corpus", default=None,
                            help="existing corpus dir (default: generate under out-dir)")

    sp = sub.add_parser("gen-corpus", help="generate the synthetic corpus")
    common(sp, corpus_flag=False)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("train", help="train one variant")
    common(sp)
    sp.add_argument("--variant", choices=sorted(VARIANTS), default="mognet")
    sp.add_argument("--resume", default=None, help="last.ckpt to continue from")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("--config", default=None)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--split", choices=["train", "valid", "test"], default="test")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--gold", action="store_true",
                    help="score the references against themselves")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate all four variants")
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("lambda-sweep", help="score-vs-lambda table")
    common(sp)
    sp.add_argument("--lambdas", default="0,0.5,1")
    sp.set_defaults(func=cmd_lambda_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericsError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
