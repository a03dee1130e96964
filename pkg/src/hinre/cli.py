"""Command line entry point: synth, train, eval, predict, gradcheck, ablate.

Exit codes: 0 success, 2 input error, 3 divergence, 4 checkpoint mismatch,
5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointMismatch, atomic_write_text, load_checkpoint, save_checkpoint
from .corpus import IngestionError, LabelIndex, build_vocab, enumerate_pairs, load_docred, load_vectors, write_docred
from .model import ABLATIONS, HinModel, ModelConfig, PairRef
from .seeding import substream
from .synth import SynthSpec, gen_synthetic
from .train import (LOG_HEADER, DivergenceError, TrainConfig, evaluate, featurize, run_ablation,
                    score_documents, train_loop)

log = logging.getLogger("hinre")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_MISMATCH, EXIT_GRADCHECK = 0, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4
GRADCHECK_MAX_D = 8

# tiny model used by gradcheck unless overridden
GRADCHECK_MODEL = dict(word_dim=3, type_dim=2, coref_dim=2, dist_dim=2, hidden=2, subspaces=2,
                       subspace_dim=2, n_relations=3, dropout=0.0, freeze_words=False)


class InputError(Exception):
    """Bad arguments, paths or configuration; maps to exit code 2."""


# -- configuration ------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(args) -> dict:
    """Merge the --config file with --set overrides into {model, train, synth}."""
    cfg = {"model": {}, "train": {}, "synth": {}}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise InputError(f"{path}: not valid JSON ({err})") from None
        unknown = set(data) - set(cfg)
        if unknown:
            raise InputError(f"{path}: unknown sections {sorted(unknown)}; expected model, train, synth")
        for k in cfg:
            cfg[k].update(data.get(k, {}))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in cfg:
            raise InputError(f"--set expects section.key=value with section in model/train/synth, got {item!r}")
        cfg[section][name] = _parse_value(value)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["synth"]["seed"] = args.seed
    return cfg


def _build(factory, obj, what):
    try:
        return factory(obj)
    except (TypeError, ValueError) as err:
        raise InputError(f"invalid {what} configuration: {err}") from None


def _require(path, what):
    if path is None:
        raise InputError(f"{what} path is required")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _relations(args) -> LabelIndex:
    """Relation inventory from --relations, else grown while reading the training file."""
    if getattr(args, "relations", None):
        obj = json.loads(_require(args.relations, "relation file").read_text(encoding="utf-8"))
        names = list(obj) if isinstance(obj, (list, dict)) else None
        if names is None:
            raise InputError(f"{args.relations}: expected a JSON list or object of relation names")
        return LabelIndex(names, frozen=True)
    return LabelIndex()


# -- output formats -------------------------------------------------------------------


def format_predictions(records, relation_names, delta) -> str:
    """One ``doc  head  tail  relation  score`` line per record above ``delta``."""
    chosen = [r for r in records if r.score > delta]
    chosen.sort(key=lambda r: (r.doc_id, -r.score, r.head, r.tail, r.relation))
    return "".join(f"{r.doc_id}\t{r.head}\t{r.tail}\t{relation_names[r.relation]}\t{r.score:.9f}\n"
                   for r in chosen)


def _fmt_threshold(delta):
    return "inf" if math.isinf(delta) else repr(float(delta))


# -- commands ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    run = load_run_config(args)
    spec = _build(lambda o: SynthSpec(**o), run["synth"], "synth")
    n_dev = args.dev_documents
    if n_dev < 0:
        raise InputError("--dev-documents must be >= 0")
    try:
        docs, relations = gen_synthetic(SynthSpec(**{**spec.__dict__, "documents": spec.documents + n_dev}))
    except ValueError as err:
        raise InputError(str(err)) from None
    out = _out_dir(args)
    write_docred(out / "train.json", docs[:spec.documents], relations)
    if n_dev:
        write_docred(out / "dev.json", docs[spec.documents:], relations)
    atomic_write_text(out / "rel_info.json", json.dumps(relations.names) + "\n")
    facts = sum(len(d.facts) for d in docs)
    print(f"wrote {len(docs)} documents ({facts} facts, {len(relations)} relations) to {out}")
    return EXIT_OK


def _model_config(run, vocab, dim=None) -> ModelConfig:
    base = {"vocab_size": len(vocab.words), "n_types": len(vocab.types), "n_relations": len(vocab.relations)}
    if dim is not None:
        base["word_dim"] = dim
    return _build(lambda o: ModelConfig(**o), {**base, **run["model"]}, "model")


def _load_corpus(path, relations, what):
    return load_docred(_require(path, what), relations)


def cmd_train(args) -> int:
    run = load_run_config(args)
    train_cfg = _build(TrainConfig.from_json, run["train"], "train")
    relations = _relations(args)
    train_docs = _load_corpus(args.train, relations, "training corpus")
    dev_docs = _load_corpus(args.dev, relations, "dev corpus") if args.dev else train_docs
    if not all(d.labeled for d in train_docs + dev_docs):
        raise InputError("training and dev corpora must carry labels")
    relations.frozen = True
    vectors = load_vectors(_require(args.vectors, "vector file")) if args.vectors else None
    dim = len(next(iter(vectors.values()))) if vectors else None
    vocab = build_vocab(train_docs + dev_docs, relations, vectors)
    if vocab.coverage:
        log.info("pretrained coverage: %s", vocab.coverage)
    model_cfg = _model_config(run, vocab, dim)

    out = _out_dir(args)
    lines = [LOG_HEADER]
    t0 = time.perf_counter()

    def on_epoch(entry):
        lines.append(entry.line())
        if not args.quiet:
            print(entry.line(), file=sys.stderr)

    result = train_loop(train_docs, dev_docs, vocab, model_cfg, train_cfg, on_epoch=on_epoch)
    elapsed = time.perf_counter() - t0
    save_checkpoint(out / "checkpoint", result.model, vocab, result.threshold,
                    extra={"train": train_cfg.to_json(), "best_epoch": result.best_epoch})
    atomic_write_text(out / "train_log.tsv", "\n".join(lines) + "\n")
    atomic_write_text(out / "threshold.txt", _fmt_threshold(result.threshold) + "\n")
    records = score_documents(result.model, dev_docs, featurize(dev_docs, vocab, model_cfg))
    atomic_write_text(out / "dev_predictions.tsv", format_predictions(records, relations.names, result.threshold))
    if result.log:
        from .plotting import plot_training_curve
        plot_training_curve(result.log, out / "training_curve.png")
    best = result.log[result.best_epoch - 1] if result.log else None
    print(f"trained {len(result.log)} epochs in {elapsed:.1f}s; "
          + (f"best dev F1 {best.f1:.4f} at epoch {result.best_epoch}; " if best else "")
          + f"checkpoint at {out / 'checkpoint'}")
    return EXIT_OK


def _load_model(args, run):
    ckpt = _require(args.checkpoint, "checkpoint")
    meta = json.loads((ckpt / "meta.json").read_text(encoding="utf-8")) if (ckpt / "meta.json").is_file() else None
    if meta is None:
        raise InputError(f"{ckpt} is not a checkpoint directory")
    cfg = _build(lambda o: ModelConfig(**o), {**meta["model"], **run["model"]}, "model")
    return load_checkpoint(ckpt, cfg)


def cmd_eval(args) -> int:
    run = load_run_config(args)
    model, vocab, delta, _ = _load_model(args, run)
    relations = LabelIndex(vocab.relations.names, frozen=True)
    docs = _load_corpus(args.data, relations, "evaluation corpus")
    if not all(d.labeled for d in docs):
        raise InputError(f"{args.data} has unlabeled documents; use the predict command for unlabeled data")
    train_docs = _load_corpus(args.train, relations, "training corpus") if args.train else None
    if args.threshold is not None:
        delta = args.threshold
    feats = featurize(docs, vocab, model.cfg)
    report, records = evaluate(model, docs, feats, delta, train_docs)

    out = _out_dir(args)
    atomic_write_text(out / "report.json", json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "report.txt", report.table())
    atomic_write_text(out / "predictions.tsv", format_predictions(records, relations.names, delta))
    from .plotting import plot_recall_by_evidence
    plot_recall_by_evidence(report.recall_by_evidence, out / "recall_by_evidence.png")
    print(report.table(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    run = load_run_config(args)
    model, vocab, delta, _ = _load_model(args, run)
    relations = LabelIndex(vocab.relations.names, frozen=True)
    docs = _load_corpus(args.data, relations, "corpus")
    if args.threshold is not None:
        delta = args.threshold
    records = score_documents(model, docs, featurize(docs, vocab, model.cfg))
    text = format_predictions(records, relations.names, delta)
    out = _out_dir(args)
    atomic_write_text(out / "predictions.tsv", text)
    print(f"{text.count(chr(10))} predictions above threshold {_fmt_threshold(delta)} written to {out}")
    return EXIT_OK


def gradcheck_setup(run, entities=2, sentences=2, seed=0):
    """Tiny model, one synthetic document and a loss closure over all its pairs."""
    spec = SynthSpec(documents=1, entities=entities, relations=run["model"].get("n_relations", 3),
                     sentences=sentences, vocab=40, seed=seed)
    docs, relations = gen_synthetic(spec)
    vocab = build_vocab(docs, relations)
    model_cfg = _build(lambda o: ModelConfig(**o), {
        **GRADCHECK_MODEL, "vocab_size": len(vocab.words), "n_types": len(vocab.types),
        "n_relations": len(relations), "max_entities": max(4, entities), **run["model"]}, "model")
    if model_cfg.d > GRADCHECK_MAX_D:
        raise InputError(f"gradcheck needs a tiny model: d = {model_cfg.d} exceeds the bound {GRADCHECK_MAX_D}")
    model = HinModel.create(model_cfg, substream(seed, "init"), vocab)
    feats = featurize(docs, vocab, model_cfg)
    pairs = enumerate_pairs(docs[0], model_cfg.n_relations)
    y = np.stack([p.labels for p in pairs])

    def loss():
        enc = model.encode(feats)
        out = model.forward(enc, [PairRef(0, p.head, p.tail) for p in pairs])
        return ad.bce(out.probs, y)

    return model, loss


def run_gradcheck(run, seed=0, entities=2, sentences=2, fault=None, eps=1e-5):
    model, loss = gradcheck_setup(run, entities, sentences, seed)
    if fault:
        with ad.inject_backward_fault(fault):
            return ad.finite_diff_check(loss, model.params.trainable(), eps=eps, seed=seed)
    return ad.finite_diff_check(loss, model.params.trainable(), eps=eps, seed=seed)


def cmd_gradcheck(args) -> int:
    run = load_run_config(args)
    seed = args.seed or 0
    t0 = time.perf_counter()
    report = run_gradcheck(run, seed, args.entities, args.sentences, args.inject_fault)
    elapsed = time.perf_counter() - t0
    failed = [name for name, err in report.items() if not err < GRADCHECK_TOL]
    lines = ["parameter\tmax_rel_error\tstatus"]
    lines += [f"{name}\t{err:.3e}\t{'FAIL' if name in failed else 'ok'}" for name, err in report.items()]
    table = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(_out_dir(args) / "gradcheck.tsv", table)
    print(table, end="")
    print(f"max error {max(report.values()):.3e} over {len(report)} parameters in {elapsed:.1f}s")
    if failed:
        print(f"gradient check failed (tolerance {GRADCHECK_TOL:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_ablate(args) -> int:
    run = load_run_config(args)
    train_cfg = _build(TrainConfig.from_json, run["train"], "train")
    relations = _relations(args)
    train_docs = _load_corpus(args.train, relations, "training corpus")
    dev_docs = _load_corpus(args.dev, relations, "dev corpus") if args.dev else train_docs
    relations.frozen = True
    vocab = build_vocab(train_docs + dev_docs, relations)
    base = _model_config(run, vocab)
    flags = ABLATIONS if args.flag == "all" else [args.flag]
    rows = [("full", None, None)]
    lines = ["variant\tparameters\tdelta\tf1\tign_f1"]
    for flag in flags:
        res = run_ablation(train_docs, dev_docs, vocab, base, flag, train_cfg)
        if rows[0][1] is None:
            rows[0] = ("full", res.base.f1, res.base.ign_f1)
            lines.append(f"full\t{res.base_params}\t0\t{res.base.f1:.6f}\t{res.base.ign_f1:.6f}")
        rows.append((flag, res.ablated.f1, res.ablated.ign_f1))
        lines.append(f"{flag}\t{res.ablated_params}\t{res.ablated_params - res.base_params}\t"
                     f"{res.ablated.f1:.6f}\t{res.ablated.ign_f1:.6f}")
    out = _out_dir(args)
    text = "\n".join(lines) + "\n"
    atomic_write_text(out / "ablation.tsv", text)
    from .plotting import plot_ablation
    plot_ablation(rows, out / "ablation.png")
    print(text, end="")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with model/train/synth sections")
    common.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    common.add_argument("--out", default=".", help="output directory (created if absent)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value; may be repeated")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="hinre", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--dev-documents", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (("train", cmd_train, "train a model"), ("ablate", cmd_ablate, "ablation runs")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--train", required=True, help="training corpus (DocRED JSON)")
        p.add_argument("--dev", help="dev corpus; defaults to the training corpus")
        p.add_argument("--relations", help="JSON list or object of relation names")
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--vectors", help="pretrained word vectors (text format)")
        else:
            p.add_argument("--flag", default="all", choices=("all",) + ABLATIONS)

    for name, func in (("eval", cmd_eval), ("predict", cmd_predict)):
        p = sub.add_parser(name, parents=[common], help=f"{name} with a checkpoint")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--threshold", type=float, help="override the stored threshold")
        if name == "eval":
            p.add_argument("--train", help="training corpus for Ign F1")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--entities", type=int, default=2)
    p.add_argument("--sentences", type=int, default=2)
    p.add_argument("--inject-fault", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck, out=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, IngestionError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointMismatch as err:
        print(f"error: checkpoint mismatch: {err}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
