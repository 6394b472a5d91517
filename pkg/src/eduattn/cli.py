"""Command-line entry point.

Subcommands: segment, train, eval, predict, inspect, seeds. Configuration is
a flat JSON object with dotted keys (see ``DEFAULTS``); any key can be
overridden with ``--<key> <value>``.

Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from eduattn import data as D
from eduattn.encoder import ModelConfig
from eduattn.errors import (CompatibilityError, ConfigError, DataError, EduAttnError, InputError,
                            NumericError, ParseError, ValidationError)
from eduattn.model import POLARITIES, EduAttentionModel, attention_dump
from eduattn.segment import from_spans, heuristic_segment
from eduattn.train import (EvalReport, TrainConfig, evaluate, load_checkpoint, predict_samples,
                           train)

log = logging.getLogger("eduattn")

DEFAULTS: dict = {
    "dataset.name": "rest14",
    "dataset.aspects": None,
    "dataset.init_words": None,
    "dataset.train": None,
    "dataset.val": None,
    "dataset.test": {},
    "dataset.segments": None,
    "dataset.conflict_policy": "drop_pair",
    "dataset.val_fraction": 0.2,
    "dataset.max_edus": 16,
    "glove.path": None,
    "glove.dim": 300,
    "model.d_word": 300,
    "model.d_aspect": 300,
    "model.d_fuse": 300,
    "model.d_hidden": 150,
    "model.j_max": 16,
    "model.orth_norm": "frobenius",
    "train.lr_model": 1e-3,
    "train.lr_embedding": 1e-4,
    "train.batch_size": 32,
    "train.eval_every": 16,
    "train.dropout": 0.5,
    "train.lambda1": 1.0,
    "train.lambda2": 1.0,
    "train.lambda3": 0.1,
    "train.patience": 10,
    "train.max_epochs": 30,
    "train.seed": 1,
    "train.clip_norm": 5.0,
    "seeds.n": 5,
    "out": "runs/eduattn",
}

_DATASET_KEYS = {"name", "aspects", "init_words", "train", "val", "test", "segments",
                 "conflict_policy", "val_fraction", "max_edus"}


# -- configuration -------------------------------------------------------------------------

def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, str):
        return raw
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _dataset_overrides(spec: str) -> dict:
    if spec in D.PRESETS:
        return {"dataset.name": spec}
    p = Path(spec)
    if not p.exists():
        raise ConfigError(f"--dataset: {spec!r} is neither a preset {sorted(D.PRESETS)} nor a file")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{spec}: invalid JSON ({exc.msg})") from None
    out = {}
    for k, v in obj.items():
        key = k if k.startswith("dataset.") else f"dataset.{k}"
        if key.split(".", 1)[1] not in _DATASET_KEYS:
            raise ConfigError(f"{spec}: unknown dataset key {k!r}")
        out[key] = v
    return out


def build_config(args, extra: list[str]) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"--config {args.config}: {exc}") from None
        for k, v in loaded.items():
            if k not in DEFAULTS:
                raise ConfigError(f"{args.config}: unknown key {k!r}")
            cfg[k] = v
    if getattr(args, "dataset", None):
        cfg.update(_dataset_overrides(args.dataset))
    # generic --key value overrides
    if len(extra) % 2:
        raise ConfigError(f"overrides must come in --key value pairs: {extra}")
    for flag, raw in zip(extra[::2], extra[1::2]):
        if not flag.startswith("--") or flag[2:] not in DEFAULTS:
            raise ConfigError(f"unknown option {flag}")
        cfg[flag[2:]] = _coerce(flag[2:], raw)
    lam_flags = {i: getattr(args, f"lambda{i}", None) for i in (1, 2, 3)}
    ablation = getattr(args, "no_reg", False) or getattr(args, "no_aux", False)
    if ablation and any(v is not None for v in lam_flags.values()):
        raise ConfigError("--no_reg/--no_aux cannot be combined with explicit --lambda overrides")
    for i, v in lam_flags.items():
        if v is not None:
            cfg[f"train.lambda{i}"] = v
    if getattr(args, "no_reg", False):
        cfg["train.lambda3"] = 0.0
    if getattr(args, "no_aux", False):
        cfg["train.lambda2"] = 0.0
    if getattr(args, "seed", None) is not None:
        cfg["train.seed"] = args.seed
    if getattr(args, "glove", None):
        cfg["glove.path"] = args.glove
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "n", None) is not None:
        cfg["seeds.n"] = args.n
    preset = D.PRESETS.get(cfg["dataset.name"], {})
    if cfg["dataset.aspects"] is None:
        if not preset:
            raise ConfigError(f"dataset {cfg['dataset.name']!r} needs an explicit aspect list")
        cfg["dataset.aspects"] = list(preset["aspects"])
    if cfg["dataset.init_words"] is None:
        cfg["dataset.init_words"] = dict(preset.get("init_words", {}))
    if isinstance(cfg["dataset.test"], str):
        cfg["dataset.test"] = {"test": cfg["dataset.test"]}
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr_model=cfg["train.lr_model"], lr_embedding=cfg["train.lr_embedding"],
        batch_size=cfg["train.batch_size"], eval_every=cfg["train.eval_every"],
        dropout=cfg["train.dropout"],
        lambdas=(cfg["train.lambda1"], cfg["train.lambda2"], cfg["train.lambda3"]),
        patience=cfg["train.patience"], max_epochs=cfg["train.max_epochs"],
        seed=cfg["train.seed"], clip_norm=cfg["train.clip_norm"])


# -- data assembly -------------------------------------------------------------------------

def load_splits(cfg: dict):
    if not cfg["dataset.train"]:
        raise ConfigError("dataset.train is not set")
    D.check_dataset_files({"train": cfg["dataset.train"], "val": cfg["dataset.val"],
                           "segments": cfg["dataset.segments"], "test": cfg["dataset.test"]})
    if cfg["glove.path"] and not Path(cfg["glove.path"]).exists():
        raise ConfigError(f"glove.path: file not found: {cfg['glove.path']}")
    aspects = cfg["dataset.aspects"]
    segs = D.load_segment_map(cfg["dataset.segments"]) if cfg["dataset.segments"] else None
    kw = dict(segments=segs, conflict_policy=cfg["dataset.conflict_policy"],
              max_edus=cfg["dataset.max_edus"])
    train_s = D.load_samples(cfg["dataset.train"], aspects, **kw)
    if cfg["dataset.val"]:
        val_s = D.load_samples(cfg["dataset.val"], aspects, **kw)
    else:
        rng = np.random.default_rng(cfg["train.seed"])
        train_s, val_s = D.split_train_val(train_s, cfg["dataset.val_fraction"], rng)
    tests = {name: D.load_samples(p, aspects, **kw) for name, p in cfg["dataset.test"].items()}
    return train_s, val_s, tests


def build_model(cfg: dict, train_s, val_s, tests) -> tuple[EduAttentionModel, D.Vocab]:
    aspects = cfg["dataset.aspects"]
    counts = D.corpus_counts(train_s, val_s, *tests.values())
    init_words = [w for w in cfg["dataset.init_words"].values() if w]
    seed = cfg["train.seed"]
    rng = np.random.default_rng(seed + 7919)
    if cfg["glove.path"]:
        counts.update({w: 0 for w in init_words if w not in counts})
        vocab = D.load_glove(cfg["glove.path"], Counter(counts), cfg["glove.dim"], rng)
        d_word = cfg["glove.dim"]
    else:
        vocab = D.build_vocab([], extra=list(counts.elements()) + init_words)
        d_word = cfg["model.d_word"]
    mc = ModelConfig(vocab_size=len(vocab), n_aspects=len(aspects), d_word=d_word,
                     d_aspect=d_word, d_fuse=cfg["model.d_fuse"], d_hidden=cfg["model.d_hidden"],
                     j_max=cfg["model.j_max"], dropout=cfg["train.dropout"],
                     orth_norm=cfg["model.orth_norm"])
    aspect_vecs = {}
    if vocab.embeddings is not None:
        for k, a in enumerate(aspects):
            w = cfg["dataset.init_words"].get(a)
            if w and w in vocab:
                aspect_vecs[k] = vocab.embeddings[vocab.id(w)]
    model = EduAttentionModel.create(mc, seed=seed, word_vectors=vocab.embeddings,
                                     aspect_vectors=aspect_vecs)
    return model, vocab


# -- commands -------------------------------------------------------------------------------

def _emit(obj, out_path=None):
    text = json.dumps(obj, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n")
    print(text)


def cmd_segment(args, extra) -> int:
    if extra:
        raise ConfigError(f"unknown options {extra}")
    src = open(args.input, encoding="utf-8") if args.input and args.input != "-" else sys.stdin
    sink = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for n, line in enumerate(src, 1):
            if not line.strip():
                log.warning("line %d: empty, skipped", n)
                continue
            if args.presegmented:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON ({exc.msg})", n) from None
                seg = from_spans(rec["text"], rec["edus"], n)
                out = dict(rec)
                out.update(seg.to_record())
            else:
                seg = heuristic_segment(line.rstrip("\n"))
                out = seg.to_record()
            sink.write(json.dumps(out) + "\n")
    finally:
        if src is not sys.stdin:
            src.close()
        if sink is not sys.stdout:
            sink.close()
    return 0


def _run_training(cfg: dict, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    train_s, val_s, tests = load_splits(cfg)
    model, vocab = build_model(cfg, train_s, val_s, tests)
    tc = train_config(cfg)
    log.info("training on %d sentences (val %d), lambdas=%s, %d parameters",
             len(train_s), len(val_s), tc.lambdas, model.params.count())
    res = train(tc, model, vocab, train_s, val_s, checkpoint_path=out_dir / "checkpoint.bin",
                log_path=out_dir / "metrics.jsonl", run_config=cfg)
    summary = {"best_val_accuracy": res.best_val_accuracy, "steps": res.steps,
               "stopped": res.stopped, "lambdas": list(tc.lambdas), "test": {}}
    for name, samples in tests.items():
        dump: list = []
        rep = evaluate(model, samples, vocab, dump)
        summary["test"][name] = rep.to_dict()
        _write_jsonl(out_dir / f"predictions_{name}.jsonl", dump)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def _write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


def cmd_train(args, extra) -> int:
    cfg = build_config(args, extra)
    summary = _run_training(cfg, Path(cfg["out"]))
    _emit(summary)
    return 0


def cmd_seeds(args, extra) -> int:
    cfg = build_config(args, extra)
    n = int(cfg["seeds.n"])
    if n < 1:
        raise ConfigError("--n must be at least 1")
    base = Path(cfg["out"])
    runs = []
    for seed in range(1, n + 1):
        c = dict(cfg, **{"train.seed": seed})
        runs.append(_run_training(c, base / f"seed{seed}"))
    agg = {}
    for name in cfg["dataset.test"]:
        acc = np.array([r["test"][name]["accuracy"] for r in runs])
        f1 = np.array([r["test"][name]["macro_f1"] for r in runs])
        agg[name] = {"accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std()),
                     "macro_f1_mean": float(f1.mean()), "macro_f1_std": float(f1.std()),
                     "accuracy": acc.tolist(), "macro_f1": f1.tolist()}
        print(f"{name}: accuracy {100 * acc.mean():.2f} ± {100 * acc.std():.2f}  "
              f"macro-F1 {100 * f1.mean():.2f} ± {100 * f1.std():.2f}  (n={n})", file=sys.stderr)
    (base / "seeds_summary.json").write_text(json.dumps(agg, indent=2) + "\n")
    _emit(agg)
    return 0


def _load_model(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    model, vocab, run_cfg = load_checkpoint(args.checkpoint)
    aspects = run_cfg.get("dataset.aspects")
    if not aspects:
        raise CompatibilityError("checkpoint carries no aspect list")
    return model, vocab, run_cfg, aspects


def _read_input_samples(path, aspects, need_polarity: bool):
    """JSONL records with ``text``, optional ``edus`` and ``labels``/``aspects``."""
    aspect_id = {a: i for i, a in enumerate(aspects)}
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", n) from None
            seg = from_spans(rec["text"], rec["edus"], n) if "edus" in rec else heuristic_segment(rec["text"])
            labs = rec.get("labels") or [{"aspect": a} for a in rec.get("aspects", [])]
            labels = []
            for lab in labs:
                if lab["aspect"] not in aspect_id:
                    raise ValidationError(f"line {n}: unknown aspect {lab['aspect']!r}")
                pol = lab.get("polarity")
                if pol == "conflict":
                    continue
                if pol is None:
                    if need_polarity:
                        raise DataError(f"line {n}: gold polarity required")
                    pol = "neutral"  # placeholder; only the aspect is used
                labels.append((aspect_id[lab["aspect"]], pol))
            if not labels:
                raise DataError(f"line {n}: no gold aspects")
            out.append(D.LabeledSample(seg, tuple(labels)))
    return out


def cmd_eval(args, extra) -> int:
    model, vocab, run_cfg, aspects = _load_model(args)
    if args.input:
        sets = {"input": D.load_samples(args.input, aspects)}
    else:
        cfg = dict(run_cfg)
        if args.dataset:
            cfg.update(_dataset_overrides(args.dataset))
        segs = D.load_segment_map(cfg["dataset.segments"]) if cfg.get("dataset.segments") else None
        tests = cfg.get("dataset.test") or {}
        if not tests:
            raise ConfigError("no test sets configured; pass --input")
        sets = {k: D.load_samples(p, aspects, segs, cfg.get("dataset.conflict_policy", "drop_pair"))
                for k, p in tests.items()}
    if extra:
        raise ConfigError(f"unknown options {extra}")
    report = {}
    for name, samples in sets.items():
        dump: list = []
        report[name] = evaluate(model, samples, vocab, dump).to_dict()
        if args.dump:
            p = Path(args.dump)
            _write_jsonl(p if len(sets) == 1 else p.with_name(f"{p.stem}_{name}{p.suffix}"), dump)
    _emit(report, args.output)
    return 0


def cmd_predict(args, extra) -> int:
    if extra:
        raise ConfigError(f"unknown options {extra}")
    model, vocab, _, aspects = _load_model(args)
    samples = _read_input_samples(args.input, aspects, need_polarity=False)
    preds = predict_samples(model, samples, vocab)
    sink = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        for s, row in zip(samples, preds):
            sink.write(json.dumps({
                "text": s.sentence.text,
                "predictions": [{"aspect": aspects[a], "polarity": POLARITIES[p], "confidence": c}
                                for a, p, c in row]}) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def cmd_inspect(args, extra) -> int:
    if extra:
        raise ConfigError(f"unknown options {extra}")
    model, vocab, _, aspects = _load_model(args)
    if args.text:
        if not args.aspects:
            raise ConfigError("--text needs --aspects")
        names = [a.strip() for a in args.aspects.split(",")]
        bad = [a for a in names if a not in aspects]
        if bad:
            raise ValidationError(f"unknown aspects {bad}")
        samples = [D.LabeledSample(heuristic_segment(args.text),
                                   tuple((aspects.index(a), "neutral") for a in names))]
    elif args.input:
        samples = _read_input_samples(args.input, aspects, need_polarity=False)
    else:
        raise ConfigError("inspect needs --input or --text")
    dumps = []
    for chunk in D.make_batches(samples, 32, None):
        batch = D.encode_batch(chunk, vocab, len(aspects), with_polarity=False)
        dumps.extend(attention_dump(model, batch, [s.sentence for s in chunk], aspects))
    _emit(dumps if len(dumps) > 1 else dumps[0], args.output)
    return 0


# -- argument parsing --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, training: bool):
    p.add_argument("--config", help="JSON file with dotted keys")
    p.add_argument("--dataset", help=f"preset ({', '.join(D.PRESETS)}) or dataset JSON file")
    p.add_argument("--out", help="output directory")
    if training:
        p.add_argument("--seed", type=int)
        p.add_argument("--glove", help="GloVe text file")
        p.add_argument("--no_reg", action="store_true", help="drop the orthogonality penalty")
        p.add_argument("--no_aux", action="store_true", help="drop the aspect-presence loss")
        for i in (1, 2, 3):
            p.add_argument(f"--lambda{i}", type=float)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eduattn", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="split sentences into EDUs (JSONL out)")
    p.add_argument("input", nargs="?", help="text file, one sentence per line (default stdin)")
    p.add_argument("--presegmented", action="store_true", help="input is JSONL with EDU spans")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train one model")
    _common(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("seeds", help="train and test over seeds 1..n")
    _common(p, True)
    p.add_argument("--n", type=int)
    p.set_defaults(func=cmd_seeds)

    for name, fn, hlp in (("eval", cmd_eval, "score a checkpoint"),
                          ("predict", cmd_predict, "predict polarities for gold aspects"),
                          ("inspect", cmd_inspect, "dump word- and EDU-level attention")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", help="JSONL input")
        p.add_argument("-o", "--output")
        if name == "eval":
            p.add_argument("--dataset")
            p.add_argument("--dump", help="write per-pair predictions JSONL here")
        if name == "inspect":
            p.add_argument("--text")
            p.add_argument("--aspects", help="comma-separated aspect names for --text")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (EduAttnError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
