"""Recompute accuracy and macro-F1 from a predictions dump, in plain Python.

Usage: python3 scripts/metric_oracle.py PREDICTIONS.jsonl [--report EVAL.json [--set NAME]]

The dump is the JSONL written by ``eduattn eval --dump`` (or the
``predictions_*.jsonl`` files of a training run): one object per
(sentence, aspect) pair with ``gold`` and ``pred`` polarity names. With
``--report`` the numbers are compared to an ``eduattn eval`` JSON report and
the exit code is 1 on any difference above 1e-9.
"""

import argparse
import json
import sys

CLASSES = ("negative", "neutral", "positive")


def oracle(pairs):
    n = len(pairs)
    correct = sum(1 for g, p in pairs if g == p)
    f1s = []
    for c in CLASSES:
        tp = sum(1 for g, p in pairs if g == c and p == c)
        n_pred = sum(1 for _, p in pairs if p == c)
        n_gold = sum(1 for g, _ in pairs if g == c)
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_gold if n_gold else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return {"accuracy": correct / n, "macro_f1": sum(f1s) / len(f1s), "n": n}


def read_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pairs.append((rec["gold"], rec["pred"]))
    return pairs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("predictions")
    ap.add_argument("--report", help="eduattn eval JSON output to check against")
    ap.add_argument("--set", help="test-set key inside the report (default: the only one)")
    args = ap.parse_args(argv)
    res = oracle(read_pairs(args.predictions))
    print(json.dumps(res))
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            rep = json.load(fh)
        if "accuracy" not in rep:
            key = args.set or (next(iter(rep)) if len(rep) == 1 else None)
            if key is None:
                ap.error("report holds several sets; pass --set")
            rep = rep[key]
        diff = max(abs(res["accuracy"] - rep["accuracy"]), abs(res["macro_f1"] - rep["macro_f1"]))
        print(f"max abs difference {diff:.3e}", file=sys.stderr)
        return 0 if diff <= 1e-9 and res["n"] == rep["n"] else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
