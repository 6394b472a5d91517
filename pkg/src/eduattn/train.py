"""Optimisation, training loop, evaluation metrics and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from eduattn.data import LabeledSample, Vocab, encode_batch, make_batches
from eduattn.encoder import EMBEDDING, ModelConfig, ModelParams
from eduattn.errors import CompatibilityError, ConfigError, InputError, NumericError
from eduattn.model import DEFAULT_LAMBDAS, POLARITIES, EduAttentionModel

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"EDUATTN\x00"


@dataclass
class TrainConfig:
    lr_model: float = 1e-3
    lr_embedding: float = 1e-4
    batch_size: int = 32
    eval_every: int = 16
    dropout: float = 0.5
    lambdas: tuple[float, float, float] = DEFAULT_LAMBDAS
    patience: int = 10
    max_epochs: int = 30
    seed: int = 1
    clip_norm: float = 5.0

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if self.lr_model <= 0 or self.lr_embedding <= 0:
            raise ConfigError("learning rates must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.batch_size < 1 or self.eval_every < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, eval_every and max_epochs must be at least 1")
        if len(self.lambdas) != 3 or min(self.lambdas) < 0:
            raise ConfigError(f"lambdas must be three non-negative numbers, got {self.lambdas}")


class Adam:
    """Adam with bias correction and one learning rate per parameter group."""

    def __init__(self, params: ModelParams, lr_model: float = 1e-3, lr_embedding: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lrs = {"model": lr_model, EMBEDDING: lr_embedding}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.tensor.data) for p in params}
        self.v = {p.name: np.zeros_like(p.tensor.data) for p in params}

    def step(self) -> None:
        for p in self.params:
            if not np.isfinite(p.tensor.grad).all():
                raise NumericError(f"non-finite gradient in {p.name}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.tensor.grad
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.tensor.data -= self.lrs[p.group] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(optimizer: Adam) -> None:
    optimizer.step()


def clip_grad_norm(params: ModelParams, max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.tensor.grad ** 2).sum()) for p in params)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.tensor.grad *= scale
    return total


# -- evaluation ------------------------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    n: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = list(POLARITIES)
        return d


def metrics_from_pairs(gold: Sequence[int], pred: Sequence[int]) -> EvalReport:
    """Accuracy, per-class P/R/F1 and macro-F1; an undefined ratio counts as 0."""
    if len(gold) == 0:
        raise InputError("cannot evaluate an empty set")
    cm = np.zeros((3, 3), dtype=np.int64)
    for g, p in zip(gold, pred):
        cm[g, p] += 1
    tp = np.diag(cm).astype(float)
    n_pred = cm.sum(axis=0)
    n_gold = cm.sum(axis=1)
    prec = np.divide(tp, n_pred, out=np.zeros(3), where=n_pred > 0)
    rec = np.divide(tp, n_gold, out=np.zeros(3), where=n_gold > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(3), where=denom > 0)
    return EvalReport(float(tp.sum() / cm.sum()), float(f1.mean()), prec.tolist(), rec.tolist(),
                      f1.tolist(), cm.tolist(), int(cm.sum()))


def predict_samples(model: EduAttentionModel, samples: Sequence[LabeledSample], vocab: Vocab,
                    batch_size: int = 64) -> list[list[tuple[int, int, float]]]:
    out = []
    for chunk in make_batches(samples, batch_size, None):
        out.extend(model.predict(encode_batch(chunk, vocab, model.config.n_aspects, with_polarity=False)))
    return out


def evaluate(model: EduAttentionModel, samples: Sequence[LabeledSample], vocab: Vocab,
             dump: list | None = None) -> EvalReport:
    """Score every (sentence, gold aspect) pair; optionally collect the raw predictions."""
    if not samples:
        raise InputError("cannot evaluate an empty set")
    pid = {p: i for i, p in enumerate(POLARITIES)}
    gold, pred = [], []
    for i, (s, preds) in enumerate(zip(samples, predict_samples(model, samples, vocab))):
        for (a, pol), (_, p, conf) in zip(s.labels, preds):
            gold.append(pid[pol])
            pred.append(p)
            if dump is not None:
                dump.append({"sentence": i, "aspect": a, "gold": pol, "pred": POLARITIES[p],
                             "confidence": conf})
    return metrics_from_pairs(gold, pred)


# -- checkpoints ------------------------------------------------------------------------------

def save_checkpoint(path, model: EduAttentionModel, vocab: Vocab, config: dict | None = None) -> None:
    """Header (JSON) followed by little-endian float64 arrays in manifest order."""
    state = model.params.state_dict()
    manifest, offset = [], 0
    for name, arr in state.items():
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "config": config or {},
        "vocab_hash": vocab.hash(),
        "vocab": vocab.tokens,
        "manifest": manifest,
        "payload_bytes": offset,
    }
    hb = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 16:
        raise CompatibilityError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CompatibilityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16: 16 + hlen])
    except json.JSONDecodeError:
        raise CompatibilityError(f"{path}: corrupt header") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"{path}: format version {header.get('format_version')} "
                                 f"!= supported {FORMAT_VERSION}")
    payload = raw[16 + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CompatibilityError(f"{path}: payload is {len(payload)} bytes, "
                                 f"expected {header['payload_bytes']} (truncated?)")
    state = {}
    for ent in header["manifest"]:
        n = int(np.prod(ent["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=ent["offset"])
        state[ent["name"]] = arr.reshape(ent["shape"]).astype(np.float64)
    return header, state


def load_checkpoint(path, vocab: Vocab | None = None) -> tuple[EduAttentionModel, Vocab, dict]:
    """Rebuild model and vocab; if ``vocab`` is given its hash must match."""
    header, state = read_checkpoint(path)
    if vocab is not None and vocab.hash() != header["vocab_hash"]:
        raise CompatibilityError(f"{path}: vocabulary hash mismatch")
    ck_vocab = Vocab(list(header["vocab"]))
    if ck_vocab.hash() != header["vocab_hash"]:
        raise CompatibilityError(f"{path}: stored vocabulary does not match its hash")
    cfg = ModelConfig(**header["model_config"])
    model = EduAttentionModel(ModelParams(cfg, np.random.default_rng(0)))
    if set(state) != set(model.params.names()):
        raise CompatibilityError(f"{path}: parameter set differs from this build")
    model.params.load_state_dict(state)
    return model, vocab or ck_vocab, header.get("config", {})


# -- training ---------------------------------------------------------------------------------

@dataclass
class TrainResult:
    best_val_accuracy: float
    best_state: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    steps: int = 0
    stopped: str = ""


def train(config: TrainConfig, model: EduAttentionModel, vocab: Vocab,
          train_samples: Sequence[LabeledSample], val_samples: Sequence[LabeledSample],
          checkpoint_path=None, log_path=None, run_config: dict | None = None,
          on_eval: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch training with periodic validation and early stopping.

    Every ``eval_every`` steps (and at the end of each epoch) the model is
    scored on ``val_samples``; the best parameters by validation accuracy are
    kept and optionally written to ``checkpoint_path``. Training stops after
    ``patience`` evaluations without improvement, at ``max_epochs``, or when
    ``on_eval`` (called with each eval record) returns True.
    """
    if not train_samples:
        raise InputError("empty training set")
    model.config.dropout = config.dropout
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, config.lr_model, config.lr_embedding)
    K = model.config.n_aspects
    emb = model.params["word_embeddings"]
    result = TrainResult(-1.0, model.params.state_dict())
    bad_evals, step = 0, 0
    logf = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(rec):
        result.log.append(rec)
        if logf:
            logf.write(json.dumps(rec) + "\n")
            logf.flush()

    def do_eval(epoch):
        nonlocal bad_evals
        rep = evaluate(model, val_samples or train_samples, vocab)
        improved = rep.accuracy > result.best_val_accuracy
        if improved:
            result.best_val_accuracy = rep.accuracy
            result.best_state = model.params.state_dict()
            bad_evals = 0
            if checkpoint_path:
                save_checkpoint(checkpoint_path, model, vocab, run_config)
        else:
            bad_evals += 1
        rec = {"kind": "eval", "step": step, "epoch": epoch, "val_accuracy": rep.accuracy,
               "val_macro_f1": rep.macro_f1, "best_val_accuracy": result.best_val_accuracy}
        emit(rec)
        if on_eval and on_eval(rec):
            result.stopped = "callback"
            return True
        if bad_evals >= config.patience:
            result.stopped = "patience"
            return True
        return False

    try:
        for epoch in range(1, config.max_epochs + 1):
            for chunk in make_batches(train_samples, config.batch_size, rng):
                batch = encode_batch(chunk, vocab, K)
                model.params.zero_grad()
                lb, _ = model.loss(batch, config.lambdas, training=True, rng=rng)
                if not np.isfinite(lb.total):
                    raise NumericError(f"loss diverged at step {step}")
                lb.tensor.backward()
                emb.grad[0] = 0.0  # padding row stays frozen
                gnorm = clip_grad_norm(model.params, config.clip_norm)
                opt.step()
                step += 1
                emit({"kind": "step", "step": step, "epoch": epoch, **lb.as_dict(), "grad_norm": gnorm})
                if step % config.eval_every == 0 and do_eval(epoch):
                    return result
            if step % config.eval_every != 0 and do_eval(epoch):
                return result
        result.stopped = "max_epochs"
        return result
    except NumericError:
        result.stopped = "diverged"
        model.params.load_state_dict(result.best_state)
        raise
    finally:
        result.steps = step
        if result.stopped != "diverged":
            model.params.load_state_dict(result.best_state)
        if logf:
            logf.close()
