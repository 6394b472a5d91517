import numpy as np
import pytest

from eduattn.data import build_vocab, encode_batch
from eduattn.encoder import ModelConfig
from eduattn.model import EduAttentionModel
from eduattn.synthetic import make_corpus


def toy_model(vocab_size=12, n_aspects=2, d=6, h=4, seed=0, scale=None):
    cfg = ModelConfig(vocab_size, n_aspects, d_word=d, d_aspect=d, d_fuse=d, d_hidden=h,
                      j_max=4, dropout=0.0)
    m = EduAttentionModel.create(cfg, seed=seed)
    if scale is not None:
        rng = np.random.default_rng(seed + 100)
        for name in m.params.names():
            t = m.params[name]
            t.data = rng.uniform(-scale, scale, size=t.shape)
        m.params["word_embeddings"].data[0] = 0.0
    return m


@pytest.fixture
def corpus():
    return make_corpus(40, seed=5)


@pytest.fixture
def toy_setup():
    """Two sentences, two aspects, small dimensions."""
    samples = make_corpus(6, seed=11, multi_fraction=0.5)[:2]
    vocab = build_vocab(samples)
    model = toy_model(len(vocab), 2, scale=0.5)
    batch = encode_batch(samples, vocab, 2)
    return model, batch, samples, vocab


def overfit_run(seed=1, n=32, max_epochs=200, checkpoint_path=None):
    """Train on ``n`` separable synthetic samples, validating on the same set.

    Dropout is off and the learning rate raised: this is a capacity check, not
    a reproduction of the regularised training schedule.
    """
    from eduattn.train import TrainConfig, train

    samples = make_corpus(n, seed=seed)
    vocab = build_vocab(samples)
    cfg = ModelConfig(len(vocab), 2, d_word=32, d_aspect=32, d_fuse=32, d_hidden=16, dropout=0.0)
    model = EduAttentionModel.create(cfg, seed=seed)
    tc = TrainConfig(lr_model=1e-2, lr_embedding=1e-2, batch_size=32, eval_every=1, dropout=0.0,
                     patience=max_epochs, max_epochs=max_epochs, seed=seed)
    first_perfect = []

    def on_eval(rec):
        if rec["val_accuracy"] == 1.0:
            first_perfect.append(rec["epoch"])
            return True
        return False
    res = train(tc, model, vocab, samples, samples, checkpoint_path=checkpoint_path, on_eval=on_eval)
    return model, vocab, samples, (first_perfect[0] if first_perfect else None), res


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
