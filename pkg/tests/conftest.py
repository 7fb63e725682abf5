import numpy as np
import pytest

from vaelm.core.layers import ModelDims
from vaelm.data import Corpus, Vocab
from vaelm.model import SeqVae

# filled by the acceptance module, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


TINY = ModelDims(vocab_size=12, embed_dim=5, hidden_dim=6, latent_dim=4)


@pytest.fixture
def tiny_model():
    return SeqVae.create(TINY, seed=0, dropout=0.3)


def random_sentences(rng, n, vocab_size=12, max_words=5):
    return [[1, *rng.integers(4, vocab_size, size=int(rng.integers(1, max_words + 1))), 2]
            for _ in range(n)]


@pytest.fixture
def tiny_corpus():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(8)]
    vocab = Vocab(words)
    split = lambda n: random_sentences(rng, n, len(vocab))  # noqa: E731
    return Corpus(vocab, split(40), split(10), split(10))


@pytest.fixture(scope="session")
def memorized_ae():
    """AE trained to convergence on 10 sentences.

    Patience is raised from 2 because the decay rule otherwise halves the
    rate on the early plateau, before the encoder starts carrying signal.
    """
    from vaelm.trainer import TrainConfig, pretrain_encoder
    rng = np.random.default_rng(0)
    vocab = Vocab([f"w{i}" for i in range(16)])
    sents = [[1, *rng.integers(4, 20, size=int(rng.integers(3, 7))), 2] for _ in range(10)]
    corpus = Corpus(vocab, sents, sents, sents)
    model = SeqVae.create(ModelDims(20, 16, 32, 8), seed=0, dropout=0.0)
    cfg = TrainConfig(batch_size=10, max_epochs=600, patience=20, eval_k=1, eval_mi_size=10)
    pretrain_encoder(model, corpus, 0, cfg)
    return model, corpus
