"""Shared fixtures: the expensive trained-model fixture is session-scoped so
the acceptance suite and the behavioral tests reuse one training run."""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from similepolish.corpus import build_vocab, generate_synthetic
from similepolish.model import TrainConfig, encode_records, train
from similepolish.nn import ModelConfig

TRAIN_SEED = 11
DEV_SEED = 12
TEST_SEED = 13
MODEL_SEED = 5


@pytest.fixture(scope="session")
def synthetic_bundle():
    """256 train / 64 dev / 64 held-out synthetic records plus one model
    trained with the toy default config (H=64, 2+2 layers, 4 heads)."""
    train_recs = generate_synthetic(256, seed=TRAIN_SEED)
    dev_recs = generate_synthetic(64, seed=DEV_SEED)
    test_recs = generate_synthetic(64, seed=TEST_SEED)
    vocab = build_vocab(train_recs)
    config = ModelConfig(vocab_size=vocab.size)
    train_config = TrainConfig(learning_rate=1e-3, batch_size=32, max_steps=1000,
                               eval_every=100, patience=3)
    t0 = time.time()
    model, curve = train(train_recs, dev_recs, config, train_config, vocab,
                         seed=MODEL_SEED)
    train_seconds = time.time() - t0
    return SimpleNamespace(
        train_records=train_recs,
        dev_records=dev_recs,
        test_records=test_recs,
        vocab=vocab,
        config=config,
        train_config=train_config,
        model=model,
        curve=curve,
        train_seconds=train_seconds,
        train_samples=encode_records(train_recs, vocab, config),
        test_samples=encode_records(test_recs, vocab, config),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
