import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hinre.corpus import build_vocab  # noqa: E402
from hinre.model import HinModel, ModelConfig  # noqa: E402
from hinre.synth import SynthSpec, gen_synthetic  # noqa: E402

TINY = dict(word_dim=3, type_dim=2, coref_dim=2, dist_dim=2, hidden=2, subspaces=2, subspace_dim=2,
            n_relations=3, max_entities=4, dropout=0.0, freeze_words=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_setup(entities=2, sentences=2, seed=1, **overrides):
    docs, rels = gen_synthetic(SynthSpec(documents=1, entities=entities, relations=3, sentences=sentences,
                                         vocab=30, seed=seed))
    vocab = build_vocab(docs, rels)
    cfg = ModelConfig(vocab_size=len(vocab.words), n_types=len(vocab.types),
                      **{**TINY, "max_entities": max(4, entities), **overrides})
    model = HinModel.create(cfg, np.random.default_rng(seed), vocab)
    return docs, vocab, cfg, model


@pytest.fixture
def tiny():
    return tiny_setup()


# -- acceptance reporting ---------------------------------------------------------


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Call ``criterion(n, ok, detail)`` once per acceptance criterion."""
    lines = request.config._acceptance_lines

    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
