from __future__ import annotations
import pytest

from src.stonemark.gateway import ToyProvider, build_toy_spec
from src.stonemark.syntax import build_vocabulary_profile, load_language_profile
from src.stonemark.tokenizer import ToyTokenizer, build_toy_vocabulary


@pytest.fixture(scope="session")
def python_profile():
    return load_language_profile("python")


@pytest.fixture(scope="session")
def toy_tokenizer(python_profile):
    vocab = build_toy_vocabulary(python_profile)
    # even |V| so that gamma=0.5 splits the vocabulary exactly in half
    if len(vocab) % 2:
        vocab.append(" tmp")
    return ToyTokenizer(vocab, name="toy-python")


@pytest.fixture(scope="session")
def vocab(python_profile, toy_tokenizer):
    return build_vocabulary_profile(python_profile, toy_tokenizer.decode_table())


@pytest.fixture
def toy_provider(vocab):
    return ToyProvider(build_toy_spec(vocab.vocab_size, sorted(vocab.syntax_set), seed=7))


@pytest.fixture(scope="session")
def wide_vocab(python_profile):
    """The python syntax lexemes padded with identifiers up to |V| = 1000."""
    syntax_only = len(build_toy_vocabulary(python_profile, ()))
    identifiers = [f"v{i}" for i in range(1000 - syntax_only)]
    return build_vocabulary_profile(python_profile, build_toy_vocabulary(python_profile, identifiers))
