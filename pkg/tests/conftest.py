import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from melforge import corpus, dsp, fixture
from melforge.model import ModelConfig


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Bundled 2-speaker/20-utterance corpus, written once per session."""
    root = tmp_path_factory.mktemp("corpus") / "toy"
    fixture.write_fixture_corpus(root, seed=0)
    return root


@pytest.fixture(scope="session")
def prepared_toy(toy_corpus, tmp_path_factory):
    """Manifest with feature caches plus the resolved feature config."""
    manifest = corpus.build_manifest(toy_corpus)
    fcfg = dsp.FeatureConfig()
    ref_lin, ref_mel = corpus.corpus_reference_levels(manifest, fcfg)
    fcfg = fcfg.with_refs(ref_lin, ref_mel)
    out = tmp_path_factory.mktemp("features")
    manifest = corpus.precompute_features(manifest, fcfg, out)
    store = corpus.load_embeddings(toy_corpus / "embeddings.mfem")
    return manifest, fcfg, store


@pytest.fixture
def tiny_model_config():
    """Small-but-real model dimensions for shape and gradient tests."""
    return ModelConfig(
        vocab_size=12,
        n_mels=10,
        n_bins=33,
        attention_dim=16,
        embed_dim=8,
        speaker_dim=16,
        width_scale=0.0625,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
