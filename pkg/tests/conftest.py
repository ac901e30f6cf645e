"""Shared fixtures: a cheap trained stack for mechanics-level tests.

Budget-quality models (the ones the trend gates need) are built inside the
acceptance module; everything here trades accuracy for seconds.
"""

import numpy as np
import pytest

from semflow.autoencoder import AeConfig, train_autoencoder
from semflow.pipeline import (StageConfig, train_latent_generator,
                              train_semantic_generator)
from semflow.semantics import PretrainConfig, pretrain_semantic_encoder
from semflow.synthdata import CorpusConfig, make_corpus


@pytest.fixture(scope="session")
def cheap_ccfg():
    return CorpusConfig(num_clips=24, F=16, F_long=64, H=16, W=16, seed=0)


@pytest.fixture(scope="session")
def cheap_corpus(cheap_ccfg):
    return make_corpus(cheap_ccfg)


@pytest.fixture(scope="session")
def cheap_ae(cheap_corpus):
    ae, _ = train_autoencoder(cheap_corpus, AeConfig(steps=400, batch=4, seed=0))
    return ae


@pytest.fixture(scope="session")
def cheap_encoder():
    # briefly pretrained on its own corpus: grids get factor structure, which
    # the downstream generator fits far faster than random-trunk noise
    pcfg = CorpusConfig(num_clips=64, F=16, H=16, W=16, seed=1)
    enc, _ = pretrain_semantic_encoder(
        make_corpus(pcfg), pcfg, PretrainConfig(steps=800, batch=16, lr=3e-3,
                                                seed=0))
    return enc


@pytest.fixture(scope="session")
def cheap_latent_run(cheap_corpus, cheap_ccfg, cheap_ae, cheap_encoder):
    cfg = StageConfig(steps=60, batch=4, d_c=16, seed=0)
    dit, comp, art = train_latent_generator(
        cheap_corpus, cheap_ccfg, cheap_ae, cheap_encoder, cfg
    )
    comp.freeze()
    return dit, comp, art


@pytest.fixture(scope="session")
def cheap_sem_run(cheap_corpus, cheap_ccfg, cheap_encoder, cheap_latent_run):
    # long enough that sampled moments sit inside the oracle gate
    _, comp, _ = cheap_latent_run
    cfg = StageConfig(steps=3000, batch=4, d_c=16, seed=0)
    dit, art = train_semantic_generator(
        cheap_corpus, cheap_ccfg, cheap_encoder, comp, cfg
    )
    return dit, art
