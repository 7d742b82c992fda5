"""Shared fixtures: bundled data paths and a session-scoped preprocessed
workspace (entity DB, blocking DB, trained short-name model)."""

import random
from importlib.resources import files
from pathlib import Path

import pytest

from rlink import shortname as sn
from rlink.entity_store import DatasetSchema
from rlink.pipeline import Linker, LinkerConfig, preprocess


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return Path(str(files("rlink") / "data"))


@pytest.fixture(scope="session")
def corpus_schema() -> DatasetSchema:
    return DatasetSchema({c: c for c in
                          ("name", "street", "city", "postal", "country", "sic")})


@pytest.fixture(scope="session")
def shortname_split(data_dir):
    """Bundled labeled corpus shuffled into an 80/20 train/test split."""
    corpus = sn.load_corpus(data_dir / "shortname_corpus.txt")
    rng = random.Random(13)
    idx = list(range(len(corpus)))
    rng.shuffle(idx)
    cut = int(0.8 * len(idx))
    return ([corpus[i] for i in idx[:cut]], [corpus[i] for i in idx[cut:]])


@pytest.fixture(scope="session")
def workspace(tmp_path_factory, data_dir, corpus_schema, shortname_split):
    """Preprocess the bundled 10k corpus once for the whole session."""
    ws = tmp_path_factory.mktemp("workspace")
    freq = sn.FrequencyTable.load(data_dir / "word_freq.tsv")
    train_set, _ = shortname_split
    model, losses = sn.train(train_set, freq)
    model.write(ws / "model.bin")

    config = LinkerConfig(
        gazetteer=str(data_dir / "gazetteer.csv"),
        shortname_model=str(ws / "model.bin"),
        frequency_table=str(data_dir / "word_freq.tsv"),
    )
    config.save(ws / "config.yaml")
    with open(data_dir / "corpus.csv", encoding="utf-8") as fh:
        stats = preprocess(fh, corpus_schema, config, ws)
    return {"dir": ws, "config": config, "stats": stats,
            "training_losses": losses}


@pytest.fixture(scope="session")
def linker(workspace) -> Linker:
    return Linker(workspace["config"], workspace["dir"])
