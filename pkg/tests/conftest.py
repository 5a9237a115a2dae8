import numpy as np
import pytest

from embedding import train_embeddings
from ontology import Ontology, make_concept
from synthcorpus import NoiseConfig, generate_corpus, generate_ontology
from textprep import Record, SeparatorConfig


@pytest.fixture
def sep_cfg():
    return SeparatorConfig()


@pytest.fixture
def small_ontology():
    return Ontology(
        [
            make_concept("C001", "chest pain", ["cp", "pain in chest"]),
            make_concept("C002", "fever", ["febrile", "fevers"]),
            make_concept("C003", "nausea and vomiting", ["n/v"]),
            make_concept("C004", "back pain", ["lower back pain"]),
            make_concept("C005", "neck pain", ["sore neck"]),
            make_concept("C006", "headache", ["ha", "head ache"]),
        ]
    )


@pytest.fixture
def small_corpus():
    texts = [
        "chest pain/fever",
        "fever, cough",
        "n/v x3 days",
        "chest pian",
        "back pain since yesterday",
        "headache; fevers",
        "neck/back pain",
        "severe chest pain since am",
        "febrile + cp",
        "head ache and fever",
    ]
    return [Record(f"r{i:02d}", text) for i, text in enumerate(texts)]


@pytest.fixture
def tiny_embeddings(small_corpus):
    return train_embeddings(
        small_corpus * 3, dim=16, epochs=2, window=2, seed=7, bucket=1 << 12, batch_size=64
    )


@pytest.fixture
def synth_ontology():
    ont, _ = generate_ontology(20, synonyms_per=2, seed=11)
    return ont


@pytest.fixture
def clean_gold(synth_ontology):
    noise = NoiseConfig.zero(entities_per_record=(0.4, 0.4, 0.2))
    records, gold = generate_corpus(synth_ontology, 60, noise, seed=5)
    return records, gold


@pytest.fixture
def rng():
    return np.random.default_rng(0)


TINY_CONFIG = """\
[General]
seed = 3

[Embedding]
dim = 16
epochs = 1
window = 2
bucket = 4096

[Tagger]
epochs = 2
finetune_epochs = 1
hash_buckets = 4096

[Linker]
epochs = 2
hidden_dim = 8
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return str(path)
