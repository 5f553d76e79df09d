import pytest
import torch

from enco.corpus import KGDSample, KnowledgeTriple, Utterance, build_vocab
from enco.entity import EntityInventory
from enco.kge import TransRConfig, train_transr
from enco.model import KGDModel, ModelConfig
from enco.posgen import RulePhraser


@pytest.fixture
def inventory():
    return EntityInventory({
        "PERSON": {"Leonardo", "DiCaprio", "Nolan"},
        "FILM": {"Titanic", "Inception"},
        "CITY": {"New York", "New"},
    })


@pytest.fixture
def sample():
    return KGDSample(
        sample_id="s1",
        context=(
            Utterance.make("A", "Do you know Leonardo?"),
            Utterance.make("B", "Sure, he starred in Titanic."),
            Utterance.make("A", "Who directed Inception?"),
        ),
        knowledge=(
            KnowledgeTriple("Leonardo", "starred_in", "Titanic"),
            KnowledgeTriple("Nolan", "directed", "Inception"),
        ),
        response=Utterance.make("B", "Nolan directed Inception."),
    )


@pytest.fixture
def identity_phraser():
    return RulePhraser()


@pytest.fixture
def vocab(sample):
    return build_vocab([sample])


@pytest.fixture
def kge_params(sample):
    params, _ = train_transr(
        sample.knowledge, TransRConfig(dim_entity=8, dim_relation=8, epochs=5, seed=0)
    )
    return params


@pytest.fixture
def tiny_model(vocab, kge_params):
    torch.manual_seed(0)
    cfg = ModelConfig(
        vocab_size=len(vocab), d_model=16, n_enc_layers=1, n_dec_layers=1,
        n_fusion_heads=2, n_heads=2, ffn_dim=32, kge_dim=kge_params.triple_dim,
    )
    return KGDModel(cfg)
