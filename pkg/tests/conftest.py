import numpy as np
import pytest

from kcl.elementkg import ElementKG, Entity, Triple, load_reference_kg
from kcl.kgembed import RotateConfig, train_rotate
from kcl.smiles import parse_smiles, read_corpus
from kcl.elementkg import bundled_path

TOY_ELEMENTS = ["H", "C", "N", "O", "F", "S", "P"]
TOY_TRIPLES = [("A0", "r1", 0), ("A0", "r2", 1), ("A0", "r3", 2), ("A1", "r1", 3),
               ("A1", "r2", 4), ("A1", "r3", 5), ("A2", "r1", 6), ("A2", "r2", 0),
               ("A2", "r3", 3), ("A2", "r4", 5)]


def make_toy_kg() -> ElementKG:
    """3 attributes + 7 elements = 10 entities, 4 relations, 10 triples."""
    ents = {f"A{i}": Entity(f"A{i}", "attribute") for i in range(3)}
    ents.update({e: Entity(e, "element") for e in TOY_ELEMENTS})
    triples = [Triple(h, r, TOY_ELEMENTS[t]) for h, r, t in TOY_TRIPLES]
    return ElementKG(ents, tuple(triples))


@pytest.fixture
def toy_kg():
    return make_toy_kg()


@pytest.fixture(scope="session")
def ref_kg():
    return load_reference_kg()


@pytest.fixture(scope="session")
def ref_emb(ref_kg):
    return train_rotate(ref_kg, RotateConfig(epochs=5, seed=0))


@pytest.fixture(scope="session")
def bundled_smiles():
    return [s for s, _ in read_corpus(bundled_path("molecules.tsv"))]


@pytest.fixture(scope="session")
def bundled_mols(bundled_smiles):
    return [parse_smiles(s) for s in bundled_smiles]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
