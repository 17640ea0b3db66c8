import numpy as np
import pytest

from roft.data import Dataset, Molecule
from roft.model import GinConfig, init_params


def make_molecule(mol_id, n_nodes, feat_dim, rng, labels, scaffold=None):
    feats = rng.normal(size=(n_nodes, feat_dim))
    directed = []
    for v in range(1, n_nodes):
        u = int(rng.integers(0, v))
        directed.append((u, v))
        directed.append((v, u))
    edges = (
        np.asarray(directed, dtype=np.int64)
        if directed
        else np.zeros((0, 2), dtype=np.int64)
    )
    return Molecule(
        mol_id=mol_id,
        node_feats=feats,
        edges=edges,
        labels=np.asarray(labels, dtype=np.float64),
        scaffold=scaffold,
    )


def make_classification_dataset(n=60, feat_dim=4, tasks=1, seed=0, margin=0.7):
    """Labels follow a hidden linear rule of the mean features.  Molecules too
    close to the threshold are resampled (clean separability) and task 0
    alternates classes, so every slice of reasonable size carries both."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(tasks, feat_dim))
    scale = np.linalg.norm(w, axis=1)
    mols = []
    for i in range(n):
        size = int(rng.integers(3, 8))
        want = i % 2
        for _ in range(200):
            mol = make_molecule(f"m{i:03d}", size, feat_dim, rng, np.zeros(tasks), f"scf{i % 5}")
            z = w @ mol.node_feats.mean(axis=0)
            clear = np.all(np.abs(z) >= margin * scale / np.sqrt(size))
            if clear and (z[0] > 0) == bool(want):
                break
        mol.labels = (z > 0).astype(np.float64)
        mols.append(mol)
    return Dataset(molecules=mols, task_count=tasks, task_kind="classification")


@pytest.fixture
def small_arch():
    return GinConfig(feat_dim=4, hidden_dim=8, num_layers=3)


@pytest.fixture
def small_dataset():
    return make_classification_dataset()


@pytest.fixture
def checkpoint_pair(small_arch):
    """Two encoder-only parameter sets standing in for (pretrained, fine-tuned)."""
    return init_params(small_arch, seed=11), init_params(small_arch, seed=22)
