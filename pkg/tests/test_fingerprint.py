"""Fingerprint, similarity, and clustering behavior."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpus import CORPUS
from oracles import random_distance_matrix, reference_sphere_exclusion
from retrobench.fingerprint import (
    Fingerprint,
    butina_cluster,
    cluster_fingerprints,
    morgan_fingerprint,
    tanimoto,
)
from retrobench.molgraph import parse_smiles, permute_atoms


def test_single_atom_sets_at_least_one_bit():
    fp = morgan_fingerprint(parse_smiles("C"), radius=0, nbits=1024)
    assert fp.nbits_set >= 1
    assert fp.width == 1024


def test_fingerprint_is_permutation_invariant():
    rng = random.Random(11)
    for text in CORPUS[::4]:
        mol = parse_smiles(text)
        fp = morgan_fingerprint(mol)
        for _ in range(5):
            order = list(range(len(mol.atoms)))
            rng.shuffle(order)
            assert morgan_fingerprint(permute_atoms(mol, order)) == fp


def test_same_molecule_same_bits_different_molecule_different_bits():
    assert morgan_fingerprint(parse_smiles("CCO")) == morgan_fingerprint(parse_smiles("OCC"))
    assert morgan_fingerprint(parse_smiles("CCO")) != morgan_fingerprint(parse_smiles("CCC"))


def test_higher_radius_bits_are_a_superset():
    for text in CORPUS[::5]:
        mol = parse_smiles(text)
        base = morgan_fingerprint(mol, radius=0)
        wide = morgan_fingerprint(mol, radius=2)
        assert base.bits | wide.bits == wide.bits


def test_parameter_validation():
    mol = parse_smiles("CCO")
    with pytest.raises(ValueError):
        morgan_fingerprint(mol, radius=-1)
    with pytest.raises(ValueError):
        morgan_fingerprint(mol, nbits=100)
    with pytest.raises(ValueError):
        morgan_fingerprint(mol, nbits=32)
    with pytest.raises(ValueError):
        Fingerprint.from_indices([70], width=64)


def test_tanimoto_arithmetic():
    fp = morgan_fingerprint(parse_smiles("CC(=O)O"))
    assert tanimoto(fp, fp) == 1.0
    a = Fingerprint.from_indices([1, 2], 64)
    b = Fingerprint.from_indices([2, 3], 64)
    assert tanimoto(a, b) == pytest.approx(1 / 3)
    assert tanimoto(a, Fingerprint.from_indices([9, 10], 64)) == 0.0
    empty = Fingerprint.from_indices([], 64)
    assert tanimoto(empty, empty) == 1.0
    with pytest.raises(ValueError):
        tanimoto(a, Fingerprint.from_indices([1], 128))


def test_butina_identical_items_form_one_cluster():
    clustering = butina_cluster(6, lambda i, j: 0.0, cutoff=0.5)
    assert len(clustering.clusters) == 1
    assert clustering.clusters[0].centroid == 0
    assert clustering.clusters[0].members == tuple(range(6))


def test_butina_distant_items_stay_singletons():
    clustering = butina_cluster(5, lambda i, j: 1.0, cutoff=0.3)
    assert [c.members for c in clustering.clusters] == [(i,) for i in range(5)]


def test_butina_five_point_hand_case():
    # 0,1,2 mutually close; 3 reaches only 2; 4 isolated. Item 2 has the
    # largest sphere, so the first cluster is {0,1,2,3} and 4 is a singleton.
    matrix = [
        [0.0, 0.2, 0.3, 0.9, 0.9],
        [0.2, 0.0, 0.35, 0.9, 0.9],
        [0.3, 0.35, 0.0, 0.3, 0.9],
        [0.9, 0.9, 0.3, 0.0, 0.9],
        [0.9, 0.9, 0.9, 0.9, 0.0],
    ]
    clustering = butina_cluster(5, lambda i, j: matrix[i][j], cutoff=0.4)
    got = [(c.centroid, c.members) for c in clustering.clusters]
    assert got == [(2, (0, 1, 2, 3)), (4, (4,))]
    assert got == reference_sphere_exclusion(matrix, 0.4)


def test_butina_matches_stepwise_reference_on_random_matrices():
    rng = random.Random(404)
    for _ in range(60):
        n = rng.randrange(2, 13)
        matrix = random_distance_matrix(rng, n)
        cutoff = rng.randrange(21) / 20
        clustering = butina_cluster(n, lambda i, j: matrix[i][j], cutoff)
        got = [(c.centroid, c.members) for c in clustering.clusters]
        assert got == reference_sphere_exclusion(matrix, cutoff)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_butina_partition_and_radius_properties(data):
    n = data.draw(st.integers(min_value=1, max_value=10))
    rng = random.Random(data.draw(st.integers(min_value=0, max_value=10**6)))
    matrix = random_distance_matrix(rng, n)
    cutoff = data.draw(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
    clustering = butina_cluster(n, lambda i, j: matrix[i][j], cutoff)
    seen = [m for c in clustering.clusters for m in c.members]
    assert sorted(seen) == list(range(n))  # coverage
    assert len(seen) == len(set(seen))  # disjointness
    for cluster in clustering.clusters:
        assert cluster.centroid in cluster.members
        for member in cluster.members:
            assert matrix[cluster.centroid][member] <= cutoff


def test_cluster_fingerprints_groups_identical_molecules():
    fps = [morgan_fingerprint(parse_smiles(s)) for s in ["CCO", "OCC", "c1ccccc1"]]
    clustering = cluster_fingerprints(fps, cutoff=0.3)
    assignment = clustering.assignment()
    assert assignment[0] == assignment[1]
    assert assignment[0] != assignment[2]
