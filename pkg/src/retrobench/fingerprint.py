"""Morgan-style circular fingerprints, Tanimoto similarity, Butina clustering.

Bit positions come from a splitmix64-style avalanche of integer-encoded atom
environments, folded modulo the fingerprint width. The mixing constants are
frozen: fingerprints must stay bit-identical across versions. Every
refinement round contributes its bits, so a radius-r fingerprint is always a
superset of the radius-0 one for the same molecule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .molgraph import MolGraph, ring_membership

_MASK64 = (1 << 64) - 1


def _avalanche(x: int) -> int:
    # splitmix64 finalizer
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _mix(h: int, value: int) -> int:
    return _avalanche((h * 0x9E3779B97F4A7C15 + value) & _MASK64)


def _check_width(width: int) -> None:
    if width < 64 or width & (width - 1):
        raise ValueError(f"fingerprint width must be a power of two >= 64, got {width}")


@dataclass(frozen=True)
class Fingerprint:
    """Fixed-width bit vector stored as an int mask plus a popcount cache."""

    bits: int
    width: int
    nbits_set: int

    @classmethod
    def from_indices(cls, indices: Sequence[int], width: int) -> "Fingerprint":
        _check_width(width)
        mask = 0
        for index in indices:
            if not 0 <= index < width:
                raise ValueError(f"bit index {index} outside width {width}")
            mask |= 1 << index
        return cls(bits=mask, width=width, nbits_set=mask.bit_count())

    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.width) if self.bits >> i & 1)


def morgan_fingerprint(mol: MolGraph, radius: int = 2, nbits: int = 1024) -> Fingerprint:
    """Hash circular atom environments of radius 0..radius into nbits bits.

    The round-0 atom invariant is (element, charge, heavy-atom degree,
    explicit hydrogens, aromatic flag, in-ring flag); each later round mixes
    an atom's code with its neighbors' previous-round codes sorted together
    with the connecting bond order, which keeps the result atom-order
    invariant.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    _check_width(nbits)
    ring_atoms, _ = ring_membership(mol)
    adjacency = mol.adjacency
    bonds = mol.bonds

    env: list[int] = []
    for i, atom in enumerate(mol.atoms):
        h = _avalanche(int.from_bytes(atom.element.encode("ascii"), "big"))
        h = _mix(h, atom.charge + 16)
        h = _mix(h, len(adjacency[i]))
        h = _mix(h, atom.hydrogens)
        h = _mix(h, int(atom.aromatic))
        h = _mix(h, int(i in ring_atoms))
        env.append(h)

    mask = 0
    for h in env:
        mask |= 1 << (h % nbits)
    for _ in range(radius):
        nxt = []
        for i in range(len(env)):
            h = env[i]
            for order, neighbor_id in sorted(
                (bonds[bond_index].order, env[j]) for j, bond_index in adjacency[i]
            ):
                h = _mix(h, order)
                h = _mix(h, neighbor_id)
            nxt.append(h)
        env = nxt
        for h in env:
            mask |= 1 << (h % nbits)
    return Fingerprint(bits=mask, width=nbits, nbits_set=mask.bit_count())


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """Intersection over union of set bits; 1.0 when both vectors are empty."""
    if a.width != b.width:
        raise ValueError(f"fingerprint widths differ: {a.width} != {b.width}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union


@dataclass(frozen=True)
class Cluster:
    centroid: int
    members: tuple[int, ...]  # sorted ascending, centroid included


@dataclass(frozen=True)
class Clustering:
    clusters: tuple[Cluster, ...]

    def assignment(self) -> dict[int, int]:
        """Item index -> position of its cluster in self.clusters."""
        out: dict[int, int] = {}
        for pos, cluster in enumerate(self.clusters):
            for member in cluster.members:
                out[member] = pos
        return out


def butina_cluster(
    n_items: int, distance: Callable[[int, int], float], cutoff: float
) -> Clustering:
    """Sphere-exclusion clustering over a symmetric distance oracle.

    Neighbor lists hold pairs at distance <= cutoff. Each round claims the
    unassigned item with the most unassigned neighbors (ties to the lowest
    index) as centroid, together with those neighbors; items whose neighbors
    are all taken end up as singletons.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    neighbors: list[list[int]] = [[] for _ in range(n_items)]
    for i in range(n_items):
        for j in range(i + 1, n_items):
            if distance(i, j) <= cutoff:
                neighbors[i].append(j)
                neighbors[j].append(i)

    unassigned = set(range(n_items))
    clusters: list[Cluster] = []
    while unassigned:
        centroid, best = -1, -1
        for i in range(n_items):
            if i not in unassigned:
                continue
            count = sum(1 for j in neighbors[i] if j in unassigned)
            if count > best:
                centroid, best = i, count
        members = sorted(
            [centroid] + [j for j in neighbors[centroid] if j in unassigned]
        )
        unassigned.difference_update(members)
        clusters.append(Cluster(centroid=centroid, members=tuple(members)))
    return Clustering(clusters=tuple(clusters))


def cluster_fingerprints(fps: Sequence[Fingerprint], cutoff: float = 0.6) -> Clustering:
    """Butina clustering of molecules at distance 1 - tanimoto."""
    return butina_cluster(len(fps), lambda i, j: 1.0 - tanimoto(fps[i], fps[j]), cutoff)
