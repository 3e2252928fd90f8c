"""Walk one search end to end on a hand-checkable toy network.

Ethyl acetate can be made from acetic acid (the common route) or from
acetyl chloride (the impatient one), and either way the ethanol can itself
be made from acetaldehyde or from ethylene. A frequency table over those
five reactions is enough to watch the search rank all four assemblies by
cost, prune the dead-end nitrile disconnection, and cluster the results.

Run: python3 demos/plan_esterification.py
"""

import os
import tempfile

from retrobench.molgraph import canonicalize
from retrobench.predictor import build_table_predictor
from retrobench.retrostar import SearchConfig, route_cost, search
from retrobench.routes import cluster_routes, route_leaves, route_ted

REACTIONS = """\
CCOC(C)=O\tCC(=O)O.CCO\t6
CCOC(C)=O\tCC(=O)Cl.CCO\t3
CCOC(C)=O\tCC#N\t1
CCO\tCC=O\t4
CCO\tC=C\t1
"""

STOCK = ["CC(=O)O", "CC(=O)Cl", "CC=O", "C=C", "O"]


def show(route, index):
    def walk(mol, indent):
        mark = "stock" if mol.in_stock else "make "
        print(f"    {'  ' * indent}{mark} {mol.molecule}")
        if mol.reaction is not None:
            for child in mol.reaction.children:
                walk(child, indent + 1)

    print(f"  route {index}: cost {route_cost(route):.4f}, "
          f"leaves {sorted(route_leaves(route))}")
    walk(route.root, 0)


def main():
    fd, table = tempfile.mkstemp(suffix=".tsv")
    with os.fdopen(fd, "w", encoding="utf-8") as handle:
        handle.write(REACTIONS)

    predictor = build_table_predictor(table)
    stock = frozenset(canonicalize(s) for s in STOCK)
    target = canonicalize("CCOC(C)=O")

    result = search(target, predictor, stock, SearchConfig(iteration_limit=50))
    predictor.close()
    os.unlink(table)

    print(f"target {target}: solved={result.solved} "
          f"after {result.iterations_used} iterations "
          f"({result.model_calls} model calls, {result.termination})")
    for i, route in enumerate(result.routes, 1):
        show(route, i)

    # The acid and chloride assemblies differ by one leaf, so their edit
    # distance is small; at cutoff 0.5 everything lands in one cluster.
    raw, norm = route_ted(result.routes[0], result.routes[1])
    print(f"\n  ted(route 1, route 2) = {raw:.3f} raw, {norm:.4f} normalized")
    clustering = cluster_routes(result.routes, cutoff=0.5)
    for cluster in clustering.clusters:
        print(f"  cluster around route {cluster.centroid + 1}: "
              f"members {[m + 1 for m in cluster.members]}")


if __name__ == "__main__":
    main()
