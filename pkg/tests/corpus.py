"""Shared molecule corpus for parser/canonicalization tests.

Hand-picked structures cover the grammar (charges, isotopes, stereo marks,
fused rings, multi-fragment inputs); the scaffold x substituent grid pushes
the corpus size past 100 without hand-writing every string.
"""

_LITERALS = [
    "C",
    "CC",
    "CCO",
    "OCC",
    "C=C",
    "C#N",
    "CC(=O)O",
    "CC(C)C",
    "C(C)(C)(C)C",
    "CC(C)(C)O",
    "CCCCCCCC",
    "CC(N)C(=O)O",
    "NCC(=O)O",
    "OCC(O)CO",
    "c1ccccc1",
    "C1=CC=CC=C1",
    "c1ccncc1",
    "c1ccoc1",
    "c1ccsc1",
    "c1cc[nH]c1",
    "Oc1ccccc1",
    "Nc1ccccc1",
    "Clc1ccccc1",
    "FC(F)(F)c1ccccc1",
    "CC1CCCCC1",
    "C1CC1",
    "C1CCC1",
    "C1CCCCC1",
    "C1CCOC1",
    "C1CCNC1",
    "c1ccc2ccccc2c1",
    "c1ccc2[nH]ccc2c1",
    "C1CC2CCC1CC2",
    "CC12CCC(CC1)CC2",
    "C1CC11CCC1",
    "[NH4+]",
    "[O-]C(=O)C",
    "[O-]C(=O)c1ccccc1",
    "[13CH4]",
    "[2H]OC",
    "[C@@H](N)(C)O",
    "N[C@H](C)O",
    "N[C@@H](C)C(=O)O",
    "F/C=C/F",
    "F/C=C\\F",
    "C/C=C/C=C/C",
    "CCO.OCC",
    "[Na+].[Cl-]",
    "[K+].[O-]S(=O)(=O)[O-].[K+]",
    "O=C(O)c1ccccc1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1CCC[C@H]1c1cccnc1",
    "c1ccc(-c2ccccc2)cc1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "C%10CC%10",
    "C%12CCCC%12",
    "*CC",
    "[Se]1CCCC1",
    "c1cc[se]c1",
    "B(O)(O)c1ccccc1",
    "[nH+]1ccccc1",
    "S=C=S",
    "N#Cc1ccccc1",
    "O=[N+]([O-])c1ccccc1",
]

_SCAFFOLDS = [
    "c1ccc({sub})cc1",
    "c1ccnc({sub})c1",
    "C1CCC({sub})CC1",
    "CC(C){sub}",
    "O=C({sub})N",
    "CC(=O){sub}",
    "OCC{sub}",
    "C1CC1{sub}",
]

_SUBSTITUENTS = [
    "O",
    "N",
    "F",
    "Cl",
    "Br",
    "C",
    "CC",
    "C#N",
    "C(F)(F)F",
    "OC",
]

CORPUS: list[str] = list(
    dict.fromkeys(
        list(_LITERALS)
        + [scaffold.format(sub=sub) for scaffold in _SCAFFOLDS for sub in _SUBSTITUENTS]
    )
)
