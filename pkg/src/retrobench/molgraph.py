"""Molecular graphs from a SMILES subset, plus canonical identity keys.

The parser covers the organic subset, bracket atoms, branches, ring
closures (including %nn), dot-separated fragments, bond symbols
``- = # : / \\`` and chirality tags ``@``/``@@``.  Aromatic lowercase
atoms are a distinct atom class: no aromaticity perception or
kekulization is attempted, so ``c1ccccc1`` and ``C1=CC=CC=C1`` are
different molecules on purpose.  Hydrogens exist only where written
explicitly inside brackets.  Stereo markers are carried as plain,
undirected labels with no geometric meaning.  Bracket atom-class
suffixes (``:n``) are parsed and dropped: they are bookkeeping for
reaction atom maps, not structure.  Bracket fields are range-limited
(charge -16..+15, hydrogens 0..15, isotope 0..1023) so atom properties
pack into one integer; values outside chemistry-plausible ranges are
rejected with a parse error.

Canonical keys are canonical SMILES strings.  Atom ranks come from
iterative neighbourhood refinement; remaining symmetric atoms are
resolved exhaustively by isolating each candidate in turn and keeping
the ordering with the smallest adjacency certificate, so any atom
ordering of the same labeled graph yields the same key.  Multi-fragment
inputs canonicalize fragment-wise and join the sorted pieces with dots.

Bulk loaders call :func:`canonicalize`, which skips the MolGraph
wrapper; keys here are the throughput bottleneck for million-line
stock files, hence the packed-integer fast paths below.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

__all__ = [
    "Atom",
    "Bond",
    "MolGraph",
    "ParseError",
    "canonical_key",
    "canonicalize",
    "parse_smiles",
    "permute_atoms",
    "ring_membership",
    "write_canonical_smiles",
]

BOND_SINGLE = 1
BOND_DOUBLE = 2
BOND_TRIPLE = 3
BOND_AROMATIC = 5

_ELEMENTS = frozenset(
    """H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe
    Co Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn
    Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W
    Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf
    Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og""".split()
)

# Element codes ordered like the element strings, so the packed-integer
# invariant fast path and the wide tuple fallback rank atoms identically.
_ELEM_CODE = {name: code for code, name in enumerate(sorted(_ELEMENTS | {"*"}))}

# Lowercase spellings accepted as aromatic atoms.  Bare aromatic atoms
# are limited to the organic subset; brackets additionally allow the
# two-letter metalloids that appear in aromatic rings.
_AROMATIC_BARE = frozenset("bcnops")
_AROMATIC_BRACKET = frozenset(["b", "c", "n", "o", "p", "s", "se", "as", "te"])

# Elements writable without brackets when uncharged and unannotated.
_ORGANIC_SUBSET = frozenset(["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "*"])

_BOND_CHARS = {
    "-": (BOND_SINGLE, 0),
    "=": (BOND_DOUBLE, 0),
    "#": (BOND_TRIPLE, 0),
    ":": (BOND_AROMATIC, 0),
    "/": (BOND_SINGLE, 1),
    "\\": (BOND_SINGLE, 2),
}

_STEREO_LABEL = {0: None, 1: "/", 2: "\\"}
_STEREO_CODE = {None: 0, "/": 1, "\\": 2}
_CHIRAL_LABEL = {0: None, 1: "@", 2: "@@"}
_CHIRAL_CODE = {None: 0, "@": 1, "@@": 2}

# Atom properties packed into one int, low to high: aromatic flag (1 bit),
# chirality (2), isotope (10), hydrogens (4), charge+16 (5).
_PROPS_BARE = 16 << 17
_PROPS_BARE_AROM = _PROPS_BARE | 1


def _pack_props(charge: int, hydrogens: int, isotope: int, chiral: int, aromatic: int) -> int:
    return ((((charge + 16) << 4 | hydrogens) << 10 | isotope) << 2 | chiral) << 1 | aromatic


class ParseError(ValueError):
    """SMILES rejection with the byte offset of the offending token."""

    def __init__(self, message: str, text: str, offset: int):
        # Offsets are reported in bytes of the UTF-8 encoding; for the
        # ASCII inputs SMILES uses in practice this equals the character
        # index.
        byte_offset = len(text[:offset].encode("utf-8", errors="surrogatepass"))
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.offset = byte_offset


@dataclass(frozen=True)
class Atom:
    """One heavy atom (or bracket hydrogen) as written, no inference."""

    element: str
    charge: int = 0
    hydrogens: int = 0
    aromatic: bool = False
    isotope: int | None = None
    chirality: str | None = None


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: int = BOND_SINGLE
    stereo: str | None = None


@dataclass(frozen=True)
class MolGraph:
    """Undirected labeled graph; atom indices follow input order."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    components: int

    def __len__(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per atom: (neighbour index, bond index) pairs in input order."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for bi, bond in enumerate(self.bonds):
            adj[bond.a].append((bond.b, bi))
            adj[bond.b].append((bond.a, bi))
        return tuple(tuple(entries) for entries in adj)


class _RawMol:
    """Parser output as parallel lists; the working form for canonicalization."""

    __slots__ = ("n", "elements", "props", "bonds", "adj", "dotted")

    def __init__(self) -> None:
        self.n = 0
        self.elements: list[str] = []
        self.props: list[int] = []  # packed per-atom fields, see _pack_props
        self.bonds: list[tuple[int, int, int, int]] = []  # a, b, order, stereo
        self.adj: list[list[tuple[int, int, int]]] = []  # per atom: (nbr, order, stereo)
        self.dotted = False


def _parse_bracket(s: str, i: int) -> tuple[int, str, int]:
    """Parse one [...] atom starting at the '['.

    Returns (index past ']', element symbol, packed properties).
    """
    n = len(s)
    j = i + 1
    isotope = 0
    while j < n and s[j].isdigit():
        isotope = isotope * 10 + int(s[j])
        j += 1
    if isotope > 1023:
        raise ParseError("isotope out of supported range 0..1023", s, i + 1)
    if j >= n:
        raise ParseError("unterminated bracket atom", s, i)
    ch = s[j]
    aromatic = False
    if ch == "*":
        element = "*"
        j += 1
    elif ch.islower():
        two = s[j : j + 2]
        if two in _AROMATIC_BRACKET:
            element, j = two.capitalize(), j + 2
        elif ch in _AROMATIC_BRACKET:
            element, j = ch.upper(), j + 1
        else:
            raise ParseError(f"unknown aromatic symbol {ch!r}", s, j)
        aromatic = True
    elif ch.isupper():
        two = s[j : j + 2]
        if len(two) == 2 and two[1].islower() and two in _ELEMENTS:
            element, j = two, j + 2
        elif ch in _ELEMENTS:
            element, j = ch, j + 1
        else:
            raise ParseError(f"unknown element symbol {ch!r}", s, j)
    else:
        raise ParseError("missing element symbol in bracket atom", s, j)

    chiral = 0
    if j < n and s[j] == "@":
        j += 1
        if j < n and s[j] == "@":
            chiral = 2
            j += 1
        else:
            chiral = 1
        if j < n and s[j].isalpha() and s[j] != "H":
            raise ParseError("unsupported chirality token", s, j)

    hydrogens = 0
    if j < n and s[j] == "H":
        hpos = j
        j += 1
        if j < n and s[j].isdigit():
            hydrogens = 0
            while j < n and s[j].isdigit():
                hydrogens = hydrogens * 10 + int(s[j])
                j += 1
        else:
            hydrogens = 1
        if hydrogens > 15:
            raise ParseError("hydrogen count out of supported range 0..15", s, hpos)

    charge = 0
    if j < n and s[j] in "+-":
        cpos = j
        sign = 1 if s[j] == "+" else -1
        mark = s[j]
        j += 1
        if j < n and s[j].isdigit():
            magnitude = 0
            while j < n and s[j].isdigit():
                magnitude = magnitude * 10 + int(s[j])
                j += 1
        else:
            magnitude = 1
            while j < n and s[j] == mark:
                magnitude += 1
                j += 1
        if j < n and s[j] in "+-":
            raise ParseError("invalid charge syntax", s, j)
        charge = sign * magnitude
        if not -16 <= charge <= 15:
            raise ParseError("charge out of supported range -16..+15", s, cpos)

    if j < n and s[j] == ":":
        j += 1
        if j >= n or not s[j].isdigit():
            raise ParseError("atom class expects digits", s, j)
        while j < n and s[j].isdigit():
            j += 1

    if j >= n or s[j] != "]":
        raise ParseError("expected ']' in bracket atom", s, j if j < n else n)

    return j + 1, element, _pack_props(charge, hydrogens, isotope, chiral, 1 if aromatic else 0)


def _parse_raw(text: str) -> _RawMol:
    s = text
    n = len(s)
    if n == 0:
        raise ParseError("empty SMILES", s, 0)

    raw = _RawMol()
    elements = raw.elements
    props = raw.props
    bonds = raw.bonds
    adj = raw.adj
    bond_seen: set[int] = set()  # packed atom pairs, duplicate-bond guard

    prev = -1
    pending: tuple[int, int] | None = None
    branch: list[tuple[int, int, int]] = []  # (prev atom, '(' offset, atom count)
    rings: dict[int, tuple[int, tuple[int, int] | None, int]] = {}

    def add_bond(a: int, b: int, order: int, stereo: int, offset: int) -> None:
        if a == b:
            raise ParseError("ring bond closes on its own atom", s, offset)
        key = (a << 24 | b) if a < b else (b << 24 | a)
        if key in bond_seen:
            raise ParseError("duplicate bond between the same atoms", s, offset)
        bond_seen.add(key)
        bonds.append((a, b, order, stereo))
        adj[a].append((b, order, stereo))
        adj[b].append((a, order, stereo))

    def add_atom(offset: int) -> None:
        nonlocal prev, pending
        adj.append([])
        idx = len(elements) - 1
        if prev >= 0:
            if pending is None:
                order = BOND_AROMATIC if (props[prev] & props[idx] & 1) else BOND_SINGLE
                stereo = 0
            else:
                order, stereo = pending
                pending = None
            add_bond(prev, idx, order, stereo, offset)
        prev = idx

    def close_ring(num: int, offset: int) -> None:
        nonlocal pending
        if prev < 0:
            raise ParseError("ring bond before any atom", s, offset)
        here = pending
        pending = None
        if num in rings:
            other, there, _ = rings.pop(num)
            if here is not None and there is not None and here != there:
                raise ParseError("conflicting bond symbols on ring closure", s, offset)
            spec = here if here is not None else there
            if spec is None:
                order = BOND_AROMATIC if (props[prev] & props[other] & 1) else BOND_SINGLE
                stereo = 0
            else:
                order, stereo = spec
            add_bond(other, prev, order, stereo, offset)
        else:
            rings[num] = (prev, here, offset)

    i = 0
    while i < n:
        c = s[i]
        if c == "C":
            if i + 1 < n and s[i + 1] == "l":
                elements.append("Cl")
                i += 2
            else:
                elements.append("C")
                i += 1
            props.append(_PROPS_BARE)
            add_atom(i - 1)
        elif c == "B":
            if i + 1 < n and s[i + 1] == "r":
                elements.append("Br")
                i += 2
            else:
                elements.append("B")
                i += 1
            props.append(_PROPS_BARE)
            add_atom(i - 1)
        elif c in "NOPSFI*":
            elements.append(c)
            props.append(_PROPS_BARE)
            i += 1
            add_atom(i - 1)
        elif c in _AROMATIC_BARE:
            elements.append(c.upper())
            props.append(_PROPS_BARE_AROM)
            i += 1
            add_atom(i - 1)
        elif c == "[":
            i, element, aprops = _parse_bracket(s, i)
            elements.append(element)
            props.append(aprops)
            add_atom(i - 1)
        elif "0" <= c <= "9":
            close_ring(int(c), i)
            i += 1
        elif c in _BOND_CHARS:
            if prev < 0:
                raise ParseError("bond symbol before any atom", s, i)
            if pending is not None:
                raise ParseError("two bond symbols in a row", s, i)
            pending = _BOND_CHARS[c]
            i += 1
        elif c == "(":
            if pending is not None:
                raise ParseError("bond symbol before '('", s, i)
            if prev < 0:
                raise ParseError("branch before any atom", s, i)
            if branch and len(elements) == branch[-1][2]:
                raise ParseError("expected atom after '('", s, i)
            branch.append((prev, i, len(elements)))
            i += 1
        elif c == ")":
            if pending is not None:
                raise ParseError("dangling bond before ')'", s, i)
            if not branch:
                raise ParseError("unmatched ')'", s, i)
            opened_prev, opened_at, count = branch.pop()
            if len(elements) == count:
                raise ParseError("empty branch", s, opened_at)
            prev = opened_prev
            i += 1
        elif c == ".":
            if branch:
                raise ParseError("dot inside a branch", s, i)
            if pending is not None:
                raise ParseError("dangling bond before '.'", s, i)
            if prev < 0:
                raise ParseError("dot without a preceding atom", s, i)
            raw.dotted = True
            prev = -1
            i += 1
        elif c == "%":
            if i + 2 >= n or not (s[i + 1].isdigit() and s[i + 2].isdigit()):
                raise ParseError("'%' ring bond expects two digits", s, i)
            close_ring(int(s[i + 1 : i + 3]), i)
            i += 3
        else:
            raise ParseError(f"unexpected character {c!r}", s, i)

    if branch:
        raise ParseError("unclosed branch", s, branch[-1][1])
    if rings:
        num, (_, _, offset) = next(iter(sorted(rings.items())))
        raise ParseError(f"unclosed ring bond {num}", s, offset)
    if pending is not None:
        raise ParseError("dangling bond at end of input", s, n - 1)
    if prev < 0:
        raise ParseError("expected an atom", s, n - 1)

    raw.n = len(elements)
    return raw


# ---------------------------------------------------------------------------
# Canonical form


def _components(raw: _RawMol, adj: list[list[tuple[int, int, int]]]) -> list[list[int]]:
    # SMILES without dots is connected by construction.
    if not raw.dotted:
        return [list(range(raw.n))]
    seen = [False] * raw.n
    comps: list[list[int]] = []
    for start in range(raw.n):
        if seen[start]:
            continue
        seen[start] = True
        queue = [start]
        comp = []
        while queue:
            a = queue.pop()
            comp.append(a)
            for b, _, _ in adj[a]:
                if not seen[b]:
                    seen[b] = True
                    queue.append(b)
        comp.sort()
        comps.append(comp)
    return comps


def _atom_token(raw: _RawMol, g: int) -> str:
    element = raw.elements[g]
    p = raw.props[g]
    if p == _PROPS_BARE and element in _ORGANIC_SUBSET:
        return element
    if p == _PROPS_BARE_AROM and element in _ORGANIC_SUBSET:
        return element.lower()
    charge = (p >> 17 & 31) - 16
    hydrogens = p >> 13 & 15
    isotope = p >> 3 & 1023
    chiral = p >> 1 & 3
    symbol = element.lower() if p & 1 else element
    parts = ["["]
    if isotope:
        parts.append(str(isotope))
    parts.append(symbol)
    if chiral:
        parts.append("@" if chiral == 1 else "@@")
    if hydrogens == 1:
        parts.append("H")
    elif hydrogens > 1:
        parts.append(f"H{hydrogens}")
    if charge == 1:
        parts.append("+")
    elif charge == -1:
        parts.append("-")
    elif charge > 0:
        parts.append(f"+{charge}")
    elif charge < 0:
        parts.append(f"-{-charge}")
    parts.append("]")
    return "".join(parts)


def _bond_token(order: int, stereo: int, arom_a: bool, arom_b: bool) -> str:
    if stereo:
        return "/" if stereo == 1 else "\\"
    if order == BOND_SINGLE:
        return "-" if (arom_a and arom_b) else ""
    if order == BOND_DOUBLE:
        return "="
    if order == BOND_TRIPLE:
        return "#"
    return "" if (arom_a and arom_b) else ":"


def _digit_token(d: int) -> str:
    return str(d) if d < 10 else f"%{d:02d}"


def _refine_packed(colors: list[int], pairs: list[list[tuple[int, int]]]) -> list[int]:
    """Colour refinement with signatures packed into single integers.

    Valid while colours fit in 9 bits: fragments hold at most 256 atoms,
    so dense colours use 8 bits and the tie-break isolation step may
    temporarily double them.  Bond codes are preshifted by 9 in
    ``pairs``.  Same-coloured atoms always share a degree (degree is part
    of the seed invariant), so the variable-length fold below never
    compares across lengths.
    """
    n = len(colors)
    nclasses = len(set(colors))
    while nclasses < n:
        sigs = []
        for i in range(n):
            row = [c | colors[j] for c, j in pairs[i]]
            if len(row) > 1:
                row.sort()
            sig = colors[i]
            for v in row:
                sig = (sig << 14) | v
            sigs.append(sig)
        remap = {sig: rank for rank, sig in enumerate(sorted(set(sigs)))}
        fresh = [remap[sig] for sig in sigs]
        if len(remap) == nclasses:
            return fresh
        colors = fresh
        nclasses = len(remap)
    return colors if max(colors) < n else _densify(colors)


def _refine_wide(colors: list[int], pairs: list[list[tuple[int, int]]]) -> list[int]:
    """Tuple-signature refinement for fragments too large to pack."""
    n = len(colors)
    nclasses = len(set(colors))
    while nclasses < n:
        sigs = []
        for i in range(n):
            row = sorted((c, colors[j]) for c, j in pairs[i])
            sigs.append((colors[i], tuple(row)))
        remap = {sig: rank for rank, sig in enumerate(sorted(set(sigs)))}
        fresh = [remap[sig] for sig in sigs]
        if len(remap) == nclasses:
            return fresh
        colors = fresh
        nclasses = len(remap)
    return colors if max(colors) < n else _densify(colors)


def _densify(colors: list[int]) -> list[int]:
    remap = {c: rank for rank, c in enumerate(sorted(set(colors)))}
    return [remap[c] for c in colors]


def _certificate(colors: list[int], pairs: list[list[tuple[int, int]]]) -> tuple:
    """Rank-ordered adjacency encoding used to compare tie-break candidates.

    Distinct candidate orderings of the same fragment refine the same
    seed partition, so per-rank atom invariants are constant across
    candidates and only the adjacency rows need comparing.  Rows at the
    same rank always fold the same number of entries, so the integer
    encoding compares soundly.
    """
    n = len(colors)
    rows = [0] * n
    for i in range(n):
        row = [c | colors[j] for c, j in pairs[i]]
        row.sort()
        sig = 0
        for v in row:
            sig = (sig << 14) | v
        rows[colors[i]] = sig
    return tuple(rows)


def _certificate_wide(colors: list[int], pairs: list[list[tuple[int, int]]]) -> tuple:
    n = len(colors)
    rows: list[tuple] = [()] * n
    for i in range(n):
        rows[colors[i]] = tuple(sorted((c, colors[j]) for c, j in pairs[i]))
    return tuple(rows)


def _branch_strings(
    raw: _RawMol,
    comp: list[int],
    ladj: list[list[tuple[int, int, int]]],
    par: list[int],
    pcode: list[int],
    order: list[int],
    start: int,
) -> list[str]:
    """Canonical text per subtree for a rooted forest, bottom-up.

    ``par``/``order`` describe the rooting from ``start`` onward; this
    fills in descendants breadth-first and then folds each subtree into
    its branch string (entering bond token included), sorting siblings by
    that text.  A branch string decodes the rooted subtree uniquely, so
    equal text means isomorphic branches and the sort is exact.
    """
    props = raw.props
    qi = start
    while qi < len(order):
        v = order[qi]
        qi += 1
        for j, o, st in ladj[v]:
            if par[j] == -2:
                par[j] = v
                pcode[j] = o * 3 + st
                order.append(j)
    branch = [""] * len(comp)
    for qi in range(len(order) - 1, -1, -1):
        v = order[qi]
        ks = [j for j, _, _ in ladj[v] if par[j] == v]
        if ks:
            if len(ks) == 1:
                body = _atom_token(raw, comp[v]) + branch[ks[0]]
            else:
                brs = sorted(branch[j] for j in ks)
                last = brs.pop()
                body = _atom_token(raw, comp[v]) + "".join(f"({b})" for b in brs) + last
        else:
            body = _atom_token(raw, comp[v])
        p = par[v]
        if p >= 0:
            o, st = divmod(pcode[v], 3)
            branch[v] = _bond_token(o, st, props[comp[p]] & 1, props[comp[v]] & 1) + body
        else:
            branch[v] = body
    return branch


def _canonical_tree(raw: _RawMol, comp: list[int], ladj: list[list[tuple[int, int, int]]]) -> str:
    """Exact canonical form for acyclic fragments.

    A rooted subtree's canonical text doubles as its sort key, so one
    bottom-up pass both orders siblings and writes.  Root at the tree
    centre; a bicentre tries both rootings and keeps the smaller string.
    """
    k = len(comp)

    deg = [len(row) for row in ladj]
    removed = [False] * k
    layer = [i for i in range(k) if deg[i] <= 1]
    remaining = k
    while remaining > 2:
        for v in layer:
            removed[v] = True
        remaining -= len(layer)
        nxt = []
        for v in layer:
            for j, _, _ in ladj[v]:
                if not removed[j]:
                    deg[j] -= 1
                    if deg[j] == 1:
                        nxt.append(j)
        layer = nxt
    centers = [i for i in range(k) if not removed[i]]

    def rooted(root: int) -> str:
        par = [-2] * k
        par[root] = -1
        return _branch_strings(raw, comp, ladj, par, [0] * k, [root], 0)[root]

    text = rooted(centers[0])
    if len(centers) == 2:
        other = rooted(centers[1])
        if other < text:
            return other
    return text


def _canonical_unicyclic(raw: _RawMol, comp: list[int], ladj: list[list[tuple[int, int, int]]]) -> str:
    """Exact canonical form for fragments with exactly one cycle.

    Pendant trees fold into branch strings rooted at the cycle; each cycle
    atom's label is its atom token plus its parenthesized pendant text;
    the cycle itself is canonicalized as a necklace by taking the smallest
    of all rotations in both directions.
    """
    k = len(comp)
    props = raw.props

    deg = [len(row) for row in ladj]
    removed = [False] * k
    layer = [i for i in range(k) if deg[i] == 1]
    while layer:
        nxt = []
        for v in layer:
            removed[v] = True
            for j, _, _ in ladj[v]:
                if not removed[j]:
                    deg[j] -= 1
                    if deg[j] == 1:
                        nxt.append(j)
        layer = nxt

    cycle = [v for v in range(k) if not removed[v]]
    par = [-2] * k
    pcode = [0] * k
    order: list[int] = []
    for v in cycle:
        par[v] = -1
    for v in cycle:
        for j, o, st in ladj[v]:
            if par[j] == -2:
                par[j] = v
                pcode[j] = o * 3 + st
                order.append(j)
    branch = _branch_strings(raw, comp, ladj, par, pcode, order, 0)
    atok = [""] * k
    pend = [""] * k
    label: list = [None] * k
    for v in cycle:
        atok[v] = _atom_token(raw, comp[v])
        ks = [j for j, _, _ in ladj[v] if par[j] == v]
        if ks:
            pend[v] = "".join(f"({b})" for b in sorted(branch[j] for j in ks))
        label[v] = (atok[v], pend[v])

    # Walk the cycle once, collecting vertex order and edge codes.
    c = len(cycle)
    w0 = cycle[0]
    walk = [w0]
    codes: list[int] = []
    prev, cur = -1, w0
    while True:
        for j, o, st in ladj[cur]:
            if not removed[j] and j != prev:
                step = (j, o * 3 + st)
                break
        j, code = step
        codes.append(code)
        if j == w0:
            break
        walk.append(j)
        prev, cur = cur, j

    # Smallest rotation over both directions; pairs are (vertex label,
    # code of the edge leaving it in walk direction).  Only rotations
    # starting at a minimal label can win, and a fully uniform necklace
    # needs no search at all.
    Lw = [label[v] for v in walk]
    mlab = min(Lw)
    starts = [i for i in range(c) if Lw[i] == mlab]
    if len(starts) == c and len(set(codes)) == 1:
        best_seq = tuple((Lw[t], codes[t]) for t in range(c))
        best_pick = (0, 1)
    else:
        best_seq = None
        best_pick = (0, 1)
        for s in starts:
            seq = tuple((Lw[(s + t) % c], codes[(s + t) % c]) for t in range(c))
            if best_seq is None or seq < best_seq:
                best_seq, best_pick = seq, (s, 1)
            seq = tuple((Lw[(s - t) % c], codes[(s - t - 1) % c]) for t in range(c))
            if seq < best_seq:
                best_seq, best_pick = seq, (s, -1)
    s, direction = best_pick
    ordered = [walk[(s + t * direction) % c] for t in range(c)]

    out: list[str] = []
    closure_order, closure_stereo = divmod(best_seq[c - 1][1], 3)
    for t in range(c):
        v = ordered[t]
        if t > 0:
            border, bstereo = divmod(best_seq[t - 1][1], 3)
            out.append(_bond_token(border, bstereo, props[comp[ordered[t - 1]]] & 1, props[comp[v]] & 1))
        out.append(atok[v])
        if t == 0:
            out.append(_bond_token(closure_order, closure_stereo, props[comp[ordered[-1]]] & 1, props[comp[v]] & 1))
            out.append("1")
        elif t == c - 1:
            out.append("1")
        out.append(pend[v])
    return "".join(out)


def _emit_tree(
    raw: _RawMol,
    comp: list[int],
    ladj: list[list[tuple[int, int, int]]],
    colors: list[int],
) -> str:
    """Single-pass writer for acyclic fragments: no ring digits possible."""
    props = raw.props
    order_of = sorted(range(len(comp)), key=colors.__getitem__)
    root = order_of[0]
    out: list[str] = []
    TEXT = -2
    work: list[tuple[int, int, int, int]] = [(root, 0, 0, -1)]
    while work:
        a, order, stereo, par = work.pop()
        if par == TEXT:
            out.append("(" if order == 0 else ")")
            continue
        if par >= 0:
            out.append(_bond_token(order, stereo, props[comp[par]] & 1, props[comp[a]] & 1))
        out.append(_atom_token(raw, comp[a]))
        kids = [e for e in ladj[a] if e[0] != par]
        if not kids:
            continue
        if len(kids) > 1:
            kids.sort(key=lambda e: colors[e[0]])
        last = len(kids) - 1
        for idx in range(last, -1, -1):
            b, border, bstereo = kids[idx]
            if idx == last:
                work.append((b, border, bstereo, a))
            else:
                work.append((0, 1, 0, TEXT))
                work.append((b, border, bstereo, a))
                work.append((0, 0, 0, TEXT))
    return "".join(out)


def _emit(
    raw: _RawMol,
    comp: list[int],
    ladj: list[list[tuple[int, int, int]]],
    colors: list[int],
) -> str:
    """Write one fragment as SMILES following the given total atom order."""
    k = len(comp)
    props = raw.props
    order_of = sorted(range(k), key=colors.__getitem__)
    root = order_of[0]
    nbrs = [sorted(ladj[i], key=lambda e: colors[e[0]]) for i in range(k)]

    # Pass 1: depth-first spanning tree plus ring closure edges.
    visit = [-1] * k
    visit[root] = 0
    clock = 1
    children: list[list[tuple[int, int, int]]] = [[] for _ in range(k)]
    ring_at: list[list[tuple[int, int, int]]] = [[] for _ in range(k)]
    ring_seen: set[tuple[int, int]] = set()
    stack: list[list[int]] = [[root, -1, 0]]
    while stack:
        top = stack[-1]
        a, par, ptr = top
        lst = nbrs[a]
        advanced = False
        while ptr < len(lst):
            b, order, stereo = lst[ptr]
            ptr += 1
            if visit[b] < 0:
                visit[b] = clock
                clock += 1
                children[a].append((b, order, stereo))
                top[2] = ptr
                stack.append([b, a, 0])
                advanced = True
                break
            if b != par:
                edge = (a, b) if a < b else (b, a)
                if edge not in ring_seen:
                    ring_seen.add(edge)
                    ring_at[a].append((b, order, stereo))
                    ring_at[b].append((a, order, stereo))
        if not advanced:
            top[2] = ptr
            if ptr >= len(lst):
                stack.pop()

    for entries in ring_at:
        if len(entries) > 1:
            entries.sort(key=lambda e: visit[e[0]])

    # Pass 2: emit tokens; ring digits open at the first-seen endpoint,
    # take the smallest free digit, and are reusable after closing.
    out: list[str] = []
    open_digits: dict[tuple[int, int], int] = {}
    free: list[int] = []
    next_digit = 1
    TEXT = -2
    work: list[tuple[int, int, int, int]] = [(root, 0, 0, -1)]
    while work:
        a, order, stereo, par = work.pop()
        if par == TEXT:
            out.append("(" if order == 0 else ")")
            continue
        if par >= 0:
            out.append(_bond_token(order, stereo, props[comp[par]] & 1, props[comp[a]] & 1))
        out.append(_atom_token(raw, comp[a]))
        for b, border, bstereo in ring_at[a]:
            edge = (a, b) if a < b else (b, a)
            if edge in open_digits:
                d = open_digits.pop(edge)
                out.append(_digit_token(d))
                heapq.heappush(free, d)
            else:
                if free:
                    d = heapq.heappop(free)
                else:
                    d = next_digit
                    next_digit += 1
                    if d > 99:
                        raise ValueError("more than 99 simultaneously open ring bonds")
                open_digits[edge] = d
                out.append(_bond_token(border, bstereo, props[comp[a]] & 1, props[comp[b]] & 1))
                out.append(_digit_token(d))
        kids = children[a]
        if not kids:
            continue
        last = len(kids) - 1
        for idx in range(last, -1, -1):
            b, border, bstereo = kids[idx]
            if idx == last:
                work.append((b, border, bstereo, a))
            else:
                work.append((0, 1, 0, TEXT))
                work.append((b, border, bstereo, a))
                work.append((0, 0, 0, TEXT))
    return "".join(out)


def _canonical_fragment(raw: _RawMol, adj: list[list[tuple[int, int, int]]], comp: list[int]) -> str:
    k = len(comp)
    if k == 1:
        return _atom_token(raw, comp[0])

    if k == raw.n:
        ladj = adj
    else:
        local = {g: i for i, g in enumerate(comp)}
        ladj = [[(local[b], order, stereo) for b, order, stereo in adj[g]] for g in comp]

    edges = len(raw.bonds) if k == raw.n else sum(len(r) for r in ladj) // 2
    acyclic = edges == k - 1
    if k <= 4096:
        if acyclic:
            return _canonical_tree(raw, comp, ladj)
        if edges == k:
            return _canonical_unicyclic(raw, comp, ladj)

    elements = raw.elements
    props = raw.props

    # Seed invariant: element, aromatic flag, charge, explicit H count,
    # isotope, chirality tag, degree.  Parsed atom fields are already
    # range-limited, so the packed form only needs degree < 16; otherwise
    # fall back to tuples with the same field order, which sort identically.
    packed_ok = k <= 256
    seeds: list = []
    if packed_ok:
        for idx, g in enumerate(comp):
            deg = len(ladj[idx])
            if deg > 15:
                packed_ok = False
                break
            p = props[g]
            seeds.append(((_ELEM_CODE[elements[g]] << 1 | (p & 1)) << 21 | (p >> 1)) << 4 | deg)
    if not packed_ok:
        seeds = [
            (
                _ELEM_CODE[elements[g]],
                props[g] & 1,
                (props[g] >> 17 & 31) - 16,
                props[g] >> 13 & 15,
                props[g] >> 3 & 1023,
                props[g] >> 1 & 3,
                len(ladj[idx]),
            )
            for idx, g in enumerate(comp)
        ]

    remap = {seed: rank for rank, seed in enumerate(sorted(set(seeds)))}
    colors = [remap[seed] for seed in seeds]

    if packed_ok:
        pairs = [[((order * 3 + stereo) << 9, j) for j, order, stereo in ladj[i]] for i in range(k)]
        refine = _refine_packed
        certificate = _certificate
    else:
        pairs = [[(order * 3 + stereo, j) for j, order, stereo in ladj[i]] for i in range(k)]
        refine = _refine_wide
        certificate = _certificate_wide

    colors = refine(colors, pairs)
    counts: dict[int, int] = {}
    for c in colors:
        counts[c] = counts.get(c, 0) + 1
    if len(counts) == k:
        return (_emit_tree if acyclic else _emit)(raw, comp, ladj, colors)

    # Exhaustive tie-break: isolate each member of the first tied class,
    # re-refine, recurse; keep the colouring with the smallest adjacency
    # certificate.  Equal certificates between two complete colourings
    # witness an automorphism; merging its cycles into a union-find lets
    # the top-level loop skip candidates already covered by symmetry.
    best: tuple[tuple, list[int]] | None = None
    uf = list(range(k))

    def find(x: int) -> int:
        while uf[x] != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    def leaf(ranks: list[int]) -> None:
        nonlocal best
        cert = certificate(ranks, pairs)
        if best is None or cert < best[0]:
            best = (cert, ranks)
        elif cert == best[0]:
            pos = [0] * k
            for i, r in enumerate(best[1]):
                pos[r] = i
            for u in range(k):
                ru, rv = find(u), find(pos[ranks[u]])
                if ru != rv:
                    uf[ru] = rv

    def descend(colors: list[int]) -> None:
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        tied = min((c for c, cnt in counts.items() if cnt > 1), default=None)
        if tied is None:
            leaf(colors)
            return
        for a in range(k):
            if colors[a] != tied:
                continue
            child = [2 * c + (1 if (c == tied and i != a) else 0) for i, c in enumerate(colors)]
            descend(refine(child, pairs))

    tied0 = min(c for c, cnt in counts.items() if cnt > 1)
    done: list[int] = []
    for a in range(k):
        if colors[a] != tied0:
            continue
        rep = find(a)
        if any(find(d) == rep for d in done):
            continue
        child = [2 * c + (1 if (c == tied0 and i != a) else 0) for i, c in enumerate(colors)]
        descend(refine(child, pairs))
        done.append(a)
    assert best is not None
    return _emit(raw, comp, ladj, best[1])


def _canonical_from_raw(raw: _RawMol) -> str:
    adj = raw.adj
    if not raw.dotted:
        return _canonical_fragment(raw, adj, list(range(raw.n)))
    comps = _components(raw, adj)
    if len(comps) == 1:
        return _canonical_fragment(raw, adj, comps[0])
    return ".".join(sorted(_canonical_fragment(raw, adj, comp) for comp in comps))


# ---------------------------------------------------------------------------
# Public API


def parse_smiles(text: str) -> MolGraph:
    """Parse SMILES text into a MolGraph; raises ParseError on bad input."""
    raw = _parse_raw(text)
    atoms = tuple(
        Atom(
            element=raw.elements[i],
            charge=(p >> 17 & 31) - 16,
            hydrogens=p >> 13 & 15,
            aromatic=bool(p & 1),
            isotope=(p >> 3 & 1023) or None,
            chirality=_CHIRAL_LABEL[p >> 1 & 3],
        )
        for i, p in enumerate(raw.props)
    )
    bonds = tuple(
        Bond(a=a, b=b, order=order, stereo=_STEREO_LABEL[stereo]) for a, b, order, stereo in raw.bonds
    )
    ncomp = len(_components(raw, raw.adj))
    return MolGraph(atoms=atoms, bonds=bonds, components=ncomp)


def _raw_from_mol(mol: MolGraph) -> _RawMol:
    raw = _RawMol()
    raw.n = len(mol.atoms)
    raw.dotted = mol.components > 1
    for atom in mol.atoms:
        iso = atom.isotope or 0
        if not (-16 <= atom.charge <= 15 and 0 <= atom.hydrogens <= 15 and 0 <= iso <= 1023):
            raise ValueError("atom fields outside supported ranges")
        raw.elements.append(atom.element)
        raw.props.append(
            _pack_props(atom.charge, atom.hydrogens, iso, _CHIRAL_CODE[atom.chirality], 1 if atom.aromatic else 0)
        )
        raw.adj.append([])
    for bond in mol.bonds:
        stereo = _STEREO_CODE[bond.stereo]
        raw.bonds.append((bond.a, bond.b, bond.order, stereo))
        raw.adj[bond.a].append((bond.b, bond.order, stereo))
        raw.adj[bond.b].append((bond.a, bond.order, stereo))
    return raw


def write_canonical_smiles(mol: MolGraph) -> str:
    """Canonical SMILES for the graph, invariant under atom reordering."""
    return _canonical_from_raw(_raw_from_mol(mol))


def canonical_key(mol: MolGraph) -> str:
    """Identity key for stock lookups and route comparison.

    The key is exactly the canonical SMILES string, so it is non-empty,
    parseable, and stable under round-trips.
    """
    return write_canonical_smiles(mol)


def canonicalize(text: str) -> str:
    """Parse and key in one step; the fast path for bulk stock loading."""
    return _canonical_from_raw(_parse_raw(text))


def permute_atoms(mol: MolGraph, order: list[int]) -> MolGraph:
    """Relabel atoms so new index i holds old atom order[i]; test helper."""
    if sorted(order) != list(range(len(mol.atoms))):
        raise ValueError("order must be a permutation of atom indices")
    inverse = [0] * len(order)
    for new, old in enumerate(order):
        inverse[old] = new
    atoms = tuple(mol.atoms[old] for old in order)
    bonds = tuple(
        Bond(a=inverse[b.a], b=inverse[b.b], order=b.order, stereo=b.stereo) for b in mol.bonds
    )
    return MolGraph(atoms=atoms, bonds=bonds, components=mol.components)


def ring_membership(mol: MolGraph) -> tuple[frozenset[int], frozenset[int]]:
    """Atoms and bonds that lie on some cycle, via bridge detection."""
    n = len(mol.atoms)
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    clock = 0
    for start in range(n):
        if disc[start] >= 0:
            continue
        disc[start] = low[start] = clock
        clock += 1
        stack: list[list[int]] = [[start, -1, 0]]
        while stack:
            top = stack[-1]
            a, pedge, ptr = top
            entries = mol.adjacency[a]
            advanced = False
            while ptr < len(entries):
                b, ei = entries[ptr]
                ptr += 1
                if ei == pedge:
                    continue
                if disc[b] < 0:
                    disc[b] = low[b] = clock
                    clock += 1
                    top[2] = ptr
                    stack.append([b, ei, 0])
                    advanced = True
                    break
                if disc[b] < low[a]:
                    low[a] = disc[b]
            if not advanced:
                top[2] = ptr
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    if low[a] < low[p]:
                        low[p] = low[a]
                    if low[a] > disc[p]:
                        bridges.add(pedge)
    ring_bonds = frozenset(i for i in range(len(mol.bonds)) if i not in bridges)
    ring_atoms = frozenset(
        atom for bi in ring_bonds for atom in (mol.bonds[bi].a, mol.bonds[bi].b)
    )
    return ring_atoms, ring_bonds
