"""Molecule data model, XYZ I/O and distance-based bond perception."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

_SYMBOLS = (
    "X H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()

SYMBOL_TO_Z: Dict[str, int] = {s: z for z, s in enumerate(_SYMBOLS) if z > 0}

# default distance slack (Angstrom) added to the reference length, per bond order
DEFAULT_MARGINS: Dict[int, float] = {1: 0.10, 2: 0.05, 3: 0.03}


class XYZParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} at line {line}")
        self.line = line


def symbol(z: int) -> str:
    if not 0 < z < len(_SYMBOLS):
        raise KeyError(f"no element symbol for atomic number {z}")
    return _SYMBOLS[z]


def atomic_number(sym: str) -> int:
    # tolerate "CL"/"cl" spellings found in some XYZ writers
    key = sym[:1].upper() + sym[1:].lower()
    return SYMBOL_TO_Z[key]


@dataclass(frozen=True, eq=False)
class Molecule3D:
    atoms: Tuple[int, ...]
    coords: np.ndarray
    properties: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        atoms = tuple(int(z) for z in self.atoms)
        coords = np.array(self.coords, dtype=np.float64).reshape(-1, 3)
        if len(atoms) < 1:
            raise ValueError("molecule needs at least one atom")
        if len(atoms) != len(coords):
            raise ValueError(f"{len(atoms)} atoms but {len(coords)} coordinates")
        if any(z < 1 for z in atoms):
            raise ValueError("atomic numbers must be >= 1")
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite coordinate")
        coords.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "properties", dict(self.properties))

    def __len__(self) -> int:
        return len(self.atoms)

    def permuted(self, perm: Sequence[int]) -> "Molecule3D":
        """Atom i of the result is atom ``perm[i]`` of this molecule."""
        perm = list(perm)
        return Molecule3D(tuple(self.atoms[p] for p in perm), self.coords[perm], self.properties)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "Molecule3D":
        coords = self.coords @ np.asarray(rotation).T + np.asarray(translation)
        return Molecule3D(self.atoms, coords, self.properties)


@dataclass(frozen=True)
class ColoredGraph:
    n: int
    colors: Tuple[int, ...]
    edges: Mapping[Tuple[int, int], int]

    def __post_init__(self):
        colors = tuple(int(c) for c in self.colors)
        if len(colors) != self.n:
            raise ValueError("colors length must equal n")
        edges: Dict[Tuple[int, int], int] = {}
        for (u, v), order in dict(self.edges).items():
            if u == v:
                raise ValueError(f"self-loop on vertex {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u}, {v}) out of range")
            key = (u, v) if u < v else (v, u)
            if key in edges:
                raise ValueError(f"duplicate edge {key}")
            edges[key] = int(order)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "edges", edges)

    def __hash__(self):
        return hash((self.n, self.colors, tuple(sorted(self.edges.items()))))

    def neighbors(self) -> List[Dict[int, int]]:
        """Per-vertex map neighbor -> bond order."""
        adj: List[Dict[int, int]] = [dict() for _ in range(self.n)]
        for (u, v), order in self.edges.items():
            adj[u][v] = order
            adj[v][u] = order
        return adj

    def bond_order_sums(self) -> List[int]:
        totals = [0] * self.n
        for (u, v), order in self.edges.items():
            totals[u] += order
            totals[v] += order
        return totals

    def relabeled(self, perm: Sequence[int]) -> "ColoredGraph":
        """Vertex i of the result is vertex ``perm[i]`` of this graph."""
        inv = {old: new for new, old in enumerate(perm)}
        return ColoredGraph(
            self.n,
            tuple(self.colors[p] for p in perm),
            {(inv[u], inv[v]): o for (u, v), o in self.edges.items()},
        )

    def subgraph(self, vertices: Iterable[int]) -> "ColoredGraph":
        keep = sorted(vertices)
        index = {v: i for i, v in enumerate(keep)}
        return ColoredGraph(
            len(keep),
            tuple(self.colors[v] for v in keep),
            {(index[u], index[v]): o for (u, v), o in self.edges.items() if u in index and v in index},
        )


# ---------------------------------------------------------------------------
# tables

def _read_table(text: str) -> List[List[str]]:
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    return rows


def load_bond_table(text: Optional[str] = None) -> Dict[Tuple[int, int, int], float]:
    """Parse ``Z1 Z2 order length_pm`` records into {(z_lo, z_hi, order): length in Angstrom}."""
    if text is None:
        text = resources.files("geoseq.data").joinpath("bond_lengths.txt").read_text()
    table = {}
    for z1, z2, order, length in _read_table(text):
        a, b = sorted((int(z1), int(z2)))
        table[(a, b, int(order))] = float(length) / 100.0
    return table


def load_valence_table(text: Optional[str] = None) -> Dict[int, Tuple[int, ...]]:
    """Parse ``Z v1 [v2 ...]`` records into {Z: allowed total bond orders}."""
    if text is None:
        text = resources.files("geoseq.data").joinpath("valences.txt").read_text()
    table = {}
    for row in _read_table(text):
        values = tuple(int(v) for v in row[1:])
        if not values or any(v <= 0 for v in values):
            raise ValueError(f"bad valence record {row}")
        table[int(row[0])] = values
    return table


@lru_cache(maxsize=1)
def default_bond_table() -> Dict[Tuple[int, int, int], float]:
    return load_bond_table()


@lru_cache(maxsize=1)
def default_valences() -> Dict[int, Tuple[int, ...]]:
    return load_valence_table()


# ---------------------------------------------------------------------------
# XYZ

def _parse_comment(comment: str) -> Dict[str, float]:
    props = {}
    for item in comment.split():
        if "=" not in item:
            continue
        key, _, value = item.partition("=")
        try:
            props[key] = float(value)
        except ValueError:
            continue
    return props


def parse_xyz(text: str) -> List[Molecule3D]:
    """Parse concatenated XYZ blocks. ``key=value`` pairs in comment lines become properties."""
    lines = text.splitlines()
    mols = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = int(lines[i].strip())
        except ValueError:
            raise XYZParseError(f"malformed atom count {lines[i].strip()!r}", i + 1) from None
        if n < 1:
            raise XYZParseError(f"malformed atom count {n}", i + 1)
        comment = lines[i + 1] if i + 1 < len(lines) else ""
        atoms, coords = [], []
        for j in range(i + 2, i + 2 + n):
            lineno = j + 1
            if j >= len(lines):
                raise XYZParseError(f"expected {n} atom lines, file ended", lineno)
            parts = lines[j].split()
            if len(parts) < 4:
                raise XYZParseError("expected element and three coordinates", lineno)
            try:
                atoms.append(atomic_number(parts[0]))
            except KeyError:
                raise XYZParseError(f"unknown element {parts[0]}", lineno) from None
            try:
                xyz = [float(p) for p in parts[1:4]]
            except ValueError:
                raise XYZParseError("non-numeric coordinate", lineno) from None
            if not all(math.isfinite(c) for c in xyz):
                raise XYZParseError("non-finite coordinate", lineno)
            coords.append(xyz)
        mols.append(Molecule3D(tuple(atoms), np.array(coords), _parse_comment(comment)))
        i += 2 + n
    return mols


def split_xyz_blocks(text: str) -> List[Tuple[int, str]]:
    """Split text into raw blocks without validating atom lines.

    Returns (first line number, block text) pairs so callers can parse blocks
    one at a time and keep going past a bad one.
    """
    lines = text.splitlines()
    blocks = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        try:
            n = max(int(lines[i].strip()), 0)
        except ValueError:
            # unreadable count: treat the rest of the file as one bad block
            blocks.append((i + 1, "\n".join(lines[i:])))
            break
        blocks.append((i + 1, "\n".join(lines[i : i + 2 + n])))
        i += 2 + n
    return blocks


def format_xyz(mol: Molecule3D, comment: Optional[str] = None, precision: int = 6) -> str:
    if comment is None:
        comment = " ".join(f"{k}={v!r}" for k, v in mol.properties.items())
    out = [str(len(mol)), comment]
    for z, (x, y, w) in zip(mol.atoms, mol.coords):
        out.append(f"{symbol(z):<2s} {x:.{precision}f} {y:.{precision}f} {w:.{precision}f}")
    return "\n".join(out) + "\n"


def write_xyz(mols: Iterable[Molecule3D], precision: int = 6) -> str:
    return "".join(format_xyz(m, precision=precision) for m in mols)


# ---------------------------------------------------------------------------
# bonds

def distance_matrix(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def infer_bonds(
    mol: Molecule3D,
    bond_table: Optional[Mapping[Tuple[int, int, int], float]] = None,
    margins: Mapping[int, float] = DEFAULT_MARGINS,
) -> ColoredGraph:
    """Assign each atom pair the highest order whose reference length plus margin covers the distance."""
    table = default_bond_table() if bond_table is None else bond_table
    n = len(mol)
    dist = distance_matrix(mol.coords)
    edges = {}
    for i in range(n):
        zi = mol.atoms[i]
        for j in range(i + 1, n):
            a, b = (zi, mol.atoms[j]) if zi <= mol.atoms[j] else (mol.atoms[j], zi)
            d = dist[i, j]
            for order in (3, 2, 1):
                ref = table.get((a, b, order))
                if ref is not None and d <= ref + margins[order]:
                    edges[(i, j)] = order
                    break
    return ColoredGraph(n, mol.atoms, edges)


def connected_components(g: ColoredGraph) -> List[FrozenSet[int]]:
    """Components ordered by their smallest vertex."""
    adj = defaultdict(list)
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * g.n
    comps = []
    for start in range(g.n):
        if seen[start]:
            continue
        seen[start] = True
        stack, comp = [start], [start]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
                    comp.append(w)
        comps.append(frozenset(comp))
    return comps
