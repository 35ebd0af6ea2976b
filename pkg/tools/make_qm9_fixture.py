"""Build the QM9-style test fixture (tests/data/qm9_style.xyz.gz).

Development-time only; needs RDKit, which the package itself does not use.

Random heavy-atom skeletons (C, N, O, F; up to 9 heavy atoms) are grown under
valence limits, sanitized, hydrogenated, embedded with ETKDG and relaxed with
MMFF94. Each molecule gets a random rigid motion. The comment line carries
``alpha=`` (an isotropic polarizability estimate in Bohr^3 from Crippen molar
refractivity) and ``smiles=``.

    python tools/make_qm9_fixture.py --count 1500 --seed 0 --out tests/data/qm9_style.xyz.gz
"""
import argparse
import gzip
import random

import numpy as np
from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem, Crippen

RDLogger.DisableLog("rdApp.*")

MAX_VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1}
ELEMENTS = ["C"] * 12 + ["N"] * 3 + ["O"] * 4 + ["F"]
# molar refractivity (cm^3/mol) -> polarizability volume (Bohr^3)
MR_TO_BOHR3 = 3.0 / (4.0 * np.pi * 6.02214076e23) * 1e24 / 0.529177210903**3


def random_skeleton(rng: random.Random):
    n_heavy = rng.choices(range(1, 10), weights=[1, 1, 2, 3, 5, 8, 12, 18, 30])[0]
    rw = Chem.RWMol()
    symbols = []
    free = []
    for i in range(n_heavy):
        sym = rng.choice(ELEMENTS) if i else rng.choice(["C", "C", "C", "N", "O"])
        candidates = [j for j in range(i) if free[j] > 0]
        if i and not candidates:
            break
        if sym != "C" and i and rng.random() < 0.5:
            sym = "C"
        rw.AddAtom(Chem.Atom(sym))
        symbols.append(sym)
        free.append(MAX_VALENCE[sym])
        if i:
            j = rng.choice(candidates)
            order = 1
            room = min(free[i], free[j])
            if room >= 2 and rng.random() < 0.2:
                order = 3 if room >= 3 and rng.random() < 0.25 else 2
            rw.AddBond(i, j, {1: Chem.BondType.SINGLE, 2: Chem.BondType.DOUBLE, 3: Chem.BondType.TRIPLE}[order])
            free[i] -= order
            free[j] -= order
    # ring closures
    n = rw.GetNumAtoms()
    for _ in range(rng.choice([0, 0, 1, 1, 2])):
        if n < 3:
            break
        i, j = rng.sample(range(n), 2)
        if free[i] < 1 or free[j] < 1 or rw.GetBondBetweenAtoms(i, j) is not None:
            continue
        path = Chem.GetShortestPath(rw, i, j)
        if len(path) < 3:  # ring of size >= 3
            continue
        rw.AddBond(i, j, Chem.BondType.SINGLE)
        free[i] -= 1
        free[j] -= 1
    mol = rw.GetMol()
    Chem.SanitizeMol(mol)
    return mol


def embed(mol, seed: int):
    mh = Chem.AddHs(mol)
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    if AllChem.EmbedMolecule(mh, params) != 0:
        return None
    if AllChem.MMFFHasAllMoleculeParams(mh):
        if AllChem.MMFFOptimizeMolecule(mh, maxIters=2000) != 0:
            return None
    else:
        return None
    return mh


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    nrng = np.random.default_rng(args.seed)
    seen = set()
    blocks = []
    attempts = 0
    while len(blocks) < args.count:
        attempts += 1
        try:
            mol = random_skeleton(rng)
        except Exception:
            continue
        smi = Chem.MolToSmiles(mol)
        if smi in seen:
            continue
        # skip small strained rings that MMFF handles poorly
        if any(len(r) < 5 for r in mol.GetRingInfo().AtomRings()) and rng.random() < 0.7:
            continue
        mh = embed(mol, seed=rng.randrange(1 << 30))
        if mh is None:
            continue
        seen.add(smi)
        alpha = Crippen.MolMR(mh) * MR_TO_BOHR3
        pos = mh.GetConformer().GetPositions()
        pos = pos @ random_rotation(nrng).T + nrng.uniform(-5, 5, size=3)
        lines = [str(mh.GetNumAtoms()), f"alpha={alpha:.4f} smiles={smi}"]
        for atom, (x, y, z) in zip(mh.GetAtoms(), pos):
            lines.append(f"{atom.GetSymbol():<2s} {x:.6f} {y:.6f} {z:.6f}")
        blocks.append("\n".join(lines) + "\n")
    with gzip.open(args.out, "wt", encoding="utf-8") as fh:
        fh.write("".join(blocks))
    print(f"wrote {len(blocks)} molecules ({attempts} attempts)")


if __name__ == "__main__":
    main()
