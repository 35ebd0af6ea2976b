"""Molecule <-> token sequence conversion and vocabulary handling.

A sequence is an optional ``prop:<name>=<bucket>`` token followed by one
``element distance theta phi`` group per atom and a closing ``<eos>``.
Numbers are fixed-decimal strings; both angles carry a ``°`` suffix and are
in radians.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .canon import candidate_orders
from .geom import build_frame, from_spherical, to_spherical
from .molgraph import SYMBOL_TO_Z, Molecule3D, infer_bonds, symbol

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
DEGREE = "°"
# rounded angles may sit half a unit in the last place beyond their range
ANGLE_SLACK = 0.005 + 1e-9

_DISTANCE_RE = re.compile(r"^\d+\.\d+$")
_ANGLE_RE = re.compile(r"^-?\d+\.\d+°$")
_PROPERTY_RE = re.compile(r"^prop:([^=\s]+)=(-?\d+)$")


class TokenKind(str, enum.Enum):
    ELEMENT = "element"
    DISTANCE = "distance"
    THETA = "theta"
    PHI = "phi"
    PROPERTY = "property"
    SPECIAL = "special"


class Token(NamedTuple):
    kind: TokenKind
    text: str


class GrammarError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (token {position})")
        self.position = position


class VocabularyOverflow(ValueError):
    def __init__(self, size: int, cap: int):
        super().__init__(
            f"vocabulary needs {size} entries, cap is {cap} ({size - cap} over); "
            "decimal precision is probably too fine for the data range"
        )
        self.size = size
        self.cap = cap
        self.overflow = size - cap


_CYCLE = (TokenKind.ELEMENT, TokenKind.DISTANCE, TokenKind.THETA, TokenKind.PHI)


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[Token, ...]

    @property
    def texts(self) -> Tuple[str, ...]:
        return tuple(t.text for t in self.tokens)

    def __str__(self) -> str:
        return " ".join(self.texts)

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "TokenSequence":
        """Attach kinds by grammar position; validity is checked separately."""
        tokens = []
        slot = 0
        for i, text in enumerate(texts):
            if text.startswith("<") and text.endswith(">"):
                tokens.append(Token(TokenKind.SPECIAL, text))
                continue
            if i == 0 and text.startswith("prop:"):
                tokens.append(Token(TokenKind.PROPERTY, text))
                continue
            kind = _CYCLE[slot % 4]
            tokens.append(Token(kind, text))
            if kind is TokenKind.ELEMENT:
                slot += 1
                continue
            # a split number spans "int" "." "frac"; advance once it is complete
            nxt = texts[i + 1] if i + 1 < len(texts) else None
            if text == "." or nxt == ".":
                continue
            slot += 1
        return cls(tuple(tokens))

    @classmethod
    def parse(cls, line: str) -> "TokenSequence":
        return cls.from_texts(line.split())


def format_number(value: float, decimals: int, suffix: str = "") -> str:
    """Round half away from zero on the shortest decimal repr; never emits "-0.00"."""
    q = Decimal(repr(float(value))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP)
    if q.is_zero():
        q = abs(q)
    return f"{q:.{decimals}f}{suffix}"


def tokenize_mode(value: str, mode: str) -> List[str]:
    """Whole-number token or integer part / point / fraction part."""
    body = value[:-1] if value.endswith(DEGREE) else value
    try:
        float(body)
    except ValueError:
        raise ValueError(f"unparseable number token {value!r}") from None
    if mode == "whole":
        return [value]
    if mode == "split":
        if "." not in body:
            raise ValueError(f"number token {value!r} has no decimal point")
        head, _, tail = value.partition(".")
        return [head, ".", tail]
    raise ValueError(f"unknown tokenize mode {mode!r}")


def _merge_split(texts: Sequence[str]) -> List[Tuple[int, str]]:
    """Rejoin ``a . b`` triples; returns (original position, text) pairs."""
    out: List[Tuple[int, str]] = []
    i = 0
    while i < len(texts):
        if i + 2 < len(texts) and texts[i + 1] == ".":
            out.append((i, texts[i] + "." + texts[i + 2]))
            i += 3
        elif texts[i] == ".":
            raise GrammarError("stray decimal point", i)
        else:
            out.append((i, texts[i]))
            i += 1
    return out


def _check_number(text: str, kind: TokenKind, pos: int) -> float:
    if kind is TokenKind.DISTANCE:
        if not _DISTANCE_RE.match(text):
            raise GrammarError(f"expected distance, got {text!r}", pos)
        return float(text)
    if not _ANGLE_RE.match(text):
        raise GrammarError(f"expected {kind.value} angle, got {text!r}", pos)
    value = float(text[:-1])
    lo, hi = (0.0, math.pi) if kind is TokenKind.THETA else (-math.pi, math.pi)
    if not lo - ANGLE_SLACK <= value <= hi + ANGLE_SLACK:
        raise GrammarError(f"{kind.value} {value} out of range", pos)
    return value


def parse_groups(seq) -> Tuple[Optional[str], List[Tuple[int, float, float, float]]]:
    """Validate the grammar and return (property token, per-atom (Z, d, theta, phi)).

    Accepts whole or split number tokens. Raises GrammarError on the first violation.
    """
    texts = seq.texts if isinstance(seq, TokenSequence) else tuple(seq)
    items = _merge_split(texts)
    prop = None
    k = 0
    if items and items[0][1].startswith("prop:"):
        if not _PROPERTY_RE.match(items[0][1]):
            raise GrammarError(f"malformed property token {items[0][1]!r}", items[0][0])
        prop = items[0][1]
        k = 1
    if k >= len(items) or items[-1][1] != EOS:
        raise GrammarError("sequence must end with <eos>", len(texts))
    body = items[k:-1]
    if not body:
        raise GrammarError("sequence has no atoms", len(texts) - 1)
    if len(body) % 4:
        raise GrammarError("incomplete atom group", body[-1][0])
    groups = []
    for g in range(0, len(body), 4):
        (pe, elem), (pd, dist), (pt, theta), (pp, phi) = body[g : g + 4]
        if elem not in SYMBOL_TO_Z:
            raise GrammarError(f"expected element, got {elem!r}", pe)
        groups.append(
            (
                SYMBOL_TO_Z[elem],
                _check_number(dist, TokenKind.DISTANCE, pd),
                _check_number(theta, TokenKind.THETA, pt),
                _check_number(phi, TokenKind.PHI, pp),
            )
        )
    return prop, groups


def is_valid(seq) -> bool:
    try:
        parse_groups(seq)
    except GrammarError:
        return False
    return True


def _atom_tokens(mol: Molecule3D, order: Sequence[int], b_d: int, b_a: int, tokenize: str) -> List[Token]:
    frame = build_frame(mol.coords, order)
    records = to_spherical(mol.coords, order, frame)
    tokens: List[Token] = []
    for idx, rec in zip(order, records):
        tokens.append(Token(TokenKind.ELEMENT, symbol(mol.atoms[idx])))
        for kind, value, decimals, suffix in (
            (TokenKind.DISTANCE, rec.d, b_d, ""),
            (TokenKind.THETA, rec.theta, b_a, DEGREE),
            (TokenKind.PHI, rec.phi, b_a, DEGREE),
        ):
            for piece in tokenize_mode(format_number(value, decimals, suffix), tokenize):
                tokens.append(Token(kind, piece))
    return tokens


def encode_with_order(
    mol: Molecule3D,
    b_d: int = 2,
    b_a: int = 2,
    strategy: str = "canonical-locality",
    tokenize: str = "whole",
    seed: int = 0,
    prop: Optional[str] = None,
) -> Tuple[TokenSequence, List[int]]:
    """Like :func:`encode`, also returning the atom order that was serialized."""
    graph = infer_bonds(mol)
    best: Optional[List[Token]] = None
    best_order: List[int] = []
    for order in candidate_orders(graph, mol.coords, strategy, seed=seed):
        tokens = _atom_tokens(mol, order, b_d, b_a, tokenize)
        if best is None or [t.text for t in tokens] < [t.text for t in best]:
            best, best_order = tokens, order
    head = [Token(TokenKind.PROPERTY, prop)] if prop is not None else []
    return TokenSequence(tuple(head + best + [Token(TokenKind.SPECIAL, EOS)])), best_order


def encode(
    mol: Molecule3D,
    b_d: int = 2,
    b_a: int = 2,
    strategy: str = "canonical-locality",
    tokenize: str = "whole",
    seed: int = 0,
    prop: Optional[str] = None,
) -> TokenSequence:
    """Serialize a molecule.

    When symmetric atoms leave several equivalent labelings, the smallest
    resulting token list (compared text-wise) is emitted, so the output does
    not depend on the input atom order.
    """
    return encode_with_order(mol, b_d, b_a, strategy, tokenize, seed, prop)[0]


def decode(seq) -> Molecule3D:
    """Coordinates come back in the frame of the encoded molecule."""
    prop, groups = parse_groups(seq)
    atoms = tuple(g[0] for g in groups)
    coords = from_spherical([g[1:] for g in groups])
    props = {}
    if prop is not None:
        name, bucket = _PROPERTY_RE.match(prop).groups()
        props[f"{name}_bucket"] = float(bucket)
    return Molecule3D(atoms, coords, props)


def error_bound(d: float, theta: float, b_d: int, b_a: int) -> float:
    """Largest displacement that rounding (d, theta, phi) can cause for one atom.

    Walk from the exact to the rounded point: along phi at the exact theta
    (arc d*sin(theta)*dphi), then along theta (arc d*dtheta), then radially.
    """
    dd = 0.5 * 10.0**-b_d
    da = 0.5 * 10.0**-b_a
    return dd + d * (da + math.sin(theta) * da)


@dataclass(frozen=True)
class RoundTrip:
    errors: Tuple[float, ...]
    bounds: Tuple[float, ...]

    @property
    def violations(self) -> int:
        # 1e-12 absorbs float error in the reconstruction itself
        return sum(e > b + 1e-12 for e, b in zip(self.errors, self.bounds))


def roundtrip(mol: Molecule3D, b_d: int = 2, b_a: int = 2, strategy: str = "canonical-locality") -> RoundTrip:
    """Per-atom distance between decode(encode(mol)) and mol expressed in its own frame."""
    seq, order = encode_with_order(mol, b_d, b_a, strategy)
    rebuilt = decode(seq).coords
    frame = build_frame(mol.coords, order)
    aligned = frame.to_frame(mol.coords[order])
    records = to_spherical(mol.coords, order, frame)
    errors = tuple(float(e) for e in np.linalg.norm(rebuilt - aligned, axis=1))
    bounds = tuple(error_bound(r.d, r.theta, b_d, b_a) for r in records)
    return RoundTrip(errors, bounds)


# ---------------------------------------------------------------------------
# vocabulary

@dataclass
class Vocabulary:
    texts: List[str]
    decimals_distance: Optional[int] = None
    decimals_angle: Optional[int] = None
    _ids: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.texts[:4]) != SPECIALS:
            raise ValueError(f"first four entries must be {SPECIALS}")
        self._ids = {}
        for i, t in enumerate(self.texts):
            if t in self._ids:
                raise ValueError(f"duplicate vocabulary entry {t!r}")
            self._ids[t] = i
        if self.decimals_distance is None or self.decimals_angle is None:
            dd, da = _infer_decimals(self.texts[4:])
            self.decimals_distance = self.decimals_distance if self.decimals_distance is not None else dd
            self.decimals_angle = self.decimals_angle if self.decimals_angle is not None else da

    def __len__(self) -> int:
        return len(self.texts)

    def __contains__(self, text: str) -> bool:
        return text in self._ids

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def id_of(self, text: str) -> int:
        return self._ids.get(text, self.unk_id)

    def text_of(self, idx: int) -> str:
        return self.texts[idx]

    def encode(self, seq) -> List[int]:
        texts = seq.texts if isinstance(seq, TokenSequence) else seq
        return [self.id_of(t) for t in texts]

    def decode(self, ids: Iterable[int]) -> TokenSequence:
        return TokenSequence.from_texts([self.texts[i] for i in ids])

    def dumps(self) -> str:
        return "\n".join(self.texts) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        return cls([line for line in text.split("\n") if line != ""])


def _infer_decimals(texts: Iterable[str]) -> Tuple[Optional[int], Optional[int]]:
    dd = da = None
    for t in texts:
        if dd is None and _DISTANCE_RE.match(t):
            dd = len(t.partition(".")[2])
        elif da is None and _ANGLE_RE.match(t):
            da = len(t.partition(".")[2]) - 1
        if dd is not None and da is not None:
            break
    return dd, da


def build_vocab(corpus: Sequence[TokenSequence], cap: int = 16000) -> Vocabulary:
    if not corpus:
        raise ValueError("empty corpus")
    distinct = set()
    for seq in corpus:
        distinct.update(seq.texts)
    distinct.difference_update(SPECIALS)
    size = len(distinct) + len(SPECIALS)
    if size > cap:
        raise VocabularyOverflow(size, cap)
    return Vocabulary(list(SPECIALS) + sorted(distinct))


def read_sequences(text: str) -> List[TokenSequence]:
    return [TokenSequence.parse(line) for line in text.splitlines() if line.strip()]


def write_sequences(seqs: Iterable[TokenSequence]) -> str:
    return "".join(str(s) + "\n" for s in seqs)
