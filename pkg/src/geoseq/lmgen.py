"""Order-k counting language model over token sequences.

Counts are maximum-likelihood estimates of next-token probabilities, scored
with stupid backoff and sampled with top-k and temperature. The model file is
gzipped JSON (``format: geoseq-ngram``, ``version: 1``).

Sequences that start with a property token are also counted under contexts
tagged with that token, so the condition stays visible at every step instead
of sliding out of the k-token window. A tagged key is ``(-(c + 1),) + ctx``
for condition id ``c``; plain keys hold only non-negative ids.
"""
from __future__ import annotations

import bisect
import gzip
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codec import TokenSequence, Vocabulary

MODEL_FORMAT = "geoseq-ngram"
MODEL_VERSION = 1


@dataclass(frozen=True)
class SamplerConfig:
    top_k: int = 80
    temperature: float = 0.7
    max_len: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


class NgramModel:
    """Counts keyed by context tuples of length 0..order."""

    def __init__(self, vocab: Vocabulary, order: int = 6, backoff: float = 0.4):
        if order < 1:
            raise ValueError("order must be >= 1")
        if not 0 < backoff < 1:
            raise ValueError("backoff factor must be in (0, 1)")
        self.vocab = vocab
        self.order = order
        self.backoff = backoff
        # context -> (token ids, counts, total)
        self.tables: Dict[Tuple[int, ...], Tuple[np.ndarray, np.ndarray, int]] = {}
        self.first_tokens: Dict[int, int] = {}

    def _freeze(self, raw: Dict[Tuple[int, ...], Counter]) -> None:
        self.tables = {}
        for ctx, counter in raw.items():
            ids = np.fromiter(sorted(counter), dtype=np.int64)
            counts = np.array([counter[i] for i in ids], dtype=np.float64)
            self.tables[ctx] = (ids, counts, int(counts.sum()))

    def counts(self, context: Sequence[int], condition: Optional[int] = None) -> Dict[int, int]:
        key = tuple(context) if condition is None else _tag(condition, context)
        entry = self.tables.get(key)
        if entry is None:
            return {}
        ids, counts, _ = entry
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def next_distribution(self, context: Sequence[int], condition: Optional[int] = None) -> np.ndarray:
        """Stupid-backoff scores for every vocabulary id, normalized to sum to one.

        Levels run from the empty context to the longest suffix; each present
        level scales what came before by the backoff factor and overwrites the
        ids it has seen. With a condition, the tagged table of each length
        comes right after the plain table of that length.
        """
        context = tuple(context)[-self.order :]
        scores = np.zeros(len(self.vocab))
        for length in range(0, len(context) + 1):
            suffix = context[len(context) - length :]
            keys = [suffix] if condition is None else [suffix, _tag(condition, suffix)]
            for key in keys:
                entry = self.tables.get(key)
                if entry is None:
                    continue
                ids, counts, total = entry
                scores *= self.backoff
                scores[ids] = counts / total
            if suffix not in self.tables:
                # longer suffixes extend this one, so none of them can be present
                break
        return scores / scores.sum()

    # ------------------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "order": self.order,
            "backoff": self.backoff,
            "vocab": list(self.vocab.texts),
            "first_tokens": [[i, c] for i, c in sorted(self.first_tokens.items())],
            "counts": [
                [list(ctx), ids.tolist(), counts.astype(int).tolist()]
                for ctx, (ids, counts, _) in sorted(self.tables.items())
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "NgramModel":
        if data.get("format") != MODEL_FORMAT:
            raise ValueError("not a geoseq n-gram model file")
        if data.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {data.get('version')}")
        model = cls(Vocabulary(data["vocab"]), data["order"], data["backoff"])
        model.first_tokens = {int(i): int(c) for i, c in data["first_tokens"]}
        raw = {tuple(ctx): Counter(dict(zip(ids, counts))) for ctx, ids, counts in data["counts"]}
        model._freeze(raw)
        return model

    def save(self, path) -> None:
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "NgramModel":
        with gzip.open(path, "rt", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _tag(condition: int, context: Sequence[int]) -> Tuple[int, ...]:
    return (-(condition + 1),) + tuple(context)


def _condition_of(vocab: Vocabulary, ids: Sequence[int]) -> Optional[int]:
    """Property token right after <bos>, if any."""
    if len(ids) > 1 and vocab.text_of(ids[1]).startswith("prop:"):
        return ids[1]
    return None


def train(corpus: Sequence[TokenSequence], vocab: Vocabulary, k: int = 6, backoff: float = 0.4) -> NgramModel:
    """Count every (context of length 0..k, next token) pair, with <bos> padding.

    Tokens after a leading property token are counted a second time under the
    tagged contexts.
    """
    if k < 1:
        raise ValueError("order k must be >= 1")
    if not corpus:
        raise ValueError("empty corpus")
    model = NgramModel(vocab, k, backoff)
    raw: Dict[Tuple[int, ...], Counter] = defaultdict(Counter)
    first = Counter()
    for seq in corpus:
        ids = [vocab.bos_id] + vocab.encode(seq)
        first[ids[1]] += 1
        cond = _condition_of(vocab, ids)
        for pos in range(1, len(ids)):
            target = ids[pos]
            for length in range(0, min(k, pos) + 1):
                ctx = tuple(ids[pos - length : pos])
                raw[ctx][target] += 1
                if cond is not None and pos > 1:
                    raw[_tag(cond, ctx)][target] += 1
    model._freeze(raw)
    model.first_tokens = dict(first)
    return model


def perplexity(model: NgramModel, corpus: Sequence[TokenSequence]) -> float:
    nll = 0.0
    count = 0
    for seq in corpus:
        ids = [model.vocab.bos_id] + model.vocab.encode(seq)
        cond = _condition_of(model.vocab, ids)
        for pos in range(1, len(ids)):
            context = ids[max(0, pos - model.order) : pos]
            p = model.next_distribution(context, cond if pos > 1 else None)[ids[pos]]
            nll -= math.log(max(p, 1e-300))
            count += 1
    return math.exp(nll / count)


def choose_token(probs: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator) -> int:
    """Top-k / temperature draw; greedy when top_k is 1 or the temperature is below 1e-6."""
    if cfg.temperature < 1e-6 or cfg.top_k == 1:
        return int(np.argmax(probs))
    # stable sort keeps the lowest id first among equal probabilities, matching argmax
    top = np.argsort(-probs, kind="stable")[: cfg.top_k]
    top = top[probs[top] > 0]
    logits = np.log(probs[top]) / cfg.temperature
    weights = np.exp(logits - logits.max())
    return int(top[rng.choice(len(top), p=weights / weights.sum())])


def sample(
    model: NgramModel,
    cfg: SamplerConfig = SamplerConfig(),
    condition: Optional[str] = None,
    rng: Optional[np.random.Generator] = None,
) -> TokenSequence:
    """Draw one sequence; the returned tokens exclude <bos>."""
    vocab = model.vocab
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ids = [vocab.bos_id]
    if condition is not None:
        if condition not in vocab:
            raise KeyError(f"condition token {condition!r} not in vocabulary")
        ids.append(vocab.id_of(condition))
    else:
        firsts = sorted(model.first_tokens)
        weights = np.array([model.first_tokens[i] for i in firsts], dtype=np.float64)
        if cfg.temperature < 1e-6 or cfg.top_k == 1:
            ids.append(firsts[int(np.argmax(weights))])
        else:
            ids.append(firsts[rng.choice(len(firsts), p=weights / weights.sum())])
    cond = _condition_of(vocab, ids)
    while len(ids) - 1 < cfg.max_len and ids[-1] != vocab.eos_id:
        probs = model.next_distribution(ids[-model.order :], cond)
        ids.append(choose_token(probs, cfg, rng))
    return vocab.decode(ids[1:])


def property_bucket(value: float, name: str, edges: Sequence[float]) -> str:
    """``prop:<name>=<i>`` with half-open buckets [edge_i, edge_{i+1})."""
    if not math.isfinite(value):
        raise ValueError(f"non-finite property value {value}")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bucket edges must be strictly increasing")
    return f"prop:{name}={bisect.bisect_right(list(edges), value)}"


def quantile_edges(values: Sequence[float], buckets: int = 10) -> List[float]:
    """Interior quantile edges splitting ``values`` into ``buckets`` groups."""
    qs = np.quantile(np.asarray(values, dtype=np.float64), np.arange(1, buckets) / buckets)
    edges: List[float] = []
    for q in qs:
        q = float(q)
        if not edges or q > edges[-1]:
            edges.append(q)
    return edges
